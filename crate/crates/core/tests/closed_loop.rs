//! Closed-loop runs on the reference system.

use std::sync::Arc;

use lipmpc::config::{Resolved, RunConfig};
use lipmpc::envelope::{point_uncertainty_set, Dataset};
use lipmpc::geometry::Polytope;
use lipmpc::mpc::MpcStatus;
use lipmpc::sim::{
    control_loop, dynamics_residual, explore, ControlOptions, ControlOutcome, Plant, SimLog,
    UncertaintyFn, CONSTRAINT_TOL, DYNAMICS_TOL,
};
use lipmpc::solver::default_solver;
use lipmpc::Error;
use nalgebra::{dvector, DVector};

fn resolved() -> Resolved {
    RunConfig::default().resolve().unwrap()
}

struct Prepared {
    dataset: Dataset,
    terminal: Polytope,
    bound: Polytope,
}

fn prepare(r: &Resolved, plant: &mut Plant, seed: u64) -> Prepared {
    let mut dataset = r.empty_dataset(None);
    let mut log = SimLog::new(seed, r.model.lipschitz());
    let o = explore(
        default_solver(),
        plant,
        &mut dataset,
        &r.mpc,
        &r.explore_start,
        &r.explore,
        &mut log,
    )
    .unwrap();
    Prepared {
        dataset,
        terminal: o.terminal_set,
        bound: o.global_bound,
    }
}

fn run(
    r: &Resolved,
    plant: &mut Plant,
    prep: &Prepared,
    x0: DVector<f64>,
    options: &ControlOptions,
) -> (lipmpc::Result<ControlOutcome>, SimLog) {
    let mut mpc = r.mpc.clone();
    mpc.terminal_set = prep.terminal.clone();
    let mut dataset = prep.dataset.clone();
    let mut log = SimLog::new(plant.seed(), r.model.lipschitz());
    let res = control_loop(
        default_solver(),
        plant,
        &mut dataset,
        &mpc,
        &prep.bound,
        &x0,
        options,
        &mut log,
    );
    (res, log)
}

#[test]
fn recursive_feasibility_over_twenty_seeds() {
    let r = resolved();
    let mut started = 0;
    for seed in 1..=20 {
        let mut plant = r.plant(seed).unwrap();
        let prep = prepare(&r, &mut plant, seed);
        let (res, log) = run(&r, &mut plant, &prep, dvector![-0.5, 0.5], &r.control);
        let first = log.control_records().next().and_then(|rec| rec.status);
        if first == Some(MpcStatus::Optimal) {
            started += 1;
            assert!(res.is_ok(), "seed {seed}: {:?}", res.err());
            assert_eq!(log.control_records().count(), 20);
            assert!(log
                .control_records()
                .all(|rec| rec.status == Some(MpcStatus::Optimal)));
        }
    }
    assert_eq!(
        started, 20,
        "every seed should start feasible from (-0.5, 0.5)"
    );
}

#[test]
fn logged_runs_respect_constraints_dynamics_and_the_envelope() {
    let r = resolved();
    let options = ControlOptions {
        snapshot_sets: true,
        ..r.control.clone()
    };
    let mut plant = r.plant(11).unwrap();
    let prep = prepare(&r, &mut plant, 11);
    let (res, log) = run(&r, &mut plant, &prep, dvector![0.3, -0.4], &options);
    res.unwrap();
    assert!(dynamics_residual(&r.model, &log) <= DYNAMICS_TOL);
    let mut data = prep.dataset.clone();
    for rec in log.control_records() {
        assert!(r.mpc.state_set.max_violation(&rec.x_next) <= CONSTRAINT_TOL);
        assert!(r.mpc.input_set.max_violation(&rec.u) <= CONSTRAINT_TOL);
        assert_eq!(rec.d_in_envelope, Some(true));
        assert!(point_uncertainty_set(&data, &rec.x)
            .unwrap()
            .contains(&rec.d, 1e-9));
        // The realized disturbance lies in the intersected step-0 set.
        let sets = rec.sets.as_ref().unwrap();
        assert!(sets.d_polytopes[0].contains(&rec.d, 1e-7));
        assert!(sets.d_polytopes_prev[0].contains(&rec.d, 1e-7));
        assert!(rec.d0.as_ref().unwrap().contains(&rec.d, 1e-7));
        // X_0 is the current state.
        assert!(sets.state_ellipsoids[0].is_point());
        assert!((sets.state_ellipsoids[0].center() - &rec.x).norm() < 1e-12);
        let d =
            lipmpc::envelope::realize_uncertainty(&r.model, &rec.x, &rec.u, &rec.x_next).unwrap();
        let t = data.len() as u64;
        data.insert(lipmpc::envelope::Measurement::new(t, rec.x.clone(), d).unwrap())
            .unwrap();
    }
}

#[test]
fn adversarial_uncertainty_within_the_model() {
    let r = resolved();
    let l = r.model.lipschitz();
    // Pushes the state towards the upper x1 limit with the full Lipschitz
    // budget.
    let d_true = UncertaintyFn::Custom(Arc::new(move |x: &DVector<f64>| {
        dvector![l * (x[0] + 1.0).abs().min(2.0) * 0.7, l * 0.7 * x[1].sin()]
    }));
    let seed = 5;
    let mut plant = Plant::new(r.model.clone(), d_true, seed, &r.check_region().unwrap()).unwrap();
    let prep = prepare(&r, &mut plant, seed);
    let (res, log) = run(&r, &mut plant, &prep, dvector![0.0, 0.0], &r.control);
    let outcome = res.unwrap();
    assert_eq!(outcome.inputs.len(), 20);
    for rec in log.control_records() {
        assert_eq!(rec.d_in_envelope, Some(true));
        assert!(r.mpc.state_set.max_violation(&rec.x_next) <= CONSTRAINT_TOL);
    }
}

#[test]
fn frozen_dataset_runs_are_reproducible() {
    let r = resolved();
    let options = ControlOptions {
        freeze_dataset: true,
        ..r.control.clone()
    };
    let logs: Vec<String> = (0..2)
        .map(|_| {
            let mut plant = r.plant(3).unwrap();
            let prep = prepare(&r, &mut plant, 3);
            let (res, log) = run(&r, &mut plant, &prep, dvector![-0.5, 0.5], &options);
            res.unwrap();
            let mut buf = Vec::new();
            log.write_jsonl(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn reference_start_is_reported_infeasible_at_step_zero() {
    let r = resolved();
    let mut plant = r.plant(7).unwrap();
    let prep = prepare(&r, &mut plant, 7);
    let (res, log) = run(&r, &mut plant, &prep, dvector![-1.0, 2.0], &r.control);
    match res {
        Err(Error::FeasibilityLost { step, status, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(status, MpcStatus::Infeasible);
        }
        other => panic!("expected feasibility loss, got {other:?}"),
    }
    // x1⁺ = 1.2·(-1) + 1.5·2 + d1 does not depend on u.
    let x1_next_min = 1.8 - prep.bound.support(&dvector![-1.0, 0.0]).unwrap();
    assert!(x1_next_min > 1.0);
    assert_eq!(log.control_records().count(), 1);
}
