//! Exploration followed by robust adaptive control on the two-state example.

use std::time::Instant;

use lipmpc::envelope::{Dataset, LipschitzModel};
use lipmpc::geometry::Polytope;
use lipmpc::mpc::{terminal_cost_and_gain, MpcConfig};
use lipmpc::sim::{
    control_loop, explore, ControlOptions, ExploreOptions, Plant, SimLog, UncertaintyFn,
};
use lipmpc::solver::default_solver;
use nalgebra::{dmatrix, dvector, DMatrix};

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> lipmpc::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);
    let model = LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], 0.05)?;
    let q = DMatrix::identity(2, 2) * 10.0;
    let r = dmatrix![2.0];
    let (p_n, k) = terminal_cost_and_gain(&model, &q, &r)?;
    let state_set = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0])?;
    let mut config = MpcConfig {
        horizon: 3,
        q,
        r,
        p_n,
        k,
        state_set: state_set.clone(),
        input_set: Polytope::from_bounds(&[-4.0], &[1.0])?,
        terminal_set: Polytope::universe(2),
    };
    let region = Polytope::from_bounds(&[-3.0, -5.0], &[3.0, 7.0])?;
    let mut plant = Plant::new(
        model.clone(),
        UncertaintyFn::Atan { scale: 0.05 },
        seed,
        &region,
    )?;
    let mut dataset = Dataset::new(0.05);
    let mut log = SimLog::new(seed, 0.05);

    let start = Instant::now();
    let explored = explore(
        default_solver(),
        &mut plant,
        &mut dataset,
        &config,
        &dvector![-1.0, 2.0],
        &ExploreOptions::default(),
        &mut log,
    )?;
    let (_, radius) = explored.terminal_set.chebyshev_center()?;
    println!(
        "exploration: terminal set nonempty after {} measurements (radius {radius:.4}, {:.1?})",
        explored.j_stop,
        start.elapsed()
    );
    config.terminal_set = explored.terminal_set.clone();

    let x_start = std::env::args()
        .nth(2)
        .map(|s| {
            let v: Vec<f64> = s.split(',').map(|t| t.parse().unwrap()).collect();
            nalgebra::DVector::from_vec(v)
        })
        .unwrap_or(dvector![-0.5, 0.5]);
    let options = ControlOptions {
        steps: 20,
        enlarge_terminal: true,
        ..Default::default()
    };
    let start = Instant::now();
    let outcome = control_loop(
        default_solver(),
        &mut plant,
        &mut dataset,
        &config,
        &explored.global_bound,
        &x_start,
        &options,
        &mut log,
    )?;
    for rec in log.control_records() {
        println!(
            "t={:2} x=({:+.4}, {:+.4}) u={:+.4} radius={:.4}",
            rec.t,
            rec.x[0],
            rec.x[1],
            rec.u[0],
            rec.terminal_radius.unwrap_or(f64::NAN)
        );
    }
    println!(
        "control: {} steps in {:.1?}, final state ({:+.4}, {:+.4})",
        options.steps,
        start.elapsed(),
        outcome.final_state[0],
        outcome.final_state[1]
    );
    Ok(())
}
