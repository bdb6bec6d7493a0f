//! Plant, offline exploration and the online control loop.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envelope::{
    point_uncertainty_set, realize_uncertainty, Dataset, LipschitzModel, Measurement,
};
use crate::error::{Error, Result};
use crate::geometry::{max_rpi_set, Polytope, DEFAULT_MAX_ITER};
use crate::linalg::{serde_dvec, vector_to_vec};
use crate::mpc::{solve_mpc, MpcConfig, MpcStatus};
use crate::setsynth::{build_horizon_sets, global_uncertainty_bound, HorizonProblem, HorizonSets};
use crate::solver::ConicSolver;

/// Pairs sampled when checking a plant's uncertainty against `L`.
pub const LIPSCHITZ_SPOT_CHECKS: usize = 10_000;
/// Tolerance of the logged dynamics identity.
pub const DYNAMICS_TOL: f64 = 1e-12;
/// Constraint slack accepted on logged states and inputs.
pub const CONSTRAINT_TOL: f64 = 1e-6;

/// The true uncertainty `d(x)`, known only to the simulator.
#[derive(Clone)]
pub enum UncertaintyFn {
    /// `scale · (atan x₁, x₂, …)`.
    Atan {
        scale: f64,
    },
    Zero,
    Custom(Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>),
}

impl fmt::Debug for UncertaintyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Atan { scale } => write!(f, "Atan {{ scale: {scale} }}"),
            Self::Zero => write!(f, "Zero"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl UncertaintyFn {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Atan { scale } => {
                let mut d = x * *scale;
                d[0] = scale * x[0].atan();
                d
            }
            Self::Zero => DVector::zeros(x.len()),
            Self::Custom(f) => f(x),
        }
    }
}

/// True system `x⁺ = Ax + Bu + d(x)` with its own seeded generator.
#[derive(Debug, Clone)]
pub struct Plant {
    model: LipschitzModel,
    d_true: UncertaintyFn,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Plant {
    /// Spot-checks `d_true` against the model's `L` on random pairs drawn
    /// from the bounding box of `region`.
    pub fn new(
        model: LipschitzModel,
        d_true: UncertaintyFn,
        seed: u64,
        region: &Polytope,
    ) -> Result<Self> {
        let (lo, hi) = region.bounding_box()?;
        let n = model.state_dim();
        let mut check_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let draw = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |i, _| rng.gen_range(lo[i]..=hi[i]));
        let l = model.lipschitz();
        for _ in 0..LIPSCHITZ_SPOT_CHECKS {
            let (x, y) = (draw(&mut check_rng), draw(&mut check_rng));
            let (dx, dy) = (d_true.eval(&x), d_true.eval(&y));
            if dx.len() != n {
                return Err(Error::Dimension("uncertainty output length".into()));
            }
            let gap = (&dx - &dy).norm() - l * (&x - &y).norm();
            if gap > crate::envelope::LIPSCHITZ_TOL {
                return Err(Error::LipschitzViolation(format!(
                    "true uncertainty exceeds L = {l} between {:?} and {:?}",
                    vector_to_vec(&x),
                    vector_to_vec(&y)
                )));
            }
        }
        Ok(Self {
            model,
            d_true,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn model(&self) -> &LipschitzModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uncertainty(&self, x: &DVector<f64>) -> DVector<f64> {
        self.d_true.eval(x)
    }

    /// Applies `u` at `x`; returns the successor and the realized `d(x)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let d = self.d_true.eval(x);
        (self.model.step(x, u, &d), d)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Control,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub phase: Phase,
    #[serde(with = "serde_dvec")]
    pub x: DVector<f64>,
    #[serde(with = "serde_dvec")]
    pub u: DVector<f64>,
    #[serde(with = "serde_dvec")]
    pub d: DVector<f64>,
    #[serde(with = "serde_dvec")]
    pub x_next: DVector<f64>,
    /// The state was redrawn before this step instead of continuing from the
    /// previous `x_next`.
    #[serde(default)]
    pub reset: bool,
    #[serde(default)]
    pub status: Option<MpcStatus>,
    #[serde(default)]
    pub objective: Option<f64>,
    /// Chebyshev radius of the terminal set in force at this step.
    #[serde(default)]
    pub terminal_radius: Option<f64>,
    /// Step-0 disturbance set the controller robustified against.
    #[serde(default)]
    pub d0: Option<Polytope>,
    /// `d` lies in the pointwise envelope of the data available before the
    /// step.
    #[serde(default)]
    pub d_in_envelope: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<HorizonSets>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimHeader {
    pub seed: u64,
    pub lipschitz: f64,
    pub rng: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogLine {
    Header(SimHeader),
    Step(StepRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimLog {
    pub header: SimHeader,
    pub records: Vec<StepRecord>,
}

impl SimLog {
    pub fn new(seed: u64, lipschitz: f64) -> Self {
        Self {
            header: SimHeader {
                seed,
                lipschitz,
                rng: "ChaCha8".into(),
            },
            records: Vec::new(),
        }
    }

    pub fn control_records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Control)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &LogLine::Header(self.header.clone()))?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &LogLine::Step(r.clone()))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                LogLine::Header(h) => header = Some(h),
                LogLine::Step(s) => records.push(s),
            }
            if i == 0 && header.is_none() {
                return Err(Error::Config(
                    "log does not start with a header line".into(),
                ));
            }
        }
        let header = header.ok_or_else(|| Error::Config("log has no header".into()))?;
        Ok(Self { header, records })
    }

    /// Control-phase trajectory as CSV: `t, x1…xn, u (or u1…um), d1…dn, status`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let Some(first) = self.control_records().next() else {
            out.flush()?;
            return Ok(());
        };
        let (n, m) = (first.x.len(), first.u.len());
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("x{i}")));
        if m == 1 {
            head.push("u".into());
        } else {
            head.extend((1..=m).map(|i| format!("u{i}")));
        }
        head.extend((1..=n).map(|i| format!("d{i}")));
        head.push("status".into());
        out.write_record(&head).map_err(csv_err)?;
        for r in self.control_records() {
            let mut row = vec![r.t.to_string()];
            row.extend(
                r.x.iter()
                    .chain(r.u.iter())
                    .chain(r.d.iter())
                    .map(|v| v.to_string()),
            );
            row.push(r.status.map_or("none".into(), |s| format!("{s:?}")));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Checks `x_next = Ax + Bu + d` on every record and continuity between
/// records that are not resets. Returns the largest residual.
pub fn dynamics_residual(model: &LipschitzModel, log: &SimLog) -> f64 {
    let mut worst = 0.0_f64;
    for (i, r) in log.records.iter().enumerate() {
        worst = worst.max((model.step(&r.x, &r.u, &r.d) - &r.x_next).amax());
        if let Some(next) = log.records.get(i + 1) {
            if !next.reset && next.phase == r.phase {
                worst = worst.max((&next.x - &r.x_next).amax());
            }
        }
    }
    worst
}

/// `u ~ N(0, I)` saturated to the bounding box of `input_set`.
fn saturated_normal_input(rng: &mut ChaCha8Rng, input_set: &Polytope) -> Result<DVector<f64>> {
    let (lo, hi) = input_set.bounding_box()?;
    Ok(DVector::from_fn(lo.len(), |i, _| {
        let u: f64 = rng.sample(StandardNormal);
        u.clamp(lo[i], hi[i])
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreOptions {
    pub max_steps: usize,
    /// Keep collecting data until at least this many measurements, even
    /// after the terminal set is nonempty.
    #[serde(default)]
    pub min_steps: usize,
    /// Redraw the state uniformly in the state box once it leaves that box
    /// scaled by this factor about its center. `None` lets it run free.
    pub reset_scale: Option<f64>,
    pub rpi_max_iter: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            max_steps: 200,
            min_steps: 0,
            reset_scale: Some(2.0),
            rpi_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Per-iteration exploration summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreStep {
    pub j: usize,
    /// Chebyshev radius of the running global bound `W_j`.
    pub bound_radius: f64,
    /// Chebyshev radius of `X_N`; negative when empty.
    pub terminal_radius: f64,
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    /// Number of measurements when `X_N` first became nonempty.
    pub j_stop: usize,
    pub terminal_set: Polytope,
    /// Running intersection of the learned bounds `P^d(X)`.
    pub global_bound: Polytope,
    pub history: Vec<ExploreStep>,
    pub final_state: DVector<f64>,
}

/// Global bound `P^d(X)` intersected with the previous one, and the maximal
/// RPI set it induces.
pub fn refresh_terminal_set(
    solver: &dyn ConicSolver,
    dataset: &Dataset,
    config: &MpcConfig,
    model: &LipschitzModel,
    previous_bound: &Polytope,
    rpi_max_iter: usize,
) -> Result<(Polytope, Polytope)> {
    let (_, bound) = global_uncertainty_bound(solver, dataset, &config.state_set)?;
    let bound = bound.intersect(previous_bound)?.remove_redundant()?;
    let acl = model.a() + model.b() * &config.k;
    let terminal = match max_rpi_set(
        &acl,
        &config.state_set,
        &config.input_set,
        &config.k,
        &bound,
        rpi_max_iter,
    ) {
        Ok(t) => t,
        // The last iterate over-approximates the maximal set; an empty
        // placeholder keeps exploring.
        Err(Error::NotConverged { .. }) => Polytope::new(
            nalgebra::DMatrix::zeros(1, config.state_dim()),
            DVector::from_element(1, -1.0),
        )?,
        Err(e) => return Err(e),
    };
    Ok((bound, terminal))
}

fn chebyshev_radius(p: &Polytope) -> Result<f64> {
    Ok(p.chebyshev_center()?.1)
}

/// Offline exploration with saturated Gaussian inputs until the terminal
/// set is nonempty.
pub fn explore(
    solver: &dyn ConicSolver,
    plant: &mut Plant,
    dataset: &mut Dataset,
    config: &MpcConfig,
    x_start: &DVector<f64>,
    options: &ExploreOptions,
    log: &mut SimLog,
) -> Result<ExploreOutcome> {
    if options.max_steps == 0 {
        return Err(Error::InvalidArgument(
            "max_steps must be at least 1".into(),
        ));
    }
    let model = plant.model().clone();
    let (lo, hi) = config.state_set.bounding_box()?;
    let center = (&lo + &hi) * 0.5;
    let half = (&hi - &lo) * 0.5;
    let mut bound = Polytope::universe(model.state_dim());
    let mut history = Vec::new();
    let mut x = x_start.clone();
    let mut reset = false;
    let mut first_nonempty: Option<(usize, Polytope)> = None;
    for j in 0..options.max_steps.max(options.min_steps) {
        let u = saturated_normal_input(plant.rng(), &config.input_set)?;
        let (x_next, d) = plant.step(&x, &u);
        let d_meas = realize_uncertainty(&model, &x, &u, &x_next)?;
        dataset.insert(Measurement::new(
            log.records.len() as u64,
            x.clone(),
            d_meas,
        )?)?;
        log.records.push(StepRecord {
            t: j as u64,
            phase: Phase::Explore,
            x: x.clone(),
            u,
            d,
            x_next: x_next.clone(),
            reset,
            status: None,
            objective: None,
            terminal_radius: None,
            d0: None,
            d_in_envelope: None,
            sets: None,
        });

        let (new_bound, terminal) = refresh_terminal_set(
            solver,
            dataset,
            config,
            &model,
            &bound,
            options.rpi_max_iter,
        )?;
        bound = new_bound;
        let radius = chebyshev_radius(&terminal)?;
        history.push(ExploreStep {
            j: j + 1,
            bound_radius: chebyshev_radius(&bound)?,
            terminal_radius: radius,
        });
        if let Some(last) = log.records.last_mut() {
            last.terminal_radius = Some(radius);
        }

        x = x_next;
        reset = false;
        if let Some(scale) = options.reset_scale {
            let outside = (0..x.len()).any(|i| (x[i] - center[i]).abs() > scale * half[i]);
            if outside {
                let rng = plant.rng();
                x = DVector::from_fn(x.len(), |i, _| rng.gen_range(lo[i]..=hi[i]));
                reset = true;
            }
        }
        if first_nonempty.is_none() && radius >= 0.0 && !terminal.is_empty()? {
            first_nonempty = Some((j + 1, terminal.clone()));
        }
        if let Some((j_stop, _)) = &first_nonempty {
            if j + 1 >= options.min_steps {
                return Ok(ExploreOutcome {
                    j_stop: *j_stop,
                    terminal_set: terminal,
                    global_bound: bound,
                    history,
                    final_state: x,
                });
            }
        }
    }
    Err(Error::ExplorationBudgetExhausted {
        steps: options.max_steps,
        bound: Some(Box::new(bound)),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlOptions {
    pub steps: usize,
    pub enlarge_terminal: bool,
    pub freeze_dataset: bool,
    pub snapshot_sets: bool,
    pub rpi_max_iter: usize,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            steps: 20,
            enlarge_terminal: false,
            freeze_dataset: false,
            snapshot_sets: false,
            rpi_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlOutcome {
    pub final_state: DVector<f64>,
    pub terminal_set: Polytope,
    pub global_bound: Polytope,
    /// Chebyshev radius of the terminal set at each step.
    pub terminal_radii: Vec<f64>,
    /// Applied inputs.
    pub inputs: Vec<DVector<f64>>,
}

fn feasibility_lost(step: usize, status: MpcStatus, log: &SimLog) -> Error {
    Error::FeasibilityLost {
        step,
        status,
        log: Box::new(log.clone()),
    }
}

/// Online robust control from `x_start` for `options.steps` steps.
///
/// `config.terminal_set` must be nonempty and `global_bound` must be the
/// bound it was computed against.
#[allow(clippy::too_many_arguments)]
pub fn control_loop(
    solver: &dyn ConicSolver,
    plant: &mut Plant,
    dataset: &mut Dataset,
    config: &MpcConfig,
    global_bound: &Polytope,
    x_start: &DVector<f64>,
    options: &ControlOptions,
    log: &mut SimLog,
) -> Result<ControlOutcome> {
    if config.terminal_set.is_empty()? {
        return Err(Error::InvalidArgument(
            "terminal set is empty; explore first".into(),
        ));
    }
    let model = plant.model().clone();
    let mut config = config.clone();
    let mut bound = global_bound.clone();
    let mut prev: Option<HorizonSets> = None;
    let mut x = x_start.clone();
    let mut radii = Vec::with_capacity(options.steps);
    let mut inputs = Vec::with_capacity(options.steps);

    for t in 0..options.steps {
        if options.enlarge_terminal && t > 0 {
            let (new_bound, terminal) = refresh_terminal_set(
                solver,
                dataset,
                &config,
                &model,
                &bound,
                options.rpi_max_iter,
            )?;
            bound = new_bound;
            if !terminal.is_empty()? && terminal.contains_polytope(&config.terminal_set, 1e-7)? {
                config.terminal_set = terminal;
            }
        }
        let radius = chebyshev_radius(&config.terminal_set)?;
        radii.push(radius);

        let mut record = StepRecord {
            t: t as u64,
            phase: Phase::Control,
            x: x.clone(),
            u: DVector::zeros(model.input_dim()),
            d: DVector::zeros(model.state_dim()),
            x_next: x.clone(),
            reset: false,
            status: None,
            objective: None,
            terminal_radius: Some(radius),
            d0: None,
            d_in_envelope: None,
            sets: None,
        };

        if !config.state_set.contains(&x, CONSTRAINT_TOL) {
            record.status = Some(MpcStatus::Infeasible);
            log.records.push(record);
            return Err(feasibility_lost(t, MpcStatus::Infeasible, log));
        }
        let problem = HorizonProblem {
            model: &model,
            horizon: config.horizon,
            state_set: &config.state_set,
            input_set: &config.input_set,
            last_step_bound: Some(&bound),
        };
        let sets = match build_horizon_sets(solver, dataset, &problem, &x, prev.as_ref()) {
            Ok(s) => s,
            Err(Error::EmptyTube { .. }) => {
                record.status = Some(MpcStatus::Infeasible);
                log.records.push(record);
                return Err(feasibility_lost(t, MpcStatus::Infeasible, log));
            }
            Err(e) => return Err(e),
        };
        let sol = solve_mpc(solver, &config, &model, &x, &sets)?;
        record.status = Some(sol.status);
        record.objective = sol.objective;
        record.d0 = Some(sets.effective[0].clone());
        let Some(u) = sol.u0.clone().filter(|_| sol.status == MpcStatus::Optimal) else {
            if options.snapshot_sets {
                record.sets = Some(sets);
            }
            log.records.push(record);
            return Err(feasibility_lost(t, sol.status, log));
        };

        let (x_next, d) = plant.step(&x, &u);
        record.d_in_envelope = Some(point_uncertainty_set(dataset, &x)?.contains(&d, 1e-9));
        record.u = u.clone();
        record.d = d;
        record.x_next = x_next.clone();
        if !options.freeze_dataset {
            let d_meas = realize_uncertainty(&model, &x, &u, &x_next)?;
            dataset.insert(Measurement::new(
                log.records.len() as u64,
                x.clone(),
                d_meas,
            )?)?;
        }
        if options.snapshot_sets {
            record.sets = Some(sets.clone());
        }
        log.records.push(record);
        inputs.push(u);
        prev = Some(sets);
        x = x_next;
    }
    Ok(ControlOutcome {
        final_state: x,
        terminal_set: config.terminal_set,
        global_bound: bound,
        terminal_radii: radii,
        inputs,
    })
}

/// Measurements at uniformly drawn states of the bounding box of `region`.
pub fn collect_random_measurements(
    plant: &mut Plant,
    region: &Polytope,
    count: usize,
) -> Result<Dataset> {
    let (lo, hi) = region.bounding_box()?;
    let mut ds = Dataset::new(plant.model().lipschitz());
    for t in 0..count {
        let rng = plant.rng();
        let x = DVector::from_fn(lo.len(), |i, _| rng.gen_range(lo[i]..=hi[i]));
        let d = plant.uncertainty(&x);
        ds.insert(Measurement::new(t as u64, x, d)?)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::terminal_cost_and_gain;
    use crate::solver::default_solver;
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn reference_model(l: f64) -> LipschitzModel {
        LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], l).unwrap()
    }

    fn reference_config(model: &LipschitzModel) -> MpcConfig {
        let q = DMatrix::identity(2, 2) * 10.0;
        let r = dmatrix![2.0];
        let (p, k) = terminal_cost_and_gain(model, &q, &r).unwrap();
        let x = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0]).unwrap();
        MpcConfig {
            horizon: 3,
            q,
            r,
            p_n: p,
            k,
            state_set: x.clone(),
            input_set: Polytope::from_bounds(&[-4.0], &[1.0]).unwrap(),
            terminal_set: Polytope::universe(2),
        }
    }

    fn region() -> Polytope {
        Polytope::from_bounds(&[-3.0, -5.0], &[3.0, 7.0]).unwrap()
    }

    #[test]
    fn plant_rejects_steep_uncertainty() {
        let model = reference_model(0.01);
        let res = Plant::new(model, UncertaintyFn::Atan { scale: 0.05 }, 1, &region());
        assert!(matches!(res, Err(Error::LipschitzViolation(_))));
    }

    #[test]
    fn zero_uncertainty_explores_in_one_step() {
        let model = reference_model(0.0);
        let config = reference_config(&model);
        let mut plant = Plant::new(model.clone(), UncertaintyFn::Zero, 3, &region()).unwrap();
        let mut ds = Dataset::new(0.0);
        let mut log = SimLog::new(3, 0.0);
        let out = explore(
            default_solver(),
            &mut plant,
            &mut ds,
            &config,
            &dvector![0.0, 0.0],
            &ExploreOptions::default(),
            &mut log,
        )
        .unwrap();
        assert_eq!(out.j_stop, 1);
        assert!(!out.terminal_set.is_empty().unwrap());
    }

    #[test]
    fn zero_uncertainty_control_converges() {
        let model = reference_model(0.0);
        let config = reference_config(&model);
        let mut plant = Plant::new(model.clone(), UncertaintyFn::Zero, 4, &region()).unwrap();
        let mut ds = Dataset::new(0.0);
        let mut log = SimLog::new(4, 0.0);
        let out = explore(
            default_solver(),
            &mut plant,
            &mut ds,
            &config,
            &dvector![0.0, 0.0],
            &ExploreOptions::default(),
            &mut log,
        )
        .unwrap();
        let config = MpcConfig {
            terminal_set: out.terminal_set.clone(),
            ..config
        };
        let x0 = dvector![0.05, -0.05];
        assert!(out.terminal_set.contains(&x0, 0.0));
        let opts = ControlOptions {
            steps: 10,
            ..Default::default()
        };
        let res = control_loop(
            default_solver(),
            &mut plant,
            &mut ds,
            &config,
            &out.global_bound,
            &x0,
            &opts,
            &mut log,
        )
        .unwrap();
        assert!(res.final_state.norm() < 0.2 * x0.norm());
        assert!(dynamics_residual(&model, &log) <= DYNAMICS_TOL);
    }

    #[test]
    fn log_round_trips() {
        let mut log = SimLog::new(9, 0.05);
        log.records.push(StepRecord {
            t: 0,
            phase: Phase::Control,
            x: dvector![0.1, 0.2],
            u: dvector![-0.3],
            d: dvector![0.0, 0.01],
            x_next: dvector![0.42, 0.0],
            reset: false,
            status: Some(MpcStatus::Optimal),
            objective: Some(1.5),
            terminal_radius: Some(0.2),
            d0: Some(Polytope::from_bounds(&[-0.1, -0.1], &[0.1, 0.1]).unwrap()),
            d_in_envelope: Some(true),
            sets: None,
        });
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let back = SimLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.header.seed, 9);
        assert_eq!(back.records.len(), 1);
        assert_eq!(back.records[0].x, log.records[0].x);
        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x1,x2,u,d1,d2,status");
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0,0.1,0.2,-0.3,0,0.01,Optimal"
        );
    }

    #[test]
    fn random_measurements_respect_the_envelope() {
        let model = reference_model(0.05);
        let mut plant =
            Plant::new(model, UncertaintyFn::Atan { scale: 0.05 }, 5, &region()).unwrap();
        let ds = collect_random_measurements(&mut plant, &region(), 20).unwrap();
        assert_eq!(ds.len(), 20);
        let x = dvector![0.3, -0.2];
        assert!(point_uncertainty_set(&ds, &x)
            .unwrap()
            .contains(&plant.uncertainty(&x), 1e-9));
    }
}
