//! Command-line front end: `explore`, `control`, `verify`, `export-plots`.
//!
//! Exit codes: 0 success; 1 bad input (config, missing files); 2 exploration
//! budget exhausted or a failed verification; 3 feasibility lost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, RunConfig};
use crate::envelope::{point_uncertainty_set, realize_uncertainty, Dataset, Measurement};
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::linalg::vector_to_vec;
use crate::mpc::{check_terminal_conditions, MpcStatus, TerminalReport};
use crate::setsynth::min_trace_ellipsoid;
use crate::sim::{
    control_loop, dynamics_residual, explore, refresh_terminal_set, ExploreStep, SimLog,
    CONSTRAINT_TOL, DYNAMICS_TOL,
};
use crate::solver::default_solver;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CONTROL_DATASET_FILE: &str = "control_dataset.jsonl";
pub const EXPLORE_LOG_FILE: &str = "explore_log.jsonl";
pub const SIMLOG_FILE: &str = "simlog.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TERMINAL_FILE: &str = "terminal_set.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

/// Query states of the envelope plot.
pub const QUERY_POINTS: [[f64; 2]; 4] = [[-1.0, 2.0], [1.0, 1.0], [-1.0, 1.0], [-2.0, -1.0]];

#[derive(Debug, Parser)]
#[command(
    name = "lipmpc",
    version,
    about = "Robust adaptive MPC with learned Lipschitz uncertainty envelopes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Offline exploration until the terminal set is nonempty.
    Explore(CommonArgs),
    /// Online robust control from a stored dataset.
    Control(ControlArgs),
    /// Re-check a finished run's artifacts.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write raw plot series for the envelope, terminal-set and trajectory
    /// figures.
    ExportPlots {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset from `explore`; defaults to `<out>/dataset.jsonl`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub freeze_dataset: bool,
    #[arg(long)]
    pub snapshot_sets: bool,
}

/// Terminal set together with the uncertainty bound it was computed for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalArtifact {
    pub terminal_set: Polytope,
    pub global_bound: Polytope,
    pub chebyshev_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub seed: u64,
    pub j_stop: Option<usize>,
    pub terminal_radius: Option<f64>,
    pub history: Vec<ExploreStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSummary {
    pub seed: u64,
    pub steps_completed: usize,
    pub all_optimal: bool,
    pub constraints_satisfied: bool,
    #[serde(default)]
    pub failed_step: Option<usize>,
    pub terminal_radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `summary.json`: one section per phase that has run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SummaryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSummary>,
}

impl SummaryFile {
    pub fn load_or_default(dir: &Path) -> Self {
        read_json(&dir.join(SUMMARY_FILE)).unwrap_or_default()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ds.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path, lipschitz: f64) -> Result<Dataset> {
    Dataset::read_jsonl(BufReader::new(File::open(path)?), lipschitz)
}

fn write_log(path: &Path, log: &SimLog) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    log.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_csv(path: &Path, log: &SimLog) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    log.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.exploration.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.io.out_dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

/// Outcome of [`run_explore`].
#[derive(Debug)]
pub struct ExploreRun {
    pub summary: ExploreSummary,
    pub dataset: Dataset,
    pub terminal: Option<TerminalArtifact>,
}

/// Runs exploration and writes `dataset.jsonl`, `terminal_set.json`,
/// `summary.json`, `explore_log.jsonl` and `config.json` into the output
/// directory. Budget exhaustion is reported in the summary, not as an error.
pub fn run_explore(cfg: &RunConfig) -> Result<ExploreRun> {
    let resolved = cfg.resolve()?;
    let out = PathBuf::from(&cfg.io.out_dir);
    std::fs::create_dir_all(&out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;

    let seed = cfg.exploration.seed;
    let mut plant = resolved.plant(seed)?;
    let mut dataset = resolved.empty_dataset(cfg.exploration.dataset_cap);
    let mut log = SimLog::new(seed, resolved.model.lipschitz());
    let result = explore(
        default_solver(),
        &mut plant,
        &mut dataset,
        &resolved.mpc,
        &resolved.explore_start,
        &resolved.explore,
        &mut log,
    );
    write_dataset(&out.join(DATASET_FILE), &dataset)?;
    write_log(&out.join(EXPLORE_LOG_FILE), &log)?;
    let (summary, terminal) = match result {
        Ok(o) => {
            let radius = o.terminal_set.chebyshev_center()?.1;
            let artifact = TerminalArtifact {
                terminal_set: o.terminal_set,
                global_bound: o.global_bound,
                chebyshev_radius: radius,
            };
            write_json(&out.join(TERMINAL_FILE), &artifact)?;
            (
                ExploreSummary {
                    seed,
                    j_stop: Some(o.j_stop),
                    terminal_radius: Some(radius),
                    history: o.history,
                    error: None,
                },
                Some(artifact),
            )
        }
        Err(e @ Error::ExplorationBudgetExhausted { .. }) => {
            let history = log
                .records
                .iter()
                .enumerate()
                .map(|(j, r)| ExploreStep {
                    j: j + 1,
                    bound_radius: f64::NAN,
                    terminal_radius: r.terminal_radius.unwrap_or(f64::NAN),
                })
                .collect();
            (
                ExploreSummary {
                    seed,
                    j_stop: None,
                    terminal_radius: None,
                    history,
                    error: Some(format!("{e}")),
                },
                None,
            )
        }
        Err(e) => return Err(e),
    };
    let file = SummaryFile {
        explore: Some(summary.clone()),
        control: None,
    };
    write_json(&out.join(SUMMARY_FILE), &file)?;
    Ok(ExploreRun {
        summary,
        dataset,
        terminal,
    })
}

/// Terminal set for a stored dataset: the dataset's own bound, intersected
/// with the bound saved next to it when present.
pub fn terminal_for_dataset(
    resolved: &Resolved,
    dataset: &Dataset,
    saved: Option<&TerminalArtifact>,
) -> Result<TerminalArtifact> {
    let prior = saved
        .map(|s| s.global_bound.clone())
        .unwrap_or_else(|| Polytope::universe(resolved.model.state_dim()));
    let (bound, terminal) = refresh_terminal_set(
        default_solver(),
        dataset,
        &resolved.mpc,
        &resolved.model,
        &prior,
        resolved.control.rpi_max_iter,
    )?;
    let radius = terminal.chebyshev_center()?.1;
    Ok(TerminalArtifact {
        terminal_set: terminal,
        global_bound: bound,
        chebyshev_radius: radius,
    })
}

#[derive(Debug)]
pub struct ControlRun {
    pub summary: ControlSummary,
    pub log: SimLog,
    pub lost: Option<(usize, MpcStatus)>,
}

/// Runs the control loop on a stored dataset and writes `simlog.jsonl`,
/// `trajectory.csv`, `summary.json`, `terminal_set.json`,
/// `control_dataset.jsonl` and `config.json`.
pub fn run_control(cfg: &RunConfig, dataset_path: &Path) -> Result<ControlRun> {
    let resolved = cfg.resolve()?;
    let out = PathBuf::from(&cfg.io.out_dir);
    std::fs::create_dir_all(&out)?;
    let mut dataset = read_dataset(dataset_path, resolved.model.lipschitz())?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset is empty; run explore first".into(),
        ));
    }
    let saved_path = dataset_path.with_file_name(TERMINAL_FILE);
    let saved: Option<TerminalArtifact> = if saved_path.exists() {
        Some(read_json(&saved_path)?)
    } else {
        None
    };
    let terminal = terminal_for_dataset(&resolved, &dataset, saved.as_ref())?;
    if terminal.terminal_set.is_empty()? {
        return Err(Error::InvalidArgument(
            "terminal set is empty for this dataset".into(),
        ));
    }
    write_json(&out.join(CONFIG_FILE), cfg)?;
    write_json(&out.join(TERMINAL_FILE), &terminal)?;
    write_dataset(&out.join(CONTROL_DATASET_FILE), &dataset)?;

    let seed = cfg.exploration.seed;
    let mut plant = resolved.plant(seed)?;
    let mut log = SimLog::new(seed, resolved.model.lipschitz());
    let mut mpc = resolved.mpc.clone();
    mpc.terminal_set = terminal.terminal_set.clone();
    let result = control_loop(
        default_solver(),
        &mut plant,
        &mut dataset,
        &mpc,
        &terminal.global_bound,
        &resolved.control_start,
        &resolved.control,
        &mut log,
    );
    let (lost, error, radii) = match result {
        Ok(o) => (None, None, o.terminal_radii),
        Err(Error::FeasibilityLost {
            step,
            status,
            log: failed,
        }) => {
            log = *failed;
            let radii = log
                .control_records()
                .filter_map(|r| r.terminal_radius)
                .collect();
            (
                Some((step, status)),
                Some(format!("feasibility lost at step {step} ({status:?})")),
                radii,
            )
        }
        Err(e) => return Err(e),
    };
    write_log(&out.join(SIMLOG_FILE), &log)?;
    write_csv(&out.join(TRAJECTORY_FILE), &log)?;
    let records: Vec<_> = log.control_records().collect();
    let all_optimal =
        lost.is_none() && records.iter().all(|r| r.status == Some(MpcStatus::Optimal));
    let constraints_satisfied = records
        .iter()
        .filter(|r| r.status == Some(MpcStatus::Optimal))
        .all(|r| {
            mpc.state_set.max_violation(&r.x) <= CONSTRAINT_TOL
                && mpc.state_set.max_violation(&r.x_next) <= CONSTRAINT_TOL
                && mpc.input_set.max_violation(&r.u) <= CONSTRAINT_TOL
        });
    let summary = ControlSummary {
        seed,
        steps_completed: records
            .iter()
            .filter(|r| r.status == Some(MpcStatus::Optimal))
            .count(),
        all_optimal,
        constraints_satisfied,
        failed_step: lost.map(|(s, _)| s),
        terminal_radii: radii,
        error,
    };
    let mut file = SummaryFile::load_or_default(&out);
    file.control = Some(summary.clone());
    write_json(&out.join(SUMMARY_FILE), &file)?;
    Ok(ControlRun { summary, log, lost })
}

/// One row of the verification table.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn row(name: &'static str, passed: bool, detail: impl Into<String>) -> CheckRow {
    CheckRow {
        name,
        passed,
        detail: detail.into(),
    }
}

/// Replays the run invariants against the artifacts in `dir`.
pub fn run_verify(dir: &Path) -> Result<Vec<CheckRow>> {
    for f in [
        CONFIG_FILE,
        SIMLOG_FILE,
        TRAJECTORY_FILE,
        TERMINAL_FILE,
        CONTROL_DATASET_FILE,
    ] {
        if !dir.join(f).exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing artifact {}", dir.join(f).display()),
            )));
        }
    }
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let resolved = cfg.resolve()?;
    let model = &resolved.model;
    let log = SimLog::read_jsonl(BufReader::new(File::open(dir.join(SIMLOG_FILE))?))?;
    let terminal: TerminalArtifact = read_json(&dir.join(TERMINAL_FILE))?;
    let mut rows = Vec::new();

    let dataset = read_dataset(&dir.join(CONTROL_DATASET_FILE), model.lipschitz());
    rows.push(match &dataset {
        Ok(ds) => row(
            "dataset Lipschitz consistency",
            true,
            format!("{} measurements", ds.len()),
        ),
        Err(e) => row("dataset Lipschitz consistency", false, e.to_string()),
    });

    let residual = dynamics_residual(model, &log);
    rows.push(row(
        "dynamics consistency",
        residual <= DYNAMICS_TOL,
        format!("max residual {residual:.3e}"),
    ));

    let control: Vec<_> = log.control_records().collect();
    let applied: Vec<_> = control
        .iter()
        .filter(|r| r.status == Some(MpcStatus::Optimal))
        .collect();
    let state_worst = applied
        .iter()
        .flat_map(|r| [&r.x, &r.x_next])
        .map(|x| resolved.mpc.state_set.max_violation(x))
        .fold(0.0, f64::max);
    rows.push(row(
        "state constraint",
        state_worst <= CONSTRAINT_TOL,
        format!("worst violation {state_worst:.3e}"),
    ));
    let input_worst = applied
        .iter()
        .map(|r| resolved.mpc.input_set.max_violation(&r.u))
        .fold(0.0, f64::max);
    rows.push(row(
        "input constraint",
        input_worst <= CONSTRAINT_TOL,
        format!("worst violation {input_worst:.3e}"),
    ));

    let not_optimal = control
        .iter()
        .find(|r| r.status != Some(MpcStatus::Optimal));
    rows.push(match not_optimal {
        None => row(
            "recursive feasibility",
            !control.is_empty(),
            format!("{} optimal steps", control.len()),
        ),
        Some(r) => row(
            "recursive feasibility",
            false,
            format!("step {} status {:?}", r.t, r.status),
        ),
    });

    // Envelope truthfulness: d ∈ D₀ and d in the envelope of the data held
    // before the step.
    let mut truth_fail = None;
    if let Ok(mut ds) = dataset {
        for (i, r) in applied.iter().enumerate() {
            let in_d0 = r.d0.as_ref().is_some_and(|p| p.contains(&r.d, 1e-9));
            let in_env = point_uncertainty_set(&ds, &r.x)
                .map(|s| s.contains(&r.d, 1e-9))
                .unwrap_or(false);
            if !(in_d0 && in_env) {
                truth_fail = Some(format!("step {}: in D0 {in_d0}, in envelope {in_env}", r.t));
                break;
            }
            if !cfg.control.freeze_dataset {
                let inserted = realize_uncertainty(model, &r.x, &r.u, &r.x_next)
                    .and_then(|d| Measurement::new(u64::MAX - i as u64, r.x.clone(), d))
                    .and_then(|m| ds.insert(m));
                if let Err(e) = inserted {
                    truth_fail = Some(format!("step {}: {e}", r.t));
                    break;
                }
            }
        }
    } else {
        truth_fail = Some("dataset unreadable".into());
    }
    rows.push(match truth_fail {
        None => row(
            "envelope truthfulness",
            true,
            format!("{} steps", applied.len()),
        ),
        Some(d) => row("envelope truthfulness", false, d),
    });

    let mut mpc = resolved.mpc.clone();
    mpc.terminal_set = terminal.terminal_set.clone();
    rows.push(
        match check_terminal_conditions(&mpc, model, &terminal.global_bound) {
            Ok(rep) => terminal_row(&rep),
            Err(e) => row("terminal set conditions", false, e.to_string()),
        },
    );

    if cfg.control.enlarge_terminal {
        let radii: Vec<f64> = control.iter().filter_map(|r| r.terminal_radius).collect();
        let ok = radii.windows(2).all(|w| w[1] >= w[0] - 1e-7);
        rows.push(row(
            "terminal set growth",
            ok,
            format!("{} radii", radii.len()),
        ));
    }

    rows.push(match csv_matches_log(&dir.join(TRAJECTORY_FILE), &log) {
        Ok(()) => row(
            "csv/jsonl consistency",
            true,
            format!("{} rows", control.len()),
        ),
        Err(e) => row("csv/jsonl consistency", false, e.to_string()),
    });
    Ok(rows)
}

fn terminal_row(rep: &TerminalReport) -> CheckRow {
    row(
        "terminal set conditions",
        rep.all_passed(),
        format!(
            "slacks: state {:.2e}, input {:.2e}, invariance {:.2e}",
            rep.state_constraints.worst_slack,
            rep.input_constraints.worst_slack,
            rep.invariance.worst_slack
        ),
    )
}

fn csv_matches_log(path: &Path, log: &SimLog) -> Result<()> {
    let mut expected = Vec::new();
    log.write_csv(&mut expected)?;
    let actual = std::fs::read(path)?;
    let parse = |bytes: &[u8]| -> Result<Vec<Vec<String>>> {
        csv::Reader::from_reader(bytes)
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(str::to_string).collect())
                    .map_err(|e| Error::Io(std::io::Error::other(e)))
            })
            .collect()
    };
    let (a, e) = (parse(&actual)?, parse(&expected)?);
    if a.len() != e.len() {
        return Err(Error::InvalidArgument(format!(
            "{} CSV rows vs {} log rows",
            a.len(),
            e.len()
        )));
    }
    for (i, (ra, re)) in a.iter().zip(&e).enumerate() {
        let same = ra.len() == re.len()
            && ra
                .iter()
                .zip(re)
                .all(|(x, y)| match (x.parse::<f64>(), y.parse::<f64>()) {
                    (Ok(p), Ok(q)) => (p - q).abs() <= 1e-12 * (1.0 + q.abs()),
                    _ => x == y,
                });
        if !same {
            return Err(Error::InvalidArgument(format!("row {i} differs")));
        }
    }
    Ok(())
}

pub fn print_table(rows: &[CheckRow]) {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in rows {
        println!(
            "{:width$}  {}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
}

/// Vertices of a bounded 2-D polytope in counter-clockwise order.
pub fn polygon_vertices(p: &Polytope) -> Vec<[f64; 2]> {
    if p.dim() != 2 {
        return Vec::new();
    }
    let (h, b) = (p.hmat(), p.hvec());
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for i in 0..p.num_rows() {
        for j in (i + 1)..p.num_rows() {
            let det = h[(i, 0)] * h[(j, 1)] - h[(i, 1)] * h[(j, 0)];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (b[i] * h[(j, 1)] - h[(i, 1)] * b[j]) / det;
            let y = (h[(i, 0)] * b[j] - b[i] * h[(j, 0)]) / det;
            let v = DVector::from_vec(vec![x, y]);
            if p.contains(&v, 1e-9)
                && !pts
                    .iter()
                    .any(|q| (q[0] - x).abs() + (q[1] - y).abs() < 1e-9)
            {
                pts.push([x, y]);
            }
        }
    }
    if pts.is_empty() {
        return pts;
    }
    let cx = pts.iter().map(|q| q[0]).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|q| q[1]).sum::<f64>() / pts.len() as f64;
    pts.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    pts
}

#[derive(Debug, Serialize)]
struct EnvelopeSnapshot {
    j: usize,
    center: Vec<f64>,
    #[serde(rename = "Q")]
    shape: Option<Vec<Vec<f64>>>,
    balls: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Serialize)]
struct QuerySeries {
    query: Vec<f64>,
    true_d: Vec<f64>,
    snapshots: Vec<EnvelopeSnapshot>,
}

/// Writes `plots/fig1_envelopes.json`, `plots/fig2_terminal_set.json` and
/// `plots/fig3_trajectory.csv` from the artifacts in `dir`.
pub fn run_export_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let resolved = cfg.resolve()?;
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let mut written = Vec::new();

    let dataset = read_dataset(&dir.join(DATASET_FILE), resolved.model.lipschitz())?;
    let plant = resolved.plant(cfg.exploration.seed)?;
    let upto = dataset.len().min(30);
    let mut series = Vec::new();
    for q in QUERY_POINTS
        .iter()
        .filter(|_| resolved.model.state_dim() == 2)
    {
        let x = DVector::from_vec(q.to_vec());
        let mut snapshots = Vec::new();
        for j in 1..=upto {
            let prefix = dataset.prefix(j);
            let cert = min_trace_ellipsoid(
                default_solver(),
                &prefix,
                &crate::geometry::Ellipsoid::point(x.clone()),
            )?;
            let set = point_uncertainty_set(&prefix, &x)?;
            snapshots.push(EnvelopeSnapshot {
                j,
                center: vector_to_vec(cert.ellipsoid.center()),
                shape: cert.ellipsoid.shape().map(crate::linalg::matrix_to_rows),
                balls: set
                    .balls
                    .iter()
                    .map(|b| (vector_to_vec(&b.center), b.radius))
                    .collect(),
            });
        }
        series.push(QuerySeries {
            query: q.to_vec(),
            true_d: vector_to_vec(&plant.uncertainty(&x)),
            snapshots,
        });
    }
    let p = plots.join("fig1_envelopes.json");
    write_json(&p, &series)?;
    written.push(p);

    if dir.join(TERMINAL_FILE).exists() {
        let t: TerminalArtifact = read_json(&dir.join(TERMINAL_FILE))?;
        let history: Option<Vec<ExploreStep>> =
            SummaryFile::load_or_default(dir).explore.map(|s| s.history);
        let p = plots.join("fig2_terminal_set.json");
        write_json(
            &p,
            &serde_json::json!({
                "terminal_set": polygon_vertices(&t.terminal_set),
                "state_set": polygon_vertices(&resolved.mpc.state_set),
                "global_bound": polygon_vertices(&t.global_bound),
                "chebyshev_radius": t.chebyshev_radius,
                "exploration_history": history,
            }),
        )?;
        written.push(p);
    }

    if dir.join(SIMLOG_FILE).exists() {
        let log = SimLog::read_jsonl(BufReader::new(File::open(dir.join(SIMLOG_FILE))?))?;
        let p = plots.join("fig3_trajectory.csv");
        write_csv(&p, &log)?;
        written.push(p);
    }
    Ok(written)
}

/// Parses arguments and runs a subcommand; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Explore(args) => {
            let cfg = match load_config(&args) {
                Ok(c) => c,
                Err(e) => return input_error(e),
            };
            match run_explore(&cfg) {
                Ok(run) => match run.summary.j_stop {
                    Some(j) => {
                        println!(
                            "terminal set nonempty after {j} measurements (Chebyshev radius {:.6})",
                            run.summary.terminal_radius.unwrap_or(f64::NAN)
                        );
                        EXIT_OK
                    }
                    None => {
                        eprintln!("{}", run.summary.error.unwrap_or_default());
                        EXIT_FAILED
                    }
                },
                Err(e) => input_error(e),
            }
        }
        Command::Control(args) => {
            let mut cfg = match load_config(&args.common) {
                Ok(c) => c,
                Err(e) => return input_error(e),
            };
            cfg.control.freeze_dataset |= args.freeze_dataset;
            cfg.io.snapshot_sets |= args.snapshot_sets;
            let dataset = args
                .dataset
                .clone()
                .unwrap_or_else(|| PathBuf::from(&cfg.io.out_dir).join(DATASET_FILE));
            match run_control(&cfg, &dataset) {
                Ok(run) => {
                    if let Some((step, status)) = run.lost {
                        eprintln!("feasibility lost at step {step} ({status:?})");
                        EXIT_INFEASIBLE
                    } else if !run.summary.constraints_satisfied {
                        eprintln!("constraint violated in the closed loop");
                        EXIT_INFEASIBLE
                    } else {
                        println!("{} control steps, all optimal", run.summary.steps_completed);
                        EXIT_OK
                    }
                }
                Err(e) => input_error(e),
            }
        }
        Command::Verify { out } => match run_verify(&out) {
            Ok(rows) => {
                print_table(&rows);
                if rows.iter().all(|r| r.passed) {
                    EXIT_OK
                } else {
                    EXIT_FAILED
                }
            }
            Err(e) => input_error(e),
        },
        Command::ExportPlots { out } => match run_export_plots(&out) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                EXIT_OK
            }
            Err(e) => input_error(e),
        },
    }
}

fn input_error(e: Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_INPUT
}
