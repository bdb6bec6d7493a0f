//! JSON run configuration. Every field has a default, and an empty file
//! gives the two-state reference example.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::{Dataset, LipschitzModel};
use crate::error::{Error, Result};
use crate::geometry::{Polytope, DEFAULT_MAX_ITER};
use crate::linalg::matrix_from_rows;
use crate::mpc::{terminal_cost_and_gain, MpcConfig};
use crate::sim::{ControlOptions, ExploreOptions, Plant, UncertaintyFn};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub constraints: ConstraintConfig,
    pub mpc: MpcBlock,
    pub exploration: ExplorationConfig,
    pub control: ControlConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub lipschitz: f64,
    pub uncertainty: UncertaintySpec,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            a: vec![vec![1.2, 1.5], vec![0.0, 1.3]],
            b: vec![vec![0.0], vec![1.0]],
            lipschitz: 0.05,
            uncertainty: UncertaintySpec::Atan { scale: 0.05 },
        }
    }
}

/// True uncertainty used by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintySpec {
    /// `scale · (atan x₁, x₂, …)`
    Atan {
        scale: f64,
    },
    Zero,
}

/// A polytope given either by box bounds or by `{x : Hx ≤ h}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub hmat: Option<Vec<Vec<f64>>>,
    #[serde(rename = "h", default, skip_serializing_if = "Option::is_none")]
    pub hvec: Option<Vec<f64>>,
}

impl SetSpec {
    pub fn bounds(lower: &[f64], upper: &[f64]) -> Self {
        Self {
            lower: Some(lower.to_vec()),
            upper: Some(upper.to_vec()),
            ..Default::default()
        }
    }

    pub fn to_polytope(&self, field: &str) -> Result<Polytope> {
        match (&self.lower, &self.upper, &self.hmat, &self.hvec) {
            (Some(lo), Some(hi), None, None) => {
                Polytope::from_bounds(lo, hi).map_err(|e| Error::Config(format!("{field}: {e}")))
            }
            (None, None, Some(h), Some(v)) => {
                let cols = h.first().map_or(0, Vec::len);
                let hm = matrix_from_rows(h, cols)
                    .ok_or_else(|| Error::Config(format!("{field}.H: ragged rows")))?;
                Polytope::new(hm, DVector::from_vec(v.clone()))
                    .map_err(|e| Error::Config(format!("{field}: {e}")))
            }
            _ => Err(Error::Config(format!(
                "{field}: give either lower/upper or H/h"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    #[serde(rename = "X")]
    pub state: SetSpec,
    #[serde(rename = "U")]
    pub input: SetSpec,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            state: SetSpec::bounds(&[-1.0, -1.0], &[1.0, 3.0]),
            input: SetSpec::bounds(&[-4.0], &[1.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcBlock {
    pub horizon: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub terminal: TerminalConfig,
}

impl Default for MpcBlock {
    fn default() -> Self {
        Self {
            horizon: 3,
            q: vec![vec![10.0, 0.0], vec![0.0, 10.0]],
            r: vec![vec![2.0]],
            terminal: TerminalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminalConfig {
    pub rpi_max_iter: usize,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        Self {
            rpi_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub max_steps: usize,
    /// Measurements to collect even after the terminal set is nonempty.
    pub min_steps: usize,
    pub seed: u64,
    pub dataset_cap: Option<usize>,
    pub x_start: Vec<f64>,
    /// `null` lets the exploration state run free.
    pub reset_scale: Option<f64>,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            max_steps: 200,
            min_steps: 0,
            seed: 7,
            dataset_cap: None,
            x_start: vec![-1.0, 2.0],
            reset_scale: Some(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub x_start: Vec<f64>,
    pub steps: usize,
    pub enlarge_terminal: bool,
    pub freeze_dataset: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            x_start: vec![-1.0, 2.0],
            steps: 20,
            enlarge_terminal: false,
            freeze_dataset: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: String,
    pub snapshot_sets: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: "out".into(),
            snapshot_sets: false,
        }
    }
}

/// Everything a run needs, built and checked from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: LipschitzModel,
    /// `terminal_set` is the whole space until exploration fills it in.
    pub mpc: MpcConfig,
    pub uncertainty: UncertaintyFn,
    pub explore: ExploreOptions,
    pub control: ControlOptions,
    pub explore_start: DVector<f64>,
    pub control_start: DVector<f64>,
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Config(format!("{field}: empty matrix")));
    }
    matrix_from_rows(rows, cols).ok_or_else(|| Error::Config(format!("{field}: ragged rows")))
}

impl RunConfig {
    /// Parses JSON; an empty or whitespace-only text gives the defaults.
    /// Errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let a = matrix(&self.system.a, "system.A")?;
        let b = matrix(&self.system.b, "system.B")?;
        let model = LipschitzModel::new(a, b, self.system.lipschitz)
            .map_err(|e| Error::Config(format!("system: {e}")))?;
        let (n, m) = (model.state_dim(), model.input_dim());
        let state_set = self.constraints.state.to_polytope("constraints.X")?;
        let input_set = self.constraints.input.to_polytope("constraints.U")?;
        if state_set.dim() != n {
            return Err(Error::Config(format!(
                "constraints.X: dimension {} but A is {n}×{n}",
                state_set.dim()
            )));
        }
        if input_set.dim() != m {
            return Err(Error::Config(format!(
                "constraints.U: dimension {} but B has {m} columns",
                input_set.dim()
            )));
        }
        let q = matrix(&self.mpc.q, "mpc.Q")?;
        let r = matrix(&self.mpc.r, "mpc.R")?;
        if q.shape() != (n, n) {
            return Err(Error::Config(format!("mpc.Q: expected {n}×{n}")));
        }
        if r.shape() != (m, m) {
            return Err(Error::Config(format!("mpc.R: expected {m}×{m}")));
        }
        let (p_n, k) = terminal_cost_and_gain(&model, &q, &r)?;
        let mpc = MpcConfig {
            horizon: self.mpc.horizon,
            q,
            r,
            p_n,
            k,
            state_set,
            input_set,
            terminal_set: Polytope::universe(n),
        };
        mpc.validate()
            .map_err(|e| Error::Config(format!("mpc: {e}")))?;
        for (field, v) in [
            ("exploration.x_start", &self.exploration.x_start),
            ("control.x_start", &self.control.x_start),
        ] {
            if v.len() != n {
                return Err(Error::Config(format!("{field}: expected {n} entries")));
            }
        }
        let uncertainty = match self.system.uncertainty {
            UncertaintySpec::Atan { scale } => UncertaintyFn::Atan { scale },
            UncertaintySpec::Zero => UncertaintyFn::Zero,
        };
        Ok(Resolved {
            model,
            mpc,
            uncertainty,
            explore: ExploreOptions {
                max_steps: self.exploration.max_steps,
                min_steps: self.exploration.min_steps,
                reset_scale: self.exploration.reset_scale,
                rpi_max_iter: self.mpc.terminal.rpi_max_iter,
            },
            control: ControlOptions {
                steps: self.control.steps,
                enlarge_terminal: self.control.enlarge_terminal,
                freeze_dataset: self.control.freeze_dataset,
                snapshot_sets: self.io.snapshot_sets,
                rpi_max_iter: self.mpc.terminal.rpi_max_iter,
            },
            explore_start: DVector::from_vec(self.exploration.x_start.clone()),
            control_start: DVector::from_vec(self.control.x_start.clone()),
        })
    }
}

impl Resolved {
    /// Region on which the plant's uncertainty is spot-checked: the state box
    /// scaled by 3 about its center.
    pub fn check_region(&self) -> Result<Polytope> {
        let (lo, hi) = self.mpc.state_set.bounding_box()?;
        let c = (&lo + &hi) * 0.5;
        let half = (&hi - &lo) * 1.5;
        let lo: Vec<f64> = (&c - &half).iter().copied().collect();
        let hi: Vec<f64> = (&c + &half).iter().copied().collect();
        Polytope::from_bounds(&lo, &hi)
    }

    pub fn plant(&self, seed: u64) -> Result<Plant> {
        Plant::new(
            self.model.clone(),
            self.uncertainty.clone(),
            seed,
            &self.check_region()?,
        )
    }

    pub fn empty_dataset(&self, cap: Option<usize>) -> Dataset {
        Dataset::new(self.model.lipschitz()).with_cap(cap)
    }
}
