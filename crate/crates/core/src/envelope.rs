//! Nonparametric learning of the state-dependent uncertainty `d(·)`.
//!
//! Each measurement `(xᵢ, dᵢ)` of an `L`-Lipschitz function yields the
//! quadratic constraint `‖d - dᵢ‖² ≤ L²‖x - xᵢ‖²`, an envelope of the graph of
//! `d`. Intersecting the envelopes and slicing at a query state gives the
//! pointwise uncertainty set `D(x)`: an intersection of balls.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::serde_dvec;

/// Slack on the pairwise Lipschitz check.
pub const LIPSCHITZ_TOL: f64 = 1e-9;
/// States closer than this are treated as the same measurement site.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Nominal linear model `x⁺ = Ax + Bu + d(x)` with a known Lipschitz bound
/// on `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    lipschitz: f64,
}

impl LipschitzModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, lipschitz: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension("A must be square and nonempty".into()));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B is {:?}, expected {} rows",
                b.shape(),
                a.nrows()
            )));
        }
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Lipschitz constant must be finite and nonnegative, got {lipschitz}"
            )));
        }
        Ok(Self { a, b, lipschitz })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `x⁺ = Ax + Bu + d`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + d
    }
}

/// Recovers the uncertainty realization `x⁺ - Ax - Bu`.
pub fn realize_uncertainty(
    model: &LipschitzModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_next: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = model.state_dim();
    if x.len() != n || x_next.len() != n || u.len() != model.input_dim() {
        return Err(Error::Dimension("realize_uncertainty operands".into()));
    }
    Ok(x_next - model.a() * x - model.b() * u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: u64,
    #[serde(with = "serde_dvec")]
    pub x: DVector<f64>,
    #[serde(with = "serde_dvec")]
    pub d: DVector<f64>,
}

impl Measurement {
    pub fn new(t: u64, x: DVector<f64>, d: DVector<f64>) -> Result<Self> {
        if x.len() != d.len() {
            return Err(Error::Dimension(
                "measurement x and d lengths differ".into(),
            ));
        }
        if x.iter().chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite measurement".into()));
        }
        Ok(Self { t, x, d })
    }
}

/// Outcome of [`Dataset::insert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Added,
    /// A measurement at the same state is already stored; the first is kept.
    Duplicate,
}

/// Append-only, Lipschitz-consistent measurement memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    lipschitz: f64,
    measurements: Vec<Measurement>,
    cap: Option<usize>,
}

impl Dataset {
    pub fn new(lipschitz: f64) -> Self {
        Self {
            lipschitz,
            measurements: Vec::new(),
            cap: None,
        }
    }

    /// Keeps at most `cap` measurements, chosen by greedy max-min distance in
    /// state space.
    pub fn with_cap(mut self, cap: Option<usize>) -> Self {
        self.cap = cap.filter(|c| *c > 0);
        self.enforce_cap();
        self
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    /// The first `len` measurements as an independent dataset.
    pub fn prefix(&self, len: usize) -> Dataset {
        Dataset {
            lipschitz: self.lipschitz,
            measurements: self.measurements[..len.min(self.len())].to_vec(),
            cap: self.cap,
        }
    }

    /// Rejects the measurement if it contradicts the Lipschitz bound against
    /// any stored one.
    pub fn insert(&mut self, m: Measurement) -> Result<Insertion> {
        if let Some(first) = self.measurements.first() {
            if first.x.len() != m.x.len() {
                return Err(Error::Dimension("measurement dimension changed".into()));
            }
        }
        for other in &self.measurements {
            let dx = (&m.x - &other.x).norm();
            if dx <= DUPLICATE_TOL {
                return Ok(Insertion::Duplicate);
            }
            let dd = (&m.d - &other.d).norm();
            if dd > self.lipschitz * dx + LIPSCHITZ_TOL {
                return Err(Error::LipschitzViolation(format!(
                    "measurements t={} and t={}: ‖Δd‖ = {dd:.3e} > L‖Δx‖ = {:.3e}",
                    other.t,
                    m.t,
                    self.lipschitz * dx
                )));
            }
        }
        self.measurements.push(m);
        self.enforce_cap();
        Ok(Insertion::Added)
    }

    fn enforce_cap(&mut self) {
        let Some(cap) = self.cap else { return };
        if self.measurements.len() <= cap {
            return;
        }
        // Farthest-point sampling seeded with the earliest measurement.
        let n = self.measurements.len();
        let mut chosen = vec![false; n];
        let mut dist = vec![f64::INFINITY; n];
        let mut next = 0;
        for _ in 0..cap {
            chosen[next] = true;
            for j in 0..n {
                let d = (&self.measurements[j].x - &self.measurements[next].x).norm();
                dist[j] = dist[j].min(d);
            }
            next = (0..n)
                .filter(|j| !chosen[*j])
                .max_by(|a, b| dist[*a].total_cmp(&dist[*b]))
                .unwrap_or(0);
        }
        let mut idx = 0;
        self.measurements.retain(|_| {
            idx += 1;
            chosen[idx - 1]
        });
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for m in &self.measurements {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Loads measurements in file order; each one passes through
    /// [`Dataset::insert`], so inconsistent files are rejected.
    pub fn read_jsonl<R: BufRead>(r: R, lipschitz: f64) -> Result<Dataset> {
        let mut ds = Dataset::new(lipschitz);
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let m: Measurement = serde_json::from_str(&line)?;
            ds.insert(m)?;
        }
        Ok(ds)
    }
}

/// Matrix `Qc` of the quadratic constraint `[x; d; 1]ᵀ Qc [x; d; 1] ≤ 0`
/// implied by one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeQc {
    matrix: DMatrix<f64>,
}

impl EnvelopeQc {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn quadratic_form(&self, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let n = x.len();
        let mut z = DVector::zeros(2 * n + 1);
        z.rows_mut(0, n).copy_from(x);
        z.rows_mut(n, n).copy_from(d);
        z[2 * n] = 1.0;
        z.dot(&(&self.matrix * &z))
    }
}

/// `[-L²I, 0, L²xᵢ; 0, I, -dᵢ; L²xᵢᵀ, -dᵢᵀ, -L²xᵢᵀxᵢ + dᵢᵀdᵢ]`.
pub fn qc_matrix(model: &LipschitzModel, meas: &Measurement) -> EnvelopeQc {
    qc_matrix_raw(model.lipschitz(), &meas.x, &meas.d)
}

pub(crate) fn qc_matrix_raw(l: f64, xi: &DVector<f64>, di: &DVector<f64>) -> EnvelopeQc {
    let n = xi.len();
    let l2 = l * l;
    let mut m = DMatrix::zeros(2 * n + 1, 2 * n + 1);
    for k in 0..n {
        m[(k, k)] = -l2;
        m[(n + k, n + k)] = 1.0;
        m[(k, 2 * n)] = l2 * xi[k];
        m[(2 * n, k)] = l2 * xi[k];
        m[(n + k, 2 * n)] = -di[k];
        m[(2 * n, n + k)] = -di[k];
    }
    m[(2 * n, 2 * n)] = -l2 * xi.dot(xi) + di.dot(di);
    EnvelopeQc { matrix: m }
}

/// Euclidean ball `{z : ‖z - center‖ ≤ radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    #[serde(with = "serde_dvec")]
    pub center: DVector<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        (z - &self.center).norm() <= self.radius + tol
    }
}

/// Slice of one measurement's envelope at state `x`: the ball
/// `(dᵢ, L‖x - xᵢ‖)`.
pub fn sampled_range_set(model: &LipschitzModel, meas: &Measurement, x: &DVector<f64>) -> Ball {
    Ball {
        center: meas.d.clone(),
        radius: model.lipschitz() * (x - &meas.x).norm(),
    }
}

/// `D(x)`: the intersection of all sampled range sets, kept as a ball list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointUncertaintySet {
    #[serde(with = "serde_dvec")]
    pub x: DVector<f64>,
    pub balls: Vec<Ball>,
}

impl PointUncertaintySet {
    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.balls.iter().all(|b| b.contains(z, tol))
    }

    /// Smallest ball of the list; a cheap enclosing set.
    pub fn tightest_ball(&self) -> &Ball {
        self.balls
            .iter()
            .min_by(|a, b| a.radius.total_cmp(&b.radius))
            .expect("nonempty")
    }
}

pub fn point_uncertainty_set(dataset: &Dataset, x: &DVector<f64>) -> Result<PointUncertaintySet> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let l = dataset.lipschitz();
    let balls: Vec<Ball> = dataset
        .measurements()
        .iter()
        .map(|m| Ball {
            center: m.d.clone(),
            radius: l * (x - &m.x).norm(),
        })
        .collect();
    for i in 0..balls.len() {
        for j in (i + 1)..balls.len() {
            let gap = (&balls[i].center - &balls[j].center).norm();
            if gap > balls[i].radius + balls[j].radius + LIPSCHITZ_TOL {
                return Err(Error::ModelInconsistent(format!(
                    "sampled range sets {i} and {j} are disjoint at the query state"
                )));
            }
        }
    }
    Ok(PointUncertaintySet {
        x: x.clone(),
        balls,
    })
}
