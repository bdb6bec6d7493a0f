use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows, vector_to_vec};
use crate::solver::{default_solver, ConicProblem, ConicSolver, ConicStatus};

/// Slack allowed when deciding a row is implied by the others.
pub const REDUNDANCY_TOL: f64 = 1e-9;
/// Tolerance of set equality / inclusion tests.
pub const SET_EQ_TOL: f64 = 1e-7;
/// Chebyshev radii below `-EMPTY_TOL` certify emptiness.
pub const EMPTY_TOL: f64 = 1e-8;

/// H-representation `{x : Hx ≤ h}`. Zero rows is the whole space.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    dim: usize,
    hmat: DMatrix<f64>,
    hvec: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    #[serde(rename = "H")]
    hmat: Vec<Vec<f64>>,
    h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl Serialize for Polytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolytopeJson {
            hmat: matrix_to_rows(&self.hmat),
            h: vector_to_vec(&self.hvec),
            // Needed to recover the dimension of a universe.
            dim: (self.num_rows() == 0).then_some(self.dim),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PolytopeJson::deserialize(d)?;
        let dim = raw
            .hmat
            .first()
            .map(|r| r.len())
            .or(raw.dim)
            .ok_or_else(|| serde::de::Error::custom("empty H without \"dim\""))?;
        let hmat = matrix_from_rows(&raw.hmat, dim)
            .ok_or_else(|| serde::de::Error::custom("ragged H matrix"))?;
        Polytope::new(hmat, DVector::from_vec(raw.h)).map_err(serde::de::Error::custom)
    }
}

impl Polytope {
    pub fn new(hmat: DMatrix<f64>, hvec: DVector<f64>) -> Result<Self> {
        if hmat.nrows() != hvec.len() {
            return Err(Error::Dimension(format!(
                "H has {} rows but h has {} entries",
                hmat.nrows(),
                hvec.len()
            )));
        }
        if hmat.iter().chain(hvec.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite polytope data".into()));
        }
        Ok(Self {
            dim: hmat.ncols(),
            hmat,
            hvec,
        })
    }

    pub fn universe(dim: usize) -> Self {
        Self {
            dim,
            hmat: DMatrix::zeros(0, dim),
            hvec: DVector::zeros(0),
        }
    }

    /// Axis-aligned box `lower ≤ x ≤ upper`.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("bound lengths differ".into()));
        }
        let n = lower.len();
        let mut hmat = DMatrix::zeros(2 * n, n);
        let mut hvec = DVector::zeros(2 * n);
        for i in 0..n {
            hmat[(2 * i, i)] = 1.0;
            hvec[2 * i] = upper[i];
            hmat[(2 * i + 1, i)] = -1.0;
            hvec[2 * i + 1] = -lower[i];
        }
        Self::new(hmat, hvec)
    }

    /// The single point `{p}` as a degenerate box.
    pub fn singleton(p: &DVector<f64>) -> Self {
        let v = vector_to_vec(p);
        Self::from_bounds(&v, &v).expect("finite point")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.hmat.nrows()
    }

    pub fn is_universe(&self) -> bool {
        self.num_rows() == 0
    }

    pub fn hmat(&self) -> &DMatrix<f64> {
        &self.hmat
    }

    pub fn hvec(&self) -> &DVector<f64> {
        &self.hvec
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// `max_i (H_i x - h_i)`, or −∞ for the universe.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.hmat * x - &self.hvec)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row-stacks the two representations (no redundancy removal).
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "intersecting polytopes of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        let rows = self.num_rows() + other.num_rows();
        let mut hmat = DMatrix::zeros(rows, self.dim);
        hmat.rows_mut(0, self.num_rows()).copy_from(&self.hmat);
        hmat.rows_mut(self.num_rows(), other.num_rows())
            .copy_from(&other.hmat);
        let hvec = DVector::from_iterator(rows, self.hvec.iter().chain(other.hvec.iter()).copied());
        Polytope::new(hmat, hvec)
    }

    /// `{x : M x ∈ self}`.
    pub fn preimage(&self, map: &DMatrix<f64>) -> Result<Polytope> {
        if map.nrows() != self.dim {
            return Err(Error::Dimension("preimage map rows".into()));
        }
        Polytope::new(&self.hmat * map, self.hvec.clone())
    }

    /// `{x + t : x ∈ self}`.
    pub fn translate(&self, t: &DVector<f64>) -> Polytope {
        let hvec = &self.hvec + &self.hmat * t;
        Polytope::new(self.hmat.clone(), hvec).expect("same shape")
    }

    /// Center and radius of the largest inscribed Euclidean ball. A negative
    /// radius means the polytope is empty.
    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64)> {
        chebyshev_center_with(default_solver(), self)
    }

    /// `max { dirᵀx : x ∈ self }`.
    pub fn support(&self, dir: &DVector<f64>) -> Result<f64> {
        support_function_with(default_solver(), self, dir)
    }

    /// Unbounded sets are nonempty.
    pub fn is_empty(&self) -> Result<bool> {
        match self.chebyshev_center() {
            Ok((_, r)) => Ok(r < -EMPTY_TOL),
            Err(Error::Unbounded) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Tight axis-aligned bounds `(lower, upper)`.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut lo = DVector::zeros(self.dim);
        let mut hi = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let mut e = DVector::zeros(self.dim);
            e[i] = 1.0;
            hi[i] = self.support(&e)?;
            lo[i] = -self.support(&-e)?;
        }
        Ok((lo, hi))
    }

    /// `other ⊆ self`, tested row-wise with support functions of `other`.
    pub fn contains_polytope(&self, other: &Polytope, tol: f64) -> Result<bool> {
        for i in 0..self.num_rows() {
            let row = self.hmat.row(i).transpose();
            match other.support(&row) {
                Ok(v) if v <= self.hvec[i] + tol => {}
                Ok(_) | Err(Error::Unbounded) => return Ok(false),
                Err(Error::Empty) => return Ok(true),
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }

    /// Equality by mutual inclusion within [`SET_EQ_TOL`].
    pub fn set_eq(&self, other: &Polytope) -> Result<bool> {
        Ok(self.contains_polytope(other, SET_EQ_TOL)?
            && other.contains_polytope(self, SET_EQ_TOL)?)
    }

    /// Normalizes rows, drops duplicates and removes every row implied by the
    /// remaining ones (one LP per row). Empty polytopes are returned with
    /// normalized rows only.
    pub fn remove_redundant(&self) -> Result<Polytope> {
        let solver = default_solver();
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(self.num_rows());
        for i in 0..self.num_rows() {
            let a = self.hmat.row(i).transpose();
            let norm = a.norm();
            let b = self.hvec[i];
            if norm < 1e-12 {
                if b < 0.0 {
                    // 0 ≤ b < 0: the whole set is empty.
                    return Polytope::new(DMatrix::zeros(1, self.dim), DVector::from_element(1, b));
                }
                continue;
            }
            let (a, b) = (a / norm, b / norm);
            if let Some(existing) = rows.iter_mut().find(|(r, _)| (r - &a).amax() < 1e-12) {
                existing.1 = existing.1.min(b);
            } else {
                rows.push((a, b));
            }
        }
        let stacked = from_row_list(self.dim, &rows)?;
        if stacked.is_universe() || chebyshev_center_with(solver, &stacked)?.1 < -EMPTY_TOL {
            return Ok(stacked);
        }

        let mut keep: Vec<bool> = vec![true; rows.len()];
        for i in 0..rows.len() {
            let mut prob = ConicProblem::new(self.dim);
            for (j, (a, b)) in rows.iter().enumerate() {
                if j == i || !keep[j] {
                    continue;
                }
                prob.add_inequality(sparse(a), *b);
            }
            let (a, b) = &rows[i];
            // Relaxed copy of the row keeps the LP bounded.
            prob.add_inequality(sparse(a), b + 1.0);
            for (k, c) in a.iter().enumerate() {
                prob.set_linear_cost(k, -c);
            }
            let sol = solver.solve(&prob)?;
            if sol.status.is_solved() && -sol.objective <= b + REDUNDANCY_TOL {
                keep[i] = false;
            }
        }
        let kept: Vec<_> = rows
            .into_iter()
            .zip(keep)
            .filter_map(|(r, k)| k.then_some(r))
            .collect();
        from_row_list(self.dim, &kept)
    }

    /// Vertices of an axis-aligned box enclosing the polytope.
    pub fn bounding_box_vertices(&self) -> Result<Vec<DVector<f64>>> {
        let (lo, hi) = self.bounding_box()?;
        Ok(box_vertices(&lo, &hi))
    }
}

/// All `2^n` corners of `[lo, hi]`.
pub fn box_vertices(lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = lo.len();
    (0..(1usize << n))
        .map(|mask| DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }))
        .collect()
}

fn sparse(a: &DVector<f64>) -> Vec<(usize, f64)> {
    a.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

fn from_row_list(dim: usize, rows: &[(DVector<f64>, f64)]) -> Result<Polytope> {
    let hmat = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].0[j]);
    let hvec = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    Polytope::new(hmat, hvec)
}

pub fn chebyshev_center_with(
    solver: &dyn ConicSolver,
    poly: &Polytope,
) -> Result<(DVector<f64>, f64)> {
    let n = poly.dim();
    if poly.is_universe() {
        return Err(Error::Unbounded);
    }
    let mut prob = ConicProblem::new(n + 1);
    prob.set_linear_cost(n, -1.0);
    for i in 0..poly.num_rows() {
        let a = poly.hmat().row(i).transpose();
        let mut row = sparse(&a);
        row.push((n, a.norm()));
        prob.add_inequality(row, poly.hvec()[i]);
    }
    let sol = solver.solve(&prob)?;
    match sol.status {
        s if s.is_solved() => Ok((DVector::from_column_slice(&sol.x[..n]), sol.x[n])),
        // Only reachable through zero rows with negative offsets.
        ConicStatus::Infeasible => Ok((DVector::zeros(n), f64::NEG_INFINITY)),
        ConicStatus::Unbounded => Err(Error::Unbounded),
        _ => Err(Error::SolverFailure(format!(
            "Chebyshev LP: {}",
            sol.detail
        ))),
    }
}

pub fn support_function_with(
    solver: &dyn ConicSolver,
    poly: &Polytope,
    dir: &DVector<f64>,
) -> Result<f64> {
    if dir.len() != poly.dim() {
        return Err(Error::Dimension("support direction".into()));
    }
    if dir.amax() == 0.0 {
        return Ok(0.0);
    }
    if poly.is_universe() {
        return Err(Error::Unbounded);
    }
    let mut prob = ConicProblem::new(poly.dim());
    for (k, c) in dir.iter().enumerate() {
        prob.set_linear_cost(k, -c);
    }
    for i in 0..poly.num_rows() {
        prob.add_inequality(sparse(&poly.hmat().row(i).transpose()), poly.hvec()[i]);
    }
    let sol = solver.solve(&prob)?;
    match sol.status {
        s if s.is_solved() => Ok(-sol.objective),
        ConicStatus::Infeasible => Err(Error::Empty),
        ConicStatus::Unbounded => Err(Error::Unbounded),
        _ => Err(Error::SolverFailure(format!("support LP: {}", sol.detail))),
    }
}
