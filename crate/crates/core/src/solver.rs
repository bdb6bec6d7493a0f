//! Abstract conic-program interface and the Clarabel backend.
//!
//! Every optimization in the crate (LPs for polytope operations, the
//! s-procedure SDPs, the robust MPC QP) is expressed as a [`ConicProblem`]:
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx
//! subject to  aᵢᵀx  = bᵢ              (equalities)
//!             aⱼᵀx ≤ bⱼ              (inequalities)
//!             F₀ + Σ xᵢ Fᵢ ⪯ 0        (linear matrix inequalities)
//! ```
//!
//! and handed to a [`ConicSolver`]. Backends only need to honour this
//! contract, so tests can swap them.

use std::sync::OnceLock;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sparse linear row `Σ coeff·x[idx]`.
pub type SparseRow = Vec<(usize, f64)>;

pub trait SparseRowExt {
    /// Appends `(index, coeff)` unless `coeff` is zero.
    fn push_nonzero(&mut self, index: usize, coeff: f64);
}

impl SparseRowExt for SparseRow {
    fn push_nonzero(&mut self, index: usize, coeff: f64) {
        if coeff != 0.0 {
            self.push((index, coeff));
        }
    }
}

/// Affine matrix function `constant + Σ x[idx]·coeff` constrained to be ⪯ 0.
#[derive(Debug, Clone)]
pub struct Lmi {
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl Lmi {
    pub fn new(constant: DMatrix<f64>) -> Self {
        Self {
            constant,
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `coeff · x[var]`; repeated variables accumulate.
    pub fn add_term(&mut self, var: usize, coeff: DMatrix<f64>) {
        if let Some((_, m)) = self.terms.iter_mut().find(|(v, _)| *v == var) {
            *m += coeff;
        } else {
            self.terms.push((var, coeff));
        }
    }

    /// Evaluates the matrix at `x`.
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coeff) in &self.terms {
            out += coeff * x[*var];
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    num_vars: usize,
    quadratic: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    equalities: Vec<(SparseRow, f64)>,
    inequalities: Vec<(SparseRow, f64)>,
    lmis: Vec<Lmi>,
}

impl ConicProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            linear: vec![0.0; num_vars],
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Appends a fresh variable and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.linear.push(0.0);
        self.num_vars - 1
    }

    pub fn set_linear_cost(&mut self, var: usize, coeff: f64) {
        self.linear[var] = coeff;
    }

    pub fn linear_cost(&self) -> &[f64] {
        &self.linear
    }

    /// Adds `coeff` to entry `(i, j)` of the symmetric matrix `P` (and its
    /// mirror). The objective carries the usual ½ factor.
    pub fn add_quadratic(&mut self, i: usize, j: usize, coeff: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.quadratic.push((r, c, coeff));
    }

    pub fn add_equality(&mut self, row: SparseRow, rhs: f64) {
        self.equalities.push((row, rhs));
    }

    pub fn add_inequality(&mut self, row: SparseRow, rhs: f64) {
        self.inequalities.push((row, rhs));
    }

    /// `lower ≤ x[var]`.
    pub fn add_lower_bound(&mut self, var: usize, lower: f64) {
        self.inequalities.push((vec![(var, -1.0)], -lower));
    }

    pub fn add_lmi(&mut self, lmi: Lmi) {
        self.lmis.push(lmi);
    }

    pub fn lmis(&self) -> &[Lmi] {
        &self.lmis
    }

    /// Objective value at `x`, computed from the stored data.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let mut val: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        for &(i, j, c) in &self.quadratic {
            if i == j {
                val += 0.5 * c * x[i] * x[i];
            } else {
                val += c * x[i] * x[j];
            }
        }
        val
    }

    /// Largest constraint violation at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |row: &SparseRow| row.iter().map(|&(i, c)| c * x[i]).sum::<f64>();
        let mut worst = 0.0_f64;
        for (row, rhs) in &self.equalities {
            worst = worst.max((dot(row) - rhs).abs());
        }
        for (row, rhs) in &self.inequalities {
            worst = worst.max(dot(row) - rhs);
        }
        for lmi in &self.lmis {
            worst = worst.max(crate::linalg::max_eigenvalue(&lmi.evaluate(x)));
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Solved,
    /// Solved to reduced accuracy.
    AlmostSolved,
    Infeasible,
    /// Objective unbounded below (dual infeasible).
    Unbounded,
    Failed,
}

impl ConicStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, ConicStatus::Solved | ConicStatus::AlmostSolved)
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub detail: String,
}

/// A backend able to solve [`ConicProblem`]s. Implementations must be
/// re-entrant: the crate calls them from independent threads in tests.
pub trait ConicSolver: Send + Sync {
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution>;
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone)]
pub struct ClarabelSolver {
    pub tolerance: f64,
    pub max_iter: u32,
}

impl Default for ClarabelSolver {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 200,
        }
    }
}

/// Process-wide default backend.
pub fn default_solver() -> &'static ClarabelSolver {
    static SOLVER: OnceLock<ClarabelSolver> = OnceLock::new();
    SOLVER.get_or_init(ClarabelSolver::default)
}

/// Packs the upper triangle of a symmetric matrix column by column, scaling
/// off-diagonal entries by √2 (Clarabel's PSD triangle convention).
fn svec_into(mat: &DMatrix<f64>, scale: f64, out: &mut Vec<(usize, f64)>) {
    let n = mat.nrows();
    let mut idx = 0;
    for col in 0..n {
        for row in 0..=col {
            let v = if row == col {
                mat[(row, col)]
            } else {
                0.5 * (mat[(row, col)] + mat[(col, row)]) * std::f64::consts::SQRT_2
            };
            if v != 0.0 {
                out.push((idx, scale * v));
            }
            idx += 1;
        }
    }
}

impl ClarabelSolver {
    fn assemble(
        &self,
        problem: &ConicProblem,
    ) -> (
        CscMatrix<f64>,
        Vec<f64>,
        CscMatrix<f64>,
        Vec<f64>,
        Vec<SupportedConeT<f64>>,
    ) {
        let n = problem.num_vars;
        let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for &(i, j, c) in &problem.quadratic {
            pi.push(i);
            pj.push(j);
            pv.push(c);
        }
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut row = 0;
        // Clarabel form: A x + s = b, s ∈ K.
        for (block, rows) in [(0, &problem.equalities), (1, &problem.inequalities)] {
            if rows.is_empty() {
                continue;
            }
            for (coeffs, rhs) in rows.iter() {
                for &(var, c) in coeffs {
                    ai.push(row);
                    aj.push(var);
                    av.push(c);
                }
                b.push(*rhs);
                row += 1;
            }
            cones.push(if block == 0 {
                SupportedConeT::ZeroConeT(rows.len())
            } else {
                SupportedConeT::NonnegativeConeT(rows.len())
            });
        }
        // F₀ + Σ xᵢFᵢ ⪯ 0  ⇔  s = -F₀ - Σ xᵢFᵢ ⪰ 0.
        let mut packed = Vec::new();
        for lmi in &problem.lmis {
            let k = lmi.dim();
            let len = k * (k + 1) / 2;
            let mut rhs = vec![0.0; len];
            packed.clear();
            svec_into(&lmi.constant, -1.0, &mut packed);
            for &(idx, v) in &packed {
                rhs[idx] = v;
            }
            for (var, coeff) in &lmi.terms {
                packed.clear();
                svec_into(coeff, 1.0, &mut packed);
                for &(idx, v) in &packed {
                    ai.push(row + idx);
                    aj.push(*var);
                    av.push(v);
                }
            }
            b.extend(rhs);
            row += len;
            cones.push(SupportedConeT::PSDTriangleConeT(k));
        }
        let a = CscMatrix::new_from_triplets(row, n, ai, aj, av);
        (p, problem.linear.clone(), a, b, cones)
    }
}

impl ConicSolver for ClarabelSolver {
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution> {
        let (p, q, a, b, cones) = self.assemble(problem);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tolerance)
            .tol_gap_rel(self.tolerance)
            .tol_feas(self.tolerance)
            .build()
            .map_err(|e| Error::SolverFailure(format!("settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::SolverFailure(format!("setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => ConicStatus::Solved,
            SolverStatus::AlmostSolved => ConicStatus::AlmostSolved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                ConicStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                ConicStatus::Unbounded
            }
            _ => ConicStatus::Failed,
        };
        Ok(ConicSolution {
            status,
            x: sol.x.clone(),
            objective: sol.obj_val,
            detail: format!("{:?} after {} iterations", sol.status, sol.iterations),
        })
    }
}
