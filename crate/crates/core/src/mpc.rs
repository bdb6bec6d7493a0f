//! Robust MPC with affine disturbance feedback.
//!
//! Inputs are parametrized as `u_k = v_k + Σ_{l<k} M_{k,l} d_l`, so every
//! predicted state and input is affine in the stacked disturbance
//! `(d_0, …, d_{N-1}) ∈ D_0 × … × D_{N-1}`. Each constraint row is made
//! robust through LP duality, which keeps the program a convex QP in
//! `(M, v, λ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::LipschitzModel;
use crate::error::{Error, Result};
use crate::geometry::{Polytope, SET_EQ_TOL};
use crate::linalg::{min_eigenvalue, serde_dmat, serde_dvec, serde_dvec_list, serde_opt_dvec};
use crate::setsynth::HorizonSets;
use crate::solver::{ConicProblem, ConicSolver, ConicStatus, SparseRow, SparseRowExt};

pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITER: usize = 100_000;
/// Constraint violation accepted from the QP solver before a solution is
/// rejected.
pub const QP_FEASIBILITY_TOL: f64 = 1e-6;
const DEFINITENESS_TOL: f64 = 1e-9;

/// Problem data of the receding-horizon controller.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p_n: DMatrix<f64>,
    /// Terminal feedback `u = Kx`.
    pub k: DMatrix<f64>,
    pub state_set: Polytope,
    pub input_set: Polytope,
    pub terminal_set: Polytope,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.state_set.dim();
        let m = self.input_set.dim();
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let shapes = [
            ("Q", self.q.shape(), (n, n)),
            ("R", self.r.shape(), (m, m)),
            ("P_N", self.p_n.shape(), (n, n)),
            ("K", self.k.shape(), (m, n)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        if self.terminal_set.dim() != n {
            return Err(Error::Dimension("terminal set".into()));
        }
        for (name, mat, strict) in [
            ("Q", &self.q, false),
            ("R", &self.r, true),
            ("P_N", &self.p_n, true),
        ] {
            if (mat - mat.transpose()).amax() > DEFINITENESS_TOL * mat.amax().max(1.0) {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
            let min = min_eigenvalue(mat);
            if min < -DEFINITENESS_TOL || (strict && min <= DEFINITENESS_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "{name} lacks the required definiteness (min eigenvalue {min:.3e})"
                )));
            }
        }
        // The whole space stands for "not computed yet".
        if !self.terminal_set.is_universe()
            && !self.terminal_set.is_empty()?
            && !self
                .state_set
                .contains_polytope(&self.terminal_set, SET_EQ_TOL)?
        {
            return Err(Error::InvalidArgument(
                "terminal set is not inside the state constraints".into(),
            ));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_set.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_set.dim()
    }
}

/// Fixed point of the discrete Riccati recursion started at `P = Q`, and the
/// LQR gain `K = -(R + BᵀPB)⁻¹BᵀPA`.
pub fn terminal_cost_and_gain(
    model: &LipschitzModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, b) = (model.a(), model.b());
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.cholesky()
            .map(|c| -c.solve(&rhs))
            .ok_or(Error::Unstabilizable)
    };
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let k = gain(&p)?;
        // Q + AᵀPA - AᵀPB(R+BᵀPB)⁻¹BᵀPA = Q + AᵀPA + AᵀPB·K
        let next = q + a.transpose() * &p * a + a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Unstabilizable);
        }
        let diff = (&next - &p).amax();
        p = next;
        if diff <= RICCATI_TOL {
            let k = gain(&p)?;
            return Ok((p, k));
        }
    }
    Err(Error::Unstabilizable)
}

/// `u_k = v_k + Σ_{l<k} M_{k,l} d_l` over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePolicy {
    /// `(m·N) × (n·N)`, strictly block lower triangular.
    #[serde(rename = "M", with = "serde_dmat")]
    pub m: DMatrix<f64>,
    #[serde(with = "serde_dvec")]
    pub v: DVector<f64>,
    pub state_dim: usize,
    pub input_dim: usize,
}

impl AffinePolicy {
    pub fn horizon(&self) -> usize {
        self.v.len() / self.input_dim
    }

    pub fn block(&self, k: usize, l: usize) -> DMatrix<f64> {
        let (n, m) = (self.state_dim, self.input_dim);
        self.m.view((k * m, l * n), (m, n)).into_owned()
    }

    pub fn nominal_input(&self, k: usize) -> DVector<f64> {
        let m = self.input_dim;
        self.v.rows(k * m, m).into_owned()
    }

    /// Structural check: `M_{k,l} = 0` for `l ≥ k`.
    pub fn is_causal(&self) -> bool {
        let n_h = self.horizon();
        (0..n_h).all(|k| (k..n_h).all(|l| self.block(k, l).iter().all(|v| *v == 0.0)))
    }

    pub fn input(&self, k: usize, ds: &[DVector<f64>]) -> DVector<f64> {
        (0..k).fold(self.nominal_input(k), |u, l| u + self.block(k, l) * &ds[l])
    }

    /// Predicted states `x_0 … x_N` and inputs `u_0 … u_{N-1}` under the
    /// disturbance sequence `ds`.
    pub fn rollout(
        &self,
        model: &LipschitzModel,
        x_t: &DVector<f64>,
        ds: &[DVector<f64>],
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n_h = self.horizon();
        let mut xs = vec![x_t.clone()];
        let mut us = Vec::with_capacity(n_h);
        for k in 0..n_h {
            let u = self.input(k, ds);
            xs.push(model.step(&xs[k], &u, &ds[k]));
            us.push(u);
        }
        (xs, us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MpcStatus {
    Optimal,
    Infeasible,
    SolverFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcSolution {
    pub status: MpcStatus,
    #[serde(with = "serde_opt_dvec")]
    pub u0: Option<DVector<f64>>,
    pub objective: Option<f64>,
    #[serde(with = "serde_dvec_list")]
    pub nominal_traj: Vec<DVector<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub policy: Option<AffinePolicy>,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

impl MpcSolution {
    fn failed(status: MpcStatus, detail: impl Into<String>) -> Self {
        Self {
            status,
            u0: None,
            objective: None,
            nominal_traj: Vec::new(),
            policy: None,
            detail: detail.into(),
        }
    }
}

/// Variable indices of the QP.
#[derive(Debug, Clone)]
struct Layout {
    n: usize,
    m: usize,
    horizon: usize,
}

impl Layout {
    fn v(&self, k: usize, a: usize) -> usize {
        k * self.m + a
    }

    /// Entry `(a, b)` of `M_{j,l}`, `l < j`.
    fn mvar(&self, j: usize, l: usize, a: usize, b: usize) -> usize {
        let pair = j * (j - 1) / 2 + l;
        self.m * self.horizon + pair * self.m * self.n + a * self.n + b
    }

    fn num_policy_vars(&self) -> usize {
        self.m * self.horizon + self.horizon * (self.horizon - 1) / 2 * self.m * self.n
    }
}

/// A constraint row `cᵀx_k ≤ h` or `eᵀu_k ≤ h` written as
/// `const + Σ_j w_jᵀ v_j + Σ_l f_l(M)ᵀ d_l ≤ h`.
struct RowForm {
    constant: f64,
    /// `(j, w_j)`: coefficient of `v_j`.
    v_coef: Vec<(usize, DVector<f64>)>,
    /// Per disturbance block `l`: fixed part of `f_l` and the terms
    /// `(j, w)` contributing `M_{j,l}ᵀ w`.
    d_coef: Vec<(DVector<f64>, Vec<(usize, DVector<f64>)>)>,
    rhs: f64,
}

fn state_row(
    model: &LipschitzModel,
    apow: &[DMatrix<f64>],
    x_t: &DVector<f64>,
    c: &DVector<f64>,
    k: usize,
    rhs: f64,
) -> RowForm {
    let b = model.b();
    // w_j = Bᵀ(A^{k-1-j})ᵀc for j < k
    let w: Vec<DVector<f64>> = (0..k)
        .map(|j| b.transpose() * apow[k - 1 - j].transpose() * c)
        .collect();
    let d_coef = (0..k)
        .map(|l| {
            let fixed = apow[k - 1 - l].transpose() * c;
            let terms = ((l + 1)..k).map(|j| (j, w[j].clone())).collect();
            (fixed, terms)
        })
        .collect();
    RowForm {
        constant: c.dot(&(&apow[k] * x_t)),
        v_coef: w.into_iter().enumerate().collect(),
        d_coef,
        rhs,
    }
}

fn input_row(n: usize, e: &DVector<f64>, k: usize, rhs: f64) -> RowForm {
    RowForm {
        constant: 0.0,
        v_coef: vec![(k, e.clone())],
        d_coef: (0..k)
            .map(|_| (DVector::zeros(n), vec![(k, e.clone())]))
            .collect(),
        rhs,
    }
}

fn constraint_rows(config: &MpcConfig, model: &LipschitzModel, x_t: &DVector<f64>) -> Vec<RowForm> {
    let n = config.state_dim();
    let n_h = config.horizon;
    let apow = matrix_powers(model.a(), n_h);
    let mut rows = Vec::new();
    let poly_rows = |p: &Polytope| -> Vec<(DVector<f64>, f64)> {
        (0..p.num_rows())
            .map(|i| (p.hmat().row(i).transpose(), p.hvec()[i]))
            .collect()
    };
    for k in 0..n_h {
        for (e, h) in poly_rows(&config.input_set) {
            rows.push(input_row(n, &e, k, h));
        }
        for (c, h) in poly_rows(&config.state_set) {
            rows.push(state_row(model, &apow, x_t, &c, k + 1, h));
        }
    }
    for (c, h) in poly_rows(&config.terminal_set) {
        rows.push(state_row(model, &apow, x_t, &c, n_h, h));
    }
    rows
}

fn matrix_powers(a: &DMatrix<f64>, up_to: usize) -> Vec<DMatrix<f64>> {
    let mut out = vec![DMatrix::identity(a.nrows(), a.ncols())];
    for i in 0..up_to {
        out.push(a * &out[i]);
    }
    out
}

/// The assembled robust QP together with what is needed to read back a
/// policy.
#[derive(Debug, Clone)]
pub struct RobustProgram {
    problem: ConicProblem,
    layout: Layout,
    objective_constant: f64,
    x_t: DVector<f64>,
    nominal_d: Vec<DVector<f64>>,
    model: LipschitzModel,
}

impl RobustProgram {
    pub fn problem(&self) -> &ConicProblem {
        &self.problem
    }

    pub fn num_policy_vars(&self) -> usize {
        self.layout.num_policy_vars()
    }

    fn policy_from(&self, x: &[f64]) -> AffinePolicy {
        let Layout { n, m, horizon } = self.layout;
        let mut mm = DMatrix::zeros(m * horizon, n * horizon);
        for j in 1..horizon {
            for l in 0..j {
                for a in 0..m {
                    for b in 0..n {
                        mm[(j * m + a, l * n + b)] = x[self.layout.mvar(j, l, a, b)];
                    }
                }
            }
        }
        let v = DVector::from_iterator(m * horizon, (0..m * horizon).map(|i| x[i]));
        AffinePolicy {
            m: mm,
            v,
            state_dim: n,
            input_dim: m,
        }
    }

    /// Nominal trajectory driven by `v` and the nominal disturbances.
    pub fn nominal_trajectory(&self, policy: &AffinePolicy) -> Vec<DVector<f64>> {
        let mut xs = vec![self.x_t.clone()];
        for k in 0..self.layout.horizon {
            let next = self
                .model
                .step(&xs[k], &policy.nominal_input(k), &self.nominal_d[k]);
            xs.push(next);
        }
        xs
    }

    pub fn solve(&self, solver: &dyn ConicSolver, config: &MpcConfig) -> Result<MpcSolution> {
        let sol = solver.solve(&self.problem)?;
        match sol.status {
            ConicStatus::Infeasible => {
                return Ok(MpcSolution::failed(MpcStatus::Infeasible, sol.detail))
            }
            s if !s.is_solved() => {
                return Ok(MpcSolution::failed(MpcStatus::SolverFailure, sol.detail))
            }
            _ => {}
        }
        let violation = self.problem.max_violation(&sol.x);
        if violation > QP_FEASIBILITY_TOL {
            return Ok(MpcSolution::failed(
                MpcStatus::SolverFailure,
                format!("returned point violates constraints by {violation:.3e}"),
            ));
        }
        let policy = self.policy_from(&sol.x);
        let u0 = policy.nominal_input(0);
        if !config.input_set.contains(&u0, QP_FEASIBILITY_TOL) {
            return Ok(MpcSolution::failed(
                MpcStatus::SolverFailure,
                "u0 outside the input set",
            ));
        }
        let nominal_traj = self.nominal_trajectory(&policy);
        Ok(MpcSolution {
            status: MpcStatus::Optimal,
            u0: Some(u0),
            objective: Some(self.problem.objective_at(&sol.x) + self.objective_constant),
            nominal_traj,
            policy: Some(policy),
            detail: String::new(),
        })
    }
}

fn check_disturbance_sets(d_sets: &[Polytope], n: usize) -> Result<()> {
    for (k, d) in d_sets.iter().enumerate() {
        if d.dim() != n {
            return Err(Error::Dimension(format!("disturbance set {k}")));
        }
        match d.bounding_box() {
            Ok(_) => {}
            Err(Error::Unbounded) => return Err(Error::UnboundedUncertainty { step: k }),
            Err(Error::Empty) => return Err(Error::EmptyTube { step: k }),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Builds the robust QP against the effective sets of `sets`.
pub fn build_robust_qp(
    config: &MpcConfig,
    model: &LipschitzModel,
    x_t: &DVector<f64>,
    sets: &HorizonSets,
) -> Result<RobustProgram> {
    build_robust_qp_with(config, model, x_t, &sets.effective, &sets.nominal_d)
}

/// Builds the robust QP for explicit per-step disturbance polytopes `D_k`
/// and nominal disturbances `d̄_k`.
pub fn build_robust_qp_with(
    config: &MpcConfig,
    model: &LipschitzModel,
    x_t: &DVector<f64>,
    d_sets: &[Polytope],
    nominal_d: &[DVector<f64>],
) -> Result<RobustProgram> {
    let n = config.state_dim();
    let m = config.input_dim();
    let n_h = config.horizon;
    if model.state_dim() != n || model.input_dim() != m || x_t.len() != n {
        return Err(Error::Dimension("model, config and state disagree".into()));
    }
    if d_sets.len() != n_h || nominal_d.len() != n_h {
        return Err(Error::Dimension(
            "one disturbance set per prediction step".into(),
        ));
    }
    check_disturbance_sets(d_sets, n)?;

    let layout = Layout { n, m, horizon: n_h };
    let mut prob = ConicProblem::new(layout.num_policy_vars());

    for row in constraint_rows(config, model, x_t) {
        let mut ineq: SparseRow = Vec::new();
        for (j, w) in &row.v_coef {
            for a in 0..m {
                ineq.push_nonzero(layout.v(*j, a), w[a]);
            }
        }
        for (l, (fixed, terms)) in row.d_coef.iter().enumerate() {
            let dl = &d_sets[l];
            let lambda: Vec<usize> = (0..dl.num_rows())
                .map(|_| {
                    let v = prob.add_var();
                    prob.add_lower_bound(v, 0.0);
                    v
                })
                .collect();
            // H_lᵀλ = fixed + Σ_j M_{j,l}ᵀ w
            for bcol in 0..n {
                let mut eq: SparseRow = Vec::new();
                for (i, &lv) in lambda.iter().enumerate() {
                    eq.push_nonzero(lv, dl.hmat()[(i, bcol)]);
                }
                for (j, w) in terms {
                    for a in 0..m {
                        eq.push_nonzero(layout.mvar(*j, l, a, bcol), -w[a]);
                    }
                }
                prob.add_equality(eq, fixed[bcol]);
            }
            for (i, &lv) in lambda.iter().enumerate() {
                ineq.push_nonzero(lv, dl.hvec()[i]);
            }
        }
        prob.add_inequality(ineq, row.rhs - row.constant);
    }

    // Nominal prediction x̄_k = α_k + Γ_k v.
    let mut alpha = vec![x_t.clone()];
    let mut gamma = vec![DMatrix::zeros(n, m * n_h)];
    for k in 0..n_h {
        alpha.push(model.a() * &alpha[k] + &nominal_d[k]);
        let mut g = model.a() * &gamma[k];
        g.view_mut((0, k * m), (n, m)).copy_from(model.b());
        gamma.push(g);
    }
    let mut hess = DMatrix::zeros(m * n_h, m * n_h);
    let mut grad = DVector::zeros(m * n_h);
    let mut constant = 0.0;
    for k in 0..=n_h {
        let w = if k == n_h { &config.p_n } else { &config.q };
        hess += gamma[k].transpose() * w * &gamma[k];
        grad += gamma[k].transpose() * w * &alpha[k];
        constant += alpha[k].dot(&(w * &alpha[k]));
        if k < n_h {
            let mut blk = hess.view_mut((k * m, k * m), (m, m));
            blk += &config.r;
        }
    }
    for i in 0..m * n_h {
        for j in i..m * n_h {
            // ½·P with P = 2H: diagonal 2H_ii, off-diagonal H_ij + H_ji.
            let h = hess[(i, j)] + hess[(j, i)];
            if h != 0.0 {
                prob.add_quadratic(i, j, h);
            }
        }
        prob.set_linear_cost(i, 2.0 * grad[i]);
    }

    Ok(RobustProgram {
        problem: prob,
        layout,
        objective_constant: constant,
        x_t: x_t.clone(),
        nominal_d: nominal_d.to_vec(),
        model: model.clone(),
    })
}

/// Solves the robust QP at `x_t`; a state outside the constraints is
/// reported as infeasible.
pub fn solve_mpc(
    solver: &dyn ConicSolver,
    config: &MpcConfig,
    model: &LipschitzModel,
    x_t: &DVector<f64>,
    sets: &HorizonSets,
) -> Result<MpcSolution> {
    if !config.state_set.contains(x_t, 1e-9) {
        return Ok(MpcSolution::failed(
            MpcStatus::Infeasible,
            "state outside the state constraints",
        ));
    }
    build_robust_qp(config, model, x_t, sets)?.solve(solver, config)
}

/// Worst case over `D_0 × … × D_{N-1}` of every constraint row under a
/// fixed policy, computed with support functions (independent of the
/// duality construction). Returns the largest `value - rhs`.
pub fn worst_case_violation(
    config: &MpcConfig,
    model: &LipschitzModel,
    x_t: &DVector<f64>,
    policy: &AffinePolicy,
    d_sets: &[Polytope],
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for row in constraint_rows(config, model, x_t) {
        let mut val = row.constant;
        for (j, w) in &row.v_coef {
            val += w.dot(&policy.nominal_input(*j));
        }
        for (l, (fixed, terms)) in row.d_coef.iter().enumerate() {
            let mut f = fixed.clone();
            for (j, w) in terms {
                f += policy.block(*j, l).transpose() * w;
            }
            if f.amax() > 0.0 {
                val += d_sets[l].support(&f)?;
            }
        }
        worst = worst.max(val - row.rhs);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub passed: bool,
    /// Largest `support - offset` over the rows; positive means violated.
    pub worst_slack: f64,
}

impl ConditionReport {
    fn from_slack(worst_slack: f64) -> Self {
        Self {
            passed: worst_slack <= SET_EQ_TOL,
            worst_slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalReport {
    pub state_constraints: ConditionReport,
    pub input_constraints: ConditionReport,
    pub invariance: ConditionReport,
}

impl TerminalReport {
    pub fn all_passed(&self) -> bool {
        self.state_constraints.passed && self.input_constraints.passed && self.invariance.passed
    }
}

/// Checks `X_N ⊆ X`, `K·X_N ⊆ U` and `(A+BK)X_N ⊕ W ⊆ X_N` with support
/// functions.
pub fn check_terminal_conditions(
    config: &MpcConfig,
    model: &LipschitzModel,
    disturbance: &Polytope,
) -> Result<TerminalReport> {
    let xn = &config.terminal_set;
    if xn.is_empty()? {
        return Err(Error::InvalidArgument("terminal set is empty".into()));
    }
    let worst = |p: &Polytope,
                 map: &DMatrix<f64>,
                 extra: &dyn Fn(&DVector<f64>) -> Result<f64>|
     -> Result<f64> {
        let mut w = f64::NEG_INFINITY;
        for i in 0..p.num_rows() {
            let row = p.hmat().row(i).transpose();
            let s = xn.support(&(map.transpose() * &row))? + extra(&row)?;
            w = w.max(s - p.hvec()[i]);
        }
        Ok(w)
    };
    let n = config.state_dim();
    let none = |_: &DVector<f64>| Ok(0.0);
    let acl = model.a() + model.b() * &config.k;
    Ok(TerminalReport {
        state_constraints: ConditionReport::from_slack(worst(
            &config.state_set,
            &DMatrix::identity(n, n),
            &none,
        )?),
        input_constraints: ConditionReport::from_slack(worst(&config.input_set, &config.k, &none)?),
        invariance: ConditionReport::from_slack(worst(xn, &acl, &|c: &DVector<f64>| {
            disturbance.support(c)
        })?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::max_rpi_set;
    use crate::solver::default_solver;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_model() -> LipschitzModel {
        LipschitzModel::new(dmatrix![1.0], dmatrix![1.0], 0.0).unwrap()
    }

    fn interval(lo: f64, hi: f64) -> Polytope {
        Polytope::from_bounds(&[lo], &[hi]).unwrap()
    }

    fn scalar_config(horizon: usize) -> MpcConfig {
        MpcConfig {
            horizon,
            q: dmatrix![1.0],
            r: dmatrix![1.0],
            p_n: dmatrix![1.0],
            k: dmatrix![0.0],
            state_set: interval(-1.0, 1.0),
            input_set: interval(-1.0, 1.0),
            terminal_set: interval(-1.0, 1.0),
        }
    }

    fn reference_model() -> LipschitzModel {
        LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], 0.05).unwrap()
    }

    #[test]
    fn riccati_deadbeat() {
        let model =
            LipschitzModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 0.0).unwrap();
        let q = dmatrix![3.0, 0.5; 0.5, 2.0];
        let (p, k) = terminal_cost_and_gain(&model, &q, &DMatrix::identity(2, 2)).unwrap();
        assert!((p - q).amax() < 1e-12);
        assert!(k.amax() < 1e-12);
    }

    #[test]
    fn riccati_scalar_closed_form() {
        // p = 1 + 0.25p - 0.25p²/(1+p)  ⇔  p² - 0.25p - 1 = 0... solved by hand:
        // multiply by (1+p): p + p² = 1 + p + 0.25p + 0.25p² - 0.25p²  →  p² - 0.25p - 1 = 0
        let expected = (0.25 + (0.0625_f64 + 4.0).sqrt()) / 2.0;
        let model = LipschitzModel::new(dmatrix![0.5], dmatrix![1.0], 0.0).unwrap();
        let (p, k) = terminal_cost_and_gain(&model, &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((p[(0, 0)] - expected).abs() < 1e-9);
        assert!((k[(0, 0)] + 0.5 * expected / (1.0 + expected)).abs() < 1e-9);
    }

    #[test]
    fn riccati_unstabilizable() {
        let model =
            LipschitzModel::new(dmatrix![2.0, 0.0; 0.0, 0.5], dmatrix![0.0; 1.0], 0.0).unwrap();
        assert!(matches!(
            terminal_cost_and_gain(&model, &DMatrix::identity(2, 2), &dmatrix![1.0]),
            Err(Error::Unstabilizable)
        ));
    }

    #[test]
    fn one_step_tightening_by_hand() {
        let config = scalar_config(1);
        let program = build_robust_qp_with(
            &config,
            &scalar_model(),
            &dvector![0.95],
            &[interval(-0.1, 0.1)],
            &[dvector![0.0]],
        )
        .unwrap();
        let sol = program.solve(default_solver(), &config).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        let u0 = sol.u0.unwrap()[0];
        assert!(u0 <= -0.05 + 1e-6, "u0 = {u0}");
    }

    #[test]
    fn upper_row_binds_at_minus_five_hundredths() {
        // Cost pulls u upward; the robust upper row caps it at 1 - 0.1 - 0.95.
        let mut config = scalar_config(1);
        config.q = dmatrix![0.0];
        config.r = dmatrix![1e-6];
        config.p_n = dmatrix![1.0];
        let prog = build_robust_qp_with(
            &config,
            &scalar_model(),
            &dvector![0.95],
            &[interval(-0.1, 0.1)],
            &[dvector![-5.0]],
        )
        .unwrap();
        let sol = prog.solve(default_solver(), &config).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        assert!((sol.u0.unwrap()[0] + 0.05).abs() < 1e-5);
    }

    #[test]
    fn zero_disturbance_matches_nominal_qp() {
        let config = scalar_config(1);
        let x = dvector![0.3];
        let prog = build_robust_qp_with(
            &config,
            &scalar_model(),
            &x,
            &[Polytope::singleton(&dvector![0.0])],
            &[dvector![0.0]],
        )
        .unwrap();
        let sol = prog.solve(default_solver(), &config).unwrap();
        // min x² + u² + (x+u)²  →  u = -x/2
        assert!((sol.u0.unwrap()[0] + 0.15).abs() < 1e-6);
        assert!((sol.objective.unwrap() - (0.09 + 0.0225 + 0.0225)).abs() < 1e-6);
    }

    #[test]
    fn lqr_consistent_interior_state() {
        let model = reference_model();
        let q = DMatrix::identity(2, 2) * 10.0;
        let r = dmatrix![2.0];
        let (p, k) = terminal_cost_and_gain(&model, &q, &r).unwrap();
        let big = Polytope::from_bounds(&[-100.0, -100.0], &[100.0, 100.0]).unwrap();
        let config = MpcConfig {
            horizon: 3,
            q,
            r,
            p_n: p,
            k: k.clone(),
            state_set: big.clone(),
            input_set: Polytope::from_bounds(&[-100.0], &[100.0]).unwrap(),
            terminal_set: big,
        };
        config.validate().unwrap();
        let x = dvector![0.01, -0.02];
        let zero = Polytope::singleton(&dvector![0.0, 0.0]);
        let prog = build_robust_qp_with(
            &config,
            &model,
            &x,
            &vec![zero; 3],
            &vec![dvector![0.0, 0.0]; 3],
        )
        .unwrap();
        let sol = prog.solve(default_solver(), &config).unwrap();
        let u_lqr = &k * &x;
        assert!((sol.u0.unwrap() - u_lqr).amax() < 1e-6);
    }

    #[test]
    fn state_outside_constraints_is_infeasible() {
        let config = scalar_config(2);
        let sets = crate::setsynth::HorizonSets {
            state_ellipsoids: vec![],
            d_ellipsoids: vec![],
            certificates: vec![],
            d_polytopes: vec![interval(-0.1, 0.1); 2],
            d_polytopes_prev: vec![Polytope::universe(1); 2],
            effective: vec![interval(-0.1, 0.1); 2],
            nominal_d: vec![dvector![0.0]; 2],
        };
        let sol = solve_mpc(
            default_solver(),
            &config,
            &scalar_model(),
            &dvector![1.5],
            &sets,
        )
        .unwrap();
        assert_eq!(sol.status, MpcStatus::Infeasible);
        assert!(sol.u0.is_none());
    }

    #[test]
    fn unreachable_terminal_set_is_infeasible() {
        let mut config = scalar_config(1);
        config.terminal_set = interval(-0.01, 0.01);
        config.input_set = interval(-0.1, 0.1);
        let prog = build_robust_qp_with(
            &config,
            &scalar_model(),
            &dvector![0.9],
            &[interval(-0.01, 0.01)],
            &[dvector![0.0]],
        )
        .unwrap();
        assert_eq!(
            prog.solve(default_solver(), &config).unwrap().status,
            MpcStatus::Infeasible
        );
    }

    #[test]
    fn unbounded_disturbance_is_rejected() {
        let config = scalar_config(1);
        let res = build_robust_qp_with(
            &config,
            &scalar_model(),
            &dvector![0.0],
            &[Polytope::universe(1)],
            &[dvector![0.0]],
        );
        assert!(matches!(res, Err(Error::UnboundedUncertainty { step: 0 })));
    }

    fn reference_instance() -> (MpcConfig, LipschitzModel, Vec<Polytope>, Vec<DVector<f64>>) {
        let model = reference_model();
        let q = DMatrix::identity(2, 2) * 10.0;
        let r = dmatrix![2.0];
        let (p, k) = terminal_cost_and_gain(&model, &q, &r).unwrap();
        let x = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0]).unwrap();
        let u = Polytope::from_bounds(&[-4.0], &[1.0]).unwrap();
        let w = Polytope::from_bounds(&[-0.05, -0.05], &[0.05, 0.05]).unwrap();
        let acl = model.a() + model.b() * &k;
        let xn = max_rpi_set(&acl, &x, &u, &k, &w, 100).unwrap();
        let config = MpcConfig {
            horizon: 3,
            q,
            r,
            p_n: p,
            k,
            state_set: x,
            input_set: u,
            terminal_set: xn,
        };
        let d_sets = vec![
            Polytope::from_bounds(&[-0.01, 0.0], &[0.01, 0.02]).unwrap(),
            Polytope::from_bounds(&[-0.03, -0.02], &[0.03, 0.04]).unwrap(),
            w,
        ];
        let nominal = d_sets
            .iter()
            .map(|d| d.chebyshev_center().unwrap().0)
            .collect();
        (config, model, d_sets, nominal)
    }

    #[test]
    fn terminal_set_passes_its_own_checks() {
        let (mut config, model, _, _) = reference_instance();
        // Off-center bound, so inflating about the set's center is not a
        // scaling about the invariant point.
        let w = Polytope::from_bounds(&[-0.03, -0.02], &[0.03, 0.08]).unwrap();
        let acl = model.a() + model.b() * &config.k;
        config.terminal_set = max_rpi_set(
            &acl,
            &config.state_set,
            &config.input_set,
            &config.k,
            &w,
            100,
        )
        .unwrap();
        let report = check_terminal_conditions(&config, &model, &w).unwrap();
        assert!(report.all_passed(), "{report:?}");

        // A strictly larger set than the maximal one must break a condition.
        let (c, _) = config.terminal_set.chebyshev_center().unwrap();
        let centered = config.terminal_set.translate(&(-&c));
        let mut inflated = config.clone();
        inflated.terminal_set = Polytope::new(centered.hmat().clone(), centered.hvec() * 1.1)
            .unwrap()
            .translate(&c);
        let report = check_terminal_conditions(&inflated, &model, &w).unwrap();
        assert!(!report.all_passed());
        assert!(!report.invariance.passed);
        assert!(report.invariance.worst_slack > 0.0);
    }

    #[test]
    fn zero_disturbance_rpi_passes() {
        let (mut config, model, _, _) = reference_instance();
        let zero = Polytope::singleton(&dvector![0.0, 0.0]);
        let acl = model.a() + model.b() * &config.k;
        config.terminal_set = max_rpi_set(
            &acl,
            &config.state_set,
            &config.input_set,
            &config.k,
            &zero,
            100,
        )
        .unwrap();
        assert!(check_terminal_conditions(&config, &model, &zero)
            .unwrap()
            .all_passed());
    }

    #[test]
    fn duality_is_sound_under_sampling() {
        let (config, model, d_sets, nominal) = reference_instance();
        let x = dvector![0.1, 0.2];
        let prog = build_robust_qp_with(&config, &model, &x, &d_sets, &nominal).unwrap();
        let sol = prog.solve(default_solver(), &config).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        let policy = sol.policy.unwrap();
        assert!(policy.is_causal());
        for (k, xn) in sol.nominal_traj.iter().enumerate().skip(1) {
            let pred = model.step(
                &sol.nominal_traj[k - 1],
                &policy.nominal_input(k - 1),
                &nominal[k - 1],
            );
            assert!((xn - pred).amax() < 1e-8);
        }
        assert!(worst_case_violation(&config, &model, &x, &policy, &d_sets).unwrap() <= 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let ds: Vec<DVector<f64>> = d_sets
                .iter()
                .map(|d| {
                    let (lo, hi) = d.bounding_box().unwrap();
                    DVector::from_fn(2, |i, _| rng.gen_range(lo[i]..=hi[i]))
                })
                .collect();
            let (xs, us) = policy.rollout(&model, &x, &ds);
            for k in 0..3 {
                assert!(config.input_set.max_violation(&us[k]) <= 1e-6);
                assert!(config.state_set.max_violation(&xs[k + 1]) <= 1e-6);
            }
            assert!(config.terminal_set.max_violation(&xs[3]) <= 1e-6);
        }
    }

    #[test]
    fn u0_ignores_realized_disturbances() {
        let (config, model, d_sets, nominal) = reference_instance();
        let x = dvector![0.1, 0.2];
        let prog = build_robust_qp_with(&config, &model, &x, &d_sets, &nominal).unwrap();
        let policy = prog
            .solve(default_solver(), &config)
            .unwrap()
            .policy
            .unwrap();
        let a = vec![dvector![0.01, 0.0]; 3];
        let b = vec![dvector![-0.01, 0.02]; 3];
        assert_eq!(policy.input(0, &a), policy.input(0, &b));
    }

    #[test]
    fn shrinking_disturbances_keeps_policy_feasible() {
        let (config, model, d_sets, nominal) = reference_instance();
        let x = dvector![-0.2, 0.5];
        let prog = build_robust_qp_with(&config, &model, &x, &d_sets, &nominal).unwrap();
        let policy = prog
            .solve(default_solver(), &config)
            .unwrap()
            .policy
            .unwrap();
        let shrunk: Vec<Polytope> = d_sets
            .iter()
            .map(|d| {
                let c = d.chebyshev_center().unwrap().0;
                let centered = d.translate(&(-&c));
                Polytope::new(centered.hmat().clone(), centered.hvec() * 0.5)
                    .unwrap()
                    .translate(&c)
            })
            .collect();
        assert!(worst_case_violation(&config, &model, &x, &policy, &shrunk).unwrap() <= 1e-6);
    }

    #[test]
    fn solution_round_trips_through_json() {
        let (config, model, d_sets, nominal) = reference_instance();
        let prog =
            build_robust_qp_with(&config, &model, &dvector![0.0, 0.1], &d_sets, &nominal).unwrap();
        let sol = prog.solve(default_solver(), &config).unwrap();
        let json = serde_json::to_string(&sol).unwrap();
        let back: MpcSolution = serde_json::from_str(&json).unwrap();
        assert_eq!(back.status, sol.status);
        assert_eq!(back.u0, sol.u0);
        assert_eq!(back.policy, sol.policy);
    }

    #[test]
    fn config_validation() {
        let mut config = scalar_config(1);
        config.validate().unwrap();
        config.r = dmatrix![0.0];
        assert!(config.validate().is_err());
        let mut config = scalar_config(1);
        config.terminal_set = interval(-2.0, 2.0);
        assert!(config.validate().is_err());
    }
}
