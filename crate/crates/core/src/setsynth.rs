//! Uncertainty sets along the prediction horizon.
//!
//! The learned envelope is turned into computable sets in three steps:
//!
//! 1. [`min_trace_ellipsoid`]: an s-procedure SDP certifies an ellipsoid
//!    `E^d ⊇ D(region)`, the union of the pointwise uncertainty sets over a
//!    state region (an ellipsoid, or a single state).
//! 2. [`ellipsoid_to_polytope`] boxes `E^d` in its eigenbasis, giving `P^d`.
//! 3. [`propagate_state_ellipsoid`] pushes the reachable-state ellipsoid one
//!    step forward and clips it to the state constraints.
//!
//! [`build_horizon_sets`] chains them over the horizon and intersects each
//! step with the sets computed at the previous time for the same absolute
//! step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::{qc_matrix_raw, Dataset, LipschitzModel};
use crate::error::{Error, Result};
use crate::geometry::{
    affine_image_ellipsoid, ellipsoid_to_polytope, minkowski_outer_ellipsoid, Ellipsoid, Polytope,
};
use crate::linalg::{
    embed, embed_sym, max_eigenvalue, min_eigenvalue, serde_dvec_list, symmetrize,
};
use crate::solver::{ConicProblem, ConicSolver, Lmi};

/// Multipliers may be this negative before a certificate is rejected.
pub const MULTIPLIER_TOL: f64 = 1e-9;
/// Largest eigenvalue allowed for a certified LMI.
pub const CERTIFICATE_TOL: f64 = 1e-7;
/// Relative Lipschitz inflations tried when a certificate fails
/// re-verification.
pub const LIPSCHITZ_RETRY_INFLATION: [f64; 3] = [1e-6, 1e-4, 1e-2];
/// Smallest eigenvalue kept in `Q⁻¹` of a returned ellipsoid.
const MIN_INVERSE_SHAPE_EIG: f64 = 1e-12;

/// Multipliers and ellipsoid returned by [`min_trace_ellipsoid`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SProcedureCertificate {
    /// Multiplier of the region constraint (0 for a point region).
    pub rho: f64,
    /// One multiplier per measurement.
    pub tau: Vec<f64>,
    pub ellipsoid: Ellipsoid,
    /// Largest eigenvalue of the certificate LMI, re-evaluated after solving.
    pub lmi_max_eig: f64,
}

impl SProcedureCertificate {
    pub fn is_valid(&self) -> bool {
        self.rho >= -MULTIPLIER_TOL
            && self.tau.iter().all(|t| *t >= -MULTIPLIER_TOL)
            && self.lmi_max_eig <= CERTIFICATE_TOL
    }
}

/// The containment LMI in Schur-complement form, built block by block.
///
/// For an ellipsoidal region `{x : (x - pˣ)ᵀqˣ(x - pˣ) ≤ 1}` and multipliers
/// `ρ, τᵢ`, with `G = (q^d)⁻¹`:
///
/// ```text
/// ⎡ p   0   q   0  ⎤       p = -ρqˣ + Στᵢ L² I        r = -Στᵢ I
/// ⎢ 0   r   s  -I  ⎥  ⪯ 0  q = ρqˣpˣ - Στᵢ L² xᵢ      s = Στᵢ dᵢ
/// ⎢ qᵀ  sᵀ  t  p^dᵀ⎥       t = ρ(1 - pˣᵀqˣpˣ) - Στᵢ(-L²xᵢᵀxᵢ + dᵢᵀdᵢ) - 1
/// ⎣ 0  -I  p^d -G  ⎦
/// ```
///
/// For a point region `x̄` the state rows are eliminated and the scalar
/// block becomes `t = -Στᵢ(dᵢᵀdᵢ - L²‖x̄ - xᵢ‖²) - 1`.
pub fn containment_lmi(
    dataset: &Dataset,
    region: &Ellipsoid,
    rho: f64,
    tau: &[f64],
    inv_shape: &DMatrix<f64>,
    center: &DVector<f64>,
) -> DMatrix<f64> {
    let n = region.dim();
    let l2 = dataset.lipschitz().powi(2);
    let meas = dataset.measurements();
    let tau_sum: f64 = tau.iter().sum();
    let eye = DMatrix::<f64>::identity(n, n);
    let weighted_d = meas
        .iter()
        .zip(tau)
        .fold(DVector::zeros(n), |acc, (m, t)| acc + &m.d * *t);

    match region.shape() {
        Some(qx) => {
            let px = region.center();
            let p_blk = -qx * rho + &eye * (tau_sum * l2);
            let q_blk = qx * px * rho
                - meas
                    .iter()
                    .zip(tau)
                    .fold(DVector::zeros(n), |acc, (m, t)| acc + &m.x * (*t * l2));
            let r_blk = -&eye * tau_sum;
            let t_blk = rho * (1.0 - px.dot(&(qx * px)))
                - meas
                    .iter()
                    .zip(tau)
                    .map(|(m, t)| t * (-l2 * m.x.dot(&m.x) + m.d.dot(&m.d)))
                    .sum::<f64>()
                - 1.0;
            let size = 4 * n + 1;
            let (xs, ds, one, ss) = (0, n, 2 * n, 2 * n + 1);
            let mut m = embed(size, xs, xs, &p_blk);
            m += embed_sym(
                size,
                xs,
                one,
                &DMatrix::from_column_slice(n, 1, q_blk.as_slice()),
            );
            m += embed(size, ds, ds, &r_blk);
            m += embed_sym(
                size,
                ds,
                one,
                &DMatrix::from_column_slice(n, 1, weighted_d.as_slice()),
            );
            m += embed_sym(size, ds, ss, &(-&eye));
            m[(one, one)] = t_blk;
            m += embed_sym(
                size,
                one,
                ss,
                &DMatrix::from_row_slice(1, n, center.as_slice()),
            );
            m += embed(size, ss, ss, &(-inv_shape));
            m
        }
        None => {
            let xq = region.center();
            let t_blk = -meas
                .iter()
                .zip(tau)
                .map(|(m, t)| t * (m.d.dot(&m.d) - l2 * (xq - &m.x).norm_squared()))
                .sum::<f64>()
                - 1.0;
            let size = 2 * n + 1;
            let (ds, one, ss) = (0, n, n + 1);
            let mut m = embed(size, ds, ds, &(-&eye * tau_sum));
            m += embed_sym(
                size,
                ds,
                one,
                &DMatrix::from_column_slice(n, 1, weighted_d.as_slice()),
            );
            m += embed_sym(size, ds, ss, &(-&eye));
            m[(one, one)] = t_blk;
            m += embed_sym(
                size,
                one,
                ss,
                &DMatrix::from_row_slice(1, n, center.as_slice()),
            );
            m += embed(size, ss, ss, &(-inv_shape));
            m
        }
    }
}

/// Quadratic form `(w - c)ᵀ S (w - c) - 1` of an ellipsoid written on the
/// lifted vector `[w; 1]`.
fn ellipsoid_form(q: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let n = c.len();
    let qc = q * c;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(q);
    for i in 0..n {
        m[(i, n)] = -qc[i];
        m[(n, i)] = -qc[i];
    }
    m[(n, n)] = c.dot(&qc) - 1.0;
    m
}

/// Generic minimum-trace s-procedure SDP on a lifted vector `w` (last entry
/// fixed to 1): find the smallest-trace ellipsoid `{y : (y-p)ᵀG⁻¹(y-p) ≤ 1}`,
/// `y = w[target..target+n]`, such that `wᵀCⱼw ≤ 0 ∀j ⇒ y` is inside.
///
/// LMI: `[-Σλⱼ Cⱼ - e eᵀ, F(p); F(p)ᵀ, -G] ⪯ 0` with `F(p) = -S + e pᵀ`,
/// `λ ≥ 0`. Returns `(G, p, λ)`.
fn solve_min_trace(
    solver: &dyn ConicSolver,
    lifted: usize,
    target: usize,
    n: usize,
    constraints: &[DMatrix<f64>],
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<f64>)> {
    let size = lifted + n;
    let one = lifted - 1;
    let mut prob = ConicProblem::new(0);

    let mut base = DMatrix::zeros(size, size);
    base[(one, one)] = -1.0;
    for i in 0..n {
        base[(target + i, lifted + i)] = -1.0;
        base[(lifted + i, target + i)] = -1.0;
    }
    let mut lmi = Lmi::new(base);

    // G in the symmetric basis; the objective is its trace.
    for i in 0..n {
        for j in i..n {
            let v = prob.add_var();
            let mut e = DMatrix::zeros(size, size);
            e[(lifted + i, lifted + j)] = -1.0;
            e[(lifted + j, lifted + i)] = -1.0;
            lmi.add_term(v, e);
            if i == j {
                prob.set_linear_cost(v, 1.0);
            }
        }
    }
    let center_vars: Vec<usize> = (0..n)
        .map(|i| {
            let v = prob.add_var();
            let mut e = DMatrix::zeros(size, size);
            e[(one, lifted + i)] = 1.0;
            e[(lifted + i, one)] = 1.0;
            lmi.add_term(v, e);
            v
        })
        .collect();
    let mult_vars: Vec<usize> = constraints
        .iter()
        .map(|c| {
            let v = prob.add_var();
            lmi.add_term(v, embed(size, 0, 0, &(-c)));
            prob.add_lower_bound(v, 0.0);
            v
        })
        .collect();
    prob.add_lmi(lmi);

    let sol = solver.solve(&prob)?;
    if !sol.status.is_solved() {
        return Err(match sol.status {
            crate::solver::ConicStatus::Infeasible => {
                Error::NoEnvelope(format!("s-procedure SDP infeasible ({})", sol.detail))
            }
            _ => Error::SolverFailure(format!("s-procedure SDP: {}", sol.detail)),
        });
    }
    let mut g = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            g[(i, j)] = sol.x[k];
            g[(j, i)] = sol.x[k];
            k += 1;
        }
    }
    let p = DVector::from_iterator(n, center_vars.iter().map(|v| sol.x[*v]));
    let lambda = mult_vars.iter().map(|v| sol.x[*v]).collect();
    Ok((g, p, lambda))
}

/// Lifts `G` to be positive definite. Enlarging `G` keeps the LMI satisfied.
fn regularize_inverse_shape(g: DMatrix<f64>) -> DMatrix<f64> {
    let g = symmetrize(&g);
    let n = g.nrows();
    let floor = MIN_INVERSE_SHAPE_EIG * g.trace().abs().max(1e-6);
    let min = min_eigenvalue(&g);
    if min < floor {
        g + DMatrix::identity(n, n) * (floor - min)
    } else {
        g
    }
}

/// Minimum-trace ellipsoid `E^d ⊇ D(region)` from the s-procedure SDP.
///
/// The problem is solved in shifted and scaled coordinates
/// (`x - region center`, `(d - mean d) / σ`), which leaves the containment
/// conditions unchanged; the certificate is mapped back and its LMI is
/// re-evaluated in the original coordinates.
///
/// When the re-evaluated LMI fails (typically a region touching a measured
/// state, where `D` degenerates to a point and the multipliers diverge), the
/// SDP is re-solved with the Lipschitz constant inflated by the factors in
/// [`LIPSCHITZ_RETRY_INFLATION`]. The inflated envelope contains the original
/// one, so its certificate remains valid and is verified against the
/// original data.
pub fn min_trace_ellipsoid(
    solver: &dyn ConicSolver,
    dataset: &Dataset,
    region: &Ellipsoid,
) -> Result<SProcedureCertificate> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if dataset.measurements()[0].x.len() != region.dim() {
        return Err(Error::Dimension(
            "region and dataset dimensions differ".into(),
        ));
    }
    let mut cert = min_trace_ellipsoid_inflated(solver, dataset, region, 0.0)?;
    for inflation in LIPSCHITZ_RETRY_INFLATION {
        if cert.is_valid() {
            break;
        }
        if let Ok(retry) = min_trace_ellipsoid_inflated(solver, dataset, region, inflation) {
            cert = retry;
        }
    }
    Ok(cert)
}

fn min_trace_ellipsoid_inflated(
    solver: &dyn ConicSolver,
    dataset: &Dataset,
    region: &Ellipsoid,
    inflation: f64,
) -> Result<SProcedureCertificate> {
    let n = region.dim();
    let meas = dataset.measurements();
    let l = dataset.lipschitz() * (1.0 + inflation);
    let xc = region.center().clone();
    let d_mean = meas.iter().fold(DVector::zeros(n), |acc, m| acc + &m.d) / meas.len() as f64;
    let rms_radius = (meas
        .iter()
        .map(|m| (l * (&m.x - &xc).norm()).powi(2))
        .sum::<f64>()
        / meas.len() as f64)
        .sqrt()
        + l * region.trace_inverse_shape().sqrt();
    let sigma = if rms_radius > 1e-9 { rms_radius } else { 1.0 };
    let ls = l / sigma;

    let shifted: Vec<(DVector<f64>, DVector<f64>)> = meas
        .iter()
        .map(|m| (&m.x - &xc, (&m.d - &d_mean) / sigma))
        .collect();

    let (g_s, p_s, lambda, rho) = match region.shape() {
        Some(qx) => {
            // w = (x, d, 1); constraints: the region, then one QC per sample.
            let size = 2 * n + 1;
            let mut cons = Vec::with_capacity(meas.len() + 1);
            let region_form = ellipsoid_form(qx, &DVector::zeros(n));
            let mut c = DMatrix::zeros(size, size);
            c.view_mut((0, 0), (n, n))
                .copy_from(&region_form.view((0, 0), (n, n)));
            c[(2 * n, 2 * n)] = region_form[(n, n)];
            cons.push(c);
            for (x, d) in &shifted {
                cons.push(qc_matrix_raw(ls, x, d).matrix().clone());
            }
            let (g, p, lam) = solve_min_trace(solver, size, n, n, &cons)?;
            let rho = lam[0];
            (g, p, lam[1..].to_vec(), rho)
        }
        None => {
            // w = (d, 1); each sample gives ‖d - dᵢ‖² ≤ L²‖x̄ - xᵢ‖².
            let cons: Vec<DMatrix<f64>> = shifted
                .iter()
                .map(|(x, d)| {
                    let mut c = ellipsoid_form(&DMatrix::identity(n, n), d);
                    c[(n, n)] = d.dot(d) - ls * ls * x.norm_squared();
                    c
                })
                .collect();
            let (g, p, lam) = solve_min_trace(solver, n + 1, 0, n, &cons)?;
            (g, p, lam, 0.0)
        }
    };

    let inv_shape = regularize_inverse_shape(g_s * (sigma * sigma));
    let center = p_s * sigma + &d_mean;
    // Solver round-off can leave multipliers slightly negative; the clamped
    // values are what the re-verification below checks.
    let rho = rho.max(0.0);
    let tau: Vec<f64> = lambda
        .iter()
        .map(|t| (t / (sigma * sigma)).max(0.0))
        .collect();
    let ellipsoid = Ellipsoid::from_inverse_shape(center.clone(), inv_shape.clone())
        .map_err(|e| Error::NoEnvelope(format!("degenerate solution: {e}")))?;
    let lmi = containment_lmi(dataset, region, rho, &tau, &inv_shape, &center);
    Ok(SProcedureCertificate {
        rho,
        tau,
        ellipsoid,
        lmi_max_eig: max_eigenvalue(&lmi),
    })
}

/// Minimum-trace ellipsoid containing `e1 ∩ e2` (two-constraint
/// s-procedure). Fails with [`Error::Empty`] when the intersection is empty.
pub fn intersect_ellipsoids(
    solver: &dyn ConicSolver,
    e1: &Ellipsoid,
    e2: &Ellipsoid,
) -> Result<Ellipsoid> {
    let n = e1.dim();
    match (e1.shape(), e2.shape()) {
        (None, _) => {
            return if e2.contains(e1.center(), 1e-9) {
                Ok(e1.clone())
            } else {
                Err(Error::Empty)
            }
        }
        (_, None) => return intersect_ellipsoids(solver, e2, e1),
        _ => {}
    }
    if intersection_level(solver, e1, e2)? > 1.0 + 1e-9 {
        return Err(Error::Empty);
    }
    let origin = e1.center().clone();
    let cons = [
        ellipsoid_form(e1.shape().unwrap(), &DVector::zeros(n)),
        ellipsoid_form(e2.shape().unwrap(), &(e2.center() - &origin)),
    ];
    let (g, p, _) = solve_min_trace(solver, n + 1, 0, n, &cons)?;
    Ellipsoid::from_inverse_shape(p + origin, regularize_inverse_shape(g))
}

/// `min_x max(level₁(x), level₂(x))`, which is ≤ 1 iff the ellipsoids meet.
fn intersection_level(solver: &dyn ConicSolver, e1: &Ellipsoid, e2: &Ellipsoid) -> Result<f64> {
    let n = e1.dim();
    let mut prob = ConicProblem::new(n + 1);
    let t = n;
    prob.set_linear_cost(t, 1.0);
    for e in [e1, e2] {
        // [t, (x-c)ᵀ; x-c, Q⁻¹] ⪰ 0  ⇔  (x-c)ᵀQ(x-c) ≤ t
        let size = n + 1;
        let c = e.center() - e1.center();
        let mut constant = DMatrix::zeros(size, size);
        constant
            .view_mut((1, 1), (n, n))
            .copy_from(&(-e.inverse_shape()));
        for i in 0..n {
            constant[(0, i + 1)] = c[i];
            constant[(i + 1, 0)] = c[i];
        }
        let mut lmi = Lmi::new(constant);
        let mut et = DMatrix::zeros(size, size);
        et[(0, 0)] = -1.0;
        lmi.add_term(t, et);
        for i in 0..n {
            let mut ex = DMatrix::zeros(size, size);
            ex[(0, i + 1)] = -1.0;
            ex[(i + 1, 0)] = -1.0;
            lmi.add_term(i, ex);
        }
        prob.add_lmi(lmi);
    }
    let sol = solver.solve(&prob)?;
    if !sol.status.is_solved() {
        return Err(Error::SolverFailure(format!(
            "intersection test: {}",
            sol.detail
        )));
    }
    Ok(sol.x[t])
}

/// Ball `(center, radius)` enclosing `M·P`, with the center at `M` times the
/// Chebyshev center of `P` and the radius taken over the corners of the
/// bounding box of `P`.
fn enclosing_ball_of_image(map: &DMatrix<f64>, poly: &Polytope) -> Result<Ellipsoid> {
    let (c, _) = poly.chebyshev_center()?;
    let radius = poly
        .bounding_box_vertices()?
        .iter()
        .map(|v| (map * (v - &c)).norm())
        .fold(0.0, f64::max);
    Ellipsoid::ball(map * c, radius)
}

/// Outer ellipsoid of `Succ(Xk, Dk)`: `A∘Xk ⊕ B∘U ⊕ Dk`, clipped to the
/// ellipsoid `state_cover` enclosing the state constraints.
pub fn propagate_state_ellipsoid(
    solver: &dyn ConicSolver,
    model: &LipschitzModel,
    xk: &Ellipsoid,
    input_set: &Polytope,
    disturbance: &Polytope,
    state_cover: &Ellipsoid,
) -> Result<Ellipsoid> {
    let n = model.state_dim();
    let image = affine_image_ellipsoid(model.a(), &DVector::zeros(n), xk)?.ellipsoid;
    let input_ball = enclosing_ball_of_image(model.b(), input_set)?;
    let dist_ball = enclosing_ball_of_image(&DMatrix::identity(n, n), disturbance)?;
    let sum =
        minkowski_outer_ellipsoid(&minkowski_outer_ellipsoid(&image, &input_ball)?, &dist_ball)?;
    intersect_ellipsoids(solver, &sum, state_cover).map_err(|e| match e {
        Error::Empty => Error::EmptyTube { step: 0 },
        other => other,
    })
}

/// `P^d(X)`: the eigenbasis box of the minimum-trace ellipsoid over the
/// ellipsoid circumscribing the state constraints.
pub fn global_uncertainty_bound(
    solver: &dyn ConicSolver,
    dataset: &Dataset,
    state_set: &Polytope,
) -> Result<(SProcedureCertificate, Polytope)> {
    let cover = Ellipsoid::circumscribing(state_set)?;
    let cert = min_trace_ellipsoid(solver, dataset, &cover)?;
    let poly = ellipsoid_to_polytope(&cert.ellipsoid);
    Ok((cert, poly))
}

/// Sets for one MPC solve, indexed by relative prediction step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonSets {
    /// `X_0 … X_N`; `X_0` is the current state, `X_N` covers the state
    /// constraints.
    pub state_ellipsoids: Vec<Ellipsoid>,
    /// `E^d(X_k)` for `k < N`.
    pub d_ellipsoids: Vec<Ellipsoid>,
    pub certificates: Vec<SProcedureCertificate>,
    /// `P^d(X_k)` for `k < N`.
    pub d_polytopes: Vec<Polytope>,
    /// Set computed at the previous time for the same absolute step.
    pub d_polytopes_prev: Vec<Polytope>,
    /// `P^d(X_k) ∩ prev_k`, the set the MPC robustifies against.
    pub effective: Vec<Polytope>,
    /// Chebyshev centers of `effective`.
    #[serde(with = "serde_dvec_list")]
    pub nominal_d: Vec<DVector<f64>>,
}

impl HorizonSets {
    pub fn horizon(&self) -> usize {
        self.d_polytopes.len()
    }
}

/// Inputs of [`build_horizon_sets`] that stay fixed across time steps.
#[derive(Debug, Clone)]
pub struct HorizonProblem<'a> {
    pub model: &'a LipschitzModel,
    pub horizon: usize,
    pub state_set: &'a Polytope,
    pub input_set: &'a Polytope,
    /// Previous-time set for the last step, which no earlier horizon
    /// covered. `None` means the whole space.
    pub last_step_bound: Option<&'a Polytope>,
}

/// Builds `X_k`, `E^d(X_k)`, `P^d(X_k)` and the intersected sets for
/// `k = 0 … N-1` at state `x_t`.
pub fn build_horizon_sets(
    solver: &dyn ConicSolver,
    dataset: &Dataset,
    problem: &HorizonProblem<'_>,
    x_t: &DVector<f64>,
    prev: Option<&HorizonSets>,
) -> Result<HorizonSets> {
    let n = problem.model.state_dim();
    let horizon = problem.horizon;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if x_t.len() != n {
        return Err(Error::Dimension("state length".into()));
    }
    if !problem.state_set.contains(x_t, 1e-9) {
        return Err(Error::InvalidArgument(
            "current state violates the state constraints".into(),
        ));
    }
    let cover = Ellipsoid::circumscribing(problem.state_set)?;

    let mut sets = HorizonSets {
        state_ellipsoids: vec![Ellipsoid::point(x_t.clone())],
        d_ellipsoids: Vec::with_capacity(horizon),
        certificates: Vec::with_capacity(horizon),
        d_polytopes: Vec::with_capacity(horizon),
        d_polytopes_prev: Vec::with_capacity(horizon),
        effective: Vec::with_capacity(horizon),
        nominal_d: Vec::with_capacity(horizon),
    };
    for k in 0..horizon {
        let xk = sets.state_ellipsoids[k].clone();
        let cert = min_trace_ellipsoid(solver, dataset, &xk)?;
        if !cert.is_valid() {
            return Err(Error::NoEnvelope(format!(
                "certificate at step {k} failed re-verification (max eig {:.3e})",
                cert.lmi_max_eig
            )));
        }
        let poly = ellipsoid_to_polytope(&cert.ellipsoid);
        let prev_k = match prev {
            Some(p) if k + 1 < p.horizon() => p.effective[k + 1].clone(),
            _ if k + 1 == horizon => problem
                .last_step_bound
                .cloned()
                .unwrap_or_else(|| Polytope::universe(n)),
            _ => Polytope::universe(n),
        };
        let effective = poly.intersect(&prev_k)?.remove_redundant()?;
        let (center, radius) = effective.chebyshev_center()?;
        if radius < -crate::geometry::EMPTY_TOL {
            return Err(Error::EmptyTube { step: k });
        }
        if k + 1 < horizon {
            let next = propagate_state_ellipsoid(
                solver,
                problem.model,
                &xk,
                problem.input_set,
                &poly,
                &cover,
            )
            .map_err(|e| match e {
                Error::EmptyTube { .. } => Error::EmptyTube { step: k + 1 },
                other => other,
            })?;
            sets.state_ellipsoids.push(next);
        }
        sets.d_ellipsoids.push(cert.ellipsoid.clone());
        sets.certificates.push(cert);
        sets.d_polytopes.push(poly);
        sets.d_polytopes_prev.push(prev_k);
        sets.effective.push(effective);
        sets.nominal_d.push(center);
    }
    sets.state_ellipsoids.push(cover);
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::Measurement;
    use crate::solver::default_solver;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_d(x: &DVector<f64>) -> DVector<f64> {
        dvector![0.05 * x[0].atan(), 0.05 * x[1]]
    }

    fn random_dataset(seed: u64, count: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(0.05);
        for t in 0..count {
            let x = dvector![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..3.0)];
            ds.insert(Measurement::new(t as u64, x.clone(), reference_d(&x)).unwrap())
                .unwrap();
        }
        ds
    }

    #[test]
    fn single_measurement_at_query_is_a_point() {
        let mut ds = Dataset::new(0.05);
        let x0 = dvector![0.2, 0.4];
        ds.insert(Measurement::new(0, x0.clone(), reference_d(&x0)).unwrap())
            .unwrap();
        let cert =
            min_trace_ellipsoid(default_solver(), &ds, &Ellipsoid::point(x0.clone())).unwrap();
        assert!(cert.ellipsoid.trace_inverse_shape() <= 1e-6);
        assert!((cert.ellipsoid.center() - reference_d(&x0)).norm() < 1e-3);
    }

    #[test]
    fn single_measurement_gives_its_ball() {
        let mut ds = Dataset::new(0.05);
        let x0 = dvector![0.0, 0.0];
        let d0 = dvector![0.01, -0.02];
        ds.insert(Measurement::new(0, x0, d0.clone()).unwrap())
            .unwrap();
        let r = 0.1;
        let x = dvector![r / 0.05, 0.0];
        let cert = min_trace_ellipsoid(default_solver(), &ds, &Ellipsoid::point(x)).unwrap();
        let tr = cert.ellipsoid.trace_inverse_shape();
        assert!((tr - 2.0 * r * r).abs() <= 0.01 * 2.0 * r * r, "trace {tr}");
        assert!((cert.ellipsoid.center() - d0).norm() < 1e-6);
        assert!(cert.is_valid());
    }

    #[test]
    fn grid_points_of_ball_intersection_are_covered() {
        // Slope strictly below L so the ball intersection has interior.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut ds = Dataset::new(0.05);
        for t in 0..10 {
            let xi = dvector![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..3.0)];
            ds.insert(Measurement::new(t, xi.clone(), reference_d(&xi) * 0.8).unwrap())
                .unwrap();
        }
        let x = dvector![0.3, 0.8];
        let cert =
            min_trace_ellipsoid(default_solver(), &ds, &Ellipsoid::point(x.clone())).unwrap();
        assert!(cert.is_valid(), "max eig {}", cert.lmi_max_eig);
        let set = crate::envelope::point_uncertainty_set(&ds, &x).unwrap();
        let ball = set.tightest_ball().clone();
        let steps = 120;
        let mut checked = 0;
        for i in 0..=steps {
            for j in 0..=steps {
                let z = &ball.center
                    + dvector![
                        ball.radius * (2.0 * i as f64 / steps as f64 - 1.0),
                        ball.radius * (2.0 * j as f64 / steps as f64 - 1.0)
                    ];
                if set.contains(&z, 0.0) {
                    checked += 1;
                    assert!(cert.ellipsoid.contains(&z, 1e-6));
                }
            }
        }
        assert!(checked >= 20, "only {checked} grid points inside");
        assert!(cert.ellipsoid.contains(&(reference_d(&x) * 0.8), 1e-6));
    }

    #[test]
    fn region_certificate_covers_sampled_states() {
        let ds = random_dataset(5, 12);
        let region = Ellipsoid::new(dvector![0.0, 1.0], dmatrix![4.0, 0.0; 0.0, 2.0]).unwrap();
        let cert = min_trace_ellipsoid(default_solver(), &ds, &region).unwrap();
        assert!(cert.is_valid(), "max eig {}", cert.lmi_max_eig);
        assert!(cert.rho >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            if u.norm() > 1.0 {
                continue;
            }
            let x = region.boundary_point(&u);
            assert!(cert.ellipsoid.contains(&reference_d(&x), 1e-6));
        }
    }

    #[test]
    fn appendix_matrix_matches_generic_lifting() {
        // The explicit block LMI must equal the generic s-procedure matrix
        // [-ρC_region - Στ Q_L - e eᵀ, F(p); F(p)ᵀ, -G].
        let ds = random_dataset(2, 4);
        let region = Ellipsoid::new(dvector![0.1, 0.9], dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
        let rho = 0.7;
        let tau = vec![0.3, 1.1, 0.0, 2.5];
        let g = dmatrix![0.02, 0.001; 0.001, 0.03];
        let p = dvector![0.01, 0.04];
        let explicit = containment_lmi(&ds, &region, rho, &tau, &g, &p);

        let n = 2;
        let size = 4 * n + 1;
        let mut generic = DMatrix::zeros(size, size);
        let form = ellipsoid_form(region.shape().unwrap(), region.center());
        let mut c = DMatrix::zeros(2 * n + 1, 2 * n + 1);
        c.view_mut((0, 0), (n, n))
            .copy_from(&form.view((0, 0), (n, n)));
        for i in 0..n {
            c[(i, 2 * n)] = form[(i, n)];
            c[(2 * n, i)] = form[(n, i)];
        }
        c[(2 * n, 2 * n)] = form[(n, n)];
        let mut base = -c * rho;
        for (m, t) in ds.measurements().iter().zip(&tau) {
            base -= qc_matrix_raw(0.05, &m.x, &m.d).matrix() * *t;
        }
        base[(2 * n, 2 * n)] -= 1.0;
        generic
            .view_mut((0, 0), (2 * n + 1, 2 * n + 1))
            .copy_from(&base);
        for i in 0..n {
            generic[(n + i, 2 * n + 1 + i)] = -1.0;
            generic[(2 * n + 1 + i, n + i)] = -1.0;
            generic[(2 * n, 2 * n + 1 + i)] = p[i];
            generic[(2 * n + 1 + i, 2 * n)] = p[i];
        }
        generic
            .view_mut((2 * n + 1, 2 * n + 1), (n, n))
            .copy_from(&(-&g));
        assert!((explicit - generic).amax() < 1e-12);
    }

    #[test]
    fn propagation_identity_case() {
        let model = LipschitzModel::new(DMatrix::identity(2, 2), dmatrix![1.0; 0.0], 0.0).unwrap();
        let unit = Ellipsoid::ball(dvector![0.0, 0.0], 1.0).unwrap();
        let cover = Ellipsoid::ball(dvector![0.0, 0.0], 5.0).unwrap();
        let zero_u = Polytope::singleton(&dvector![0.0]);
        let zero_d = Polytope::singleton(&dvector![0.0, 0.0]);
        let next =
            propagate_state_ellipsoid(default_solver(), &model, &unit, &zero_u, &zero_d, &cover)
                .unwrap();
        assert!((next.inverse_shape() - DMatrix::identity(2, 2)).amax() < 1e-5);
        assert!(next.center().norm() < 1e-6);
    }

    #[test]
    fn propagation_scalar_interval() {
        let model = LipschitzModel::new(dmatrix![0.5], dmatrix![0.0], 0.0).unwrap();
        let xk = Ellipsoid::ball(dvector![0.0], 1.0).unwrap();
        let u = Polytope::from_bounds(&[-1.0], &[1.0]).unwrap();
        let d = Polytope::from_bounds(&[-0.1], &[0.1]).unwrap();
        let cover = Ellipsoid::ball(dvector![0.0], 10.0).unwrap();
        let next =
            propagate_state_ellipsoid(default_solver(), &model, &xk, &u, &d, &cover).unwrap();
        assert!(next.contains(&dvector![0.6], 1e-9));
        assert!(next.contains(&dvector![-0.6], 1e-9));
    }

    #[test]
    fn propagation_covers_sampled_successors() {
        let model =
            LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], 0.05).unwrap();
        let x_set = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0]).unwrap();
        let u_set = Polytope::from_bounds(&[-4.0], &[1.0]).unwrap();
        let d_set = Polytope::from_bounds(&[-0.05, -0.05], &[0.05, 0.15]).unwrap();
        let cover = Ellipsoid::circumscribing(&x_set).unwrap();
        let xk = Ellipsoid::new(dvector![0.0, 0.5], dmatrix![20.0, 0.0; 0.0, 10.0]).unwrap();
        let next = propagate_state_ellipsoid(default_solver(), &model, &xk, &u_set, &d_set, &cover)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut hits = 0;
        for _ in 0..500 {
            let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            if u.norm() > 1.0 {
                continue;
            }
            let x = xk.boundary_point(&u);
            let inp = dvector![rng.gen_range(-4.0..1.0)];
            let d = dvector![rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.15)];
            let succ = model.step(&x, &inp, &d);
            if x_set.contains(&succ, 0.0) {
                hits += 1;
                assert!(next.contains(&succ, 1e-7));
            }
        }
        assert!(hits > 50);
    }

    #[test]
    fn disjoint_ellipsoids_report_empty() {
        let a = Ellipsoid::ball(dvector![0.0, 0.0], 1.0).unwrap();
        let b = Ellipsoid::ball(dvector![3.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            intersect_ellipsoids(default_solver(), &a, &b),
            Err(Error::Empty)
        ));
    }

    fn reference_problem() -> (LipschitzModel, Polytope, Polytope) {
        (
            LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], 0.05).unwrap(),
            Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0]).unwrap(),
            Polytope::from_bounds(&[-4.0], &[1.0]).unwrap(),
        )
    }

    #[test]
    fn horizon_of_one() {
        let (model, x, u) = reference_problem();
        let ds = random_dataset(3, 8);
        let hp = HorizonProblem {
            model: &model,
            horizon: 1,
            state_set: &x,
            input_set: &u,
            last_step_bound: None,
        };
        let xt = dvector![0.1, 0.2];
        let sets = build_horizon_sets(default_solver(), &ds, &hp, &xt, None).unwrap();
        assert_eq!(sets.state_ellipsoids.len(), 2);
        assert!(sets.state_ellipsoids[0].is_point());
        assert_eq!(sets.d_polytopes.len(), 1);
        assert!(sets.d_polytopes_prev[0].is_universe());
        assert!(sets.effective[0].set_eq(&sets.d_polytopes[0]).unwrap());
    }

    #[test]
    fn consecutive_calls_intersect_shared_steps() {
        let (model, x, u) = reference_problem();
        let ds = random_dataset(4, 10);
        let hp = HorizonProblem {
            model: &model,
            horizon: 3,
            state_set: &x,
            input_set: &u,
            last_step_bound: None,
        };
        let x0 = dvector![0.2, -0.3];
        let first = build_horizon_sets(default_solver(), &ds, &hp, &x0, None).unwrap();
        for k in 0..3 {
            assert!(first.d_polytopes_prev[k].is_universe());
            assert!(first.effective[k].set_eq(&first.d_polytopes[k]).unwrap());
        }
        let x1 = model.step(&x0, &dvector![-0.5], &reference_d(&x0));
        let second = build_horizon_sets(default_solver(), &ds, &hp, &x1, Some(&first)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for k in 0..2 {
            assert!(second.d_polytopes_prev[k]
                .set_eq(&first.effective[k + 1])
                .unwrap());
            let (lo, hi) = second.d_polytopes[k].bounding_box().unwrap();
            for _ in 0..500 {
                let z = DVector::from_fn(2, |i, _| rng.gen_range(lo[i] - 0.05..hi[i] + 0.05));
                let inside = second.effective[k].contains(&z, 1e-9);
                let both = second.d_polytopes[k].contains(&z, 1e-9)
                    && first.effective[k + 1].contains(&z, 1e-9);
                assert_eq!(inside, both);
            }
        }
        assert!(second.d_polytopes_prev[2].is_universe());
    }
}
