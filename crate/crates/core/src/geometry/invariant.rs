//! Robust one-step preimages and the maximal robust positive invariant set.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Polytope, SET_EQ_TOL};

pub const DEFAULT_MAX_ITER: usize = 100;

/// `{x ∈ S : Acl·x + w ∈ Ω ∀w ∈ W}`, with redundant rows removed.
pub fn pre_set(
    acl: &DMatrix<f64>,
    omega: &Polytope,
    disturbance: &Polytope,
    state_set: &Polytope,
) -> Result<Polytope> {
    let n = omega.dim();
    if acl.shape() != (n, n) || disturbance.dim() != n || state_set.dim() != n {
        return Err(Error::Dimension("pre-set operands".into()));
    }
    let mut offsets = omega.hvec().clone();
    for i in 0..omega.num_rows() {
        let row = omega.hmat().row(i).transpose();
        offsets[i] -= disturbance.support(&row)?;
    }
    let tightened = Polytope::new(omega.hmat() * acl, offsets)?;
    tightened.intersect(state_set)?.remove_redundant()
}

/// Fixed point of `Ω_{i+1} = pre_set(Acl, Ω_i, W, Ω₀)` starting from
/// `Ω₀ = {x : H_x x ≤ h_x, H_u K x ≤ h_u}`.
///
/// Returns an empty polytope when some iterate becomes empty; the iterates
/// are nested, so convergence is detected by `Ω_i ⊆ Ω_{i+1}`.
pub fn max_rpi_set(
    acl: &DMatrix<f64>,
    state_set: &Polytope,
    input_set: &Polytope,
    gain: &DMatrix<f64>,
    disturbance: &Polytope,
    max_iter: usize,
) -> Result<Polytope> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let omega0 = state_set
        .intersect(&input_set.preimage(gain)?)?
        .remove_redundant()?;
    if omega0.is_empty()? {
        return Ok(omega0);
    }
    let mut omega = omega0.clone();
    for _ in 0..max_iter {
        let next = pre_set(acl, &omega, disturbance, &omega0)?;
        if next.is_empty()? {
            return Ok(next);
        }
        if next.contains_polytope(&omega, SET_EQ_TOL)? {
            return Ok(next);
        }
        omega = next;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last: Box::new(omega),
    })
}
