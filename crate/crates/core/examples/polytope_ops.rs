//! Polytope operations: intersection, support function, Chebyshev center,
//! redundancy removal and one robust preimage step.

use lipmpc::geometry::{pre_set, Polytope};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

fn main() -> lipmpc::Result<()> {
    let state = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0])?;
    let diamond = Polytope::new(
        dmatrix![1.0, 1.0; 1.0, -1.0; -1.0, 1.0; -1.0, -1.0],
        dvector![1.5, 1.5, 1.5, 1.5],
    )?;
    let both = state.intersect(&diamond)?;
    let (center, radius) = both.chebyshev_center()?;
    println!(
        "intersection: {} rows, Chebyshev center ({:.3}, {:.3}), radius {radius:.3}",
        both.num_rows(),
        center[0],
        center[1]
    );

    for dir in [dvector![1.0, 0.0], dvector![0.0, 1.0], dvector![1.0, 1.0]] {
        println!(
            "support along ({}, {}): {:.3}",
            dir[0],
            dir[1],
            both.support(&dir)?
        );
    }

    // The state box plus a redundant row x1 ≤ 5.
    let padded = Polytope::new(
        DMatrix::from_row_slice(5, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 0.0]),
        DVector::from_row_slice(&[1.0, 1.0, 3.0, 1.0, 5.0]),
    )?;
    let trimmed = padded.remove_redundant()?;
    println!(
        "redundancy removal: {} -> {} rows, same set: {}",
        padded.num_rows(),
        trimmed.num_rows(),
        trimmed.set_eq(&state)?
    );

    let acl = dmatrix![0.9, 0.4; 0.0, 0.8];
    let w = Polytope::from_bounds(&[-0.1, -0.1], &[0.1, 0.1])?;
    let unit = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 1.0])?;
    let pre = pre_set(&acl, &unit, &w, &unit)?;
    for corner in [dvector![1.0, 1.0], dvector![1.0, -1.0]] {
        println!(
            "robust preimage of the unit box contains ({}, {}): {}",
            corner[0],
            corner[1],
            pre.contains(&corner, 1e-9)
        );
    }
    Ok(())
}
