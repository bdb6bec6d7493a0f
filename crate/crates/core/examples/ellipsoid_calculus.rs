//! Ellipsoid calculus: affine images, outer Minkowski sums, intersections and
//! the circumscribing box.

use lipmpc::geometry::{
    affine_image_ellipsoid, ellipsoid_to_polytope, minkowski_outer_ellipsoid, Ellipsoid,
};
use lipmpc::setsynth::intersect_ellipsoids;
use lipmpc::solver::default_solver;
use nalgebra::{dmatrix, dvector};

fn describe(name: &str, e: &Ellipsoid) {
    let c = e.center();
    println!(
        "{name}: center ({:+.3}, {:+.3}), trace of Q^-1 {:.4}",
        c[0],
        c[1],
        e.trace_inverse_shape()
    );
}

fn main() -> lipmpc::Result<()> {
    let a = dmatrix![1.2, 1.5; 0.0, 1.3];
    let x0 = Ellipsoid::ball(dvector![0.2, -0.1], 0.3)?;
    describe("X0", &x0);

    let image = affine_image_ellipsoid(&a, &dvector![0.0, 0.0], &x0)?.ellipsoid;
    describe("A X0", &image);

    let noise = Ellipsoid::ball(dvector![0.0, 0.0], 0.05)?;
    let sum = minkowski_outer_ellipsoid(&image, &noise)?;
    describe("A X0 + W (outer)", &sum);

    let cover = Ellipsoid::new(dvector![0.0, 0.0], dmatrix![4.0, 0.0; 0.0, 16.0])?;
    match intersect_ellipsoids(default_solver(), &sum, &cover) {
        Ok(clipped) => describe("clipped to the state cover", &clipped),
        Err(e) => println!("intersection: {e}"),
    }

    let boxed = ellipsoid_to_polytope(&sum);
    let (lo, hi) = boxed.bounding_box()?;
    println!(
        "circumscribing box: [{:.3}, {:.3}] x [{:.3}, {:.3}]",
        lo[0], hi[0], lo[1], hi[1]
    );
    Ok(())
}
