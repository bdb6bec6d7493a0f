//! Polytopes, ellipsoids and the set operations built on them.

mod ellipsoid;
mod invariant;
mod polytope;

pub use ellipsoid::{
    affine_image_ellipsoid, ellipsoid_to_polytope, minkowski_outer_ellipsoid, AffineImage,
    Ellipsoid, MAP_REGULARIZATION, SYMMETRY_TOL,
};
pub use invariant::{max_rpi_set, pre_set, DEFAULT_MAX_ITER};
pub use polytope::{
    box_vertices, chebyshev_center_with, support_function_with, Polytope, EMPTY_TOL,
    REDUNDANCY_TOL, SET_EQ_TOL,
};
