//! Certified uncertainty ellipsoids from the s-procedure SDP, for a single
//! state and for a state region, with the certificate re-checked.

use lipmpc::envelope::{Dataset, Measurement};
use lipmpc::geometry::{ellipsoid_to_polytope, Ellipsoid, Polytope};
use lipmpc::setsynth::{global_uncertainty_bound, min_trace_ellipsoid};
use lipmpc::sim::UncertaintyFn;
use lipmpc::solver::default_solver;
use nalgebra::dvector;

fn main() -> lipmpc::Result<()> {
    let truth = UncertaintyFn::Atan { scale: 0.05 };
    let mut dataset = Dataset::new(0.05);
    for (t, x) in [
        [-0.8, 2.5],
        [0.6, 0.2],
        [0.1, -0.7],
        [-0.3, 1.1],
        [0.9, 2.8],
    ]
    .iter()
    .enumerate()
    {
        let x = dvector![x[0], x[1]];
        let d = truth.eval(&x);
        dataset.insert(Measurement::new(t as u64, x, d)?)?;
    }

    let regions = [
        ("point (0.2, 0.4)", Ellipsoid::point(dvector![0.2, 0.4])),
        (
            "ball of radius 0.3",
            Ellipsoid::ball(dvector![0.2, 0.4], 0.3)?,
        ),
    ];
    for (name, region) in regions {
        let cert = min_trace_ellipsoid(default_solver(), &dataset, &region)?;
        let c = cert.ellipsoid.center();
        println!(
            "{name}: E^d center ({:+.4}, {:+.4}), trace {:.3e}, LMI max eigenvalue {:.2e}, valid {}",
            c[0],
            c[1],
            cert.ellipsoid.trace_inverse_shape(),
            cert.lmi_max_eig,
            cert.is_valid()
        );
        let (lo, hi) = ellipsoid_to_polytope(&cert.ellipsoid).bounding_box()?;
        println!(
            "  P^d box [{:+.4}, {:+.4}] x [{:+.4}, {:+.4}]",
            lo[0], hi[0], lo[1], hi[1]
        );
    }

    let state_set = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0])?;
    let (cert, bound) = global_uncertainty_bound(default_solver(), &dataset, &state_set)?;
    let (lo, hi) = bound.bounding_box()?;
    println!(
        "global bound over X: [{:+.4}, {:+.4}] x [{:+.4}, {:+.4}], multiplier of X {:.3e}",
        lo[0], hi[0], lo[1], hi[1], cert.rho
    );
    Ok(())
}
