//! Learning the uncertainty envelope: measurements shrink the pointwise set
//! `D(x)` at fixed query states.

use lipmpc::envelope::{
    point_uncertainty_set, realize_uncertainty, Dataset, LipschitzModel, Measurement,
};
use lipmpc::sim::UncertaintyFn;
use nalgebra::{dmatrix, dvector, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lipmpc::Result<()> {
    let model = LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], 0.05)?;
    let truth = UncertaintyFn::Atan { scale: 0.05 };
    let queries = [
        dvector![-1.0, 2.0],
        dvector![1.0, 1.0],
        dvector![-1.0, 1.0],
        dvector![-2.0, -1.0],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut dataset = Dataset::new(model.lipschitz());

    for t in 0..30u64 {
        let x = dvector![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..3.0)];
        let u = dvector![rng.gen_range(-4.0..1.0)];
        // Only (x, u, x⁺) is observed; d is recovered from the nominal model.
        let x_next = model.step(&x, &u, &truth.eval(&x));
        let d = realize_uncertainty(&model, &x, &u, &x_next)?;
        dataset.insert(Measurement::new(t, x, d)?)?;
        if [1, 5, 10, 30].contains(&dataset.len()) {
            let radii: Vec<String> = queries
                .iter()
                .map(|q| {
                    point_uncertainty_set(&dataset, q)
                        .map(|s| format!("{:.4}", s.tightest_ball().radius))
                })
                .collect::<lipmpc::Result<_>>()?;
            println!(
                "{:2} measurements: tightest ball radius at the queries {}",
                dataset.len(),
                radii.join(" ")
            );
        }
    }
    for q in &queries {
        let set = point_uncertainty_set(&dataset, q)?;
        let d: DVector<f64> = truth.eval(q);
        println!(
            "true d({:+.0}, {:+.0}) inside D(x): {}",
            q[0],
            q[1],
            set.contains(&d, 1e-12)
        );
    }
    Ok(())
}
