//! Terminal ingredients: LQR cost and gain, the maximal robust positive
//! invariant set and its three conditions.

use lipmpc::cli::polygon_vertices;
use lipmpc::envelope::LipschitzModel;
use lipmpc::geometry::{max_rpi_set, Polytope, DEFAULT_MAX_ITER};
use lipmpc::mpc::{check_terminal_conditions, terminal_cost_and_gain, MpcConfig};
use nalgebra::{dmatrix, DMatrix};

fn main() -> lipmpc::Result<()> {
    let model = LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], 0.05)?;
    let q = DMatrix::identity(2, 2) * 10.0;
    let r = dmatrix![2.0];
    let (p_n, k) = terminal_cost_and_gain(&model, &q, &r)?;
    println!("K = [{:.4}, {:.4}]", k[0], k[1]);
    let state_set = Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0])?;
    let input_set = Polytope::from_bounds(&[-4.0], &[1.0])?;
    let acl = model.a() + model.b() * &k;

    for half_width in [0.01, 0.03, 0.05, 0.08] {
        let w = Polytope::from_bounds(&[-half_width, -half_width], &[half_width, half_width])?;
        let omega = max_rpi_set(&acl, &state_set, &input_set, &k, &w, DEFAULT_MAX_ITER)?;
        if omega.is_empty()? {
            println!("W = ±{half_width}: empty");
            continue;
        }
        let config = MpcConfig {
            horizon: 3,
            q: q.clone(),
            r: r.clone(),
            p_n: p_n.clone(),
            k: k.clone(),
            state_set: state_set.clone(),
            input_set: input_set.clone(),
            terminal_set: omega.clone(),
        };
        let report = check_terminal_conditions(&config, &model, &w)?;
        println!(
            "W = ±{half_width}: {} vertices, Chebyshev radius {:.4}, conditions hold: {}",
            polygon_vertices(&omega).len(),
            omega.chebyshev_center()?.1,
            report.all_passed()
        );
    }
    Ok(())
}
