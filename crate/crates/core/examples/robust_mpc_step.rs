//! One robust MPC solve with affine disturbance feedback, checked against
//! the worst case over the disturbance sets.

use lipmpc::envelope::LipschitzModel;
use lipmpc::geometry::Polytope;
use lipmpc::mpc::{build_robust_qp_with, terminal_cost_and_gain, worst_case_violation, MpcConfig};
use lipmpc::solver::default_solver;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

fn main() -> lipmpc::Result<()> {
    let model = LipschitzModel::new(dmatrix![1.2, 1.5; 0.0, 1.3], dmatrix![0.0; 1.0], 0.05)?;
    let q = DMatrix::identity(2, 2) * 10.0;
    let r = dmatrix![2.0];
    let (p_n, k) = terminal_cost_and_gain(&model, &q, &r)?;
    let config = MpcConfig {
        horizon: 3,
        q,
        r,
        p_n,
        k,
        state_set: Polytope::from_bounds(&[-1.0, -1.0], &[1.0, 3.0])?,
        input_set: Polytope::from_bounds(&[-4.0], &[1.0])?,
        terminal_set: Polytope::from_bounds(&[-0.3, -0.3], &[0.3, 0.3])?,
    };
    let d = Polytope::from_bounds(&[-0.04, -0.03], &[0.04, 0.05])?;
    let d_sets = vec![d; 3];
    let nominal = vec![dvector![0.0, 0.01]; 3];
    let x = dvector![-0.5, 0.5];

    let program = build_robust_qp_with(&config, &model, &x, &d_sets, &nominal)?;
    let sol = program.solve(default_solver(), &config)?;
    println!(
        "status {:?}, objective {:.4}",
        sol.status,
        sol.objective.unwrap_or(f64::NAN)
    );
    let Some(policy) = sol.policy else {
        return Ok(());
    };
    println!(
        "u0 = {:.4}, causal policy: {}",
        sol.u0.as_ref().map_or(f64::NAN, |u| u[0]),
        policy.is_causal()
    );
    for (k, xk) in sol.nominal_traj.iter().enumerate() {
        println!("  nominal x{k} = ({:+.4}, {:+.4})", xk[0], xk[1]);
    }
    for kk in 1..3 {
        for l in 0..kk {
            let m = policy.block(kk, l);
            println!("  M[{kk},{l}] = [{:+.4}, {:+.4}]", m[0], m[1]);
        }
    }
    let worst = worst_case_violation(&config, &model, &x, &policy, &d_sets)?;
    println!(
        "worst-case constraint value over the disturbance sets: {worst:.2e} (<= 0 means satisfied)"
    );

    let ds: Vec<DVector<f64>> = vec![
        dvector![0.04, -0.03],
        dvector![-0.04, 0.05],
        dvector![0.04, 0.05],
    ];
    let (xs, us) = policy.rollout(&model, &x, &ds);
    println!(
        "corner rollout: x3 = ({:+.4}, {:+.4}), inputs {:?}",
        xs[3][0],
        xs[3][1],
        us.iter()
            .map(|u| (u[0] * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
    Ok(())
}
