//! Offline exploration with random inputs until the terminal set is
//! nonempty, for several seeds.

use lipmpc::config::RunConfig;
use lipmpc::sim::{explore, SimLog};
use lipmpc::solver::default_solver;

fn main() -> lipmpc::Result<()> {
    let resolved = RunConfig::default().resolve()?;
    for seed in 1..=5 {
        let mut plant = resolved.plant(seed)?;
        let mut dataset = resolved.empty_dataset(None);
        let mut log = SimLog::new(seed, resolved.model.lipschitz());
        let outcome = explore(
            default_solver(),
            &mut plant,
            &mut dataset,
            &resolved.mpc,
            &resolved.explore_start,
            &resolved.explore,
            &mut log,
        )?;
        let resets = log.records.iter().filter(|r| r.reset).count();
        println!(
            "seed {seed}: j_stop = {}, resets = {resets}",
            outcome.j_stop
        );
        for step in &outcome.history {
            println!(
                "  j={:2} bound radius {:.4} terminal radius {:+.4}",
                step.j, step.bound_radius, step.terminal_radius
            );
        }
    }
    Ok(())
}
