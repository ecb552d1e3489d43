//! Trade-off between yield and excited-manifold population as the
//! state-dependent weight grows. The strongest weight needs on the order of
//! 150 iterations before the transfer takes off.
//!
//! ```text
//! cargo run --release --example constraint_sweep -- [iters]
//! ```

use krotov_core::cli::{Experiment, RunConfig};
use krotov_core::krotov::optimize;
use krotov_core::model::build_default_model;
use krotov_core::objective::projected_population;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters: usize = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let m = build_default_model();
    let mut cfg = RunConfig::default();
    cfg.grid.n_steps = 1 << 15;
    cfg.stop.max_iters = iters;
    println!("{:>10} {:>10} {:>12} {:>10} {:>10}", "lambda_b T", "P(v=1,T)", "<P_forbid>", "I_P", "J_norm");
    for lambda_b_t in [0.0, -2.0, -8.0, -32.0] {
        cfg.functional.lambda_b_t = lambda_b_t;
        let p = cfg.problem(&m, Experiment::Transfer)?;
        let out = optimize(&p, &cfg.options())?;
        let grid = out.trajectory.grid();
        let forbid = grid.integrate(&projected_population(&out.trajectory, &p.subspaces.forbid)?) / grid.t_final();
        let last = out.last();
        println!(
            "{lambda_b_t:>10} {:>10.6} {forbid:>12.3e} {:>10.6} {:>10.6}",
            last.yield_final,
            last.i_p.unwrap_or(f64::NAN),
            last.j_norm.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
