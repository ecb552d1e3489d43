//! Final-time transfer yield against the upper-manifold lifetime, for a
//! field optimized with and without the constraint.
//!
//! ```text
//! cargo run --release --example decay_scan -- [iters]
//! ```

use krotov_core::cli::decay::{default_lifetimes, has_short_lifetime_upturn, scan};
use krotov_core::cli::{Experiment, RunConfig};
use krotov_core::krotov::optimize;
use krotov_core::model::{self, build_default_model, FEMTOSECOND};
use krotov_core::propagate::Scheme;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters: usize = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let m = build_default_model();
    let mut cfg = RunConfig::default();
    cfg.grid.n_steps = 1 << 15;
    cfg.stop.max_iters = iters;

    let mut fields = Vec::new();
    for lambda_b_t in [0.0, -32.0] {
        cfg.functional.lambda_b_t = lambda_b_t;
        let out = optimize(&cfg.problem(&m, Experiment::Transfer)?, &cfg.options())?;
        println!("lambda_b T = {lambda_b_t:>5}: P(v=1, T) = {:.6} after {iters} iterations", out.last().yield_final);
        fields.push(out.field);
    }

    let target = cfg.target(&m, Experiment::Transfer)?;
    let lifetimes = default_lifetimes();
    let free = scan(&m, &fields[0], &target, model::UPPER_MANIFOLD, &lifetimes, Scheme::Split)?;
    let con = scan(&m, &fields[1], &target, model::UPPER_MANIFOLD, &lifetimes, Scheme::Split)?;
    println!("\n{:>12} {:>14} {:>14} {:>10}", "tau_L (fs)", "P(v=1) free", "P(v=1) constr", "P_s free");
    for (a, b) in free.iter().zip(&con) {
        println!(
            "{:>12.1} {:>14.6} {:>14.6} {:>10.6}",
            a.lifetime / FEMTOSECOND,
            a.objective,
            b.objective,
            a.survival
        );
    }
    println!("\nunconstrained curve turns up at short lifetimes: {}", has_short_lifetime_upturn(&free));
    Ok(())
}
