//! Per-iteration accounting of the functional: the three ledger terms, the
//! observed decrease of J and the discretization residual between them.
//!
//! ```text
//! cargo run --release --example ledger -- [n_steps] [iters]
//! ```

use krotov_core::cli::{Experiment, RunConfig};
use krotov_core::krotov::optimize;
use krotov_core::model::build_default_model;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_steps: usize = args.next().map_or(Ok(1 << 15), |s| s.parse())?;
    let iters: usize = args.next().map_or(Ok(12), |s| s.parse())?;
    let m = build_default_model();
    let mut cfg = RunConfig::default();
    cfg.grid.n_steps = n_steps;
    cfg.functional.lambda_b_t = -32.0;
    cfg.stop.max_iters = iters;
    let out = optimize(&cfg.problem(&m, Experiment::Transfer)?, &cfg.options())?;
    println!(
        "{:>4} {:>16} {:>11} {:>11} {:>11} {:>11} {:>10}",
        "iter", "J", "delta1", "int d2a", "int d2b", "-dJ", "residual"
    );
    for w in out.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        println!(
            "{:>4} {:>16.10} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>10.1e}",
            b.iter,
            b.j,
            b.delta1,
            b.int_delta2a,
            b.int_delta2b,
            a.j - b.j,
            b.ledger_residual
        );
    }
    Ok(())
}
