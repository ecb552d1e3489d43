//! Raman-like transfer v=0 -> v=1 through the intermediate manifold, with
//! and without the allowed-subspace constraint.
//!
//! ```text
//! cargo run --release --example state_to_state -- [n_steps] [iters] [lambda_b_T]
//! ```

use std::time::Instant;

use krotov_core::hilbert::StateVector;
use krotov_core::krotov::{optimize_state_to_state, Options, Problem, StopRules};
use krotov_core::model::{self, build_default_model, guess_field, transition_frequency};
use krotov_core::objective::{
    projected_population, Constraint, Direction, FunctionalConfig, LambdaA, Reference, Subspaces, Target,
};
use krotov_core::propagate::TimeGrid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n_steps: usize = args.next().map_or(Ok(1 << 15), |s| s.parse())?;
    let iters: usize = args.next().map_or(Ok(50), |s| s.parse())?;
    let lambda_b_t: f64 = args.next().map_or(Ok(0.0), |s| s.parse())?;

    let m = build_default_model();
    let grid = TimeGrid::new(model::DEFAULT_T, n_steps)?;
    let omega = transition_frequency(&m, model::V0, model::V10P)?;
    let dim = m.dim();
    let config = FunctionalConfig {
        lambda0: -1.0,
        lambda_b: lambda_b_t / grid.t_final(),
        lambda_a: LambdaA::inverse_gaussian(100.0),
        direction: Direction::Minimize,
        constraint: Constraint::Allowed,
        target: Target::transfer(
            StateVector::basis(dim, m.index_of(model::V0)?),
            &StateVector::basis(dim, m.index_of(model::V1)?),
        )?,
        reference: Reference::PreviousIterate,
    };
    let subspaces = Subspaces::from_forbidden_manifolds(&m, &[model::UPPER_MANIFOLD])?;
    let problem = Problem {
        model: &m,
        config,
        subspaces: subspaces.clone(),
        guess: guess_field(grid, model::DEFAULT_EPS0, omega),
    };
    let options = Options {
        stop: StopRules { max_iters: iters, ..StopRules::default() },
        ..Options::default()
    };
    let start = Instant::now();
    let out = optimize_state_to_state(&problem, &options)?;
    let secs = start.elapsed().as_secs_f64();
    for r in out.records.iter().step_by((iters / 20).max(1)) {
        println!("{r}");
    }
    println!("{}", out.last());
    let forbid = projected_population(&out.trajectory, &subspaces.forbid)?;
    let avg = grid.integrate(&forbid) / grid.t_final();
    println!(
        "{} iterations in {secs:.1} s; P(v=1, T) = {:.6}; <P_forbid> = {avg:.3e}",
        out.records.len() - 1,
        out.last().yield_final
    );
    Ok(())
}
