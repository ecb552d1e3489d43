#![allow(dead_code)]

use krotov_core::cli::RunConfig;
use krotov_core::hilbert::{Coupling, Manifold, Model, C64};
use krotov_core::krotov::Outcome;
use krotov_core::objective::{projected_population, Subspaces};
use nalgebra::DMatrix;

/// Ground level at 0, excited level at `omega - i gamma/2`, dipole `g`.
pub fn two_level(omega: f64, g: f64, gamma: f64) -> Model {
    let level = |name: &str, e: C64| Manifold {
        name: name.into(),
        v_min: 0,
        energies: vec![e],
    };
    Model::new(
        vec![level("g", C64::new(0.0, 0.0)), level("e", C64::new(omega, -0.5 * gamma))],
        vec![Coupling {
            from: 0,
            to: 1,
            matrix: DMatrix::from_element(1, 1, g),
        }],
    )
    .unwrap()
}

pub fn config(n_steps: usize, lambda_b_t: f64, max_iters: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.grid.n_steps = n_steps;
    c.functional.lambda_b_t = lambda_b_t;
    c.stop.max_iters = max_iters;
    c
}

/// Forbidden-subspace population averaged over time and initial states.
pub fn forbidden_average(outcome: &Outcome, subspaces: &Subspaces) -> f64 {
    let traj = &outcome.trajectory;
    let grid = traj.grid();
    let p = projected_population(traj, &subspaces.forbid).unwrap();
    grid.integrate(&p) / (grid.t_final() * traj.n_columns() as f64)
}
