//! Two-level Rabi flopping and exponential decay with the split stepper,
//! next to their closed forms.

use krotov_core::hilbert::{Coupling, Manifold, Model, StateVector, C64};
use krotov_core::propagate::{propagate_forward, ControlField, Propagator, Scheme, TimeGrid};
use nalgebra::DMatrix;

fn two_level(omega: f64, g: f64, gamma: f64) -> Model {
    let level = |name: &str, e| Manifold {
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
    .expect("valid two-level model")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Resonant, rotating frame: P_e(t) = sin^2(g t) for a unit field.
    let g = 0.011;
    let m = two_level(0.0, g, 0.0);
    let grid = TimeGrid::new(600.0, 480)?;
    let field = ControlField::from_fn(grid, |_| 1.0)?;
    let traj = propagate_forward(&Propagator::new(&m, &grid, Scheme::Split), &field, &[StateVector::basis(2, 0)])?;
    println!("{:>8} {:>12} {:>12}", "t", "P_e", "sin^2(gt)");
    for i in (0..grid.n_nodes()).step_by(48) {
        let t = grid.time(i);
        println!("{t:>8.1} {:>12.9} {:>12.9}", traj.state(0, i)[1].norm_sqr(), (g * t).sin().powi(2));
    }

    // Detuned: the split scheme approaches the exact result at second order.
    let (delta, g) = (0.05, 0.004);
    let m = two_level(delta, g, 0.0);
    let t = 600.0;
    let w = (g * g + 0.25 * delta * delta).sqrt();
    let exact = (g / w).powi(2) * (w * t).sin().powi(2);
    println!("\ndetuned, final P_e error of the split scheme");
    for n in [250, 500, 1000, 2000] {
        let grid = TimeGrid::new(t, n)?;
        let field = ControlField::from_fn(grid, |_| 1.0)?;
        let traj = propagate_forward(&Propagator::new(&m, &grid, Scheme::Split), &field, &[StateVector::basis(2, 0)])?;
        println!("  n = {n:>5}  error = {:.3e}", (traj.state(0, n)[1].norm_sqr() - exact).abs());
    }

    let gamma = 2e-3;
    let m = two_level(0.05, 0.0, gamma);
    let grid = TimeGrid::new(2000.0, 400)?;
    let traj = propagate_forward(
        &Propagator::new(&m, &grid, Scheme::Split),
        &ControlField::zeros(grid),
        &[StateVector::basis(2, 1)],
    )?;
    let worst = (0..grid.n_nodes())
        .map(|i| {
            let want = (-gamma * grid.time(i)).exp();
            ((traj.state(0, i)[1].norm_sqr() - want) / want).abs()
        })
        .fold(0.0, f64::max);
    println!("\ndecay at Gamma = {gamma}: max relative deviation from exp(-Gamma t) = {worst:.1e}");
    Ok(())
}
