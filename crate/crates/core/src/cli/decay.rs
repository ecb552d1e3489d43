//! Robustness of a fixed field against decay of one manifold.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{expectation_raw, inner, Model, StateVector, C64};
use crate::model::{apply_decay, decay_rate, FEMTOSECOND, PICOSECOND};
use crate::objective::Target;
use crate::propagate::{ControlField, Propagator, Scheme, Stepper, Workspace};

/// `n` lifetimes (a.u.) log-spaced over `[lo, hi]`, ascending.
pub fn log_lifetimes(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(Error::Parameter(format!("bad lifetime range [{lo}, {hi}] x {n}")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect())
}

/// 25 lifetimes from 10 fs to 100 ps.
pub fn default_lifetimes() -> Vec<f64> {
    log_lifetimes(10.0 * FEMTOSECOND, 100.0 * PICOSECOND, 25).expect("static range")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanRow {
    /// Lifetime in a.u.; infinite for the loss-free reference.
    pub lifetime: f64,
    pub gamma: f64,
    /// Target population (transfer) or `|tau|/N_r` (gate).
    pub objective: f64,
    /// Remaining norm, averaged over initial states.
    pub survival: f64,
}

pub fn final_states(stepper: &impl Stepper, field: &ControlField, initial: &[StateVector]) -> Result<Vec<StateVector>> {
    let grid = field.grid();
    let mut ws = Workspace::new(stepper.dim());
    initial
        .iter()
        .map(|s| {
            let mut psi = s.amplitudes().to_vec();
            for i in 0..grid.n_steps() {
                stepper.step(field.step_value(i), grid.dt(), &mut psi, &mut ws)?;
            }
            StateVector::new(psi)
        })
        .collect()
}

/// Objective and survival at `T` for an already-built model.
pub fn evaluate(model: &Model, field: &ControlField, target: &Target, scheme: Scheme) -> Result<(f64, f64)> {
    let prop = Propagator::new(model, field.grid(), scheme);
    let finals = final_states(&prop, field, &target.initial_states())?;
    let survival = finals.iter().map(|s| s.norm_sqr()).sum::<f64>() / finals.len() as f64;
    let objective = match target {
        Target::State { d, .. } => expectation_raw(finals[0].amplitudes(), d).re,
        Target::Gate(g) => {
            let tau: C64 = g
                .targets
                .iter()
                .zip(&finals)
                .map(|(f, s)| inner(f.amplitudes(), s.amplitudes()))
                .sum();
            tau.norm() / g.n_r() as f64
        }
    };
    Ok((objective, survival))
}

/// Propagates `field` once per lifetime with decay on `manifold`, in
/// parallel. A non-finite lifetime means no decay.
pub fn scan(
    model: &Model,
    field: &ControlField,
    target: &Target,
    manifold: usize,
    lifetimes: &[f64],
    scheme: Scheme,
) -> Result<Vec<ScanRow>> {
    if let Some(bad) = lifetimes.iter().find(|l| l.is_nan() || **l <= 0.0) {
        return Err(Error::Parameter(format!("lifetimes must be > 0, got {bad}")));
    }
    lifetimes
        .par_iter()
        .map(|&lifetime| {
            let gamma = if lifetime.is_finite() { decay_rate(lifetime) } else { 0.0 };
            let decayed = apply_decay(model, gamma, manifold)?;
            let (objective, survival) = evaluate(&decayed, field, target, scheme)?;
            Ok(ScanRow {
                lifetime,
                gamma,
                objective,
                survival,
            })
        })
        .collect()
}

pub const SCAN_HEADER: &str = "tau_L,gamma,objective,P_s";

pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut s = String::from(SCAN_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", r.lifetime, r.gamma, r.objective, r.survival);
    }
    s
}

/// True if the objective's minimum over the scan lies above the shortest
/// lifetime, so that it rises again as the lifetime keeps shrinking. Rows
/// must be sorted by ascending lifetime.
pub fn has_short_lifetime_upturn(rows: &[ScanRow]) -> bool {
    let imin = (0..rows.len()).fold(0, |m, i| if rows[i].objective < rows[m].objective { i } else { m });
    imin > 0
}
