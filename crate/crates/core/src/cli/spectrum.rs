//! Field spectra.
//!
//! The forward transform is scaled by `dt`, `F(w_k) = dt sum_i eps_i exp(-i w_k t_i)`
//! with `w_k = 2 pi k / (N dt)`, so amplitudes approximate the continuous
//! Fourier transform and do not depend on the grid at fixed `T`. With this
//! normalization `sum_i |eps_i|^2 dt = sum_k |F_k|^2 / (N dt)`.

use std::fmt::Write as _;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::hilbert::{Model, C64, ZERO};
use crate::propagate::ControlField;

/// One- and two-photon spectra on the non-negative frequency bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub one_photon: Vec<f64>,
    pub two_photon: Vec<f64>,
    /// `sum |eps|^2 dt` over the transformed samples.
    pub energy_time: f64,
    /// `sum |F_k|^2 / (N dt)` over all bins of the one-photon transform.
    pub energy_freq: f64,
}

/// Transforms the `N = n_steps` left-node samples; the sample at `T`
/// duplicates the period and is left out.
fn transform(samples: &[f64], dt: f64) -> Vec<C64> {
    let mut buf: Vec<C64> = samples.iter().map(|&x| C64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter_mut().for_each(|z| *z *= dt);
    buf
}

pub fn spectrum(field: &ControlField) -> Result<Spectrum> {
    let grid = field.grid();
    let n = grid.n_steps();
    if n < 2 {
        return Err(Error::Parameter("spectrum needs at least two samples".into()));
    }
    let dt = grid.dt();
    let eps = &field.samples()[..n];
    let one = transform(eps, dt);
    let sq: Vec<f64> = eps.iter().map(|x| x * x).collect();
    let two = transform(&sq, dt);
    let dw = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let half = n / 2 + 1;
    Ok(Spectrum {
        omega: (0..half).map(|k| k as f64 * dw).collect(),
        one_photon: one[..half].iter().map(|z| z.norm()).collect(),
        two_photon: two[..half].iter().map(|z| z.norm()).collect(),
        energy_time: eps.iter().map(|x| x * x).sum::<f64>() * dt,
        energy_freq: one.iter().map(|z| z.norm_sqr()).sum::<f64>() / (n as f64 * dt),
    })
}

impl Spectrum {
    pub fn parseval_error(&self) -> f64 {
        (self.energy_time - self.energy_freq).abs() / self.energy_time.max(f64::MIN_POSITIVE)
    }

    /// Frequency of the largest one-photon bin above `omega_min`.
    pub fn one_photon_peak(&self, omega_min: f64) -> f64 {
        peak(&self.omega, &self.one_photon, omega_min)
    }

    pub fn two_photon_peak(&self, omega_min: f64) -> f64 {
        peak(&self.omega, &self.two_photon, omega_min)
    }

    pub fn bin_width(&self) -> f64 {
        self.omega[1]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("omega,one_photon,two_photon\n");
        for ((w, a), b) in self.omega.iter().zip(&self.one_photon).zip(&self.two_photon) {
            let _ = writeln!(s, "{w:.16e},{a:.16e},{b:.16e}");
        }
        s
    }
}

fn peak(omega: &[f64], amp: &[f64], omega_min: f64) -> f64 {
    omega
        .iter()
        .zip(amp)
        .filter(|(w, _)| **w >= omega_min)
        .fold((f64::NAN, f64::NEG_INFINITY), |best, (&w, &a)| if a > best.1 { (w, a) } else { best })
        .0
}

/// Dipole-coupled level pairs with their transition frequencies, for
/// overlaying on the one-photon spectrum.
pub fn transitions_csv(model: &Model) -> String {
    let mu = model.dipole_operator();
    let labels = model.labels();
    let energies = model.energies();
    let mut s = String::from("from_manifold,from_v,to_manifold,to_v,omega,dipole\n");
    for a in 0..model.dim() {
        for b in 0..model.dim() {
            let d = mu.entries()[(a, b)];
            if d == ZERO || labels[a].manifold >= labels[b].manifold {
                continue;
            }
            let _ = writeln!(
                s,
                "{},{},{},{},{:.16e},{:.16e}",
                labels[a].manifold + 1,
                labels[a].v,
                labels[b].manifold + 1,
                labels[b].v,
                (energies[b] - energies[a]).re.abs(),
                d.re
            );
        }
    }
    s
}
