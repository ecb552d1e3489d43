//! Three-manifold vibrational model of a diatomic molecule, its guess
//! pulse, level decay, and the on-disk model format.
//!
//! Level energies follow Morse-like ladders
//! `E_v = T_e + w_e (v + 1/2) - w_e x_e (v + 1/2)^2`; coupling blocks are
//! displaced-harmonic Franck-Condon overlaps scaled by one dipole constant.
//! The default model pins two transition frequencies and two overlap moduli
//! and leaves everything else at Rb2-like magnitudes.

mod fcf;
mod file;

use nalgebra::DMatrix;

pub use fcf::{overlap_table, solve_displacement, synthesize_fcf_block, FcfParams};
pub use file::{load_model, model_to_string, parse_model, save_model};

use crate::error::{Error, Result};
use crate::hilbert::{Coupling, LevelLabel, Manifold, Model, ModelMeta, C64};
use crate::propagate::{ControlField, TimeGrid};

/// One femtosecond in atomic units of time.
pub const FEMTOSECOND: f64 = 41.341_373_335_182_11;
/// One picosecond in atomic units of time.
pub const PICOSECOND: f64 = 1000.0 * FEMTOSECOND;
/// One wavenumber (cm^-1) in hartree.
pub const WAVENUMBER: f64 = 4.556_335_252_912_088e-6;

/// Default optimization horizon, 8 ps.
pub const DEFAULT_T: f64 = 8.0 * PICOSECOND;
/// Default grid size, 2^18 steps.
pub const DEFAULT_STEPS: usize = 1 << 18;
/// Default guess-pulse amplitude (a.u.).
pub const DEFAULT_EPS0: f64 = 1e-4;

/// Quoted spectroscopic anchors of the default model.
pub const OMEGA_0_TO_10P: f64 = 0.0507;
pub const OMEGA_10P_TO_6PP: f64 = 0.0506;
pub const FCF_0_10P: f64 = 0.17;
pub const FCF_10P_6PP: f64 = 0.23;

/// Ground manifold, `v = 0`.
pub const V0: LevelLabel = LevelLabel::new(0, 0);
/// Ground manifold, `v = 1`.
pub const V1: LevelLabel = LevelLabel::new(0, 1);
/// Intermediate manifold, `v' = 10`.
pub const V10P: LevelLabel = LevelLabel::new(1, 10);
/// Upper manifold, `v'' = 6`.
pub const V6PP: LevelLabel = LevelLabel::new(2, 6);

/// Index of the upper (lossy, forbidden) manifold in the default model.
pub const UPPER_MANIFOLD: usize = 2;

/// Morse-like vibrational ladder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderParams {
    pub origin: f64,
    pub omega_e: f64,
    pub omega_e_chi_e: f64,
}

impl LadderParams {
    /// Vibrational energy above `origin`.
    pub fn vibrational(&self, v: u32) -> f64 {
        let x = v as f64 + 0.5;
        self.omega_e * x - self.omega_e_chi_e * x * x
    }

    pub fn energy(&self, v: u32) -> f64 {
        self.origin + self.vibrational(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldSpec {
    pub name: String,
    pub v_min: u32,
    pub n_levels: usize,
    pub ladder: LadderParams,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CouplingSpec {
    /// Matrix already including the dipole scale.
    Explicit(DMatrix<f64>),
    /// Displaced-harmonic overlaps, scaled by [`ModelSpec::dipole_scale`].
    Harmonic(FcfParams),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecaySpec {
    pub manifold: usize,
    pub gamma: f64,
}

/// Generator parameters for a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub manifolds: Vec<ManifoldSpec>,
    /// Block `i` couples manifold `i` to `i + 1`.
    pub couplings: Vec<CouplingSpec>,
    pub dipole_scale: f64,
    pub decay: Option<DecaySpec>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        if self.couplings.len() + 1 != self.manifolds.len() {
            return Err(Error::Structural(format!(
                "{} manifolds need {} coupling blocks, got {}",
                self.manifolds.len(),
                self.manifolds.len().saturating_sub(1),
                self.couplings.len()
            )));
        }
        let mut meta = ModelMeta::new();
        meta.insert("dipole_scale".into(), self.dipole_scale);
        let mut manifolds = Vec::with_capacity(self.manifolds.len());
        for (m, spec) in self.manifolds.iter().enumerate() {
            if spec.n_levels == 0 {
                return Err(Error::Parameter(format!("manifold {} has no levels", spec.name)));
            }
            let l = spec.ladder;
            let v_top = spec.v_min + spec.n_levels as u32 - 1;
            // Spacing E_{v+1} - E_v must stay positive over the window.
            let top_gap = l.omega_e - 2.0 * l.omega_e_chi_e * (v_top as f64 + 1.0);
            if !(l.omega_e > 0.0 && top_gap > 0.0) {
                return Err(Error::Parameter(format!(
                    "manifold {}: ladder spacing must be positive over v = {}..={v_top}",
                    spec.name, spec.v_min
                )));
            }
            let energies = (spec.v_min..=v_top)
                .map(|v| C64::new(l.energy(v), 0.0))
                .collect();
            let key = format!("m{}", m + 1);
            meta.insert(format!("{key}.origin"), l.origin);
            meta.insert(format!("{key}.omega_e"), l.omega_e);
            meta.insert(format!("{key}.omega_e_chi_e"), l.omega_e_chi_e);
            manifolds.push(Manifold {
                name: spec.name.clone(),
                v_min: spec.v_min,
                energies,
            });
        }
        let mut couplings = Vec::with_capacity(self.couplings.len());
        for (i, c) in self.couplings.iter().enumerate() {
            let (lo, hi) = (&self.manifolds[i], &self.manifolds[i + 1]);
            let matrix = match c {
                CouplingSpec::Explicit(m) => m.clone(),
                CouplingSpec::Harmonic(p) => {
                    let key = format!("fcf{}{}", i + 1, i + 2);
                    meta.insert(format!("{key}.displacement"), p.displacement);
                    meta.insert(format!("{key}.frequency_ratio"), p.frequency_ratio);
                    let rows = lo.v_min..=lo.v_min + lo.n_levels as u32 - 1;
                    let cols = hi.v_min..=hi.v_min + hi.n_levels as u32 - 1;
                    synthesize_fcf_block(*p, rows, cols)? * self.dipole_scale
                }
            };
            couplings.push(Coupling {
                from: i,
                to: i + 1,
                matrix,
            });
        }
        let model = Model::with_meta(manifolds, couplings, meta)?;
        match self.decay {
            Some(d) => apply_decay(&model, d.gamma, d.manifold),
            None => Ok(model),
        }
    }
}

/// Generator parameters of the default Rb2-like model.
pub fn default_spec() -> Result<ModelSpec> {
    let cm = WAVENUMBER;
    let x = LadderParams {
        origin: 0.0,
        omega_e: 57.31 * cm,
        omega_e_chi_e: 0.0953 * cm,
    };
    let mut a = LadderParams {
        origin: 0.0,
        omega_e: 44.58 * cm,
        omega_e_chi_e: 0.081 * cm,
    };
    let mut p = LadderParams {
        origin: 0.0,
        omega_e: 36.5 * cm,
        omega_e_chi_e: 0.10 * cm,
    };
    // Electronic origins pin the two quoted transition frequencies.
    a.origin = OMEGA_0_TO_10P + x.energy(0) - a.vibrational(10);
    p.origin = OMEGA_10P_TO_6PP + a.energy(10) - p.vibrational(6);

    let r12 = a.omega_e / x.omega_e;
    let r23 = p.omega_e / a.omega_e;
    let d12 = solve_displacement(r12, 0, 10, FCF_0_10P)?;
    let d23 = solve_displacement(r23, 10, 6, FCF_10P_6PP)?;

    Ok(ModelSpec {
        manifolds: vec![
            ManifoldSpec {
                name: "X1Sigma_g+".into(),
                v_min: 0,
                n_levels: 11,
                ladder: x,
            },
            ManifoldSpec {
                name: "A1Sigma_u+".into(),
                v_min: 5,
                n_levels: 11,
                ladder: a,
            },
            ManifoldSpec {
                name: "1Pi_g".into(),
                v_min: 2,
                n_levels: 11,
                ladder: p,
            },
        ],
        couplings: vec![
            CouplingSpec::Harmonic(FcfParams {
                displacement: d12,
                frequency_ratio: r12,
            }),
            CouplingSpec::Harmonic(FcfParams {
                displacement: d23,
                frequency_ratio: r23,
            }),
        ],
        dipole_scale: 1.0,
        decay: None,
    })
}

/// The 33-level default model.
pub fn build_default_model() -> Model {
    default_spec()
        .and_then(|s| s.build())
        .expect("default model parameters are valid")
}

/// Copy of `model` with `-i gamma/2` added to every energy of `manifold`.
pub fn apply_decay(model: &Model, gamma: f64, manifold: usize) -> Result<Model> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Parameter(format!("decay rate must be >= 0, got {gamma}")));
    }
    let man = model
        .manifolds()
        .get(manifold)
        .ok_or_else(|| Error::Parameter(format!("no manifold with index {manifold}")))?;
    if gamma == 0.0 {
        return Ok(model.clone());
    }
    let energies = man
        .energies
        .iter()
        .map(|e| e - C64::new(0.0, 0.5 * gamma))
        .collect();
    model.with_manifold_energies(manifold, energies)
}

/// Decay rate for a lifetime, `Gamma = 1/tau_L`.
pub fn decay_rate(lifetime: f64) -> f64 {
    1.0 / lifetime
}

/// Gaussian envelope `s(t) = exp[-32 (t/T - 1/2)^2]`.
pub fn shape(t: f64, t_final: f64) -> f64 {
    let x = t / t_final - 0.5;
    (-32.0 * x * x).exp()
}

/// Guess pulse `eps0 s(t) cos[Omega (t - T/2)]`, carrier centred on the
/// envelope peak.
pub fn guess_field(grid: TimeGrid, eps0: f64, omega: f64) -> ControlField {
    let t_final = grid.t_final();
    ControlField::from_fn(grid, |t| {
        eps0 * shape(t, t_final) * (omega * (t - 0.5 * t_final)).cos()
    })
    .expect("guess field samples are finite")
}

/// Transition frequency `Re(E_b - E_a)`.
pub fn transition_frequency(model: &Model, a: LevelLabel, b: LevelLabel) -> Result<f64> {
    Ok((model.energy(b)? - model.energy(a)?).re)
}

/// The four quoted anchors, measured on a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchors {
    pub omega_0_10p: f64,
    pub omega_10p_6pp: f64,
    pub fcf_0_10p: f64,
    pub fcf_10p_6pp: f64,
}

pub fn measure_anchors(model: &Model) -> Result<Anchors> {
    let scale = model.meta().get("dipole_scale").copied().unwrap_or(1.0);
    Ok(Anchors {
        omega_0_10p: transition_frequency(model, V0, V10P)?,
        omega_10p_6pp: transition_frequency(model, V10P, V6PP)?,
        fcf_0_10p: model.coupling(V0, V10P)?.abs() / scale,
        fcf_10p_6pp: model.coupling(V10P, V6PP)?.abs() / scale,
    })
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let f = 10f64.powi(digits - 1 - mag);
    (x * f).round() / f
}

/// One line per anchor: name, measured, expected, pass.
pub fn check_anchors(model: &Model) -> Result<Vec<(&'static str, f64, f64, bool)>> {
    let a = measure_anchors(model)?;
    Ok([
        ("omega(v=0 -> v'=10)", a.omega_0_10p, OMEGA_0_TO_10P),
        ("omega(v'=10 -> v''=6)", a.omega_10p_6pp, OMEGA_10P_TO_6PP),
        ("|FCF(v=0, v'=10)|", a.fcf_0_10p, FCF_0_10P),
        ("|FCF(v'=10, v''=6)|", a.fcf_10p_6pp, FCF_10P_6PP),
    ]
    .into_iter()
    .map(|(name, got, want)| (name, got, want, round_sig(got, 4) == round_sig(want, 4)))
    .collect())
}
