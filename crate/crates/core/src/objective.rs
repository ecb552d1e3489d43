//! Functional terms, the gate overlap, the per-iteration change ledger, and
//! the normalized progress metrics.
//!
//! The complete functional is `J = J0 + Ja + Jb` with
//!
//! * `J0 = lambda0 <phi(T)|D|phi(T)>` (state to state) or `lambda0 |tau|^2`
//!   (gate, `tau = sum_n <phi_fn|phi_n(T)>`),
//! * `Jb = int lambda_b sum_n <phi_n(t)|P|phi_n(t)> dt`,
//! * `Ja = int lambda_a(t) (eps(t) - eps_r(t))^2 dt`.
//!
//! Time integrals use the trapezoid rule on the propagation grid.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{expectation_raw, inner, Model, Operator, StateVector, C64, ZERO};
use crate::model;
use crate::propagate::{ControlField, TimeGrid, Trajectory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

/// Time dependence of the field penalty, `lambda_a(t) = scale / s(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Envelope {
    /// `s(t) = 1`.
    Flat,
    /// `s(t) = exp[-32 (t/T - 1/2)^2]`.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaA {
    pub scale: f64,
    pub envelope: Envelope,
}

impl LambdaA {
    pub fn constant(scale: f64) -> Self {
        Self {
            scale,
            envelope: Envelope::Flat,
        }
    }

    pub fn inverse_gaussian(scale: f64) -> Self {
        Self {
            scale,
            envelope: Envelope::Gaussian,
        }
    }

    pub fn at(&self, t: f64, t_final: f64) -> f64 {
        match self.envelope {
            Envelope::Flat => self.scale,
            Envelope::Gaussian => self.scale / model::shape(t, t_final),
        }
    }

    pub fn samples(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.times().map(|t| self.at(t, grid.t_final())).collect()
    }
}

/// Which operator enters the state-dependent term.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    Allowed,
    Forbidden,
    Custom(Operator),
}

/// Complementary projectors splitting the level space.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspaces {
    pub allow: Operator,
    pub forbid: Operator,
}

impl Subspaces {
    /// Forbidden = the listed manifolds, allowed = everything else.
    pub fn from_forbidden_manifolds(model: &Model, forbidden: &[usize]) -> Result<Self> {
        let allowed: Vec<usize> = (0..model.manifolds().len())
            .filter(|m| !forbidden.contains(m))
            .collect();
        Ok(Self {
            allow: crate::hilbert::manifold_projector(model, &allowed)?,
            forbid: crate::hilbert::manifold_projector(model, forbidden)?,
        })
    }

    pub fn resolve(&self, c: &Constraint) -> Operator {
        match c {
            Constraint::Allowed => self.allow.clone(),
            Constraint::Forbidden => self.forbid.clone(),
            Constraint::Custom(op) => op.clone(),
        }
    }
}

/// Frame in which gate targets are specified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateFrame {
    Lab,
    /// Target states carry the free phases `exp(-i E_j T)`.
    #[default]
    Interaction,
}

/// Register states `|n>` and their images `|phi_fn> = O|n>`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateTarget {
    pub initial: Vec<StateVector>,
    pub targets: Vec<StateVector>,
}

impl GateTarget {
    /// `gate` acts on the register levels at flat indices `register`.
    pub fn new(
        model: &Model,
        register: &[usize],
        gate: &DMatrix<C64>,
        frame: GateFrame,
        t_final: f64,
    ) -> Result<Self> {
        let n_r = register.len();
        if n_r == 0 {
            return Err(Error::Parameter("empty gate register".into()));
        }
        if gate.nrows() != n_r || gate.ncols() != n_r {
            return Err(Error::dim(n_r, gate.nrows()));
        }
        let dev = (gate.adjoint() * gate - DMatrix::<C64>::identity(n_r, n_r))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if dev > 1e-10 {
            return Err(Error::Invariant(format!(
                "gate is not unitary on the register (max |O^+O - 1| = {dev:e})"
            )));
        }
        let dim = model.dim();
        let energies = model.energies();
        if let Some(&bad) = register.iter().find(|&&k| k >= dim) {
            return Err(Error::UnknownLabel(format!("flat index {bad}")));
        }
        let initial = register.iter().map(|&k| StateVector::basis(dim, k)).collect();
        let targets = (0..n_r)
            .map(|n| {
                let mut amp = vec![ZERO; dim];
                for (j, &k) in register.iter().enumerate() {
                    let phase = match frame {
                        GateFrame::Lab => C64::new(1.0, 0.0),
                        GateFrame::Interaction => (C64::new(0.0, -t_final) * energies[k]).exp(),
                    };
                    amp[k] = gate[(j, n)] * phase;
                }
                StateVector::new(amp)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { initial, targets })
    }

    pub fn n_r(&self) -> usize {
        self.initial.len()
    }
}

/// `O_jk = exp(2 pi i jk / N) / sqrt(N)`.
pub fn fourier_matrix(n: usize) -> DMatrix<C64> {
    let norm = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |j, k| {
        let angle = 2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
        C64::from_polar(norm, angle)
    })
}

/// Final-time objective.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Drive `initial` into the range of the projector `d`.
    State { initial: StateVector, d: Operator },
    Gate(GateTarget),
}

impl Target {
    pub fn transfer(initial: StateVector, target: &StateVector) -> Result<Self> {
        Ok(Target::State {
            initial,
            d: Operator::rank_one_projector(target)?,
        })
    }

    pub fn initial_states(&self) -> Vec<StateVector> {
        match self {
            Target::State { initial, .. } => vec![initial.clone()],
            Target::Gate(g) => g.initial.clone(),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            Target::State { .. } => 1,
            Target::Gate(g) => g.n_r(),
        }
    }

    /// Value of `J0` at the optimum with unit yield.
    pub fn ideal_overlap(&self) -> f64 {
        match self {
            Target::State { .. } => 1.0,
            Target::Gate(g) => (g.n_r() * g.n_r()) as f64,
        }
    }
}

/// Reference field in `g_a`.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Reference {
    #[default]
    PreviousIterate,
    Fixed(ControlField),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalConfig {
    pub lambda0: f64,
    pub lambda_b: f64,
    pub lambda_a: LambdaA,
    pub direction: Direction,
    pub constraint: Constraint,
    pub target: Target,
    pub reference: Reference,
}

/// `lambda0 <phi(T)|D|phi(T)>`.
pub fn j0_state(final_state: &StateVector, d: &Operator, lambda0: f64) -> Result<f64> {
    if d.dim() != final_state.dim() {
        return Err(Error::dim(d.dim(), final_state.dim()));
    }
    Ok(lambda0 * expectation_raw(final_state.amplitudes(), d).re)
}

/// `tau = sum_n <phi_fn|phi_n(T)>`.
pub fn tau(final_states: &[StateVector], targets: &[StateVector]) -> Result<C64> {
    if final_states.len() != targets.len() {
        return Err(Error::Structural(format!(
            "{} final states for {} targets",
            final_states.len(),
            targets.len()
        )));
    }
    final_states
        .iter()
        .zip(targets)
        .try_fold(ZERO, |acc, (phi, f)| Ok(acc + f.inner(phi)?))
}

/// `lambda0 |tau|^2`.
pub fn j0_gate(tau_value: C64, lambda0: f64) -> f64 {
    lambda0 * tau_value.norm_sqr()
}

/// Per-node `sum_n <phi_n|P|phi_n>`.
pub fn projected_population(trajectory: &Trajectory, p: &Operator) -> Result<Vec<f64>> {
    if p.dim() != trajectory.dim() {
        return Err(Error::dim(trajectory.dim(), p.dim()));
    }
    let grid = trajectory.grid();
    Ok((0..grid.n_nodes())
        .map(|i| {
            (0..trajectory.n_columns())
                .map(|c| expectation_raw(trajectory.state(c, i), p).re)
                .sum()
        })
        .collect())
}

/// `int lambda_b sum_n <phi_n|P|phi_n> dt`.
pub fn jb(trajectory: &Trajectory, p: &Operator, lambda_b: f64) -> Result<f64> {
    if lambda_b == 0.0 {
        return Ok(0.0);
    }
    let pop = projected_population(trajectory, p)?;
    Ok(lambda_b * trajectory.grid().integrate(&pop))
}

/// `int lambda_a(t) (eps - eps_r)^2 dt`.
pub fn ja(field: &ControlField, reference: &ControlField, lambda_a: &LambdaA) -> Result<f64> {
    let grid = field.grid();
    if grid != reference.grid() {
        return Err(Error::Structural("field and reference use different grids".into()));
    }
    let la = lambda_a.samples(grid);
    let vals: Vec<f64> = field
        .samples()
        .iter()
        .zip(reference.samples())
        .zip(&la)
        .map(|((e, r), l)| l * (e - r) * (e - r))
        .collect();
    Ok(grid.integrate(&vals))
}

/// `sqrt(int (eps1 - eps0)^2 dt)`.
pub fn field_change_l2(a: &ControlField, b: &ControlField) -> f64 {
    let d: Vec<f64> = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    a.grid().integrate(&d).sqrt()
}

/// The three sufficient-condition components of `Delta = J_prev - J_next`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ledger {
    pub delta1: f64,
    pub int_delta2a: f64,
    pub int_delta2b: f64,
}

impl Ledger {
    pub fn total(&self) -> f64 {
        self.delta1 + self.int_delta2a + self.int_delta2b
    }

    /// Smallest component, sign-adjusted so that `>= 0` means "consistent
    /// with the optimization direction".
    pub fn worst(&self, direction: Direction) -> f64 {
        let s = match direction {
            Direction::Minimize => 1.0,
            Direction::Maximize => -1.0,
        };
        (s * self.delta1).min(s * self.int_delta2a).min(s * self.int_delta2b)
    }
}

/// Iterate data needed by [`delta_ledger`].
pub struct Iterate<'a> {
    pub trajectory: &'a Trajectory,
    pub field: &'a ControlField,
}

/// `Delta1 = -lambda0 |sum_n <phi_fn|zeta_n(T)>|^2` for gates, which reduces to
/// `-lambda0 <zeta(T)|D|zeta(T)>` for a single state and rank-one `D`.
pub(crate) fn delta1_gate(zeta_final: &[Vec<C64>], targets: &[StateVector], lambda0: f64) -> f64 {
    let s = zeta_final
        .iter()
        .zip(targets)
        .fold(ZERO, |acc, (z, f)| acc + inner(f.amplitudes(), z));
    -lambda0 * s.norm_sqr()
}

/// Ledger between two iterates with `eps_r` = the previous field.
pub fn delta_ledger(prev: &Iterate<'_>, next: &Iterate<'_>, config: &FunctionalConfig, p: &Operator) -> Result<Ledger> {
    let grid = *prev.field.grid();
    if next.field.grid() != &grid || prev.trajectory.grid() != &grid || next.trajectory.grid() != &grid {
        return Err(Error::Structural("iterates use different grids".into()));
    }
    let cols = prev.trajectory.n_columns();
    if next.trajectory.n_columns() != cols {
        return Err(Error::Structural("iterates have different column counts".into()));
    }
    let dim = prev.trajectory.dim();
    let n = grid.n_steps();
    let zeta = |c: usize, i: usize| -> Vec<C64> {
        next.trajectory
            .state(c, i)
            .iter()
            .zip(prev.trajectory.state(c, i))
            .map(|(a, b)| a - b)
            .collect()
    };
    let zeta_final: Vec<Vec<C64>> = (0..cols).map(|c| zeta(c, n)).collect();
    let delta1 = match &config.target {
        Target::State { d, .. } => {
            if d.dim() != dim {
                return Err(Error::dim(dim, d.dim()));
            }
            -config.lambda0 * expectation_raw(&zeta_final[0], d).re
        }
        Target::Gate(g) => delta1_gate(&zeta_final, &g.targets, config.lambda0),
    };
    let la = config.lambda_a.samples(&grid);
    let d2a: Vec<f64> = next
        .field
        .samples()
        .iter()
        .zip(prev.field.samples())
        .zip(&la)
        .map(|((e1, e0), l)| l * (e1 - e0) * (e1 - e0))
        .collect();
    let d2b: Vec<f64> = (0..grid.n_nodes())
        .map(|i| {
            -config.lambda_b
                * (0..cols)
                    .map(|c| expectation_raw(&zeta(c, i), p).re)
                    .sum::<f64>()
        })
        .collect();
    Ok(Ledger {
        delta1,
        int_delta2a: grid.integrate(&d2a),
        int_delta2b: grid.integrate(&d2b),
    })
}

/// Normalized functional and time-averaged constrained population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub j_norm: Option<f64>,
    pub i_p: Option<f64>,
}

/// `J_norm = J / (lambda0 + lambda_b T)`, `I_P = J_b / (lambda_b T)`.
pub fn metrics(j: f64, j_b: f64, lambda0: f64, lambda_b: f64, t_final: f64) -> Metrics {
    metrics_scaled(j, j_b, lambda0, lambda_b, t_final, 1)
}

/// Gate form: the optimum is `lambda0 N_r^2 + lambda_b T N_r`, and `I_P`
/// is averaged over the `N_r` register states.
pub fn metrics_scaled(j: f64, j_b: f64, lambda0: f64, lambda_b: f64, t_final: f64, n_r: usize) -> Metrics {
    let n = n_r as f64;
    let denom = lambda0 * n * n + lambda_b * t_final * n;
    let bt = lambda_b * t_final * n;
    Metrics {
        j_norm: (denom != 0.0).then(|| j / denom),
        i_p: (bt != 0.0).then(|| j_b / bt),
    }
}

/// One row of the convergence ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub j0: f64,
    pub ja: f64,
    pub jb: f64,
    pub delta1: f64,
    pub int_delta2a: f64,
    pub int_delta2b: f64,
    pub j_norm: Option<f64>,
    pub i_p: Option<f64>,
    pub tau_abs: Option<f64>,
    pub field_change_l2: f64,
    /// `J_prev - J_next - (Delta1 + int Delta2a + int Delta2b)`.
    pub ledger_residual: f64,
    /// Time average of the allowed-subspace population per state.
    pub allowed_average: f64,
    /// Final-time yield: `<phi(T)|D|phi(T)>` or `|tau|/N_r`.
    pub yield_final: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str =
        "iter,J,J0,Ja,Jb,delta1,int_delta2a,int_delta2b,J_norm,I_P,tau_abs,field_change_l2";

    pub fn ledger(&self) -> Ledger {
        Ledger {
            delta1: self.delta1,
            int_delta2a: self.int_delta2a,
            int_delta2b: self.int_delta2b,
        }
    }

    pub fn csv_row(&self) -> String {
        let f = |x: f64| format!("{x:.16e}");
        let o = |x: Option<f64>| x.map(f).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            f(self.j),
            f(self.j0),
            f(self.ja),
            f(self.jb),
            f(self.delta1),
            f(self.int_delta2a),
            f(self.int_delta2b),
            o(self.j_norm),
            o(self.i_p),
            o(self.tau_abs),
            f(self.field_change_l2)
        )
    }
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter {:4}  J = {:+.10e}  J0 = {:+.6e}  Jb = {:+.6e}  Ja = {:.3e}  yield = {:.6}",
            self.iter, self.j, self.j0, self.jb, self.ja, self.yield_final
        )?;
        if let Some(x) = self.j_norm {
            write!(f, "  J_norm = {x:.6}")?;
        }
        if let Some(x) = self.i_p {
            write!(f, "  I_P = {x:.6}")?;
        }
        Ok(())
    }
}

pub fn write_records_csv<W: Write>(mut out: W, records: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(out, "{}", IterationRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
