//! Krotov iteration with a state-dependent constraint.
//!
//! Each iteration propagates the costates `chi` backward from
//! `chi(T) = -lambda0 D phi(T)` under the inhomogeneous equation
//! `d chi/dt = -i H chi + lambda_b P phi0(t)`, then sweeps forward, updating
//! the field with immediate feedback:
//!
//! ```text
//! eps1(t_i) = eps_r(t_i) - Im sum_n <chi_n(t_i)|mu|phi1_n(t_i)> / lambda_a(t_i)
//! ```
//!
//! and stepping `phi1` to `t_{i+1}` under `eps1(t_i)`. The updated
//! trajectory overwrites the previous one in place and is reused as the
//! next iteration's forward solution.

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::hilbert::{expectation_raw, inner, Model, Operator, StateVector, C64, ZERO};
use crate::objective::{
    delta1_gate, field_change_l2, ja, metrics_scaled, projected_population, tau, Constraint,
    Direction, FunctionalConfig, IterationRecord, Ledger, Reference, Subspaces, Target,
};
use crate::propagate::{
    propagate_backward_inhomogeneous, propagate_forward, ControlField, Propagator, Scheme, Source, SourceRule,
    Stepper, Trajectory, Workspace,
};

/// Outcome of the sign analysis of a configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SignCheck {
    /// Violated sufficient conditions; empty when compliant.
    pub violations: Vec<String>,
    /// Forbidden-subspace projector with a sign that favours it.
    pub rewards_forbidden: bool,
}

impl SignCheck {
    pub fn is_compliant(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the sign conditions that make every iteration non-increasing
/// (minimize) or non-decreasing (maximize). Both `D` and `P` are projectors,
/// so only the scalar signs matter.
pub fn validate_signs(config: &FunctionalConfig) -> SignCheck {
    let s = match config.direction {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let mut out = SignCheck::default();
    let want = if s > 0.0 { "<= 0" } else { ">= 0" };
    if s * config.lambda0 > 0.0 {
        out.violations.push(format!("lambda0 = {} must be {want}", config.lambda0));
    }
    if s * config.lambda_b > 0.0 {
        out.violations.push(format!("lambda_b = {} must be {want}", config.lambda_b));
    }
    if s * config.lambda_a.scale <= 0.0 {
        let want_a = if s > 0.0 { "> 0" } else { "< 0" };
        out.violations
            .push(format!("lambda_a = {} must be {want_a}", config.lambda_a.scale));
    }
    out.rewards_forbidden =
        config.constraint == Constraint::Forbidden && s * config.lambda_b < 0.0;
    out
}

/// `chi(T) = -lambda0 D phi(T)`.
pub fn chi_boundary_state(final_state: &StateVector, d: &Operator, lambda0: f64) -> Result<StateVector> {
    if d.dim() != final_state.dim() {
        return Err(Error::dim(d.dim(), final_state.dim()));
    }
    let mut out = StateVector::zeros(d.dim());
    d.apply_into(final_state.amplitudes(), out.amplitudes_mut());
    Ok(out.scaled(C64::new(-lambda0, 0.0)))
}

/// `chi_n(T) = -lambda0 tau phi_fn`.
pub fn chi_boundary_gate(
    final_states: &[StateVector],
    targets: &[StateVector],
    lambda0: f64,
) -> Result<Vec<StateVector>> {
    let t = tau(final_states, targets)?;
    let w = -lambda0 * t;
    Ok(targets.iter().map(|f| f.scaled(w)).collect())
}

/// Field at one node from the costates and the updated states.
pub fn update_field_step(
    chi: &[&[C64]],
    mu: &Operator,
    phi_new: &[&[C64]],
    eps_ref: f64,
    lambda_a: f64,
) -> Result<f64> {
    if chi.len() != phi_new.len() {
        return Err(Error::Structural("costate and state counts differ".into()));
    }
    if lambda_a == 0.0 {
        return Err(Error::Parameter("lambda_a vanishes".into()));
    }
    let mut buf = vec![ZERO; mu.dim()];
    let mut im = 0.0;
    for (c, p) in chi.iter().zip(phi_new) {
        if c.len() != mu.dim() || p.len() != mu.dim() {
            return Err(Error::dim(mu.dim(), p.len()));
        }
        mu.apply_into(p, &mut buf);
        im += inner(c, &buf).im;
    }
    Ok(eps_ref - im / lambda_a)
}

/// The dipole as its off-diagonal real blocks, for fast `Im <chi|mu|phi>`.
#[derive(Clone, Debug)]
struct DipoleBlocks {
    blocks: Vec<(usize, usize, usize, usize, Vec<f64>)>,
}

impl DipoleBlocks {
    fn new(model: &Model) -> Self {
        let blocks = model
            .couplings()
            .iter()
            .map(|c| {
                let (r, k) = (c.matrix.nrows(), c.matrix.ncols());
                let m: Vec<f64> = (0..r)
                    .flat_map(|i| (0..k).map(move |j| (i, j)))
                    .map(|(i, j)| c.matrix[(i, j)])
                    .collect();
                (model.offset(c.from), model.offset(c.to), r, k, m)
            })
            .collect();
        Self { blocks }
    }

    /// `Im <chi|mu|phi>`.
    fn im_matrix_element(&self, chi: &[C64], phi: &[C64]) -> f64 {
        let mut acc = 0.0;
        for (r0, c0, r, k, m) in &self.blocks {
            for a in 0..*r {
                let (ca, pa) = (chi[r0 + a], phi[r0 + a]);
                let row = &m[a * k..(a + 1) * k];
                let (cb, pb) = (&chi[*c0..c0 + k], &phi[*c0..c0 + k]);
                for ((mab, x), y) in row.iter().zip(cb).zip(pb) {
                    // Im[conj(ca) y + conj(x) pa]
                    acc += mab * (ca.re * y.im - ca.im * y.re + x.re * pa.im - x.im * pa.re);
                }
            }
        }
        acc
    }
}

/// When to stop iterating.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRules {
    /// `0` evaluates the guess and returns.
    pub max_iters: usize,
    /// Stop once `J_norm` reaches this value.
    pub j_norm_target: Option<f64>,
    /// Stop once the L2 field change drops below this value.
    pub field_change_floor: Option<f64>,
}

impl Default for StopRules {
    fn default() -> Self {
        Self {
            max_iters: 500,
            j_norm_target: None,
            field_change_floor: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Evaluated,
    MaxIterations,
    Converged,
    Stalled,
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub stop: StopRules,
    pub scheme: Scheme,
    pub source_rule: SourceRule,
    /// Run the costate equation without a source term at all.
    pub disable_source: bool,
    /// Refuse sign-noncompliant configurations instead of warning.
    pub strict_signs: bool,
}

/// A fully specified optimization problem.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub model: &'a Model,
    pub config: FunctionalConfig,
    pub subspaces: Subspaces,
    pub guess: ControlField,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub records: Vec<IterationRecord>,
    pub field: ControlField,
    pub trajectory: Trajectory,
    pub stop: StopReason,
    pub signs: SignCheck,
}

impl Outcome {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("at least the guess is recorded")
    }
}

pub fn optimize_state_to_state(problem: &Problem<'_>, options: &Options) -> Result<Outcome> {
    if !matches!(problem.config.target, Target::State { .. }) {
        return Err(Error::Parameter("expected a state-to-state target".into()));
    }
    optimize(problem, options)
}

pub fn optimize_gate(problem: &Problem<'_>, options: &Options) -> Result<Outcome> {
    if !matches!(problem.config.target, Target::Gate(_)) {
        return Err(Error::Parameter("expected a gate target".into()));
    }
    optimize(problem, options)
}

struct Engine<'a> {
    problem: &'a Problem<'a>,
    prop: Propagator,
    dipole: DipoleBlocks,
    p: Operator,
    lambda_a: Vec<f64>,
    source_rule: SourceRule,
}

pub fn optimize(problem: &Problem<'_>, options: &Options) -> Result<Outcome> {
    let cfg = &problem.config;
    let model = problem.model;
    let grid = *problem.guess.grid();
    let dim = model.dim();
    let signs = validate_signs(cfg);
    if !signs.is_compliant() {
        let msg = signs.violations.join("; ");
        if options.strict_signs {
            return Err(Error::Parameter(format!("sign conditions violated: {msg}")));
        }
        warn!("configuration is not sign-compliant, monotonicity is not guaranteed: {msg}");
    }
    if signs.rewards_forbidden {
        warn!("the state-dependent term rewards population in the forbidden subspace");
    }
    match &cfg.target {
        Target::State { initial, d } => {
            if initial.dim() != dim || d.dim() != dim {
                return Err(Error::dim(dim, initial.dim().min(d.dim())));
            }
        }
        Target::Gate(g) => {
            if g.targets.iter().chain(&g.initial).any(|s| s.dim() != dim) {
                return Err(Error::Structural("gate states do not match the model".into()));
            }
        }
    }
    if let Reference::Fixed(r) = &cfg.reference {
        if r.grid() != &grid {
            return Err(Error::Structural("reference field uses a different grid".into()));
        }
    }
    let lambda_a = cfg.lambda_a.samples(&grid);
    if lambda_a.iter().any(|l| *l == 0.0 || !l.is_finite()) {
        return Err(Error::Parameter("lambda_a must be finite and nonzero".into()));
    }
    let engine = Engine {
        problem,
        prop: Propagator::new(model, &grid, options.scheme),
        dipole: DipoleBlocks::new(model),
        p: problem.subspaces.resolve(&cfg.constraint),
        lambda_a,
        source_rule: options.source_rule,
    };

    let mut field = problem.guess.clone();
    let mut phi = propagate_forward(&engine.prop, &field, &cfg.target.initial_states())?;
    let mut records = vec![engine.record(0, &phi, &field, None, None)?];
    info!("{}", records[0]);
    let stop = options.stop;
    if stop.max_iters == 0 {
        return Ok(Outcome {
            records,
            field,
            trajectory: phi,
            stop: StopReason::Evaluated,
            signs,
        });
    }
    let mut reason = StopReason::MaxIterations;
    for k in 1..=stop.max_iters {
        let prev = records.last().expect("nonempty");
        if let (Some(target), Some(jn)) = (stop.j_norm_target, prev.j_norm) {
            if jn >= target {
                reason = StopReason::Converged;
                break;
            }
        }
        let prev_j_same_ref = prev.j0 + prev.jb + engine.ja_against(&field, &field)?;
        let (new_field, ledger) = engine
            .iterate(&mut phi, &field, options.disable_source)
            .map_err(|e| e.at_iteration(k))?;
        let rec = engine
            .record(k, &phi, &new_field, Some(&field), Some((ledger, prev_j_same_ref)))
            .map_err(|e| e.at_iteration(k))?;
        if !rec.j.is_finite() {
            return Err(Error::Numerical {
                step: grid.n_steps(),
                reason: "non-finite functional".into(),
            }
            .at_iteration(k));
        }
        if k % 25 == 0 {
            info!("{rec}");
        } else {
            debug!("{rec}");
        }
        if ledger.worst(cfg.direction) < 0.0 {
            warn!(
                "iteration {k}: ledger component of the wrong sign ({:?})",
                ledger
            );
        }
        let change = rec.field_change_l2;
        records.push(rec);
        field = new_field;
        if let Some(floor) = stop.field_change_floor {
            if change < floor {
                reason = StopReason::Stalled;
                break;
            }
        }
    }
    if reason == StopReason::MaxIterations {
        if let (Some(target), Some(jn)) = (stop.j_norm_target, records.last().and_then(|r| r.j_norm)) {
            if jn >= target {
                reason = StopReason::Converged;
            }
        }
    }
    Ok(Outcome {
        records,
        field,
        trajectory: phi,
        stop: reason,
        signs,
    })
}

impl Engine<'_> {
    fn config(&self) -> &FunctionalConfig {
        &self.problem.config
    }

    fn reference<'f>(&'f self, previous: &'f ControlField) -> &'f ControlField {
        match &self.config().reference {
            Reference::PreviousIterate => previous,
            Reference::Fixed(r) => r,
        }
    }

    /// `Ja` of `field` for the reference rule, with `previous` the last
    /// iterate.
    fn ja_against(&self, field: &ControlField, previous: &ControlField) -> Result<f64> {
        ja(field, self.reference(previous), &self.config().lambda_a)
    }

    fn chi_final(&self, phi: &Trajectory) -> Result<Vec<StateVector>> {
        let cfg = self.config();
        let finals = phi.final_states();
        match &cfg.target {
            Target::State { d, .. } => Ok(vec![chi_boundary_state(&finals[0], d, cfg.lambda0)?]),
            Target::Gate(g) => chi_boundary_gate(&finals, &g.targets, cfg.lambda0),
        }
    }

    /// One backward sweep and one forward update sweep. `phi` holds the
    /// previous forward solution on entry and the updated one on exit.
    fn iterate(
        &self,
        phi: &mut Trajectory,
        field: &ControlField,
        disable_source: bool,
    ) -> Result<(ControlField, Ledger)> {
        let cfg = self.config();
        let grid = *field.grid();
        let n = grid.n_steps();
        let dt = grid.dt();
        let dim = phi.dim();
        let cols = phi.n_columns();

        let chi_t = self.chi_final(phi)?;
        let source = (!disable_source).then_some(Source {
            lambda_b: cfg.lambda_b,
            projector: &self.p,
            rule: self.source_rule,
        });
        let chi = propagate_backward_inhomogeneous(&self.prop, field, &chi_t, phi, source)?;

        let eps_ref = self.reference(field).samples();
        let eps_old = field.samples();
        let mut eps_new = vec![0.0; grid.n_nodes()];
        let mut current: Vec<Vec<C64>> = (0..cols).map(|c| phi.state(c, 0).to_vec()).collect();
        let mut zeta = vec![ZERO; dim];
        let mut d2b = vec![0.0; grid.n_nodes()];
        let mut zeta_final = vec![Vec::new(); cols];
        let mut ws = Workspace::new(dim);
        for i in 0..=n {
            let mut im = 0.0;
            for (c, cur) in current.iter().enumerate() {
                im += self.dipole.im_matrix_element(chi.state(c, i), cur);
            }
            let e = eps_ref[i] - im / self.lambda_a[i];
            if !e.is_finite() {
                return Err(Error::Numerical {
                    step: i,
                    reason: "non-finite field update".into(),
                });
            }
            eps_new[i] = e;
            let mut zz = 0.0;
            for (c, cur) in current.iter_mut().enumerate() {
                let old = phi.state_mut(c, i);
                for ((z, a), b) in zeta.iter_mut().zip(cur.iter()).zip(old.iter()) {
                    *z = a - b;
                }
                if cfg.lambda_b != 0.0 {
                    zz += expectation_raw(&zeta, &self.p).re;
                }
                old.copy_from_slice(cur);
                if i < n {
                    self.prop.step(e, dt, cur, &mut ws).map_err(|err| match err {
                        Error::Numerical { reason, .. } => Error::Numerical { step: i, reason },
                        other => other,
                    })?;
                } else {
                    zeta_final[c] = zeta.clone();
                }
            }
            d2b[i] = -cfg.lambda_b * zz;
        }
        let new_field = ControlField::new(grid, eps_new)?;

        let delta1 = match &cfg.target {
            Target::State { d, .. } => -cfg.lambda0 * expectation_raw(&zeta_final[0], d).re,
            Target::Gate(g) => delta1_gate(&zeta_final, &g.targets, cfg.lambda0),
        };
        let d2a: Vec<f64> = new_field
            .samples()
            .iter()
            .zip(eps_old)
            .zip(&self.lambda_a)
            .map(|((e1, e0), l)| l * (e1 - e0) * (e1 - e0))
            .collect();
        Ok((
            new_field,
            Ledger {
                delta1,
                int_delta2a: grid.integrate(&d2a),
                int_delta2b: grid.integrate(&d2b),
            },
        ))
    }

    fn record(
        &self,
        iter: usize,
        phi: &Trajectory,
        field: &ControlField,
        previous: Option<&ControlField>,
        ledger: Option<(Ledger, f64)>,
    ) -> Result<IterationRecord> {
        let cfg = self.config();
        let grid = phi.grid();
        let t_final = grid.t_final();
        let n_r = cfg.target.n_states();
        let finals = phi.final_states();
        let (j0, tau_abs, yield_final) = match &cfg.target {
            Target::State { d, .. } => {
                let y = expectation_raw(finals[0].amplitudes(), d).re;
                (cfg.lambda0 * y, None, y)
            }
            Target::Gate(g) => {
                let t = tau(&finals, &g.targets)?;
                (cfg.lambda0 * t.norm_sqr(), Some(t.norm()), t.norm() / n_r as f64)
            }
        };
        let pop = projected_population(phi, &self.p)?;
        let jb = cfg.lambda_b * grid.integrate(&pop);
        let ja = self.ja_against(field, previous.unwrap_or(field))?;
        let j = j0 + ja + jb;
        let m = metrics_scaled(j, jb, cfg.lambda0, cfg.lambda_b, t_final, n_r);
        let allowed = projected_population(phi, &self.problem.subspaces.allow)?;
        let allowed_average = grid.integrate(&allowed) / (t_final * n_r as f64);
        let (l, residual) = match ledger {
            Some((l, j_prev)) => (l, (j_prev - j) - l.total()),
            None => (Ledger::default(), 0.0),
        };
        Ok(IterationRecord {
            iter,
            j,
            j0,
            ja,
            jb,
            delta1: l.delta1,
            int_delta2a: l.int_delta2a,
            int_delta2b: l.int_delta2b,
            j_norm: m.j_norm,
            i_p: m.i_p.or((cfg.lambda_b == 0.0).then_some(allowed_average)),
            tau_abs,
            field_change_l2: previous.map_or(0.0, |p| field_change_l2(field, p)),
            ledger_residual: residual,
            allowed_average,
            yield_final,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{Coupling, Manifold};
    use crate::objective::LambdaA;
    use crate::propagate::TimeGrid;
    use nalgebra::DMatrix;

    fn three_level() -> Model {
        let man = |e: f64| Manifold {
            name: "m".into(),
            v_min: 0,
            energies: vec![C64::new(e, 0.0)],
        };
        Model::new(
            vec![man(0.0), man(1.0), man(1.9)],
            vec![
                Coupling { from: 0, to: 1, matrix: DMatrix::from_element(1, 1, 1.0) },
                Coupling { from: 1, to: 2, matrix: DMatrix::from_element(1, 1, 0.8) },
            ],
        )
        .unwrap()
    }

    fn config(lambda_b: f64) -> FunctionalConfig {
        FunctionalConfig {
            lambda0: -1.0,
            lambda_b,
            lambda_a: LambdaA::constant(5.0),
            direction: Direction::Minimize,
            constraint: Constraint::Allowed,
            target: Target::transfer(StateVector::basis(3, 0), &StateVector::basis(3, 2)).unwrap(),
            reference: Reference::PreviousIterate,
        }
    }

    #[test]
    fn sign_analysis() {
        assert!(validate_signs(&config(-0.1)).is_compliant());
        let mut c = config(0.1);
        assert_eq!(validate_signs(&c).violations.len(), 1);
        c.constraint = Constraint::Forbidden;
        c.lambda_b = -0.1;
        let s = validate_signs(&c);
        assert!(s.is_compliant() && s.rewards_forbidden);
        c.direction = Direction::Maximize;
        assert_eq!(validate_signs(&c).violations.len(), 3);
        c.lambda_a = LambdaA::constant(0.0);
        assert!(validate_signs(&c).violations.iter().any(|v| v.contains("lambda_a")));
    }

    #[test]
    fn boundary_costates() {
        let f = StateVector::basis(3, 2);
        let d = Operator::rank_one_projector(&f).unwrap();
        let chi = chi_boundary_state(&f, &d, -1.0).unwrap();
        assert_eq!(chi, f);
        let g = chi_boundary_gate(std::slice::from_ref(&f), std::slice::from_ref(&f), -1.0).unwrap();
        assert_eq!(g[0], chi);
        let half = StateVector::new(vec![C64::new(0.6, 0.0), ZERO, C64::new(0.0, 0.8)]).unwrap();
        let g = chi_boundary_gate(&[half.clone()], &[f.clone()], -2.0).unwrap();
        assert!((g[0].amplitudes()[2] - C64::new(0.0, 1.6)).norm() < 1e-15);
    }

    #[test]
    fn update_step_matches_dipole_blocks() {
        let model = three_level();
        let mu = model.dipole_operator();
        let chi = [C64::new(0.1, 0.3), C64::new(-0.4, 0.2), C64::new(0.7, -0.5)];
        let phi = [C64::new(0.5, 0.1), C64::new(0.2, -0.6), C64::new(-0.3, 0.4)];
        let e = update_field_step(&[&chi], &mu, &[&phi], 0.01, 2.0).unwrap();
        let fast = 0.01 - DipoleBlocks::new(&model).im_matrix_element(&chi, &phi) / 2.0;
        assert!((e - fast).abs() < 1e-15);
        assert!(update_field_step(&[&chi], &mu, &[&phi], 0.0, 0.0).is_err());
    }

    fn problem(model: &Model, cfg: FunctionalConfig) -> Problem<'_> {
        let grid = TimeGrid::new(20.0, 1600).unwrap();
        Problem {
            model,
            config: cfg,
            subspaces: Subspaces::from_forbidden_manifolds(model, &[1]).unwrap(),
            guess: ControlField::from_fn(grid, |t| 0.05 * (t * 0.95).cos()).unwrap(),
        }
    }

    #[test]
    fn iterations_are_monotone_with_a_consistent_ledger() {
        let model = three_level();
        for lb in [0.0, -0.02] {
            let p = problem(&model, config(lb));
            let opts = Options {
                stop: StopRules { max_iters: 15, ..StopRules::default() },
                ..Options::default()
            };
            let out = optimize_state_to_state(&p, &opts).unwrap();
            assert_eq!(out.records.len(), 16);
            for w in out.records.windows(2) {
                assert!(w[1].j <= w[0].j + 1e-12, "lb={lb}: {} -> {}", w[0].j, w[1].j);
                assert!(w[1].ledger().worst(Direction::Minimize) >= -1e-12);
                assert!(w[1].ledger_residual.abs() < 1e-2 * w[1].ledger().total().abs().max(1e-6));
            }
        }
    }

    #[test]
    fn zero_iterations_evaluates_the_guess() {
        let model = three_level();
        let p = problem(&model, config(-0.01));
        let opts = Options {
            stop: StopRules { max_iters: 0, ..StopRules::default() },
            ..Options::default()
        };
        let out = optimize(&p, &opts).unwrap();
        assert_eq!(out.stop, StopReason::Evaluated);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.field, p.guess);
        assert_eq!(out.records[0].ja, 0.0);
    }

    #[test]
    fn wrong_target_kind_is_rejected() {
        let model = three_level();
        let p = problem(&model, config(0.0));
        assert!(optimize_gate(&p, &Options::default()).is_err());
    }

    #[test]
    fn strict_signs_refuse_noncompliant_runs() {
        let model = three_level();
        let p = problem(&model, config(0.3));
        let opts = Options { strict_signs: true, ..Options::default() };
        assert!(matches!(optimize(&p, &opts), Err(Error::Parameter(_))));
    }
}
