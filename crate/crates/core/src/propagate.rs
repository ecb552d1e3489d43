//! Time propagation of states and costates on a uniform grid.
//!
//! The field is piecewise constant: step `i` (from `t_i` to `t_{i+1}`) uses
//! the sample at the left node `t_i`. Two steppers are provided:
//!
//! * [`SplitStepper`]: symmetric split
//!   `exp(+i mu eps dt/2) exp(-i H0 dt) exp(+i mu eps dt/2)` with `mu`
//!   diagonalized once per model. This is the production scheme.
//! * [`EigenStepper`]: exact exponential of the step Hamiltonian from a fresh
//!   eigendecomposition at every step. Used as the verification reference.
//!
//! Both handle complex (decaying) level energies; norm loss is never
//! renormalized away.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{assemble_hamiltonian, Model, Operator, StateVector, C64, ZERO};

/// Uniform grid `t_i = i * dt`, `i = 0..=n_steps`, on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::Parameter(format!("final time must be > 0, got {t_final}")));
        }
        if n_steps < 2 {
            return Err(Error::Parameter(format!("need at least 2 steps, got {n_steps}")));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.time(i))
    }

    /// Trapezoid rule over node samples.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_nodes());
        trapezoid(values, self.dt())
    }
}

pub(crate) fn trapezoid(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    dt * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Real field samples at every grid node (a.u.).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    grid: TimeGrid,
    samples: Vec<f64>,
}

impl ControlField {
    pub fn new(grid: TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.n_nodes() {
            return Err(Error::dim(grid.n_nodes(), samples.len()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                step: i,
                reason: "non-finite field sample".into(),
            });
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            samples: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.times().map(f).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Field value used on step `i`.
    pub fn step_value(&self, i: usize) -> f64 {
        self.samples[i]
    }

    pub fn max_abs_diff(&self, other: &ControlField) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// States stored at every node, one column per initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    columns: Vec<Vec<C64>>,
}

impl Trajectory {
    pub(crate) fn from_columns(grid: TimeGrid, dim: usize, columns: Vec<Vec<C64>>) -> Self {
        debug_assert!(columns.iter().all(|c| c.len() == grid.n_nodes() * dim));
        Self { grid, dim, columns }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn state(&self, column: usize, node: usize) -> &[C64] {
        &self.columns[column][node * self.dim..(node + 1) * self.dim]
    }

    pub(crate) fn state_mut(&mut self, column: usize, node: usize) -> &mut [C64] {
        &mut self.columns[column][node * self.dim..(node + 1) * self.dim]
    }

    pub fn state_vector(&self, column: usize, node: usize) -> StateVector {
        StateVector::new(self.state(column, node).to_vec()).expect("dim >= 1")
    }

    pub fn final_states(&self) -> Vec<StateVector> {
        (0..self.n_columns())
            .map(|c| self.state_vector(c, self.grid.n_steps()))
            .collect()
    }

    /// Per-node values of `f(state)` for one column.
    pub fn map_column(&self, column: usize, f: impl Fn(&[C64]) -> f64) -> Vec<f64> {
        (0..self.grid.n_nodes())
            .map(|i| f(self.state(column, i)))
            .collect()
    }
}

/// Scratch buffers reused across steps.
#[derive(Clone, Debug)]
pub struct Workspace {
    yre: Vec<f64>,
    yim: Vec<f64>,
    zre: Vec<f64>,
    zim: Vec<f64>,
    kick: Vec<C64>,
    free: Vec<C64>,
    tmp: Vec<C64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            yre: vec![0.0; dim],
            yim: vec![0.0; dim],
            zre: vec![0.0; dim],
            zim: vec![0.0; dim],
            kick: vec![ZERO; dim],
            free: vec![ZERO; dim],
            tmp: vec![ZERO; dim],
        }
    }
}

/// One-step propagation under a piecewise-constant field. `dt` may be
/// negative (backward in time).
pub trait Stepper: Sync {
    fn dim(&self) -> usize;

    /// `psi <- exp(-i H(eps) dt) psi`.
    fn step(&self, eps: f64, dt: f64, psi: &mut [C64], ws: &mut Workspace) -> Result<()>;

    /// `chi <- exp(-i H dt) chi + dt exp(-i H dt/2) src`, where `src` is the
    /// trapezoid average of the inhomogeneity at the two bracketing nodes.
    fn step_inhomogeneous(
        &self,
        eps: f64,
        dt: f64,
        chi: &mut [C64],
        src: &[C64],
        ws: &mut Workspace,
    ) -> Result<()>;
}

/// Split-operator stepper with a once-diagonalized dipole.
#[derive(Clone, Debug)]
pub struct SplitStepper {
    dim: usize,
    /// Dipole eigenvalues.
    mu_eig: Vec<f64>,
    /// Eigenvector matrix, row-major (`v_rows[i*n + k] = V[i][k]`).
    v_rows: Vec<f64>,
    /// Eigenvector matrix, column-major.
    v_cols: Vec<f64>,
    energies: Vec<C64>,
    /// Precomputed `exp(-i E dt)` for the step sizes of one grid.
    free_cache: Vec<(f64, Vec<C64>)>,
}

impl SplitStepper {
    pub fn new(model: &Model) -> Self {
        let mu = model.dipole();
        let n = mu.nrows();
        let eig = SymmetricEigen::new(mu);
        let v = eig.eigenvectors;
        let mut v_rows = vec![0.0; n * n];
        let mut v_cols = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                v_rows[i * n + k] = v[(i, k)];
                v_cols[k * n + i] = v[(i, k)];
            }
        }
        Self {
            dim: n,
            mu_eig: eig.eigenvalues.iter().copied().collect(),
            v_rows,
            v_cols,
            energies: model.energies(),
            free_cache: Vec::new(),
        }
    }

    /// Precomputes the free-evolution phases for `+-dt` and `+-dt/2`.
    pub fn for_grid(model: &Model, grid: &TimeGrid) -> Self {
        let mut s = Self::new(model);
        let dt = grid.dt();
        for h in [dt, -dt, 0.5 * dt, -0.5 * dt] {
            let phases = s.free_phases(h);
            s.free_cache.push((h, phases));
        }
        s
    }

    fn free_phases(&self, dt: f64) -> Vec<C64> {
        self.energies
            .iter()
            .map(|e| (C64::new(0.0, -dt) * e).exp())
            .collect()
    }

    /// `y = V^T x` with `x` interleaved, `y` split.
    #[inline]
    fn to_eigenbasis(&self, x: &[C64], yre: &mut [f64], yim: &mut [f64]) {
        let n = self.dim;
        yre.fill(0.0);
        yim.fill(0.0);
        for (i, xi) in x.iter().enumerate() {
            let row = &self.v_rows[i * n..(i + 1) * n];
            let (a, b) = (xi.re, xi.im);
            for ((r, yr), yi) in row.iter().zip(yre.iter_mut()).zip(yim.iter_mut()) {
                *yr += a * r;
                *yi += b * r;
            }
        }
    }

    /// `y = V^T z` with both split.
    #[inline]
    fn to_eigenbasis_split(&self, zre: &[f64], zim: &[f64], yre: &mut [f64], yim: &mut [f64]) {
        let n = self.dim;
        yre.fill(0.0);
        yim.fill(0.0);
        for i in 0..n {
            let row = &self.v_rows[i * n..(i + 1) * n];
            let (a, b) = (zre[i], zim[i]);
            for ((r, yr), yi) in row.iter().zip(yre.iter_mut()).zip(yim.iter_mut()) {
                *yr += a * r;
                *yi += b * r;
            }
        }
    }

    /// `z = V y`, all split.
    #[inline]
    fn back_from_eigenbasis(&self, yre: &[f64], yim: &[f64], zre: &mut [f64], zim: &mut [f64]) {
        let n = self.dim;
        zre.fill(0.0);
        zim.fill(0.0);
        for k in 0..n {
            let col = &self.v_cols[k * n..(k + 1) * n];
            let (a, b) = (yre[k], yim[k]);
            for ((c, zr), zi) in col.iter().zip(zre.iter_mut()).zip(zim.iter_mut()) {
                *zr += a * c;
                *zi += b * c;
            }
        }
    }

    #[inline]
    fn apply_phases(re: &mut [f64], im: &mut [f64], phases: &[C64]) {
        for ((r, i), p) in re.iter_mut().zip(im.iter_mut()).zip(phases) {
            let (a, b) = (*r, *i);
            *r = a * p.re - b * p.im;
            *i = a * p.im + b * p.re;
        }
    }

    fn split_step(&self, eps: f64, dt: f64, psi: &mut [C64], ws: &mut Workspace) {
        let n = self.dim;
        // exp(+i mu eps dt/2) is diagonal in the dipole eigenbasis.
        let theta = 0.5 * eps * dt;
        for (k, m) in ws.kick.iter_mut().zip(&self.mu_eig) {
            let (s, c) = (m * theta).sin_cos();
            *k = C64::new(c, s);
        }
        let free: &[C64] = match self.free_cache.iter().find(|(h, _)| *h == dt) {
            Some((_, p)) => p,
            None => {
                for (f, e) in ws.free.iter_mut().zip(&self.energies) {
                    *f = (C64::new(0.0, -dt) * e).exp();
                }
                &ws.free
            }
        };
        if eps == 0.0 {
            for (x, f) in psi.iter_mut().zip(free) {
                *x *= f;
            }
            return;
        }
        let Workspace {
            yre,
            yim,
            zre,
            zim,
            kick,
            ..
        } = ws;
        self.to_eigenbasis(psi, yre, yim);
        Self::apply_phases(yre, yim, kick);
        self.back_from_eigenbasis(yre, yim, zre, zim);
        Self::apply_phases(zre, zim, free);
        self.to_eigenbasis_split(zre, zim, yre, yim);
        Self::apply_phases(yre, yim, kick);
        self.back_from_eigenbasis(yre, yim, zre, zim);
        for i in 0..n {
            psi[i] = C64::new(zre[i], zim[i]);
        }
    }
}

impl Stepper for SplitStepper {
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&self, eps: f64, dt: f64, psi: &mut [C64], ws: &mut Workspace) -> Result<()> {
        self.split_step(eps, dt, psi, ws);
        Ok(())
    }

    fn step_inhomogeneous(
        &self,
        eps: f64,
        dt: f64,
        chi: &mut [C64],
        src: &[C64],
        ws: &mut Workspace,
    ) -> Result<()> {
        let mut half = std::mem::take(&mut ws.tmp);
        half.copy_from_slice(src);
        self.split_step(eps, 0.5 * dt, &mut half, ws);
        self.split_step(eps, dt, chi, ws);
        for (c, h) in chi.iter_mut().zip(&half) {
            *c += h * dt;
        }
        ws.tmp = half;
        Ok(())
    }
}

/// Exponentials `exp(-i H h)` from one eigendecomposition of `H`.
pub struct ExpFactory {
    vectors: DMatrix<C64>,
    inverse: DMatrix<C64>,
    values: Vec<C64>,
}

impl ExpFactory {
    /// Diagonalizes `h`. Hermitian input uses the symmetric solver; anything
    /// else goes through a complex Schur form and triangular eigenvectors.
    pub fn new(h: &Operator) -> Result<Self> {
        if h.is_hermitian() {
            let eig = SymmetricEigen::new(h.entries().clone());
            let vectors = eig.eigenvectors;
            let inverse = vectors.adjoint();
            let values = eig.eigenvalues.iter().map(|x| C64::new(*x, 0.0)).collect();
            return Ok(Self {
                vectors,
                inverse,
                values,
            });
        }
        Self::general(h.entries())
    }

    fn general(a: &DMatrix<C64>) -> Result<Self> {
        let n = a.nrows();
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let schur = a
            .clone()
            .try_schur(1e-14 * scale, 10_000)
            .ok_or_else(|| numerical("Schur iteration did not converge"))?;
        let (q, t) = schur.unpack();
        // Eigenvectors of the triangular factor by back substitution.
        let mut w = DMatrix::<C64>::identity(n, n);
        for k in 0..n {
            let lk = t[(k, k)];
            for i in (0..k).rev() {
                let mut acc = ZERO;
                for j in i + 1..=k {
                    acc += t[(i, j)] * w[(j, k)];
                }
                let gap = t[(i, i)] - lk;
                if gap.norm() <= 1e-13 * scale {
                    return Err(numerical("repeated eigenvalue with defective eigenspace"));
                }
                w[(i, k)] = -acc / gap;
            }
        }
        for k in 0..n {
            let nrm = w.column(k).norm();
            w.column_mut(k).unscale_mut(nrm);
        }
        let w_inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| numerical("eigenvector matrix is singular"))?;
        let cond = w.norm() * w_inv.norm();
        if !cond.is_finite() || cond > 1e10 {
            return Err(numerical("eigenvector matrix is ill-conditioned"));
        }
        let vectors = &q * &w;
        let inverse = &w_inv * q.adjoint();
        let values = (0..n).map(|k| t[(k, k)]).collect();
        Ok(Self {
            vectors,
            inverse,
            values,
        })
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.values
    }

    /// `exp(-i H h)` as a dense matrix.
    pub fn exp(&self, h: f64) -> DMatrix<C64> {
        let phases: Vec<C64> = self
            .values
            .iter()
            .map(|l| (C64::new(0.0, -h) * l).exp())
            .collect();
        let mut left = self.vectors.clone();
        for (k, p) in phases.iter().enumerate() {
            for x in left.column_mut(k).iter_mut() {
                *x *= p;
            }
        }
        left * &self.inverse
    }
}

fn numerical(reason: &str) -> Error {
    Error::Numerical {
        step: 0,
        reason: reason.to_string(),
    }
}

fn apply_dense(u: &DMatrix<C64>, x: &[C64]) -> DVector<C64> {
    u * DVector::from_column_slice(x)
}

/// Reference step `exp(-i H_mid dt) state` via eigendecomposition of `H_mid`.
pub fn step(h_mid: &Operator, dt: f64, state: &StateVector) -> Result<StateVector> {
    if h_mid.dim() != state.dim() {
        return Err(Error::dim(h_mid.dim(), state.dim()));
    }
    let u = ExpFactory::new(h_mid)?.exp(dt);
    StateVector::new(apply_dense(&u, state.amplitudes()).iter().copied().collect())
}

/// Reference inhomogeneous step
/// `exp(-i H dt) chi + dt exp(-i H dt/2) (s_left + s_right)/2`.
pub fn step_inhomogeneous(
    h_mid: &Operator,
    dt: f64,
    state: &StateVector,
    source_left: &StateVector,
    source_right: &StateVector,
) -> Result<StateVector> {
    let n = h_mid.dim();
    for d in [state.dim(), source_left.dim(), source_right.dim()] {
        if d != n {
            return Err(Error::dim(n, d));
        }
    }
    let f = ExpFactory::new(h_mid)?;
    let avg: Vec<C64> = source_left
        .amplitudes()
        .iter()
        .zip(source_right.amplitudes())
        .map(|(a, b)| (a + b) * 0.5)
        .collect();
    let hom = apply_dense(&f.exp(dt), state.amplitudes());
    let src = apply_dense(&f.exp(0.5 * dt), &avg);
    StateVector::new(hom.iter().zip(src.iter()).map(|(a, b)| a + b * dt).collect())
}

/// Stepper that rebuilds and diagonalizes the Hamiltonian at every step.
#[derive(Clone, Debug)]
pub struct EigenStepper {
    model: Model,
}

impl EigenStepper {
    pub fn new(model: &Model) -> Self {
        Self {
            model: model.clone(),
        }
    }

    fn factory(&self, eps: f64) -> Result<ExpFactory> {
        ExpFactory::new(&assemble_hamiltonian(&self.model, eps)?)
    }
}

impl Stepper for EigenStepper {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn step(&self, eps: f64, dt: f64, psi: &mut [C64], _ws: &mut Workspace) -> Result<()> {
        let out = apply_dense(&self.factory(eps)?.exp(dt), psi);
        psi.copy_from_slice(out.as_slice());
        Ok(())
    }

    fn step_inhomogeneous(
        &self,
        eps: f64,
        dt: f64,
        chi: &mut [C64],
        src: &[C64],
        _ws: &mut Workspace,
    ) -> Result<()> {
        let f = self.factory(eps)?;
        let hom = apply_dense(&f.exp(dt), chi);
        let half = apply_dense(&f.exp(0.5 * dt), src);
        for ((c, a), b) in chi.iter_mut().zip(hom.iter()).zip(half.iter()) {
            *c = a + b * dt;
        }
        Ok(())
    }
}

/// Which stepping scheme a [`Propagator`] uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    #[default]
    Split,
    Eigen,
}

/// A model-bound stepper.
#[derive(Clone, Debug)]
pub enum Propagator {
    Split(SplitStepper),
    Eigen(EigenStepper),
}

impl Propagator {
    pub fn new(model: &Model, grid: &TimeGrid, scheme: Scheme) -> Self {
        match scheme {
            Scheme::Split => Propagator::Split(SplitStepper::for_grid(model, grid)),
            Scheme::Eigen => Propagator::Eigen(EigenStepper::new(model)),
        }
    }
}

impl Stepper for Propagator {
    fn dim(&self) -> usize {
        match self {
            Propagator::Split(s) => s.dim(),
            Propagator::Eigen(s) => s.dim(),
        }
    }

    #[inline]
    fn step(&self, eps: f64, dt: f64, psi: &mut [C64], ws: &mut Workspace) -> Result<()> {
        match self {
            Propagator::Split(s) => s.step(eps, dt, psi, ws),
            Propagator::Eigen(s) => s.step(eps, dt, psi, ws),
        }
    }

    #[inline]
    fn step_inhomogeneous(
        &self,
        eps: f64,
        dt: f64,
        chi: &mut [C64],
        src: &[C64],
        ws: &mut Workspace,
    ) -> Result<()> {
        match self {
            Propagator::Split(s) => s.step_inhomogeneous(eps, dt, chi, src, ws),
            Propagator::Eigen(s) => s.step_inhomogeneous(eps, dt, chi, src, ws),
        }
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical { reason, .. } => Error::Numerical { step, reason },
        other => other,
    }
}

/// Forward propagation of each initial state, storing every node.
pub fn propagate_forward<S: Stepper>(
    stepper: &S,
    field: &ControlField,
    initial: &[StateVector],
) -> Result<Trajectory> {
    let grid = *field.grid();
    let dim = stepper.dim();
    if initial.is_empty() {
        return Err(Error::Structural("no initial states".into()));
    }
    for s in initial {
        if s.dim() != dim {
            return Err(Error::dim(dim, s.dim()));
        }
    }
    let columns = initial
        .par_iter()
        .map(|s| forward_column(stepper, field, s.amplitudes()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory::from_columns(grid, dim, columns))
}

pub(crate) fn forward_column<S: Stepper>(
    stepper: &S,
    field: &ControlField,
    initial: &[C64],
) -> Result<Vec<C64>> {
    let grid = field.grid();
    let dim = stepper.dim();
    let dt = grid.dt();
    let mut ws = Workspace::new(dim);
    let mut out = vec![ZERO; grid.n_nodes() * dim];
    out[..dim].copy_from_slice(initial);
    for i in 0..grid.n_steps() {
        let (done, rest) = out.split_at_mut((i + 1) * dim);
        let next = &mut rest[..dim];
        next.copy_from_slice(&done[i * dim..]);
        stepper
            .step(field.step_value(i), dt, next, &mut ws)
            .map_err(|e| at_step(e, i))?;
    }
    Ok(out)
}

/// Quadrature of the source integral over one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SourceRule {
    /// `chi_i = U (chi_{i+1} + h/2 s_{i+1}) + h/2 s_i` with `h = -dt`: the
    /// trapezoid rule applied in the interaction picture of the step. Exact
    /// when `P` commutes with the step propagator, so it stays accurate at
    /// steps that are coarse compared with the level energies.
    #[default]
    Interaction,
    /// `chi_i = U chi_{i+1} + h U_{1/2} (s_i + s_{i+1}) / 2`, see
    /// [`Stepper::step_inhomogeneous`].
    Midpoint,
}

/// Inhomogeneity `lambda_b P phi(t)` for the costate equation. `None`
/// disables the source path entirely.
#[derive(Clone, Copy, Debug)]
pub struct Source<'a> {
    pub lambda_b: f64,
    pub projector: &'a Operator,
    pub rule: SourceRule,
}

impl<'a> Source<'a> {
    pub fn new(lambda_b: f64, projector: &'a Operator) -> Self {
        Self {
            lambda_b,
            projector,
            rule: SourceRule::default(),
        }
    }
}

/// Integrates `d chi/dt = -i H chi + lambda_b P phi(t)` from `T` down to 0,
/// with the source averaged over each step's bracketing nodes.
pub fn propagate_backward_inhomogeneous<S: Stepper>(
    stepper: &S,
    field: &ControlField,
    chi_final: &[StateVector],
    forward: &Trajectory,
    source: Option<Source<'_>>,
) -> Result<Trajectory> {
    let grid = *field.grid();
    if forward.grid() != &grid {
        return Err(Error::Structural(
            "forward trajectory and field use different grids".into(),
        ));
    }
    let dim = stepper.dim();
    if forward.dim() != dim {
        return Err(Error::dim(dim, forward.dim()));
    }
    if chi_final.len() != forward.n_columns() {
        return Err(Error::Structural(format!(
            "{} costate boundary states for {} forward columns",
            chi_final.len(),
            forward.n_columns()
        )));
    }
    if let Some(src) = source {
        if src.projector.dim() != dim {
            return Err(Error::dim(dim, src.projector.dim()));
        }
    }
    let columns = chi_final
        .par_iter()
        .enumerate()
        .map(|(c, chi_t)| {
            if chi_t.dim() != dim {
                return Err(Error::dim(dim, chi_t.dim()));
            }
            backward_column(stepper, field, chi_t.amplitudes(), forward, c, source)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory::from_columns(grid, dim, columns))
}

pub(crate) fn backward_column<S: Stepper>(
    stepper: &S,
    field: &ControlField,
    chi_final: &[C64],
    forward: &Trajectory,
    column: usize,
    source: Option<Source<'_>>,
) -> Result<Vec<C64>> {
    let grid = field.grid();
    let dim = stepper.dim();
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut ws = Workspace::new(dim);
    let mut out = vec![ZERO; grid.n_nodes() * dim];
    out[n * dim..].copy_from_slice(chi_final);
    let mut s_right = vec![ZERO; dim];
    let mut s_left = vec![ZERO; dim];
    let mut avg = vec![ZERO; dim];
    if let Some(src) = source {
        src.projector.apply_into(forward.state(column, n), &mut s_right);
    }
    for i in (0..n).rev() {
        let (head, tail) = out.split_at_mut((i + 1) * dim);
        let cur = &mut head[i * dim..];
        cur.copy_from_slice(&tail[..dim]);
        let res = match source {
            Some(src) => {
                src.projector.apply_into(forward.state(column, i), &mut s_left);
                let w = 0.5 * src.lambda_b;
                let res = match src.rule {
                    SourceRule::Midpoint => {
                        for ((a, l), r) in avg.iter_mut().zip(&s_left).zip(&s_right) {
                            *a = (l + r) * w;
                        }
                        stepper.step_inhomogeneous(field.step_value(i), -dt, cur, &avg, &mut ws)
                    }
                    SourceRule::Interaction => {
                        let hw = -dt * w;
                        for (c, r) in cur.iter_mut().zip(&s_right) {
                            *c += r * hw;
                        }
                        let res = stepper.step(field.step_value(i), -dt, cur, &mut ws);
                        for (c, l) in cur.iter_mut().zip(&s_left) {
                            *c += l * hw;
                        }
                        res
                    }
                };
                std::mem::swap(&mut s_left, &mut s_right);
                res
            }
            None => stepper.step(field.step_value(i), -dt, cur, &mut ws),
        };
        res.map_err(|e| at_step(e, i))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{Coupling, Manifold};

    fn two_level(omega: f64, g: f64, gamma: f64) -> Model {
        Model::new(
            vec![
                Manifold {
                    name: "g".into(),
                    v_min: 0,
                    energies: vec![C64::new(0.0, 0.0)],
                },
                Manifold {
                    name: "e".into(),
                    v_min: 0,
                    energies: vec![C64::new(omega, -0.5 * gamma)],
                },
            ],
            vec![Coupling {
                from: 0,
                to: 1,
                matrix: DMatrix::from_element(1, 1, g),
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_hamiltonian_leaves_state_unchanged() {
        let h = Operator::zero(3);
        let psi = StateVector::new(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8), ZERO]).unwrap();
        let out = step(&h, 0.7, &psi).unwrap();
        for (a, b) in out.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn rabi_oscillation_matches_closed_form() {
        // Resonant two-level problem in the rotating frame: H = [[0,-g],[-g,0]].
        let g = 0.013;
        let model = two_level(0.0, g, 0.0);
        let grid = TimeGrid::new(700.0, 1000).unwrap();
        let field = ControlField::from_fn(grid, |_| 1.0).unwrap();
        for scheme in [Scheme::Split, Scheme::Eigen] {
            let p = Propagator::new(&model, &grid, scheme);
            let traj = propagate_forward(&p, &field, &[StateVector::basis(2, 0)]).unwrap();
            for i in 0..grid.n_nodes() {
                let expect = (g * grid.time(i)).sin().powi(2);
                let got = traj.state(0, i)[1].norm_sqr();
                assert!((got - expect).abs() < 1e-12, "{scheme:?} node {i}");
            }
        }
    }

    #[test]
    fn decay_follows_exponential_law() {
        let gamma = 2e-3;
        let model = two_level(0.05, 0.0, gamma);
        let grid = TimeGrid::new(900.0, 300).unwrap();
        let field = ControlField::zeros(grid);
        let p = Propagator::new(&model, &grid, Scheme::Split);
        let traj = propagate_forward(&p, &field, &[StateVector::basis(2, 1)]).unwrap();
        for i in 0..grid.n_nodes() {
            let expect = (-gamma * grid.time(i)).exp();
            let got = traj.state(0, i)[1].norm_sqr();
            assert!(((got - expect) / expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_source_matches_homogeneous_step() {
        let h = assemble_hamiltonian(&two_level(0.3, 0.2, 0.0), 0.5).unwrap();
        let psi = StateVector::new(vec![C64::new(0.6, 0.1), C64::new(-0.2, 0.7)]).unwrap();
        let z = StateVector::zeros(2);
        let a = step(&h, 0.9, &psi).unwrap();
        let b = step_inhomogeneous(&h, 0.9, &psi, &z, &z).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_source_without_hamiltonian_grows_linearly() {
        let h = Operator::zero(2);
        let s = StateVector::new(vec![C64::new(0.3, -0.1), C64::new(0.0, 0.2)]).unwrap();
        let mut chi = StateVector::new(vec![C64::new(1.0, 0.0), ZERO]).unwrap();
        let chi0 = chi.clone();
        let dt = 0.25;
        for k in 1..=8 {
            chi = step_inhomogeneous(&h, dt, &chi, &s, &s).unwrap();
            let t = k as f64 * dt;
            for j in 0..2 {
                let expect = chi0.amplitudes()[j] + s.amplitudes()[j] * t;
                assert!((chi.amplitudes()[j] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn split_and_eigen_inhomogeneous_steps_agree_for_diagonal_h() {
        // With mu = 0 the split factors commute and both schemes are exact.
        let model = two_level(0.4, 0.0, 0.1);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let split = Propagator::new(&model, &grid, Scheme::Split);
        let eig = Propagator::new(&model, &grid, Scheme::Eigen);
        let src = [C64::new(0.1, 0.2), C64::new(-0.3, 0.05)];
        let mut a = [C64::new(0.5, 0.0), C64::new(0.0, 0.5)];
        let mut b = a;
        let mut ws = Workspace::new(2);
        split.step_inhomogeneous(0.0, 0.3, &mut a, &src, &mut ws).unwrap();
        eig.step_inhomogeneous(0.0, 0.3, &mut b, &src, &mut ws).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn backward_rejects_mismatched_grids() {
        let model = two_level(0.1, 0.1, 0.0);
        let g1 = TimeGrid::new(10.0, 10).unwrap();
        let g2 = TimeGrid::new(10.0, 20).unwrap();
        let p = Propagator::new(&model, &g1, Scheme::Split);
        let fwd = propagate_forward(&p, &ControlField::zeros(g1), &[StateVector::basis(2, 0)]).unwrap();
        let err = propagate_backward_inhomogeneous(
            &p,
            &ControlField::zeros(g2),
            &[StateVector::basis(2, 0)],
            &fwd,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(g.midpoint(1), 0.75);
        assert!(ControlField::new(g, vec![0.0; 4]).is_err());
        assert!(ControlField::new(g, vec![0.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }
    /// `chi' = -i E chi + s` with constant diagonal `E` and constant `s`.
    fn variation_of_constants(e: &[C64], chi0: &[C64], s: &[C64], t: f64) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        e.iter()
            .zip(chi0)
            .zip(s)
            .map(|((e, c), s)| {
                let u = (-i * e * t).exp();
                u * c + s * (C64::new(1.0, 0.0) - u) / (i * e)
            })
            .collect()
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn inhomogeneous_step_is_second_order() {
        let e = [C64::new(0.7, 0.0), C64::new(-1.3, -0.2)];
        let h = Operator::from_diagonal(&e).unwrap();
        let chi0 = [C64::new(0.4, -0.1), C64::new(0.2, 0.3)];
        let s = StateVector::new(vec![C64::new(0.5, 0.2), C64::new(-0.1, 0.6)]).unwrap();
        let t = 3.0;
        let exact = variation_of_constants(&e, &chi0, s.amplitudes(), t);
        let err = |n: usize| {
            let dt = t / n as f64;
            let mut chi = StateVector::new(chi0.to_vec()).unwrap();
            for _ in 0..n {
                chi = step_inhomogeneous(&h, dt, &chi, &s, &s).unwrap();
            }
            max_diff(chi.amplitudes(), &exact)
        };
        for n in [40, 80, 160] {
            let ratio = err(n) / err(2 * n);
            assert!((ratio - 4.0).abs() < 0.3, "n={n}: ratio {ratio}");
        }
    }

    /// Model with two decoupled levels of energies 0 and `omega`.
    fn free_pair(omega: f64) -> Model {
        two_level(omega, 0.0, 0.0)
    }

    #[test]
    fn interaction_rule_is_exact_for_a_full_projector() {
        // With P = 1 the costate is chi(t) = U(t,T) chi_T - lambda_b (T - t) phi(t).
        let model = free_pair(0.9);
        let grid = TimeGrid::new(40.0, 64).unwrap();
        let prop = Propagator::new(&model, &grid, Scheme::Split);
        let field = ControlField::zeros(grid);
        let phi0 = StateVector::new(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap();
        let fwd = propagate_forward(&prop, &field, &[phi0]).unwrap();
        let p = Operator::identity(2);
        let lb = -0.05;
        let zero = StateVector::zeros(2);
        let chi = propagate_backward_inhomogeneous(&prop, &field, &[zero], &fwd, Some(Source::new(lb, &p)))
            .unwrap();
        for i in 0..grid.n_nodes() {
            let w = -lb * (grid.t_final() - grid.time(i));
            let expect: Vec<C64> = fwd.state(0, i).iter().map(|x| x * w).collect();
            assert!(max_diff(chi.state(0, i), &expect) < 1e-13);
        }
        let mid = Source {
            rule: SourceRule::Midpoint,
            ..Source::new(lb, &p)
        };
        let zero = StateVector::zeros(2);
        let chi_mid = propagate_backward_inhomogeneous(&prop, &field, &[zero], &fwd, Some(mid)).unwrap();
        let expect: Vec<C64> = fwd.state(0, 0).iter().map(|x| x * (-lb * 40.0)).collect();
        assert!(max_diff(chi_mid.state(0, 0), &expect) > 1e-3);
    }

    #[test]
    fn both_source_rules_converge_at_second_order() {
        let model = two_level(0.8, 0.3, 0.0);
        let p = Operator::from_diagonal(&[C64::new(1.0, 0.0), ZERO]).unwrap();
        let phi0 = StateVector::basis(2, 0);
        let chi_t = StateVector::new(vec![C64::new(0.0, 0.5), C64::new(0.3, 0.0)]).unwrap();
        let solve = |n: usize, rule: SourceRule| {
            let grid = TimeGrid::new(6.0, n).unwrap();
            let prop = Propagator::new(&model, &grid, Scheme::Eigen);
            let field = ControlField::from_fn(grid, |_| 0.4).unwrap();
            let fwd = propagate_forward(&prop, &field, &[phi0.clone()]).unwrap();
            let src = Source { rule, ..Source::new(-0.7, &p) };
            let chi = propagate_backward_inhomogeneous(&prop, &field, &[chi_t.clone()], &fwd, Some(src)).unwrap();
            chi.state(0, 0).to_vec()
        };
        for rule in [SourceRule::Interaction, SourceRule::Midpoint] {
            let reference = solve(1 << 14, rule);
            let e1 = max_diff(&solve(100, rule), &reference);
            let e2 = max_diff(&solve(200, rule), &reference);
            let ratio = e1 / e2;
            assert!((ratio - 4.0).abs() < 0.3, "{rule:?}: ratio {ratio}");
        }
    }

    #[test]
    fn zero_lambda_b_matches_the_disabled_source_bitwise() {
        let model = two_level(0.8, 0.3, 0.05);
        let grid = TimeGrid::new(6.0, 100).unwrap();
        let prop = Propagator::new(&model, &grid, Scheme::Split);
        let field = ControlField::from_fn(grid, |t| 0.3 * t.sin()).unwrap();
        let fwd = propagate_forward(&prop, &field, &[StateVector::basis(2, 0)]).unwrap();
        let p = Operator::identity(2);
        let chi_t = StateVector::new(vec![C64::new(0.1, 0.5), C64::new(0.3, -0.2)]).unwrap();
        let none = propagate_backward_inhomogeneous(&prop, &field, &[chi_t.clone()], &fwd, None).unwrap();
        for rule in [SourceRule::Interaction, SourceRule::Midpoint] {
            let src = Source { rule, ..Source::new(0.0, &p) };
            let zero = propagate_backward_inhomogeneous(&prop, &field, &[chi_t.clone()], &fwd, Some(src)).unwrap();
            for i in 0..grid.n_nodes() {
                for (a, b) in zero.state(0, i).iter().zip(none.state(0, i)) {
                    assert_eq!(a, b);
                }
            }
        }
    }
}
