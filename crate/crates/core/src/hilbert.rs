//! Finite-dimensional state and operator arithmetic, the multi-manifold level
//! model, and assembly of the field-dressed Hamiltonian `H = H0 - mu * eps`.
//!
//! Levels are stored in one flat index, manifold-major. That keeps subspace
//! projectors diagonal and the dipole operator block-sparse.

use std::fmt;

use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Tolerance for the Hermiticity and idempotency flags on [`Operator`].
pub const OPERATOR_TOL: f64 = 1e-12;

/// `<a|b>` for raw amplitude slices.
#[inline]
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// A pure state of a `dim`-level system.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Structural("state vector must have dim >= 1".into()));
        }
        Ok(Self { amplitudes })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "state vector must have dim >= 1");
        Self {
            amplitudes: vec![ZERO; dim],
        }
    }

    /// The basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dim {dim}");
        let mut s = Self::zeros(dim);
        s.amplitudes[k] = ONE;
        s
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    pub fn scaled(&self, factor: C64) -> StateVector {
        StateVector {
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn normalized(&self) -> Result<StateVector> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Parameter("cannot normalize a zero state".into()));
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }

    /// Population `|c_k|^2` of level `k`.
    pub fn population(&self, k: usize) -> f64 {
        self.amplitudes[k].norm_sqr()
    }
}

impl From<StateVector> for Vec<C64> {
    fn from(s: StateVector) -> Self {
        s.amplitudes
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dim(expected, found))
    }
}

/// A dense complex `dim x dim` operator with optional structural flags.
///
/// Setting the Hermitian or projector flag validates the entries; flags are
/// never set on data that fails the check.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    entries: DMatrix<C64>,
    hermitian: bool,
    projector: bool,
    /// Present when every off-diagonal entry is exactly zero.
    diagonal: Option<Vec<C64>>,
}

impl Operator {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::Structural(format!(
                "operator must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let diagonal = exact_diagonal(&entries);
        Ok(Self {
            entries,
            hermitian: false,
            projector: false,
            diagonal,
        })
    }

    pub fn from_diagonal(diag: &[C64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
            diag,
        )))
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::new(DMatrix::identity(dim, dim)).expect("dim >= 1");
        op.hermitian = true;
        op.projector = true;
        op
    }

    pub fn zero(dim: usize) -> Self {
        let mut op = Self::new(DMatrix::zeros(dim, dim)).expect("dim >= 1");
        op.hermitian = true;
        op.projector = true;
        op
    }

    /// Builds an operator and sets the Hermitian flag after checking it.
    pub fn hermitian(entries: DMatrix<C64>) -> Result<Self> {
        Self::new(entries)?.with_hermitian_flag()
    }

    /// Builds an operator and sets the projector flag after checking
    /// Hermiticity and idempotency (which together imply `P >= 0`).
    pub fn projector(entries: DMatrix<C64>) -> Result<Self> {
        Self::new(entries)?.with_projector_flag()
    }

    /// `|psi><psi|` for a normalized `psi`.
    pub fn rank_one_projector(psi: &StateVector) -> Result<Self> {
        let n = psi.norm_sqr();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::Invariant(format!(
                "rank-one projector needs a normalized state, |psi|^2 = {n}"
            )));
        }
        let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
        Self::projector(&v * v.adjoint())
    }

    pub fn with_hermitian_flag(mut self) -> Result<Self> {
        let err = self.hermiticity_error();
        if err > OPERATOR_TOL {
            return Err(Error::Invariant(format!(
                "operator is not Hermitian (relative deviation {err:e})"
            )));
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn with_projector_flag(self) -> Result<Self> {
        let mut op = self.with_hermitian_flag()?;
        let err = op.idempotency_error();
        if err > OPERATOR_TOL {
            return Err(Error::Invariant(format!(
                "operator is not idempotent (max |P^2 - P| = {err:e})"
            )));
        }
        op.projector = true;
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_projector(&self) -> bool {
        self.projector
    }

    pub fn diagonal(&self) -> Option<&[C64]> {
        self.diagonal.as_deref()
    }

    /// `max |A_ij - conj(A_ji)|` relative to the largest entry.
    pub fn hermiticity_error(&self) -> f64 {
        let a = &self.entries;
        let n = a.nrows();
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
            }
        }
        worst / scale
    }

    pub fn idempotency_error(&self) -> f64 {
        let sq = &self.entries * &self.entries;
        (sq - &self.entries)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// `out = A x` on raw slices.
    #[inline]
    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        if let Some(d) = &self.diagonal {
            for ((o, di), xi) in out.iter_mut().zip(d).zip(x) {
                *o = di * xi;
            }
            return;
        }
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for j in 0..n {
                acc += self.entries[(i, j)] * x[j];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        check_dim(self.dim(), state.dim())?;
        let mut out = StateVector::zeros(self.dim());
        self.apply_into(state.amplitudes(), out.amplitudes_mut());
        Ok(out)
    }

    /// Entrywise `self + other`, flags dropped.
    pub fn add(&self, other: &Operator) -> Result<Operator> {
        check_dim(self.dim(), other.dim())?;
        Operator::new(&self.entries + &other.entries)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        (&self.entries - &other.entries)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

fn exact_diagonal(m: &DMatrix<C64>) -> Option<Vec<C64>> {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)] != ZERO {
                return None;
            }
        }
    }
    Some((0..n).map(|i| m[(i, i)]).collect())
}

/// `<psi|A|psi>`.
pub fn expectation(state: &StateVector, op: &Operator) -> Result<C64> {
    check_dim(op.dim(), state.dim())?;
    Ok(expectation_raw(state.amplitudes(), op))
}

#[inline]
pub(crate) fn expectation_raw(psi: &[C64], op: &Operator) -> C64 {
    if let Some(d) = op.diagonal() {
        return psi
            .iter()
            .zip(d)
            .map(|(a, di)| di * a.norm_sqr())
            .fold(ZERO, |acc, x| acc + x);
    }
    let n = psi.len();
    let mut acc = ZERO;
    for i in 0..n {
        let mut row = ZERO;
        for j in 0..n {
            row += op.entries()[(i, j)] * psi[j];
        }
        acc += psi[i].conj() * row;
    }
    acc
}

/// Identifies one level: electronic manifold (0-based) and vibrational
/// quantum number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelLabel {
    pub manifold: usize,
    pub v: u32,
}

impl LevelLabel {
    pub const fn new(manifold: usize, v: u32) -> Self {
        Self { manifold, v }
    }
}

impl fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}:v{}", self.manifold + 1, self.v)
    }
}

/// One electronic manifold: a contiguous window of vibrational levels.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifold {
    pub name: String,
    /// Vibrational quantum number of the first stored level.
    pub v_min: u32,
    /// Level energies in hartree; `Im(E) = -Gamma/2` encodes decay.
    pub energies: Vec<C64>,
}

impl Manifold {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn v_range(&self) -> std::ops::RangeInclusive<u32> {
        self.v_min..=self.v_min + self.energies.len() as u32 - 1
    }
}

/// Dipole coupling block between two adjacent manifolds. Rows index the
/// levels of `from`, columns the levels of `to`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub from: usize,
    pub to: usize,
    pub matrix: DMatrix<f64>,
}

/// Key/value provenance carried alongside a model.
pub type ModelMeta = std::collections::BTreeMap<String, f64>;

/// Multi-manifold level model: `H0` is diagonal in the level basis, `mu`
/// holds the adjacent-manifold coupling blocks (dipole scale folded in).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    manifolds: Vec<Manifold>,
    couplings: Vec<Coupling>,
    meta: ModelMeta,
}

impl Model {
    pub fn new(manifolds: Vec<Manifold>, couplings: Vec<Coupling>) -> Result<Self> {
        Self::with_meta(manifolds, couplings, ModelMeta::new())
    }

    pub fn with_meta(
        manifolds: Vec<Manifold>,
        couplings: Vec<Coupling>,
        meta: ModelMeta,
    ) -> Result<Self> {
        let model = Self {
            manifolds,
            couplings,
            meta,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.manifolds.is_empty() {
            return Err(Error::Structural("model has no manifolds".into()));
        }
        for (m, man) in self.manifolds.iter().enumerate() {
            if man.is_empty() {
                return Err(Error::Structural(format!(
                    "manifold {} ({}) has no levels",
                    m + 1,
                    man.name
                )));
            }
            for (k, e) in man.energies.iter().enumerate() {
                if !(e.re.is_finite() && e.im.is_finite()) {
                    return Err(Error::Invariant(format!(
                        "non-finite energy at {}",
                        LevelLabel::new(m, man.v_min + k as u32)
                    )));
                }
                if e.im > 0.0 {
                    return Err(Error::Invariant(format!(
                        "Im(energy) <= 0 violated at {} (Im = {:e})",
                        LevelLabel::new(m, man.v_min + k as u32),
                        e.im
                    )));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.couplings {
            let name = format!("coupling {}->{}", c.from + 1, c.to + 1);
            if c.to != c.from + 1 || c.to >= self.manifolds.len() {
                return Err(Error::Structural(format!(
                    "{name}: only adjacent manifolds (m, m+1) may be coupled"
                )));
            }
            if !seen.insert(c.from) {
                return Err(Error::Structural(format!("{name}: duplicate block")));
            }
            let (r, k) = (self.manifolds[c.from].len(), self.manifolds[c.to].len());
            if c.matrix.nrows() != r || c.matrix.ncols() != k {
                return Err(Error::Structural(format!(
                    "{name}: block is {}x{}, expected {r}x{k}",
                    c.matrix.nrows(),
                    c.matrix.ncols()
                )));
            }
            if c.matrix.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invariant(format!("{name}: non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn manifolds(&self) -> &[Manifold] {
        &self.manifolds
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.manifolds.iter().map(Manifold::len).sum()
    }

    /// Flat index of the first level of manifold `m`.
    pub fn offset(&self, m: usize) -> usize {
        self.manifolds[..m].iter().map(Manifold::len).sum()
    }

    pub fn labels(&self) -> Vec<LevelLabel> {
        self.manifolds
            .iter()
            .enumerate()
            .flat_map(|(m, man)| man.v_range().map(move |v| LevelLabel::new(m, v)))
            .collect()
    }

    pub fn index_of(&self, label: LevelLabel) -> Result<usize> {
        let man = self
            .manifolds
            .get(label.manifold)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        if !man.v_range().contains(&label.v) {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        Ok(self.offset(label.manifold) + (label.v - man.v_min) as usize)
    }

    pub fn manifold_labels(&self, m: usize) -> Vec<LevelLabel> {
        self.manifolds[m]
            .v_range()
            .map(|v| LevelLabel::new(m, v))
            .collect()
    }

    /// Diagonal of `H0` in flat order.
    pub fn energies(&self) -> Vec<C64> {
        self.manifolds
            .iter()
            .flat_map(|m| m.energies.iter().copied())
            .collect()
    }

    pub fn energy(&self, label: LevelLabel) -> Result<C64> {
        Ok(self.energies()[self.index_of(label)?])
    }

    /// Coupling matrix element between two levels (zero when the manifolds
    /// are not directly coupled).
    pub fn coupling(&self, a: LevelLabel, b: LevelLabel) -> Result<f64> {
        let ia = self.index_of(a)?;
        let ib = self.index_of(b)?;
        Ok(self.dipole()[(ia, ib)])
    }

    pub fn is_lossless(&self) -> bool {
        self.manifolds
            .iter()
            .all(|m| m.energies.iter().all(|e| e.im == 0.0))
    }

    /// Real symmetric dipole matrix with zero diagonal blocks.
    pub fn dipole(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut mu = DMatrix::zeros(n, n);
        for c in &self.couplings {
            let (r0, c0) = (self.offset(c.from), self.offset(c.to));
            for i in 0..c.matrix.nrows() {
                for j in 0..c.matrix.ncols() {
                    mu[(r0 + i, c0 + j)] = c.matrix[(i, j)];
                    mu[(c0 + j, r0 + i)] = c.matrix[(i, j)];
                }
            }
        }
        mu
    }

    pub fn dipole_operator(&self) -> Operator {
        Operator::hermitian(self.dipole().map(|x| C64::new(x, 0.0)))
            .expect("dipole matrix is real symmetric by construction")
    }

    /// Copy with the energies of manifold `m` replaced.
    pub fn with_manifold_energies(&self, m: usize, energies: Vec<C64>) -> Result<Model> {
        let mut manifolds = self.manifolds.clone();
        let man = manifolds
            .get_mut(m)
            .ok_or_else(|| Error::Parameter(format!("no manifold with index {m}")))?;
        if man.len() != energies.len() {
            return Err(Error::dim(man.len(), energies.len()));
        }
        man.energies = energies;
        Model::with_meta(manifolds, self.couplings.clone(), self.meta.clone())
    }
}

/// `H = H0 - mu * eps`.
pub fn assemble_hamiltonian(model: &Model, eps: f64) -> Result<Operator> {
    let mu = model.dipole();
    let e = model.energies();
    let n = model.dim();
    if mu.nrows() != n || e.len() != n {
        return Err(Error::Structural("model dimension mismatch".into()));
    }
    let mut h = DMatrix::from_fn(n, n, |i, j| C64::new(-mu[(i, j)] * eps, 0.0));
    for (i, ei) in e.iter().enumerate() {
        h[(i, i)] += ei;
    }
    let op = Operator::new(h)?;
    if model.is_lossless() {
        op.with_hermitian_flag()
    } else {
        Ok(op)
    }
}

/// Diagonal 0/1 projector onto the selected levels.
pub fn projector_for_subspace(model: &Model, selector: &[LevelLabel]) -> Result<Operator> {
    let mut d = vec![ZERO; model.dim()];
    for &label in selector {
        d[model.index_of(label)?] = ONE;
    }
    Operator::from_diagonal(&d)?.with_projector_flag()
}

/// Projector onto every level of the listed manifolds.
pub fn manifold_projector(model: &Model, manifolds: &[usize]) -> Result<Operator> {
    let mut labels = Vec::new();
    for &m in manifolds {
        if m >= model.manifolds().len() {
            return Err(Error::UnknownLabel(format!("manifold {}", m + 1)));
        }
        labels.extend(model.manifold_labels(m));
    }
    projector_for_subspace(model, &labels)
}
