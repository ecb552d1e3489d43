//! Data files: field traces, population traces, iteration tables and the
//! run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hilbert::{expectation_raw, norm_sqr, Model};
use crate::model::{self, model_to_string};
use crate::objective::{IterationRecord, Subspaces};
use crate::propagate::{ControlField, TimeGrid, Trajectory};

pub const FIELD_HEADER: &str = "# t(a.u.) eps(a.u.)";

pub fn field_to_string(field: &ControlField) -> String {
    let grid = field.grid();
    let mut s = String::with_capacity(48 * grid.n_nodes());
    s.push_str(FIELD_HEADER);
    s.push('\n');
    for (t, e) in grid.times().zip(field.samples()) {
        let _ = writeln!(s, "{t:.16e} {e:.16e}");
    }
    s
}

pub fn write_field(path: &Path, field: &ControlField) -> Result<()> {
    fs::write(path, field_to_string(field)).map_err(|e| Error::io(path, e))
}

/// Parses a two-column field file. The times must start at zero and be
/// uniformly spaced.
pub fn parse_field(text: &str, origin: &Path) -> Result<ControlField> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split_whitespace();
        let mut num = |what: &str| -> Result<f64> {
            let tok = cols.next().ok_or_else(|| err(k + 1, format!("missing {what}")))?;
            tok.parse().map_err(|_| err(k + 1, format!("bad {what} {tok:?}")))
        };
        times.push(num("time")?);
        values.push(num("field value")?);
        if cols.next().is_some() {
            return Err(err(k + 1, "expected two columns".into()));
        }
    }
    if times.len() < 3 {
        return Err(err(0, "need at least three samples".into()));
    }
    let n_steps = times.len() - 1;
    let t_final = times[n_steps];
    let grid = TimeGrid::new(t_final, n_steps)?;
    let tol = 1e-9 * t_final;
    if let Some(i) = times.iter().enumerate().position(|(i, t)| (t - grid.time(i)).abs() > tol) {
        return Err(Error::Structural(format!(
            "{}: non-uniform time grid at sample {i} (t = {})",
            origin.display(),
            times[i]
        )));
    }
    ControlField::new(grid, values)
}

pub fn read_field(path: &Path) -> Result<ControlField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field(&text, path)
}

pub fn iterations_to_string(records: &[IterationRecord]) -> String {
    let mut out = Vec::new();
    crate::objective::write_records_csv(&mut out, records).expect("writing to memory");
    String::from_utf8(out).expect("ascii output")
}

pub const POPULATION_HEADER: &str = "t,P_v0,P_v1,P_v10p,P_v6pp,P_allow,P_forbid,P_total";

/// Population trace of one column at every `stride`-th node and at `T`.
pub fn populations_to_string(
    model: &Model,
    trajectory: &Trajectory,
    column: usize,
    subspaces: &Subspaces,
    stride: usize,
) -> Result<String> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    let levels = [model::V0, model::V1, model::V10P, model::V6PP]
        .into_iter()
        .map(|l| model.index_of(l))
        .collect::<Result<Vec<_>>>()?;
    let grid = trajectory.grid();
    let n = grid.n_steps();
    let mut s = String::from(POPULATION_HEADER);
    s.push('\n');
    let nodes = (0..=n).step_by(stride).chain((!n.is_multiple_of(stride)).then_some(n));
    for i in nodes {
        let psi = trajectory.state(column, i);
        let _ = write!(s, "{:.16e}", grid.time(i));
        for &k in &levels {
            let _ = write!(s, ",{:.16e}", psi[k].norm_sqr());
        }
        let allow = expectation_raw(psi, &subspaces.allow).re;
        let forbid = expectation_raw(psi, &subspaces.forbid).re;
        let _ = writeln!(s, ",{allow:.16e},{forbid:.16e},{:.16e}", norm_sqr(psi));
    }
    Ok(s)
}

/// Lowercase hex SHA-256 of the model's serialized form.
pub fn model_hash(model: &Model) -> String {
    Sha256::digest(model_to_string(model).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub command: String,
    pub tool_version: String,
    pub model_sha256: String,
    pub wall_time_s: f64,
    pub determinism: String,
    pub outputs: Vec<String>,
    pub config: C,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &str, model: &Model, config: C) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            model_sha256: model_hash(model),
            wall_time_s: 0.0,
            determinism: "no random numbers are used; identical config and model reproduce all data files bit for bit"
                .into(),
            outputs: Vec::new(),
            config,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parameter(format!("manifest: {e}")))
    }
}

/// Writes files into one output directory and remembers their names.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.written.push(name.to_string());
        Ok(p)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
