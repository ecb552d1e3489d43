//! Model files: TOML with `meta`, `manifolds[]` and `couplings[]`
//! sections. Floats are written with 17 significant digits so a
//! save/load round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hilbert::{Coupling, Manifold, Model, ModelMeta, C64};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    meta: MetaSection,
    manifolds: Vec<ManifoldEntry>,
    #[serde(default)]
    couplings: Vec<CouplingEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaSection {
    units: String,
    #[serde(default)]
    generator: ModelMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifoldEntry {
    label: String,
    indices: Vec<u32>,
    energies_re: Vec<f64>,
    energies_im: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingEntry {
    from: usize,
    to: usize,
    matrix: Vec<Vec<f64>>,
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_array(out: &mut String, values: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_f64(v));
    }
    out.push(']');
}

/// Serializes a model to the file format.
pub fn model_to_string(model: &Model) -> String {
    let mut s = String::new();
    s.push_str("[meta]\nunits = \"atomic\"\n\n[meta.generator]\n");
    for (k, v) in model.meta() {
        let _ = writeln!(s, "{} = {}", toml_key(k), fmt_f64(*v));
    }
    for man in model.manifolds() {
        s.push_str("\n[[manifolds]]\n");
        let _ = writeln!(s, "label = {}", toml_string(&man.name));
        let idx: Vec<String> = man.v_range().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "indices = [{}]", idx.join(", "));
        s.push_str("energies_re = ");
        fmt_array(&mut s, man.energies.iter().map(|e| e.re));
        s.push_str("\nenergies_im = ");
        fmt_array(&mut s, man.energies.iter().map(|e| e.im));
        s.push('\n');
    }
    for c in model.couplings() {
        s.push_str("\n[[couplings]]\n");
        let _ = writeln!(s, "from = {}\nto = {}\nmatrix = [", c.from + 1, c.to + 1);
        for row in c.matrix.row_iter() {
            s.push_str("  ");
            fmt_array(&mut s, row.iter().copied());
            s.push_str(",\n");
        }
        s.push_str("]\n");
    }
    s
}

fn toml_key(k: &str) -> String {
    if k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        toml_string(k)
    }
}

fn toml_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Parses a model file body. `origin` names the source in diagnostics.
pub fn parse_model(text: &str, origin: &Path) -> Result<Model> {
    let parse_err = |message: String| Error::Parse {
        path: origin.to_path_buf(),
        message,
    };
    let file: ModelFile = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if file.meta.units != "atomic" {
        return Err(parse_err(format!(
            "meta.units must be \"atomic\", got {:?}",
            file.meta.units
        )));
    }
    let mut manifolds = Vec::with_capacity(file.manifolds.len());
    for (m, entry) in file.manifolds.into_iter().enumerate() {
        let n = entry.indices.len();
        let ctx = format!("manifolds[{m}] ({})", entry.label);
        if n == 0 {
            return Err(parse_err(format!("{ctx}: no levels")));
        }
        if entry.energies_re.len() != n || entry.energies_im.len() != n {
            return Err(parse_err(format!(
                "{ctx}: {n} indices but {} energies_re and {} energies_im",
                entry.energies_re.len(),
                entry.energies_im.len()
            )));
        }
        let v_min = entry.indices[0];
        if entry.indices.iter().enumerate().any(|(k, &v)| v != v_min + k as u32) {
            return Err(parse_err(format!("{ctx}: indices must be consecutive")));
        }
        manifolds.push(Manifold {
            name: entry.label,
            v_min,
            energies: entry
                .energies_re
                .iter()
                .zip(&entry.energies_im)
                .map(|(&re, &im)| C64::new(re, im))
                .collect(),
        });
    }
    let mut couplings = Vec::with_capacity(file.couplings.len());
    for c in file.couplings {
        if c.from == 0 || c.to == 0 {
            return Err(parse_err("coupling manifold indices are 1-based".into()));
        }
        let name = format!("coupling {}->{}", c.from, c.to);
        let rows = c.matrix.len();
        let cols = c.matrix.first().map_or(0, Vec::len);
        if c.matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::Structural(format!("{name}: ragged matrix rows")));
        }
        couplings.push(Coupling {
            from: c.from - 1,
            to: c.to - 1,
            matrix: DMatrix::from_fn(rows, cols, |i, j| c.matrix[i][j]),
        });
    }
    Model::with_meta(manifolds, couplings, file.meta.generator)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, path)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}
