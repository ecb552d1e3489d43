//! Run configuration files.
//!
//! All multipliers are dimensionless products: `lambda_b_T` is `lambda_b`
//! times the pulse duration, `lambda_a` is the constant `c` in
//! `lambda_a(t) = c / s(t)`. Manifold numbers are 1-based as in model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{LevelLabel, Model, StateVector};
use crate::krotov::{Options, Problem, StopRules};
use crate::model::{self, guess_field, transition_frequency};
use crate::objective::{
    fourier_matrix, Constraint, Direction, FunctionalConfig, GateFrame, GateTarget, LambdaA, Reference,
    Subspaces, Target,
};
use crate::propagate::{Scheme, SourceRule, TimeGrid};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub functional: FunctionalSection,
    pub guess: GuessSection,
    pub stop: StopSection,
    pub numerics: NumericsSection,
    pub transfer: TransferSection,
    pub gate: GateSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Pulse duration in a.u.
    pub t_final: f64,
    pub n_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeName {
    Gaussian,
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionName {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintName {
    Allowed,
    Forbidden,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalSection {
    pub lambda0: f64,
    #[serde(rename = "lambda_b_T")]
    pub lambda_b_t: f64,
    pub lambda_a: f64,
    pub lambda_a_shape: EnvelopeName,
    pub direction: DirectionName,
    pub constraint: ConstraintName,
    /// 1-based manifolds spanning the forbidden subspace.
    pub forbidden_manifolds: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuessSection {
    pub eps0: f64,
    /// Carrier frequency in a.u.; defaults to the v=0 -> v'=10 transition.
    pub omega: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopSection {
    pub max_iters: usize,
    pub j_norm_target: Option<f64>,
    pub field_change_floor: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Split,
    Eigen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRuleName {
    Interaction,
    Midpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    pub scheme: SchemeName,
    pub source_rule: SourceRuleName,
}

/// Levels as `[manifold (1-based), v]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub initial: [u32; 2],
    pub target: [u32; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateName {
    Fourier,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameName {
    Interaction,
    Lab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub manifold: u32,
    pub levels: Vec<u32>,
    pub target: GateName,
    pub frame: FrameName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Node stride of population traces; 1 keeps every node.
    pub stride: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            t_final: model::DEFAULT_T,
            n_steps: model::DEFAULT_STEPS,
        }
    }
}

impl Default for FunctionalSection {
    fn default() -> Self {
        Self {
            lambda0: -1.0,
            lambda_b_t: 0.0,
            lambda_a: 100.0,
            lambda_a_shape: EnvelopeName::Gaussian,
            direction: DirectionName::Minimize,
            constraint: ConstraintName::Allowed,
            forbidden_manifolds: vec![model::UPPER_MANIFOLD + 1],
        }
    }
}

impl Default for GuessSection {
    fn default() -> Self {
        Self {
            eps0: model::DEFAULT_EPS0,
            omega: None,
        }
    }
}

impl Default for StopSection {
    fn default() -> Self {
        let s = StopRules::default();
        Self {
            max_iters: s.max_iters,
            j_norm_target: s.j_norm_target,
            field_change_floor: s.field_change_floor,
        }
    }
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Split,
            source_rule: SourceRuleName::Interaction,
        }
    }
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            initial: [1, 0],
            target: [1, 1],
        }
    }
}

impl Default for GateSection {
    fn default() -> Self {
        Self {
            manifold: 1,
            levels: vec![0, 1, 2, 3],
            target: GateName::Fourier,
            frame: FrameName::Interaction,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { stride: 64 }
    }
}

/// Which experiment a configuration is turned into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Transfer,
    Gate,
}

fn label(model: &Model, pair: [u32; 2]) -> Result<LevelLabel> {
    if pair[0] == 0 {
        return Err(Error::Parameter("manifold numbers are 1-based".into()));
    }
    let l = LevelLabel::new(pair[0] as usize - 1, pair[1]);
    model.index_of(l)?;
    Ok(l)
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.t_final, self.grid.n_steps)
    }

    pub fn lambda_b(&self) -> f64 {
        self.functional.lambda_b_t / self.grid.t_final
    }

    pub fn subspaces(&self, model: &Model) -> Result<Subspaces> {
        let forbidden = self
            .functional
            .forbidden_manifolds
            .iter()
            .map(|&m| {
                if m == 0 || m > model.manifolds().len() {
                    Err(Error::Parameter(format!("no manifold {m} in the model")))
                } else {
                    Ok(m - 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Subspaces::from_forbidden_manifolds(model, &forbidden)
    }

    pub fn transfer_levels(&self, model: &Model) -> Result<(LevelLabel, LevelLabel)> {
        Ok((label(model, self.transfer.initial)?, label(model, self.transfer.target)?))
    }

    /// Flat indices of the gate register.
    pub fn register(&self, model: &Model) -> Result<Vec<usize>> {
        self.gate
            .levels
            .iter()
            .map(|&v| model.index_of(label(model, [self.gate.manifold, v])?))
            .collect()
    }

    pub fn target(&self, model: &Model, experiment: Experiment) -> Result<Target> {
        let dim = model.dim();
        match experiment {
            Experiment::Transfer => {
                let (a, b) = self.transfer_levels(model)?;
                Target::transfer(
                    StateVector::basis(dim, model.index_of(a)?),
                    &StateVector::basis(dim, model.index_of(b)?),
                )
            }
            Experiment::Gate => {
                let register = self.register(model)?;
                let n = register.len();
                let o = match self.gate.target {
                    GateName::Fourier => fourier_matrix(n),
                    GateName::Identity => nalgebra::DMatrix::identity(n, n),
                };
                let frame = match self.gate.frame {
                    FrameName::Interaction => GateFrame::Interaction,
                    FrameName::Lab => GateFrame::Lab,
                };
                Ok(Target::Gate(GateTarget::new(model, &register, &o, frame, self.grid.t_final)?))
            }
        }
    }

    pub fn functional(&self, model: &Model, experiment: Experiment) -> Result<FunctionalConfig> {
        let f = &self.functional;
        Ok(FunctionalConfig {
            lambda0: f.lambda0,
            lambda_b: self.lambda_b(),
            lambda_a: match f.lambda_a_shape {
                EnvelopeName::Gaussian => LambdaA::inverse_gaussian(f.lambda_a),
                EnvelopeName::Flat => LambdaA::constant(f.lambda_a),
            },
            direction: match f.direction {
                DirectionName::Minimize => Direction::Minimize,
                DirectionName::Maximize => Direction::Maximize,
            },
            constraint: match f.constraint {
                ConstraintName::Allowed => Constraint::Allowed,
                ConstraintName::Forbidden => Constraint::Forbidden,
            },
            target: self.target(model, experiment)?,
            reference: Reference::PreviousIterate,
        })
    }

    pub fn carrier(&self, model: &Model) -> Result<f64> {
        match self.guess.omega {
            Some(w) => Ok(w),
            None => transition_frequency(model, model::V0, model::V10P),
        }
    }

    pub fn problem<'a>(&self, model: &'a Model, experiment: Experiment) -> Result<Problem<'a>> {
        let grid = self.time_grid()?;
        Ok(Problem {
            model,
            config: self.functional(model, experiment)?,
            subspaces: self.subspaces(model)?,
            guess: guess_field(grid, self.guess.eps0, self.carrier(model)?),
        })
    }

    pub fn options(&self) -> Options {
        Options {
            stop: StopRules {
                max_iters: self.stop.max_iters,
                j_norm_target: self.stop.j_norm_target,
                field_change_floor: self.stop.field_change_floor,
            },
            scheme: match self.numerics.scheme {
                SchemeName::Split => Scheme::Split,
                SchemeName::Eigen => Scheme::Eigen,
            },
            source_rule: match self.numerics.source_rule {
                SourceRuleName::Interaction => SourceRule::Interaction,
                SourceRuleName::Midpoint => SourceRule::Midpoint,
            },
            disable_source: false,
            strict_signs: false,
        }
    }
}
