//! Batch front end: optimizations, spectra, decay scans and model files.
//!
//! Every command writes into its own output directory and finishes with a
//! `manifest.toml` listing the files it produced.

pub mod config;
pub mod decay;
pub mod io;
pub mod spectrum;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

pub use config::{Experiment, RunConfig};

use crate::error::{Error, Result};
use crate::hilbert::Model;
use crate::krotov::{optimize, Outcome};
use crate::model::{self, build_default_model, check_anchors, load_model, model_to_string, FEMTOSECOND};
use io::{Manifest, OutputDir};

#[derive(Debug, Parser)]
#[command(name = "krotov", version, about = "Krotov optimal control with state-dependent constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a state-to-state transfer.
    RunS2s(Common),
    /// Optimize a unitary gate on a register of levels.
    RunGate(Common),
    /// One- and two-photon spectra of a field file.
    Spectrum(SpectrumArgs),
    /// Final-time objective of a fixed field against upper-manifold lifetime.
    DecayScan(DecayArgs),
    /// Generate or check a model file.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML); defaults are used for missing keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Model file; the built-in default model if omitted.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Iteration limit; 0 evaluates the guess only.
    #[arg(long, value_name = "N")]
    pub iters: Option<usize>,
    #[arg(long = "lambda-b-T", value_name = "X", allow_hyphen_values = true)]
    pub lambda_b_t: Option<f64>,
    /// Node stride of population traces.
    #[arg(long, value_name = "K")]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    /// Field file with `t eps` columns.
    #[arg(long, value_name = "PATH")]
    pub field: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DecayArgs {
    #[arg(long, value_name = "PATH")]
    pub field: PathBuf,
    /// Evaluate the gate target of the configuration instead of the transfer.
    #[arg(long)]
    pub gate: bool,
    /// Comma-separated lifetimes in fs; `inf` adds the loss-free point.
    /// Defaults to 25 values log-spaced from 10 fs to 100 ps.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub lifetimes_fs: Option<Vec<f64>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum ModelAction {
    /// Write the default model file.
    Gen {
        /// Destination; stdout if omitted.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Check the quoted transition frequencies and Franck-Condon factors.
    Check {
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
}

pub fn resolve_model(path: Option<&Path>) -> Result<Model> {
    match path {
        Some(p) => load_model(p),
        None => Ok(build_default_model()),
    }
}

impl Common {
    /// Loads the configuration and applies command-line overrides.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(n) = self.iters {
            cfg.stop.max_iters = n;
        }
        if let Some(x) = self.lambda_b_t {
            cfg.functional.lambda_b_t = x;
        }
        if let Some(k) = self.stride {
            cfg.output.stride = k;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
struct RunSnapshot<'a> {
    model_file: Option<String>,
    #[serde(flatten)]
    run: &'a RunConfig,
}

fn path_string(p: Option<&Path>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

/// Runs one optimization and writes `iterations.csv`, `field_final.dat`,
/// `populations.csv` and `manifest.toml` into `out`.
pub fn run_optimization(
    experiment: Experiment,
    cfg: &RunConfig,
    model: &Model,
    model_path: Option<&Path>,
    out: &Path,
) -> Result<Outcome> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    cfg.guess.omega = Some(cfg.carrier(model)?);
    let problem = cfg.problem(model, experiment)?;
    let outcome = optimize(&problem, &cfg.options())?;
    let last = outcome.last();
    info!(
        "stopped after {} iterations ({:?}): J = {:.10e}, final objective {:.6}",
        last.iter, outcome.stop, last.j, last.yield_final
    );

    let mut dir = OutputDir::create(out)?;
    dir.write("iterations.csv", &io::iterations_to_string(&outcome.records))?;
    dir.write("field_final.dat", &io::field_to_string(&outcome.field))?;
    let pops = io::populations_to_string(model, &outcome.trajectory, 0, &problem.subspaces, cfg.output.stride)?;
    dir.write("populations.csv", &pops)?;

    let command = match experiment {
        Experiment::Transfer => "run-s2s",
        Experiment::Gate => "run-gate",
    };
    let snapshot = RunSnapshot {
        model_file: path_string(model_path),
        run: &cfg,
    };
    write_manifest(&mut dir, command, model, snapshot, start)?;
    Ok(outcome)
}

fn write_manifest<C: Serialize>(dir: &mut OutputDir, command: &str, model: &Model, config: C, start: Instant) -> Result<()> {
    let mut manifest = Manifest::new(command, model, config);
    manifest.outputs = dir.written().to_vec();
    manifest.outputs.push("manifest.toml".into());
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    dir.write("manifest.toml", &manifest.to_toml()?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SpectrumSnapshot {
    field_file: String,
    model_file: Option<String>,
    normalization: &'static str,
}

pub fn run_spectrum(args: &SpectrumArgs) -> Result<spectrum::Spectrum> {
    let start = Instant::now();
    let model = resolve_model(args.model.as_deref())?;
    let field = io::read_field(&args.field)?;
    let spec = spectrum::spectrum(&field)?;
    let mut dir = OutputDir::create(&args.out)?;
    dir.write("spectrum.csv", &spec.to_csv())?;
    dir.write("transitions.csv", &spectrum::transitions_csv(&model))?;
    let snapshot = SpectrumSnapshot {
        field_file: args.field.display().to_string(),
        model_file: path_string(args.model.as_deref()),
        normalization: "F(w) = dt sum_i eps(t_i) exp(-i w t_i), left-node samples",
    };
    write_manifest(&mut dir, "spectrum", &model, snapshot, start)?;
    Ok(spec)
}

#[derive(Debug, Serialize)]
struct DecaySnapshot<'a> {
    field_file: String,
    model_file: Option<String>,
    mode: &'static str,
    decaying_manifold: usize,
    lifetimes_au: Vec<f64>,
    #[serde(flatten)]
    run: &'a RunConfig,
}

pub fn run_decay_scan(args: &DecayArgs) -> Result<Vec<decay::ScanRow>> {
    let start = Instant::now();
    let mut cfg = args.common.run_config()?;
    let model = resolve_model(args.common.model.as_deref())?;
    let field = io::read_field(&args.field)?;
    let experiment = if args.gate { Experiment::Gate } else { Experiment::Transfer };
    cfg.grid.t_final = field.grid().t_final();
    cfg.grid.n_steps = field.grid().n_steps();
    let target = cfg.target(&model, experiment)?;
    let lifetimes = match &args.lifetimes_fs {
        Some(fs) => fs.iter().map(|x| x * FEMTOSECOND).collect(),
        None => decay::default_lifetimes(),
    };
    let rows = decay::scan(
        &model,
        &field,
        &target,
        model::UPPER_MANIFOLD,
        &lifetimes,
        cfg.options().scheme,
    )?;
    let mut dir = OutputDir::create(&args.common.out)?;
    dir.write("decay_scan.csv", &decay::scan_to_csv(&rows))?;
    let snapshot = DecaySnapshot {
        field_file: args.field.display().to_string(),
        model_file: path_string(args.common.model.as_deref()),
        mode: if args.gate { "gate" } else { "transfer" },
        decaying_manifold: model::UPPER_MANIFOLD + 1,
        lifetimes_au: lifetimes.iter().copied().filter(|l| l.is_finite()).collect(),
        run: &cfg,
    };
    write_manifest(&mut dir, "decay-scan", &model, snapshot, start)?;
    Ok(rows)
}

/// Prints the anchor table and returns whether every anchor matched.
pub fn run_model_check(path: Option<&Path>) -> Result<bool> {
    let model = resolve_model(path)?;
    let mut ok = true;
    for (name, got, want, pass) in check_anchors(&model)? {
        println!("{:<24} {got:.6} (want {want}) {}", name, if pass { "ok" } else { "MISMATCH" });
        ok &= pass;
    }
    Ok(ok)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::RunS2s(c) => run_common(Experiment::Transfer, &c),
        Command::RunGate(c) => run_common(Experiment::Gate, &c),
        Command::Spectrum(a) => {
            let s = run_spectrum(&a)?;
            println!(
                "peak at {:.6} a.u. (bin {:.2e}); Parseval relative error {:.1e}",
                s.one_photon_peak(0.0),
                s.bin_width(),
                s.parseval_error()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::DecayScan(a) => {
            for r in run_decay_scan(&a)? {
                println!(
                    "tau_L = {:>10.3} fs  objective = {:.6}  P_s = {:.6}",
                    r.lifetime / FEMTOSECOND,
                    r.objective,
                    r.survival
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Model { action: ModelAction::Gen { out } } => {
            let text = model_to_string(&build_default_model());
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Model { action: ModelAction::Check { model } } => Ok(if run_model_check(model.as_deref())? {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }),
    }
}

fn run_common(experiment: Experiment, c: &Common) -> Result<ExitCode> {
    let cfg = c.run_config()?;
    let model = resolve_model(c.model.as_deref())?;
    let outcome = run_optimization(experiment, &cfg, &model, c.model.as_deref(), &c.out)?;
    let last = outcome.last();
    println!("{last}");
    println!("wrote {}", c.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Entry point of the `krotov` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
