//! Batch run driven by a configuration file, writing the same artifacts
//! as the `krotov run-s2s` / `run-gate` commands.
//!
//! ```text
//! cargo run --release --example config_run -- [config.toml] [out_dir] [gate]
//! ```

use std::path::PathBuf;

use krotov_core::cli::{run_optimization, Experiment, RunConfig};
use krotov_core::model::build_default_model;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let cfg_path = args
        .next()
        .map_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/quick.toml"), PathBuf::from);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("krotov_config_run"), PathBuf::from);
    let experiment = match args.next().as_deref() {
        Some("gate") => Experiment::Gate,
        _ => Experiment::Transfer,
    };

    let cfg = RunConfig::load(&cfg_path)?;
    let m = build_default_model();
    let outcome = run_optimization(experiment, &cfg, &m, None, &out)?;
    println!("{}", outcome.last());
    println!("stopped: {:?}", outcome.stop);
    for entry in std::fs::read_dir(&out)? {
        let e = entry?;
        println!("  {} ({} bytes)", e.path().display(), e.metadata()?.len());
    }
    Ok(())
}
