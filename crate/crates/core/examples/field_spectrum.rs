//! One- and two-photon spectra of a field, with the closest model
//! transitions. Without an argument the guess pulse is analysed.
//!
//! ```text
//! cargo run --release --example field_spectrum -- [field.dat]
//! ```

use krotov_core::cli::io::read_field;
use krotov_core::cli::spectrum::spectrum;
use krotov_core::hilbert::LevelLabel;
use krotov_core::model::{self, build_default_model, guess_field, transition_frequency};
use krotov_core::propagate::TimeGrid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = build_default_model();
    let field = match std::env::args().nth(1) {
        Some(path) => read_field(path.as_ref())?,
        None => {
            let grid = TimeGrid::new(model::DEFAULT_T, 1 << 15)?;
            guess_field(grid, model::DEFAULT_EPS0, transition_frequency(&m, model::V0, model::V10P)?)
        }
    };
    let s = spectrum(&field)?;
    println!("bin width {:.3e} a.u., Parseval relative error {:.1e}", s.bin_width(), s.parseval_error());

    let peak = s.one_photon_peak(0.0);
    println!("one-photon peak at {peak:.6} a.u.");
    let mut lines: Vec<(f64, String)> = Vec::new();
    for v in 0..4 {
        for vp in 0..=20 {
            let (a, b) = (LevelLabel::new(0, v), LevelLabel::new(1, vp));
            if let Ok(w) = transition_frequency(&m, a, b) {
                lines.push((w, format!("v={v} -> v'={vp}")));
            }
        }
    }
    lines.sort_by(|x, y| (x.0 - peak).abs().total_cmp(&(y.0 - peak).abs()));
    for (w, name) in lines.iter().take(3) {
        println!("  nearby {name:<14} {w:.6} a.u.");
    }

    let raman = transition_frequency(&m, model::V0, model::V1)?;
    let two = s.two_photon_peak(0.5 * raman);
    println!("two-photon peak above DC at {two:.6} a.u.; v=0 -> v=1 spacing {raman:.6} a.u.");
    Ok(())
}
