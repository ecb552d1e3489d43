//! The built-in three-manifold model: anchors, a file round trip and the
//! Franck-Condon amplitudes around the pump and dump transitions.

use krotov_core::hilbert::LevelLabel;
use krotov_core::model::{build_default_model, check_anchors, load_model, save_model, V0, V10P, V6PP};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = build_default_model();
    for (i, man) in m.manifolds().iter().enumerate() {
        println!(
            "manifold {} {:<12} v = {:?}, E = {:.6} .. {:.6} a.u.",
            i + 1,
            man.name,
            man.v_range(),
            man.energies[0].re,
            man.energies[man.len() - 1].re
        );
    }
    for (name, got, want, ok) in check_anchors(&m)? {
        println!("{name:<24} {got:.6} (quoted {want}) {}", if ok { "ok" } else { "MISMATCH" });
    }

    let path = std::env::temp_dir().join("krotov_default_model.toml");
    save_model(&m, &path)?;
    let back = load_model(&path)?;
    println!("\nround trip through {}: identical = {}", path.display(), back == m);

    let scale = m.meta().get("dipole_scale").copied().unwrap_or(1.0);
    println!("\n|<v=0|v'>| for v' near 10");
    for vp in 8..=12 {
        let c = m.coupling(V0, LevelLabel::new(V10P.manifold, vp))?;
        println!("  v'={vp:<3} {:.4}", c.abs() / scale);
    }
    println!("|<v'=10|v''>| for v'' near 6");
    for vpp in 4..=8 {
        let c = m.coupling(V10P, LevelLabel::new(V6PP.manifold, vpp))?;
        println!("  v''={vpp:<2} {:.4}", c.abs() / scale);
    }
    Ok(())
}
