//! The full pipeline on the smoke manifest: simulate, then fit the
//! simulated IPG tail and compare its slope with the model.

use std::path::Path;

use cv2x::runner::{self, Overrides, RunManifest};

fn main() -> cv2x::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/smoke.toml");
    let run = RunManifest::load(&config)?.resolve(&Overrides::default())?;
    let out = std::env::temp_dir().join("cv2x-slope-validation");
    let sim = runner::simulate(&run, &out)?;
    for p in &sim.metadata.points {
        println!(
            "{} VUE/km {} MHz one-shot {} HARQ {}: BSM period {} ms",
            p.density, p.bandwidth_mhz, p.oneshot_cfg, p.harq, p.bsm_period_ms
        );
    }
    for r in runner::validate(&run, &out)? {
        println!(
            "one-shot {} {:<6}: analytic {:.4} simulated {:.4} gap {:.3} (P_f {:.3}, {} points)",
            r.oneshot_cfg,
            r.interferer_mode.as_str(),
            r.slope_analytic,
            r.slope_sim,
            r.relative_gap,
            r.p_f,
            r.fit_points
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}
