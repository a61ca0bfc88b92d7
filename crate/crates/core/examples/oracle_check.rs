//! Monte Carlo simulation of the bare reselection process against the
//! closed-form tail.

use std::time::Instant;

use cv2x::analytic::{oracle_tail, tail, InterfererMode, ReselectionParams, TailModelConfig};

fn main() -> cv2x::Result<()> {
    let cfg = TailModelConfig {
        sps: ReselectionParams::new(5, 15, 0.2)?,
        oneshot: Some(ReselectionParams::new(2, 6, 1.0)?),
        p_f: 0.5,
        interferer_mode: InterfererMode::Double,
        k_max: 60,
    };
    let start = Instant::now();
    let oracle = oracle_tail(&cfg, 1_000_000, 11);
    let elapsed = start.elapsed();
    let analytic = tail(&cfg);
    let mut worst: f64 = 0.0;
    for (k, (a, o)) in analytic.values().iter().zip(oracle.values()).enumerate() {
        worst = worst.max((a - o).abs());
        if k % 5 == 0 {
            println!("k={k:>2}  analytic {a:.5}  oracle {o:.5}");
        }
    }
    println!("max abs difference {worst:.5} (10^6 trials in {elapsed:.1?})");
    Ok(())
}
