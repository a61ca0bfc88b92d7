//! Inter-transmit time chosen by congestion control as the neighbour count
//! grows, and the whole-frame period the engine schedules with it.

use cv2x::congestion::{itt_from_density, period_frames, CongestionConfig};

fn main() {
    let cfg = CongestionConfig::default();
    println!("radius {} m, window {} ms", cfg.radius_m, cfg.window_ms);
    println!("neighbours  itt_ms  period_ms");
    for n in [0, 10, 25, 40, 60, 80, 100, 125, 150, 200, 400] {
        let itt = itt_from_density(n);
        println!("{n:>10}  {itt:>6}  {:>9}", period_frames(itt) * 100);
    }
    // neighbours within the range on a dense highway
    for density in [125.0, 400.0, 800.0] {
        let n = (density * 2.0 * cfg.radius_m / 1000.0) as u32;
        println!("{density} VUE/km -> ~{n} neighbours -> {} ms", itt_from_density(n));
    }
}
