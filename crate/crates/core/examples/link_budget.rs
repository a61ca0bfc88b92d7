//! Mean received power, SNR and fading-averaged decode probability against
//! distance, with and without a HARQ retransmission.

use cv2x::channel::{attempt_sinr, harq_combine, linear_to_db, ChannelConfig, FadingModel};
use cv2x::{Bandwidth, ResourcePool};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cv2x::Result<()> {
    let cfg = ChannelConfig::default();
    let pool = ResourcePool::new(Bandwidth::Mhz10);
    let fading = FadingModel::new(&cfg)?;
    let noise = cfg.noise_mw(pool.prbs_per_slot());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 20_000;

    println!("distance_m  pathloss_db  snr_db  nakagami_m  p_single  p_harq");
    for d in [25.0, 50.0, 100.0, 200.0, 300.0, 400.0, 500.0, 600.0] {
        let mean = cfg.mean_rx_power(d);
        let (mut single, mut harq) = (0, 0);
        for _ in 0..trials {
            let mut draw = || attempt_sinr([mean * fading.sample(d, &mut rng), mean * fading.sample(d, &mut rng)], &[], noise, &cfg);
            let a = draw();
            let b = draw();
            single += harq_combine(&a, None, &cfg) as u32;
            harq += harq_combine(&a, Some(&b), &cfg) as u32;
        }
        println!(
            "{d:>10.0}  {:>11.1}  {:>6.1}  {:>10.2}  {:>8.4}  {:>6.4}",
            cfg.pathloss_db(d),
            linear_to_db(mean / noise),
            cfg.nakagami_m(d),
            single as f64 / trials as f64,
            harq as f64 / trials as f64
        );
    }
    Ok(())
}
