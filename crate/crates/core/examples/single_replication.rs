//! One replication on a short highway: PRR against distance and the IPG
//! CCDF at 200 m.
//!
//!     cargo run --release --example single_replication -- [density] [mhz] [oneshot] [harq on|off]

use cv2x::engine::{run_replication, ReplicationSeeds, ScenarioConfig, SimConfig};
use cv2x::scheduler::{CounterConfig, OneShotSetting, SchedulerConfig};
use cv2x::Bandwidth;

fn main() -> cv2x::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let density: f64 = args.first().map_or(Ok(125.0), |s| s.parse()).expect("density");
    let bandwidth = Bandwidth::from_mhz(args.get(1).map_or(Ok(10), |s| s.parse()).expect("bandwidth"))?;
    let oneshot: OneShotSetting = args.get(2).map_or("off", String::as_str).parse()?;
    let harq = args.get(3).is_none_or(|s| s == "on");

    let scenario = ScenarioConfig {
        highway_length_m: 1500.0,
        density_vue_per_km: density,
        sim_time_s: 40.0,
        warmup_s: 5.0,
    };
    let scheduler = SchedulerConfig {
        sps: CounterConfig::sps(5, 15, 0.8),
        one_shot: oneshot.counter(),
        harq,
    };
    let cfg = SimConfig::new(scenario, bandwidth, scheduler);
    let store = run_replication(&cfg, ReplicationSeeds::derive(7, 0, 0))?;

    println!("generation gaps (ms -> count): {:?}", store.generation_gaps());
    println!("distance_m  prr     tx");
    for (bin, stats) in store.bin_stats().iter().enumerate().step_by(3) {
        if stats.tx_count > 0 {
            println!("{:>10.0}  {:.4}  {}", cfg.bins.center(bin), store.prr(bin)?, stats.tx_count);
        }
    }
    let bin = cfg.bins.bin_of(200.0).expect("200 m is binned");
    let ccdf = store.ccdf(bin)?;
    let period = store.modal_generation_gap().unwrap_or(100) as f64;
    println!("IPG CCDF at 200 m ({} gaps)", ccdf.total());
    for k in 1..=10 {
        let t = k as f64 * period;
        println!("  P(IPG > {t:>5.0} ms) = {:.3e}", ccdf.fraction_above(t));
    }
    Ok(())
}
