//! Drive one scheduler through many BSMs and compare the mean SPS
//! reselection interval with its closed form.

use cv2x::analytic::ReselectionParams;
use cv2x::scheduler::{build_candidate_list, CounterConfig, SchedulerConfig, SchedulerState, SensingReport};
use cv2x::{Bandwidth, ResourcePool};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cv2x::Result<()> {
    let pool = ResourcePool::new(Bandwidth::Mhz10);
    let candidates = build_candidate_list(&SensingReport::empty(&pool), &pool, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for (label, one_shot) in [("off", CounterConfig::off()), ("2-6", CounterConfig::one_shot(2, 6))] {
        let cfg = SchedulerConfig {
            sps: CounterConfig::sps(5, 15, 0.8),
            one_shot,
            harq: true,
        };
        let mut state = SchedulerState::cold_start(&cfg, &pool, &mut rng)?;
        let (mut sps, mut shots, mut restores) = (0u64, 0u64, 0u64);
        let events = 200_000;
        for _ in 0..events {
            let t = state.on_bsm_transmitted(&cfg, &pool, || candidates.clone(), &mut rng)?;
            sps += t.sps_reselected as u64;
            shots += t.one_shot as u64;
            restores += t.restored as u64;
        }
        let expected = ReselectionParams::from_counter(&cfg.sps).unwrap().expected_interval();
        println!(
            "one-shot {label}: SPS reselection every {:.2} BSMs (expected {expected:.2}), {shots} one-shots, {restores} restores",
            events as f64 / sps as f64
        );
    }
    Ok(())
}
