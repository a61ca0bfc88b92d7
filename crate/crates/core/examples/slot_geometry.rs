//! Resource pool layout and the HARQ window at both bandwidths.

use cv2x::resource_grid::harq_window;
use cv2x::{Bandwidth, ResourcePool, TxSlotId};

fn main() {
    for bw in [Bandwidth::Mhz10, Bandwidth::Mhz20] {
        let pool = ResourcePool::new(bw);
        println!(
            "{} MHz: {} PRBs/subframe, {} VRBs, {} tx slots/subframe, {} slots per 100 ms",
            bw.mhz(),
            pool.prbs_per_subframe(),
            pool.vrbs_per_subframe(),
            pool.slots_per_subframe(),
            pool.slot_count()
        );
        for pair in 0..pool.slots_per_subframe() {
            println!("  pair {pair}: PRBs {}..{}", pool.first_prb(pair), pool.first_prb(pair) + pool.prbs_per_slot());
        }
        // a slot near the frame edge shows the wrap-around
        let anchor = TxSlotId { subframe: 95, pair_index: 0 };
        let window = harq_window(anchor, &pool);
        let mut subframes: Vec<u16> = window.iter().map(|s| s.subframe).collect();
        subframes.dedup();
        println!("  HARQ candidates around subframe 95: {} slots in subframes {:?}", window.len(), subframes);
    }
}
