//! Time-frequency resource pool geometry.
//!
//! A frame is 100 subframes of 1 ms (one BSM period at the base 100 ms rate).
//! Each subframe carries `prbs_per_subframe / 10` VRBs, and a transmission
//! occupies two contiguous VRBs aligned on even VRB boundaries. A trailing odd
//! VRB is never used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subframes per frame. Also the BSM period at the uncongested 100 ms rate.
pub const SUBFRAMES_PER_FRAME: u16 = 100;
/// PRBs per VRB.
pub const VRB_SIZE_PRBS: u16 = 10;
/// VRBs per transmission slot.
pub const TX_SLOT_SIZE_VRBS: u16 = 2;
/// Leading PRBs of each transmission reserved for SCI.
pub const SCI_PRBS: u16 = 2;
/// Default HARQ selection window half-width, in subframes.
pub const HARQ_WINDOW_HALF_WIDTH: u16 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bandwidth {
    #[serde(rename = "10")]
    Mhz10,
    #[serde(rename = "20")]
    Mhz20,
}

impl Bandwidth {
    pub fn from_mhz(mhz: u32) -> Result<Self> {
        match mhz {
            10 => Ok(Bandwidth::Mhz10),
            20 => Ok(Bandwidth::Mhz20),
            other => Err(Error::Config(format!(
                "bandwidth_mhz must be 10 or 20, got {other}"
            ))),
        }
    }

    pub fn mhz(self) -> u32 {
        match self {
            Bandwidth::Mhz10 => 10,
            Bandwidth::Mhz20 => 20,
        }
    }

    pub fn prbs(self) -> u16 {
        match self {
            Bandwidth::Mhz10 => 50,
            Bandwidth::Mhz20 => 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ResourcePool {
    prbs_per_subframe: u16,
    harq_half_width: u16,
}

/// Coordinates of one transmission slot within the frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxSlotId {
    pub subframe: u16,
    pub pair_index: u16,
}

impl ResourcePool {
    pub fn new(bandwidth: Bandwidth) -> Self {
        ResourcePool {
            prbs_per_subframe: bandwidth.prbs(),
            harq_half_width: HARQ_WINDOW_HALF_WIDTH,
        }
    }

    /// Pool with an arbitrary PRB count; must be a whole number of VRBs.
    pub fn with_prbs(prbs_per_subframe: u16) -> Result<Self> {
        if prbs_per_subframe == 0 || prbs_per_subframe % VRB_SIZE_PRBS != 0 {
            return Err(Error::Config(format!(
                "prbs_per_subframe {prbs_per_subframe} is not a positive multiple of {VRB_SIZE_PRBS}"
            )));
        }
        Ok(ResourcePool {
            prbs_per_subframe,
            harq_half_width: HARQ_WINDOW_HALF_WIDTH,
        })
    }

    pub fn with_harq_half_width(mut self, half_width: u16) -> Self {
        self.harq_half_width = half_width.min(SUBFRAMES_PER_FRAME / 2);
        self
    }

    pub fn prbs_per_subframe(&self) -> u16 {
        self.prbs_per_subframe
    }

    pub fn vrbs_per_subframe(&self) -> u16 {
        self.prbs_per_subframe / VRB_SIZE_PRBS
    }

    pub fn slots_per_subframe(&self) -> u16 {
        self.vrbs_per_subframe() / TX_SLOT_SIZE_VRBS
    }

    pub fn harq_half_width(&self) -> u16 {
        self.harq_half_width
    }

    /// Number of transmission slots in one frame.
    pub fn slot_count(&self) -> usize {
        SUBFRAMES_PER_FRAME as usize * self.slots_per_subframe() as usize
    }

    pub fn slot_index(&self, slot: TxSlotId) -> usize {
        slot.subframe as usize * self.slots_per_subframe() as usize + slot.pair_index as usize
    }

    pub fn slot_at(&self, index: usize) -> TxSlotId {
        let per = self.slots_per_subframe() as usize;
        debug_assert!(index < self.slot_count());
        TxSlotId {
            subframe: (index / per) as u16,
            pair_index: (index % per) as u16,
        }
    }

    pub fn contains(&self, slot: TxSlotId) -> bool {
        slot.subframe < SUBFRAMES_PER_FRAME && slot.pair_index < self.slots_per_subframe()
    }

    pub fn slots(&self) -> impl Iterator<Item = TxSlotId> + '_ {
        (0..self.slot_count()).map(move |i| self.slot_at(i))
    }

    /// First PRB occupied by a slot's pair.
    pub fn first_prb(&self, pair_index: u16) -> u16 {
        pair_index * TX_SLOT_SIZE_VRBS * VRB_SIZE_PRBS
    }

    pub fn prbs_per_slot(&self) -> u16 {
        TX_SLOT_SIZE_VRBS * VRB_SIZE_PRBS
    }

    /// Whether `subframe` lies in the HARQ window around `anchor`.
    pub fn in_harq_window(&self, anchor: u16, subframe: u16) -> bool {
        subframe != anchor && circular_distance(anchor, subframe) <= self.harq_half_width
    }

    /// All slots eligible to carry the HARQ attempt for a transmission on
    /// `initial`: every pair in subframes within the circular half-width,
    /// excluding the initial subframe itself.
    pub fn harq_window(&self, initial: TxSlotId) -> Vec<TxSlotId> {
        let per = self.slots_per_subframe();
        let mut out = Vec::with_capacity(2 * self.harq_half_width as usize * per as usize);
        for subframe in 0..SUBFRAMES_PER_FRAME {
            if self.in_harq_window(initial.subframe, subframe) {
                out.extend((0..per).map(|pair_index| TxSlotId { subframe, pair_index }));
            }
        }
        out
    }
}

/// Distance between two subframes on the circular 100-subframe frame.
pub fn circular_distance(a: u16, b: u16) -> u16 {
    let n = SUBFRAMES_PER_FRAME;
    let d = (a % n).abs_diff(b % n);
    d.min(n - d)
}

pub fn slot_count(pool: &ResourcePool) -> usize {
    pool.slot_count()
}

pub fn harq_window(initial: TxSlotId, pool: &ResourcePool) -> Vec<TxSlotId> {
    pool.harq_window(initial)
}
