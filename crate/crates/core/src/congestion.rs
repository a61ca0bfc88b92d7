//! Density-driven BSM inter-transmit time (ITT).
//!
//! Above 25 estimated neighbours within 100 m the ITT grows linearly,
//! saturating at 600 ms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource_grid::SUBFRAMES_PER_FRAME;

pub const BASE_ITT_MS: u32 = 100;
pub const MAX_ITT_MS: u32 = 600;
pub const NEIGHBOR_THRESHOLD: u32 = 25;

pub fn itt_from_density(neighbors: u32) -> u32 {
    let scaled = (BASE_ITT_MS as u64 * neighbors as u64) / NEIGHBOR_THRESHOLD as u64;
    scaled.clamp(BASE_ITT_MS as u64, MAX_ITT_MS as u64) as u32
}

/// Whole frames between transmissions for an ITT, rounded to the nearest
/// frame (halves up).
pub fn period_frames(itt_ms: u32) -> u32 {
    let frame = SUBFRAMES_PER_FRAME as u32;
    ((itt_ms + frame / 2) / frame).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CongestionConfig {
    pub enabled: bool,
    pub radius_m: f64,
    pub window_ms: u32,
    /// Count true neighbours instead of decoded senders.
    pub ground_truth: bool,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        CongestionConfig {
            enabled: true,
            radius_m: 100.0,
            window_ms: 1000,
            ground_truth: false,
        }
    }
}

impl CongestionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.0) || self.window_ms == 0 {
            return Err(Error::Config(
                "congestion.radius_m and congestion.window_ms must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One vehicle's view of its neighbourhood.
#[derive(Clone, Debug)]
pub struct CongestionState {
    /// Vehicle ids within the radius, ascending.
    neighbors: Vec<u32>,
    last_decode_ms: Vec<Option<u64>>,
    current_itt_ms: u32,
}

impl CongestionState {
    pub fn new(mut neighbors: Vec<u32>) -> Self {
        neighbors.sort_unstable();
        let n = neighbors.len();
        CongestionState {
            neighbors,
            last_decode_ms: vec![None; n],
            current_itt_ms: BASE_ITT_MS,
        }
    }

    pub fn neighbors(&self) -> &[u32] {
        &self.neighbors
    }

    pub fn current_itt_ms(&self) -> u32 {
        self.current_itt_ms
    }

    /// Record a decoded BSM from `sender`; ignored if not a neighbour.
    pub fn note_decode(&mut self, sender: u32, time_ms: u64) {
        if let Ok(i) = self.neighbors.binary_search(&sender) {
            self.last_decode_ms[i] = Some(time_ms);
        }
    }

    /// Distinct neighbours decoded within `(now - window, now]`.
    pub fn estimated_neighbors(&self, now_ms: u64, window_ms: u32) -> u32 {
        self.last_decode_ms
            .iter()
            .filter(|t| matches!(t, Some(t) if *t + window_ms as u64 > now_ms))
            .count() as u32
    }

    /// Refresh the ITT at a BSM generation instant.
    pub fn update(&mut self, now_ms: u64, cfg: &CongestionConfig) -> u32 {
        self.current_itt_ms = if !cfg.enabled {
            BASE_ITT_MS
        } else if cfg.ground_truth {
            itt_from_density(self.neighbors.len() as u32)
        } else {
            itt_from_density(self.estimated_neighbors(now_ms, cfg.window_ms))
        };
        self.current_itt_ms
    }
}
