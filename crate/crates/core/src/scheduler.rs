//! Per-vehicle semi-persistent scheduling with interleaved one-shot
//! reselections and HARQ slot selection.
//!
//! Counters count BSM events: a regular transmission and its HARQ
//! retransmission together decrement each counter once.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource_grid::{ResourcePool, TxSlotId, SUBFRAMES_PER_FRAME};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterConfig {
    pub alpha: u32,
    pub beta: u32,
    /// Probability of keeping the current slot when the counter expires.
    /// One-shot counters always reselect, so this is 0 for them.
    pub keep_probability: f64,
    pub enabled: bool,
}

impl CounterConfig {
    pub fn sps(alpha: u32, beta: u32, keep_probability: f64) -> Self {
        CounterConfig {
            alpha,
            beta,
            keep_probability,
            enabled: true,
        }
    }

    pub fn one_shot(alpha: u32, beta: u32) -> Self {
        CounterConfig {
            alpha,
            beta,
            keep_probability: 0.0,
            enabled: true,
        }
    }

    pub fn off() -> Self {
        CounterConfig {
            alpha: 1,
            beta: 1,
            keep_probability: 0.0,
            enabled: false,
        }
    }

    /// Probability that an expiry actually moves the slot.
    pub fn reselection_probability(&self) -> f64 {
        1.0 - self.keep_probability
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if self.alpha < 1 || self.beta < self.alpha {
            return Err(Error::Config(format!(
                "counter range [{}, {}] must satisfy 1 <= alpha <= beta",
                self.alpha, self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.keep_probability) {
            return Err(Error::Config(format!(
                "keep_probability {} outside [0, 1]",
                self.keep_probability
            )));
        }
        Ok(())
    }

    /// Uniform draw from `[alpha, beta]`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32> {
        if !self.enabled {
            return Err(Error::CounterDisabled);
        }
        Ok(rng.random_range(self.alpha..=self.beta))
    }
}

pub fn draw_counter<R: Rng + ?Sized>(cfg: &CounterConfig, rng: &mut R) -> Result<u32> {
    cfg.draw(rng)
}

/// Mean number of BSM events between slot changes triggered by this counter.
pub fn expected_reselection_interval(cfg: &CounterConfig) -> Result<f64> {
    if !cfg.enabled {
        return Err(Error::CounterDisabled);
    }
    let p = cfg.reselection_probability();
    if p <= 0.0 {
        return Err(Error::InfiniteInterval);
    }
    let (lo, hi) = (cfg.alpha as f64, cfg.beta as f64);
    Ok((lo + (hi - lo) / 2.0) / p)
}

/// One-shot counter setting as written in manifests: `off` or `lo-hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OneShotSetting {
    Off,
    Range(u32, u32),
}

impl OneShotSetting {
    pub fn counter(self) -> CounterConfig {
        match self {
            OneShotSetting::Off => CounterConfig::off(),
            OneShotSetting::Range(a, b) => CounterConfig::one_shot(a, b),
        }
    }
}

impl fmt::Display for OneShotSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OneShotSetting::Off => f.write_str("off"),
            OneShotSetting::Range(a, b) => write!(f, "{a}-{b}"),
        }
    }
}

impl FromStr for OneShotSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("off") {
            return Ok(OneShotSetting::Off);
        }
        let bad = || Error::Config(format!("one-shot setting {s:?} is neither \"off\" nor \"lo-hi\""));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        let setting = OneShotSetting::Range(a, b);
        setting.counter().validate()?;
        Ok(setting)
    }
}

impl Serialize for OneShotSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OneShotSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    pub window_ms: u32,
    /// Fraction of the frame's slots kept as candidates.
    pub candidate_fraction: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig {
            window_ms: 1000,
            candidate_fraction: 0.2,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_ms == 0 || self.window_ms % SUBFRAMES_PER_FRAME as u32 != 0 {
            return Err(Error::Config(format!(
                "sensing window_ms {} must be a positive multiple of {SUBFRAMES_PER_FRAME}",
                self.window_ms
            )));
        }
        if !(self.candidate_fraction > 0.0 && self.candidate_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "candidate_fraction {} outside (0, 1]",
                self.candidate_fraction
            )));
        }
        Ok(())
    }
}

/// What a vehicle measured over its sensing window.
#[derive(Clone, Debug)]
pub struct SensingReport {
    /// Summed received energy per slot index.
    pub energy: Vec<f64>,
    /// Subframes the vehicle could not sense because it was transmitting.
    pub unsensed: [bool; SUBFRAMES_PER_FRAME as usize],
    /// False before the first full observation (cold start).
    pub has_history: bool,
}

impl SensingReport {
    pub fn empty(pool: &ResourcePool) -> Self {
        SensingReport {
            energy: vec![0.0; pool.slot_count()],
            unsensed: [false; SUBFRAMES_PER_FRAME as usize],
            has_history: false,
        }
    }

    pub fn new(pool: &ResourcePool) -> Self {
        SensingReport {
            has_history: true,
            ..Self::empty(pool)
        }
    }
}

/// Sensed slots ranked by ascending energy, ties by slot index. The first
/// `size` entries form the candidate list; the rest are kept so HARQ
/// selection can fall back to the quietest sensed slot in its window.
#[derive(Clone, Debug)]
pub struct CandidateList {
    ranked: Vec<TxSlotId>,
    size: usize,
}

impl CandidateList {
    pub fn slots(&self) -> &[TxSlotId] {
        &self.ranked[..self.size]
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn contains(&self, slot: TxSlotId) -> bool {
        self.slots().contains(&slot)
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<TxSlotId> {
        self.slots().choose(rng).copied()
    }

    /// Uniform pick among candidates in the HARQ window of `active`;
    /// otherwise the lowest-energy sensed slot in that window; otherwise any
    /// window slot.
    pub fn choose_harq<R: Rng + ?Sized>(
        &self,
        active: TxSlotId,
        pool: &ResourcePool,
        rng: &mut R,
    ) -> Option<TxSlotId> {
        let in_window: Vec<TxSlotId> = self
            .slots()
            .iter()
            .copied()
            .filter(|s| pool.in_harq_window(active.subframe, s.subframe))
            .collect();
        if let Some(slot) = in_window.choose(rng) {
            return Some(*slot);
        }
        if let Some(slot) = self.ranked[self.size..]
            .iter()
            .find(|s| pool.in_harq_window(active.subframe, s.subframe))
        {
            return Some(*slot);
        }
        pool.harq_window(active).choose(rng).copied()
    }
}

pub fn build_candidate_list(report: &SensingReport, pool: &ResourcePool, fraction: f64) -> CandidateList {
    let total = pool.slot_count();
    if !report.has_history {
        return CandidateList {
            ranked: pool.slots().collect(),
            size: total,
        };
    }
    let mut ranked: Vec<(f64, usize)> = (0..total)
        .filter(|&i| !report.unsensed[pool.slot_at(i).subframe as usize])
        .map(|i| (report.energy[i], i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let size = ((fraction * total as f64).ceil() as usize).min(ranked.len());
    CandidateList {
        ranked: ranked.into_iter().map(|(_, i)| pool.slot_at(i)).collect(),
        size,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub sps: CounterConfig,
    pub one_shot: CounterConfig,
    pub harq: bool,
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sps.enabled {
            return Err(Error::Config("the SPS counter cannot be disabled".into()));
        }
        self.sps.validate()?;
        self.one_shot.validate()
    }
}

/// What a call to [`SchedulerState::on_bsm_transmitted`] changed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transition {
    pub restored: bool,
    pub one_shot: bool,
    pub sps_expired: bool,
    pub sps_reselected: bool,
}

impl Transition {
    pub fn changed_slot(&self) -> bool {
        self.restored || self.one_shot || self.sps_reselected
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    pub sps_counter: u32,
    pub one_shot_counter: Option<u32>,
    /// Slot used by the next transmission (the one-shot slot during an excursion).
    pub current_slot: TxSlotId,
    /// Present iff HARQ is enabled.
    pub harq_slot: Option<TxSlotId>,
    /// Persistent slot to return to; present only during a one-shot excursion.
    pub saved_slot: Option<TxSlotId>,
}

impl SchedulerState {
    /// Uniform initial slot, fresh counters.
    pub fn cold_start<R: Rng + ?Sized>(cfg: &SchedulerConfig, pool: &ResourcePool, rng: &mut R) -> Result<Self> {
        if pool.slot_count() == 0 {
            return Err(Error::Config("resource pool has no transmission slots".into()));
        }
        let current_slot = pool.slot_at(rng.random_range(0..pool.slot_count()));
        let harq_slot = if cfg.harq {
            Some(
                *pool
                    .harq_window(current_slot)
                    .choose(rng)
                    .ok_or_else(|| Error::Config("HARQ enabled with an empty HARQ window".into()))?,
            )
        } else {
            None
        };
        Ok(SchedulerState {
            sps_counter: cfg.sps.draw(rng)?,
            one_shot_counter: if cfg.one_shot.enabled {
                Some(cfg.one_shot.draw(rng)?)
            } else {
                None
            },
            current_slot,
            harq_slot,
            saved_slot: None,
        })
    }

    pub fn in_one_shot(&self) -> bool {
        self.saved_slot.is_some()
    }

    /// The slot a vehicle returns to after any excursion.
    pub fn persistent_slot(&self) -> TxSlotId {
        self.saved_slot.unwrap_or(self.current_slot)
    }

    /// Advance the state after one BSM event completes.
    ///
    /// Order: restore a finished one-shot excursion, decrement counters, then
    /// handle one-shot expiry before SPS expiry. An SPS reselection during an
    /// excursion replaces the saved slot. Any slot change redraws the HARQ
    /// slot. `candidates` is invoked at most once, only if a slot is needed.
    pub fn on_bsm_transmitted<R, F>(
        &mut self,
        cfg: &SchedulerConfig,
        pool: &ResourcePool,
        mut candidates: F,
        rng: &mut R,
    ) -> Result<Transition>
    where
        R: Rng + ?Sized,
        F: FnMut() -> CandidateList,
    {
        let mut list: Option<CandidateList> = None;
        let mut t = Transition::default();

        if let Some(saved) = self.saved_slot.take() {
            self.current_slot = saved;
            t.restored = true;
        }

        self.sps_counter = self.sps_counter.saturating_sub(1);
        if let Some(c) = self.one_shot_counter.as_mut() {
            *c = c.saturating_sub(1);
        }

        if self.one_shot_counter == Some(0) {
            self.one_shot_counter = Some(cfg.one_shot.draw(rng)?);
            let l = list.get_or_insert_with(&mut candidates);
            if let Some(slot) = l.choose(rng) {
                self.saved_slot = Some(self.current_slot);
                self.current_slot = slot;
                t.one_shot = true;
            }
        }

        if self.sps_counter == 0 {
            t.sps_expired = true;
            self.sps_counter = cfg.sps.draw(rng)?;
            if rng.random_bool(cfg.sps.reselection_probability()) {
                let l = list.get_or_insert_with(&mut candidates);
                if let Some(slot) = l.choose(rng) {
                    match self.saved_slot.as_mut() {
                        Some(saved) => *saved = slot,
                        None => self.current_slot = slot,
                    }
                    t.sps_reselected = true;
                }
            }
        }

        if cfg.harq && t.changed_slot() {
            let l = list.get_or_insert_with(&mut candidates);
            self.harq_slot = l.choose_harq(self.current_slot, pool, rng);
        }
        Ok(t)
    }
}
