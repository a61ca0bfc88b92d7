//! Frame-synchronous Monte Carlo driver for one replication.
//!
//! Vehicles are a static Poisson drop on a single-lane highway, sorted by
//! position so a vehicle's id is its rank. Each 100 ms frame, vehicles whose
//! BSM is due schedule their attempts into the frame's subframes; every
//! subframe then resolves all attempts against each other. Both attempts of
//! a BSM fall inside its frame, so HARQ combining and the scheduler update
//! happen at the later of the two.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::channel::{attempt_sinr, harq_combine, AttemptReception, ChannelConfig, FadingModel, InbandEmission, Interference};
use crate::congestion::{period_frames, CongestionConfig, CongestionState};
use crate::error::{Error, Result};
use crate::metrics::{DistanceBins, MetricStore};
use crate::resource_grid::{Bandwidth, ResourcePool, TxSlotId, SUBFRAMES_PER_FRAME};
use crate::scheduler::{build_candidate_list, CandidateList, SchedulerConfig, SchedulerState, SensingConfig, SensingReport};

const FRAME_MS: u64 = SUBFRAMES_PER_FRAME as u64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub highway_length_m: f64,
    pub density_vue_per_km: f64,
    pub sim_time_s: f64,
    pub warmup_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            highway_length_m: 5000.0,
            density_vue_per_km: 125.0,
            sim_time_s: 500.0,
            warmup_s: 10.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.highway_length_m > 0.0) {
            return Err(Error::Config("scenario.highway_length_m must be positive".into()));
        }
        if !(self.density_vue_per_km > 0.0) {
            return Err(Error::Config("scenario.density_vue_per_km must be positive".into()));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s < self.sim_time_s) {
            return Err(Error::Config(format!(
                "scenario.warmup_s ({}) must be below scenario.sim_time_s ({})",
                self.warmup_s, self.sim_time_s
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> u64 {
        (self.sim_time_s * 1000.0 / FRAME_MS as f64).round() as u64
    }

    pub fn warmup_ms(&self) -> u64 {
        (self.warmup_s * 1000.0).round() as u64
    }

    /// Statistics come from transmitters in `[lo, hi)`.
    pub fn stat_region(&self) -> (f64, f64) {
        (self.highway_length_m / 3.0, 2.0 * self.highway_length_m / 3.0)
    }
}

/// Everything one replication needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub bandwidth: Bandwidth,
    pub channel: ChannelConfig,
    pub scheduler: SchedulerConfig,
    pub sensing: SensingConfig,
    pub congestion: CongestionConfig,
    pub bins: DistanceBins,
}

impl SimConfig {
    pub fn new(scenario: ScenarioConfig, bandwidth: Bandwidth, scheduler: SchedulerConfig) -> Self {
        SimConfig {
            scenario,
            bandwidth,
            channel: ChannelConfig::default(),
            scheduler,
            sensing: SensingConfig::default(),
            congestion: CongestionConfig::default(),
            bins: DistanceBins::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.channel.validate()?;
        self.scheduler.validate()?;
        self.sensing.validate()?;
        self.congestion.validate()?;
        if !(self.bins.width_m > 0.0) || self.bins.count == 0 {
            return Err(Error::Config("distance bins must have positive width and count".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptKind {
    Regular,
    Harq,
    OneShot,
    OneShotHarq,
}

impl AttemptKind {
    pub fn is_harq(self) -> bool {
        matches!(self, AttemptKind::Harq | AttemptKind::OneShotHarq)
    }
}

/// One attempt as seen by one receiver. `decoded` is set on the BSM's last
/// attempt and reflects the combined decision over all attempts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub bsm: u64,
    pub time_ms: u64,
    pub tx_id: u32,
    pub rx_id: u32,
    pub slot: TxSlotId,
    pub attempt: AttemptKind,
    pub receivable: bool,
    pub decoded: bool,
    pub tx_rx_distance_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TraceEvent {
    Generated {
        bsm: u64,
        time_ms: u64,
        tx: u32,
        itt_ms: u32,
    },
    Transmission {
        bsm: u64,
        time_ms: u64,
        tx: u32,
        slot: TxSlotId,
        attempt: AttemptKind,
    },
    Reception(SimEvent),
}

/// A placed vehicle population.
#[derive(Clone, Debug, PartialEq)]
pub struct Drop {
    /// Ascending positions along the highway, metres.
    pub positions: Vec<f64>,
}

impl Drop {
    /// Poisson number of vehicles, uniform positions.
    pub fn poisson<R: Rng + ?Sized>(scenario: &ScenarioConfig, rng: &mut R) -> Result<Self> {
        let mean = scenario.density_vue_per_km * scenario.highway_length_m / 1000.0;
        let count = Poisson::new(mean)
            .map_err(|e| Error::Config(format!("vehicle count distribution: {e}")))?
            .sample(rng) as usize;
        let mut positions: Vec<f64> = (0..count)
            .map(|_| rng.random::<f64>() * scenario.highway_length_m)
            .collect();
        positions.sort_by(f64::total_cmp);
        Ok(Drop { positions })
    }

    pub fn from_positions(mut positions: Vec<f64>) -> Self {
        positions.sort_by(f64::total_cmp);
        Drop { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Ids within `radius` of vehicle `i` (including `i`), as `[lo, hi)`.
    fn range_around(&self, i: usize, radius: f64) -> (u32, u32) {
        let x = self.positions[i];
        let lo = self.positions.partition_point(|&p| p < x - radius);
        let hi = self.positions.partition_point(|&p| p <= x + radius);
        (lo as u32, hi as u32)
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        (self.positions[a] - self.positions[b]).abs()
    }
}

/// Mean received power between every pair, zero beyond the cutoff.
struct GainMatrix {
    n: usize,
    gain: Vec<f32>,
}

impl GainMatrix {
    fn new(drop: &Drop, cfg: &ChannelConfig) -> Self {
        let n = drop.len();
        let mut gain = vec![0f32; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let d = drop.distance(a, b);
                if d > cfg.max_range_m {
                    break;
                }
                let g = cfg.mean_rx_power(d.max(1.0)) as f32;
                gain[a * n + b] = g;
                gain[b * n + a] = g;
            }
        }
        GainMatrix { n, gain }
    }

    #[inline]
    fn get(&self, a: usize, b: usize) -> f64 {
        self.gain[a * self.n + b] as f64
    }
}

struct Vehicle {
    sched: SchedulerState,
    congestion: CongestionState,
    next_due_frame: u64,
    last_generation_frame: Option<u64>,
    measured_region: bool,
    /// Receivers evaluated for statistics (and congestion).
    far: (u32, u32),
    /// Receivers evaluated only for the congestion estimate.
    near: (u32, u32),
}

#[derive(Clone, Copy)]
struct Attempt {
    subframe: u16,
    slot: TxSlotId,
    kind: AttemptKind,
}

struct Bsm {
    id: u64,
    time_ms: u64,
    measured: bool,
    range: (u32, u32),
    attempts: [Option<Attempt>; 2],
    first: Vec<AttemptReception>,
}

impl Bsm {
    fn attempt_count(&self) -> usize {
        self.attempts.iter().flatten().count()
    }
}

#[derive(Clone, Copy)]
struct Scheduled {
    tx: u32,
    /// 0 for the earlier attempt of the BSM, 1 for the later one.
    order: u8,
}

/// Transmissions within the sensing window, oldest first.
struct SensingLog {
    entries: VecDeque<(u64, u32, TxSlotId)>,
}

impl SensingLog {
    fn trim(&mut self, now_ms: u64, window_ms: u32) {
        while let Some(&(t, _, _)) = self.entries.front() {
            if t + window_ms as u64 <= now_ms {
                self.entries.pop_front();
            } else {
                break;
            }
        }
    }

    fn report(&self, v: usize, gains: &GainMatrix, pool: &ResourcePool) -> SensingReport {
        let mut report = SensingReport::new(pool);
        for &(_, tx, slot) in &self.entries {
            if tx as usize == v {
                report.unsensed[slot.subframe as usize] = true;
            } else {
                report.energy[pool.slot_index(slot)] += gains.get(tx as usize, v);
            }
        }
        report
    }
}

/// Seeds for one replication. Placement is shared by configurations that
/// should be compared on the same drop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplicationSeeds {
    pub placement: u64,
    pub dynamics: u64,
}

impl ReplicationSeeds {
    /// Placement depends on `(master, replication)`; dynamics also on the
    /// grid point.
    pub fn derive(master: u64, point: u32, replication: u32) -> Self {
        ReplicationSeeds {
            placement: master ^ 0x5eed_d20b_0000_0000 ^ replication as u64,
            dynamics: master.rotate_left(17) ^ ((point as u64) << 32 | replication as u64),
        }
    }

    fn rngs(&self) -> (ChaCha8Rng, ChaCha8Rng) {
        let mut placement = ChaCha8Rng::seed_from_u64(self.placement);
        placement.set_stream(1);
        let mut dynamics = ChaCha8Rng::seed_from_u64(self.dynamics);
        dynamics.set_stream(2);
        (placement, dynamics)
    }
}

pub fn run_replication(cfg: &SimConfig, seeds: ReplicationSeeds) -> Result<MetricStore> {
    run_replication_traced(cfg, seeds, None)
}

pub fn run_replication_traced(
    cfg: &SimConfig,
    seeds: ReplicationSeeds,
    trace: Option<&mut dyn FnMut(TraceEvent)>,
) -> Result<MetricStore> {
    cfg.validate()?;
    let (mut placement_rng, mut rng) = seeds.rngs();
    let drop = Drop::poisson(&cfg.scenario, &mut placement_rng)?;
    simulate_drop(cfg, &drop, &mut rng, trace)
}

/// Run the dynamics over a given drop.
pub fn simulate_drop(
    cfg: &SimConfig,
    drop: &Drop,
    rng: &mut ChaCha8Rng,
    mut trace: Option<&mut dyn FnMut(TraceEvent)>,
) -> Result<MetricStore> {
    cfg.validate()?;
    let pool = ResourcePool::new(cfg.bandwidth);
    let fading = FadingModel::new(&cfg.channel)?;
    let inband = InbandEmission::new(&cfg.channel.inband_emission, &pool);
    let noise = cfg.channel.noise_mw(pool.prbs_per_slot());
    let gains = GainMatrix::new(drop, &cfg.channel);
    let mut metrics = MetricStore::new(cfg.bins);

    let n = drop.len();
    let (stat_lo, stat_hi) = cfg.scenario.stat_region();
    let stats_radius = cfg.bins.max_distance();
    let congestion_radius = if cfg.congestion.enabled && !cfg.congestion.ground_truth {
        cfg.congestion.radius_m
    } else {
        0.0
    };
    let mut vehicles = Vec::with_capacity(n);
    for i in 0..n {
        let (nlo, nhi) = drop.range_around(i, cfg.congestion.radius_m);
        let neighbors: Vec<u32> = (nlo..nhi).filter(|&j| j as usize != i).collect();
        let x = drop.positions[i];
        vehicles.push(Vehicle {
            sched: SchedulerState::cold_start(&cfg.scheduler, &pool, rng)?,
            congestion: CongestionState::new(neighbors),
            next_due_frame: 0,
            last_generation_frame: None,
            measured_region: x >= stat_lo && x < stat_hi,
            far: drop.range_around(i, stats_radius.max(congestion_radius)),
            near: if congestion_radius > 0.0 {
                drop.range_around(i, congestion_radius)
            } else {
                (i as u32, i as u32)
            },
        });
    }

    let warmup_ms = cfg.scenario.warmup_ms();
    let mut bsms: Vec<Option<Bsm>> = (0..n).map(|_| None).collect();
    let mut buckets: Vec<Vec<Scheduled>> = vec![Vec::new(); SUBFRAMES_PER_FRAME as usize];
    let mut log = SensingLog {
        entries: VecDeque::new(),
    };
    let mut busy = vec![false; n];
    let mut next_bsm_id = 0u64;
    let mut interferers: Vec<Interference> = Vec::new();
    let mut powers: Vec<[f64; 2]> = Vec::new();

    for frame in 0..cfg.scenario.frames() {
        let t0 = frame * FRAME_MS;
        for (v, veh) in vehicles.iter_mut().enumerate() {
            if veh.next_due_frame != frame {
                continue;
            }
            let itt = veh.congestion.update(t0, &cfg.congestion);
            let measured = veh.measured_region && t0 >= warmup_ms;
            if measured {
                if let Some(prev) = veh.last_generation_frame {
                    metrics.record_generation_gap(((frame - prev) * FRAME_MS) as u32);
                }
            }
            veh.last_generation_frame = Some(frame);
            veh.next_due_frame = frame + period_frames(itt) as u64;

            let one_shot = veh.sched.in_one_shot();
            let regular = Attempt {
                subframe: veh.sched.current_slot.subframe,
                slot: veh.sched.current_slot,
                kind: if one_shot { AttemptKind::OneShot } else { AttemptKind::Regular },
            };
            let harq = if cfg.scheduler.harq {
                veh.sched.harq_slot.map(|slot| Attempt {
                    subframe: slot.subframe,
                    slot,
                    kind: if one_shot { AttemptKind::OneShotHarq } else { AttemptKind::Harq },
                })
            } else {
                None
            };
            let attempts = match harq {
                Some(h) if h.subframe < regular.subframe => [Some(h), Some(regular)],
                h => [Some(regular), h],
            };
            let range = if measured { veh.far } else { veh.near };
            let id = next_bsm_id;
            next_bsm_id += 1;
            if let Some(tr) = trace.as_mut() {
                tr(TraceEvent::Generated {
                    bsm: id,
                    time_ms: t0,
                    tx: v as u32,
                    itt_ms: itt,
                });
            }
            for (order, a) in attempts.iter().flatten().enumerate() {
                buckets[a.subframe as usize].push(Scheduled {
                    tx: v as u32,
                    order: order as u8,
                });
            }
            bsms[v] = Some(Bsm {
                id,
                time_ms: t0 + regular.subframe as u64,
                measured,
                range,
                attempts,
                first: Vec::new(),
            });
        }

        for sf in 0..SUBFRAMES_PER_FRAME {
            let now = t0 + sf as u64;
            let txs = std::mem::take(&mut buckets[sf as usize]);
            if txs.is_empty() {
                continue;
            }
            // (tx, slot, range, attempt) for every transmission in this subframe
            let mut active: Vec<(usize, TxSlotId, (u32, u32), Attempt)> = Vec::with_capacity(txs.len());
            for s in &txs {
                let bsm = bsms[s.tx as usize].as_ref().expect("scheduled BSM exists");
                let a = bsm.attempts[s.order as usize].expect("scheduled attempt exists");
                busy[s.tx as usize] = true;
                log.entries.push_back((now, s.tx, a.slot));
                if let Some(tr) = trace.as_mut() {
                    tr(TraceEvent::Transmission {
                        bsm: bsm.id,
                        time_ms: now,
                        tx: s.tx,
                        slot: a.slot,
                        attempt: a.kind,
                    });
                }
                active.push((s.tx as usize, a.slot, bsm.range, a));
            }

            let lo = active.iter().map(|a| a.2 .0).min().unwrap_or(0);
            let hi = active.iter().map(|a| a.2 .1).max().unwrap_or(0);
            for r in lo..hi {
                let ru = r as usize;
                let targets = active
                    .iter()
                    .any(|&(tx, _, (alo, ahi), _)| tx != ru && alo <= r && r < ahi);
                if !targets {
                    continue;
                }
                let blocked = busy[ru];
                if !blocked {
                    powers.clear();
                    for &(tx, _, _, _) in &active {
                        let g = if tx == ru { 0.0 } else { gains.get(tx, ru) };
                        if g > 0.0 {
                            let d = drop.distance(tx, ru);
                            powers.push([g * fading.sample(d, rng), g * fading.sample(d, rng)]);
                        } else {
                            powers.push([0.0, 0.0]);
                        }
                    }
                }
                for (j, &(tx, slot, (alo, ahi), attempt)) in active.iter().enumerate() {
                    if tx == ru || r < alo || r >= ahi {
                        continue;
                    }
                    let reception = if blocked {
                        AttemptReception::blocked()
                    } else {
                        interferers.clear();
                        for (k, &(_, islot, _, _)) in active.iter().enumerate() {
                            if k != j && powers[k] != [0.0, 0.0] {
                                interferers.push(Interference {
                                    power: powers[k],
                                    leakage: inband.leakage(islot.pair_index, slot.pair_index),
                                });
                            }
                        }
                        attempt_sinr(powers[j], &interferers, noise, &cfg.channel)
                    };
                    let bsm = bsms[tx].as_mut().expect("active BSM exists");
                    let idx = (r - alo) as usize;
                    let count = bsm.attempt_count();
                    let is_last = txs[j].order as usize + 1 == count;
                    let mut decoded = false;
                    if !is_last {
                        if bsm.first.is_empty() {
                            bsm.first = vec![AttemptReception::blocked(); (ahi - alo) as usize];
                        }
                        bsm.first[idx] = reception;
                    } else {
                        decoded = if count == 1 {
                            harq_combine(&reception, None, &cfg.channel)
                        } else {
                            harq_combine(&bsm.first[idx], Some(&reception), &cfg.channel)
                        };
                        let d = drop.distance(tx, ru);
                        if bsm.measured && d < stats_radius {
                            metrics.record_transmission(d);
                            if decoded {
                                metrics.record_reception(tx as u32, r, bsm.time_ms, d);
                            }
                        }
                        if decoded {
                            vehicles[ru].congestion.note_decode(tx as u32, now);
                        }
                    }
                    if let Some(tr) = trace.as_mut() {
                        tr(TraceEvent::Reception(SimEvent {
                            bsm: bsm.id,
                            time_ms: now,
                            tx_id: tx as u32,
                            rx_id: r,
                            slot,
                            attempt: attempt.kind,
                            receivable: reception.receivable,
                            decoded,
                            tx_rx_distance_m: drop.distance(tx, ru),
                        }));
                    }
                }
            }

            for s in &txs {
                busy[s.tx as usize] = false;
                let v = s.tx as usize;
                let count = bsms[v].as_ref().map_or(0, Bsm::attempt_count);
                if s.order as usize + 1 != count {
                    continue;
                }
                bsms[v] = None;
                let sensing_window = cfg.sensing.window_ms;
                log.trim(now + 1, sensing_window);
                let candidates = || -> CandidateList {
                    let report = log.report(v, &gains, &pool);
                    build_candidate_list(&report, &pool, cfg.sensing.candidate_fraction)
                };
                vehicles[v]
                    .sched
                    .on_bsm_transmitted(&cfg.scheduler, &pool, candidates, rng)?;
            }
        }
        log.trim(t0 + FRAME_MS, cfg.sensing.window_ms);
    }
    Ok(metrics)
}
