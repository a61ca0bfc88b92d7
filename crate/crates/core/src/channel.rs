//! Link-level abstraction: path loss, Nakagami-m fading, in-band emission,
//! two-branch MRC and chase combining of the two HARQ attempts.
//!
//! Powers are linear milliwatts over a whole two-VRB allocation; SINRs are
//! linear ratios.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource_grid::ResourcePool;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
const PRB_BANDWIDTH_HZ: f64 = 180e3;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// In-band emission model parameters. Leakage (dB relative to the
/// in-allocation per-PRB power) into a PRB `gap` PRBs outside an allocation
/// of `L` PRBs in an `N`-PRB carrier is the largest of
///
/// * general: `w_db + max(-25 - 10 log10(N/L), 20 log10(evm) + x_db - 3 - 5 (gap-1)/L)`
/// * IQ image: `y_db - 25` on PRBs mirroring the allocation about the carrier centre
/// * carrier leakage: `z_db - 25` on the centre PRB(s)
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InbandEmissionConfig {
    pub w_db: f64,
    pub x_db: f64,
    pub y_db: f64,
    pub z_db: f64,
    pub evm: f64,
}

impl Default for InbandEmissionConfig {
    fn default() -> Self {
        InbandEmissionConfig {
            w_db: 3.0,
            x_db: 6.0,
            y_db: 3.0,
            z_db: 3.0,
            evm: 0.03,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub pscch_boost_db: f64,
    pub carrier_ghz: f64,
    pub antenna_height_m: f64,
    pub pathloss_exponent_near: f64,
    pub pathloss_exponent_far: f64,
    pub reference_distance_m: f64,
    /// Loss at the reference distance; free-space loss when absent.
    pub reference_loss_db: Option<f64>,
    /// Dual-slope breakpoint; `4 h_tx h_rx f / c` when absent.
    pub breakpoint_m: Option<f64>,
    pub nakagami_m_near: f64,
    pub nakagami_m_far: f64,
    pub nakagami_crossover_m: f64,
    pub inband_emission: InbandEmissionConfig,
    pub sinr_threshold_pssch_db: f64,
    pub sinr_threshold_pscch_db: f64,
    pub max_range_m: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            tx_power_dbm: 20.0,
            noise_figure_db: 6.0,
            pscch_boost_db: 3.0,
            carrier_ghz: 5.9,
            antenna_height_m: 1.5,
            pathloss_exponent_near: 2.0,
            pathloss_exponent_far: 4.0,
            reference_distance_m: 1.0,
            reference_loss_db: None,
            breakpoint_m: None,
            nakagami_m_near: 3.0,
            nakagami_m_far: 1.0,
            nakagami_crossover_m: 100.0,
            inband_emission: InbandEmissionConfig::default(),
            sinr_threshold_pssch_db: 3.0,
            sinr_threshold_pscch_db: 0.0,
            max_range_m: 1500.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("noise_figure_db", self.noise_figure_db),
            ("pscch_boost_db", self.pscch_boost_db),
            ("sinr_threshold_pssch_db", self.sinr_threshold_pssch_db),
            ("sinr_threshold_pscch_db", self.sinr_threshold_pscch_db),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::Config(format!("channel.{name} must be finite")));
            }
        }
        for (name, m) in [("nakagami_m_near", self.nakagami_m_near), ("nakagami_m_far", self.nakagami_m_far)] {
            if !(m >= 0.5) {
                return Err(Error::Config(format!("channel.{name} = {m} must be >= 0.5")));
            }
        }
        let positive = [
            ("carrier_ghz", self.carrier_ghz),
            ("antenna_height_m", self.antenna_height_m),
            ("reference_distance_m", self.reference_distance_m),
            ("max_range_m", self.max_range_m),
            ("inband_emission.evm", self.inband_emission.evm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("channel.{name} = {v} must be positive")));
            }
        }
        if let Some(bp) = self.breakpoint_m {
            if !(bp > self.reference_distance_m) {
                return Err(Error::Config(format!(
                    "channel.breakpoint_m = {bp} must exceed the reference distance"
                )));
            }
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)
    }

    pub fn breakpoint(&self) -> f64 {
        self.breakpoint_m.unwrap_or_else(|| {
            4.0 * self.antenna_height_m * self.antenna_height_m / self.wavelength_m()
        })
    }

    pub fn reference_loss(&self) -> f64 {
        self.reference_loss_db.unwrap_or_else(|| {
            20.0 * (4.0 * std::f64::consts::PI * self.reference_distance_m / self.wavelength_m()).log10()
        })
    }

    /// Dual-slope log-distance path loss in dB.
    pub fn pathloss_db(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(self.reference_distance_m);
        let bp = self.breakpoint();
        let near = |x: f64| self.reference_loss() + 10.0 * self.pathloss_exponent_near * (x / self.reference_distance_m).log10();
        if d <= bp {
            near(d)
        } else {
            near(bp) + 10.0 * self.pathloss_exponent_far * (d / bp).log10()
        }
    }

    pub fn tx_power_mw(&self) -> f64 {
        db_to_linear(self.tx_power_dbm)
    }

    /// Mean received power in mW; zero beyond the interference cutoff.
    pub fn mean_rx_power(&self, distance_m: f64) -> f64 {
        if distance_m > self.max_range_m {
            return 0.0;
        }
        self.tx_power_mw() / db_to_linear(self.pathloss_db(distance_m))
    }

    /// Thermal noise plus noise figure over the PRBs of one transmission.
    pub fn noise_mw(&self, prbs: u16) -> f64 {
        db_to_linear(
            THERMAL_NOISE_DBM_PER_HZ + linear_to_db(PRB_BANDWIDTH_HZ * prbs as f64) + self.noise_figure_db,
        )
    }

    pub fn nakagami_m(&self, distance_m: f64) -> f64 {
        if distance_m < self.nakagami_crossover_m {
            self.nakagami_m_near
        } else {
            self.nakagami_m_far
        }
    }

    pub fn pssch_threshold(&self) -> f64 {
        db_to_linear(self.sinr_threshold_pssch_db)
    }

    pub fn pscch_threshold(&self) -> f64 {
        db_to_linear(self.sinr_threshold_pscch_db)
    }

    pub fn pscch_boost(&self) -> f64 {
        db_to_linear(self.pscch_boost_db)
    }
}

/// Received power for one draw of the fading power gain.
pub fn received_power(distance_m: f64, fading: f64, cfg: &ChannelConfig) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::NonPositiveDistance(distance_m));
    }
    Ok(cfg.mean_rx_power(distance_m) * fading)
}

/// Unit-mean power gain of a Nakagami-m amplitude, i.e. Gamma(m, 1/m).
#[derive(Clone, Copy, Debug)]
pub struct NakagamiPower {
    m: f64,
    gamma: Option<Gamma<f64>>,
}

impl NakagamiPower {
    pub fn new(m: f64) -> Result<Self> {
        if !(m >= 0.5) {
            return Err(Error::Config(format!("Nakagami m = {m} must be >= 0.5")));
        }
        let gamma = if m == 1.0 {
            None
        } else {
            Some(Gamma::new(m, 1.0 / m).map_err(|e| Error::Config(e.to_string()))?)
        };
        Ok(NakagamiPower { m, gamma })
    }

    pub fn m(&self) -> f64 {
        self.m
    }
}

impl Distribution<f64> for NakagamiPower {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.gamma {
            Some(g) => g.sample(rng),
            None => Exp1.sample(rng),
        }
    }
}

/// Distance-dependent fading sampler built from a [`ChannelConfig`].
#[derive(Clone, Copy, Debug)]
pub struct FadingModel {
    near: NakagamiPower,
    far: NakagamiPower,
    crossover_m: f64,
}

impl FadingModel {
    pub fn new(cfg: &ChannelConfig) -> Result<Self> {
        Ok(FadingModel {
            near: NakagamiPower::new(cfg.nakagami_m_near)?,
            far: NakagamiPower::new(cfg.nakagami_m_far)?,
            crossover_m: cfg.nakagami_crossover_m,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, distance_m: f64, rng: &mut R) -> f64 {
        if distance_m < self.crossover_m {
            self.near.sample(rng)
        } else {
            self.far.sample(rng)
        }
    }
}

/// Linear fraction of an interferer's power leaking into a victim slot,
/// indexed by (interferer pair, victim pair) within one subframe.
#[derive(Clone, Debug)]
pub struct InbandEmission {
    pairs: usize,
    table: Vec<f64>,
}

impl InbandEmission {
    pub fn new(cfg: &InbandEmissionConfig, pool: &ResourcePool) -> Self {
        let pairs = pool.slots_per_subframe() as usize;
        let n_rb = pool.prbs_per_subframe() as f64;
        let l = pool.prbs_per_slot() as f64;
        let mut table = vec![0.0; pairs * pairs];
        for ip in 0..pairs {
            let a0 = pool.first_prb(ip as u16) as i32;
            let a1 = a0 + l as i32 - 1;
            // Mirror of [a0, a1] about the carrier centre.
            let (m0, m1) = (pool.prbs_per_subframe() as i32 - 1 - a1, pool.prbs_per_subframe() as i32 - 1 - a0);
            let centre = [(pool.prbs_per_subframe() as i32 - 1) / 2, pool.prbs_per_subframe() as i32 / 2];
            for vp in 0..pairs {
                if ip == vp {
                    table[ip * pairs + vp] = 1.0;
                    continue;
                }
                let v0 = pool.first_prb(vp as u16) as i32;
                let sum: f64 = (v0..v0 + l as i32)
                    .map(|rb| {
                        let gap = if rb < a0 { a0 - rb } else { rb - a1 } as f64;
                        let general = cfg.w_db
                            + f64::max(
                                -25.0 - linear_to_db(n_rb / l),
                                20.0 * cfg.evm.log10() + cfg.x_db - 3.0 - 5.0 * (gap - 1.0) / l,
                            );
                        let mut e = general;
                        if (m0..=m1).contains(&rb) {
                            e = e.max(cfg.y_db - 25.0);
                        }
                        if centre.contains(&rb) {
                            e = e.max(cfg.z_db - 25.0);
                        }
                        db_to_linear(e)
                    })
                    .sum();
                table[ip * pairs + vp] = sum / l;
            }
        }
        InbandEmission { pairs, table }
    }

    /// Fully isolated pairs: only co-slot transmissions interfere.
    pub fn isolated(pool: &ResourcePool) -> Self {
        let pairs = pool.slots_per_subframe() as usize;
        let mut table = vec![0.0; pairs * pairs];
        for p in 0..pairs {
            table[p * pairs + p] = 1.0;
        }
        InbandEmission { pairs, table }
    }

    pub fn leakage(&self, interferer_pair: u16, victim_pair: u16) -> f64 {
        self.table[interferer_pair as usize * self.pairs + victim_pair as usize]
    }
}

/// One interfering transmission as seen at a receiver.
#[derive(Clone, Copy, Debug)]
pub struct Interference {
    /// Received power per antenna branch.
    pub power: [f64; 2],
    /// Linear in-band leakage into the victim slot (1 for co-slot).
    pub leakage: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AttemptReception {
    pub sinr_pssch: f64,
    pub sinr_pscch: f64,
    pub receivable: bool,
}

impl AttemptReception {
    /// Receiver was transmitting in the attempt's subframe.
    pub fn blocked() -> Self {
        AttemptReception::default()
    }

    fn passes(&self, cfg: &ChannelConfig) -> bool {
        self.sinr_pscch >= cfg.pscch_threshold() && self.sinr_pssch >= cfg.pssch_threshold()
    }
}

/// Post-MRC SINR of one attempt. `noise_mw` is the noise over the
/// allocation. SCI PRBs carry the PSCCH boost on both the wanted signal and
/// the interferers' own SCI.
pub fn attempt_sinr(target: [f64; 2], interferers: &[Interference], noise_mw: f64, cfg: &ChannelConfig) -> AttemptReception {
    let boost = cfg.pscch_boost();
    let mut pssch = 0.0;
    let mut pscch = 0.0;
    for ant in 0..2 {
        let i: f64 = interferers.iter().map(|x| x.power[ant] * x.leakage).sum();
        pssch += target[ant] / (noise_mw + i);
        pscch += boost * target[ant] / (noise_mw + boost * i);
    }
    AttemptReception {
        sinr_pssch: pssch,
        sinr_pscch: pscch,
        receivable: true,
    }
}

/// BSM decode decision over the first attempt, the second (HARQ) attempt and
/// their chase combination. Each candidate must clear both the control and
/// data thresholds.
pub fn harq_combine(first: &AttemptReception, second: Option<&AttemptReception>, cfg: &ChannelConfig) -> bool {
    let effective = |a: &AttemptReception| if a.receivable { *a } else { AttemptReception::blocked() };
    let first = effective(first);
    if first.passes(cfg) {
        return true;
    }
    let Some(second) = second.map(effective) else {
        return false;
    };
    if second.passes(cfg) {
        return true;
    }
    let combined = AttemptReception {
        sinr_pssch: first.sinr_pssch + second.sinr_pssch,
        sinr_pscch: first.sinr_pscch + second.sinr_pscch,
        receivable: first.receivable || second.receivable,
    };
    combined.passes(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource_grid::Bandwidth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ok(pssch: f64, pscch: f64) -> AttemptReception {
        AttemptReception {
            sinr_pssch: pssch,
            sinr_pscch: pscch,
            receivable: true,
        }
    }

    #[test]
    fn unit_fading_at_reference() {
        let cfg = ChannelConfig::default();
        let p = received_power(1.0, 1.0, &cfg).unwrap();
        let expected = cfg.tx_power_mw() / db_to_linear(cfg.reference_loss());
        assert!((p / expected - 1.0).abs() < 1e-12);
        assert!(received_power(0.0, 1.0, &cfg).is_err());
        assert!(received_power(-3.0, 1.0, &cfg).is_err());
    }

    #[test]
    fn far_slope_doubling() {
        let cfg = ChannelConfig::default();
        let bp = cfg.breakpoint();
        assert!((bp - 4.0 * 1.5 * 1.5 * 5.9e9 / SPEED_OF_LIGHT).abs() < 1e-9);
        let d = 2.0 * bp;
        let ratio = cfg.mean_rx_power(2.0 * d) / cfg.mean_rx_power(d);
        assert!((ratio - 2f64.powf(-4.0)).abs() < 1e-12);
        let near = cfg.mean_rx_power(20.0) / cfg.mean_rx_power(10.0);
        assert!((near - 0.25).abs() < 1e-12);
    }

    #[test]
    fn beyond_cutoff_contributes_nothing() {
        let cfg = ChannelConfig::default();
        assert_eq!(cfg.mean_rx_power(cfg.max_range_m + 1.0), 0.0);
        assert!(cfg.mean_rx_power(cfg.max_range_m) > 0.0);
    }

    #[test]
    fn mrc_of_equal_branches_doubles() {
        let cfg = ChannelConfig::default();
        let a = attempt_sinr([3.0, 3.0], &[], 1.5, &cfg);
        assert!((a.sinr_pssch - 4.0).abs() < 1e-12);
        let b = attempt_sinr([0.7, 2.9], &[], 1.0, &cfg);
        assert_eq!(b.sinr_pssch, 0.7 + 2.9);
    }

    #[test]
    fn co_slot_interferer_equal_power() {
        let cfg = ChannelConfig::default();
        // 0 dB on each branch, combined over two antennas
        let i = Interference { power: [2.0, 2.0], leakage: 1.0 };
        let a = attempt_sinr([2.0, 2.0], &[i], 0.0, &cfg);
        assert!((a.sinr_pssch - 2.0).abs() < 1e-12);
    }

    #[test]
    fn heavily_masked_interferer_is_negligible() {
        let cfg = ChannelConfig::default();
        let i = Interference {
            power: [1.0, 1.0],
            leakage: db_to_linear(-100.0),
        };
        let a = attempt_sinr([1.0, 1.0], &[i], 0.01, &cfg);
        assert!((a.sinr_pssch / 200.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pscch_boost_helps_against_noise_only() {
        let cfg = ChannelConfig::default();
        let a = attempt_sinr([1.0, 1.0], &[], 1.0, &cfg);
        assert!((a.sinr_pscch / a.sinr_pssch - cfg.pscch_boost()).abs() < 1e-12);
        let i = Interference { power: [1.0, 1.0], leakage: 1.0 };
        let b = attempt_sinr([1.0, 1.0], &[i], 0.0, &cfg);
        assert!((b.sinr_pscch - b.sinr_pssch).abs() < 1e-12);
    }

    #[test]
    fn chase_combining_rescues_two_weak_attempts() {
        let cfg = ChannelConfig::default();
        let weak = ok(1.62, 2.0);
        assert!(weak.sinr_pssch < cfg.pssch_threshold());
        assert!(!harq_combine(&weak, None, &cfg));
        // 3.24 linear = 5.1 dB
        assert!((linear_to_db(2.0 * 1.62) - 5.105).abs() < 1e-3);
        assert!(harq_combine(&weak, Some(&weak), &cfg));
    }

    #[test]
    fn blocked_attempts_never_decode() {
        let cfg = ChannelConfig::default();
        let mut strong = ok(100.0, 100.0);
        strong.receivable = false;
        assert!(!harq_combine(&strong, Some(&strong), &cfg));
        assert!(!harq_combine(&AttemptReception::blocked(), Some(&AttemptReception::blocked()), &cfg));
    }

    #[test]
    fn strong_first_attempt_suffices() {
        let cfg = ChannelConfig::default();
        assert!(harq_combine(&ok(5.0, 5.0), Some(&AttemptReception::blocked()), &cfg));
        assert!(harq_combine(&ok(5.0, 5.0), None, &cfg));
    }

    #[test]
    fn control_gate_required() {
        let cfg = ChannelConfig::default();
        assert!(!harq_combine(&ok(50.0, 0.3), Some(&ok(50.0, 0.3)), &cfg));
    }

    #[test]
    fn inband_table_shape() {
        let cfg = InbandEmissionConfig::default();
        for bw in [Bandwidth::Mhz10, Bandwidth::Mhz20] {
            let pool = ResourcePool::new(bw);
            let ibe = InbandEmission::new(&cfg, &pool);
            let pairs = pool.slots_per_subframe();
            for a in 0..pairs {
                assert_eq!(ibe.leakage(a, a), 1.0);
                for b in 0..pairs {
                    if a != b {
                        let l = ibe.leakage(a, b);
                        assert!(l > 0.0 && l < 0.01, "leakage {l} between {a} and {b}");
                    }
                }
            }
        }
        let pool = ResourcePool::new(Bandwidth::Mhz20);
        let ibe = InbandEmission::new(&cfg, &pool);
        // leakage decays away from the allocation
        assert!(ibe.leakage(0, 1) > ibe.leakage(0, 3));
    }

    #[test]
    fn nakagami_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [0.5, 1.0, 3.0] {
            let f = NakagamiPower::new(m).unwrap();
            let n = 200_000;
            let samples: Vec<f64> = (0..n).map(|_| f.sample(&mut rng)).collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() < 0.01, "m={m} mean={mean}");
            assert!((var - 1.0 / m).abs() < 0.05 / m.min(1.0), "m={m} var={var}");
        }
        assert!(NakagamiPower::new(0.4).is_err());
    }

    #[test]
    fn default_config_validates() {
        ChannelConfig::default().validate().unwrap();
        let bad = ChannelConfig {
            nakagami_m_far: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
