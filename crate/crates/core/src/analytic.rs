//! Analytical model of the IPG tail with HARQ.
//!
//! Conditioned on one BSM (both HARQ attempts) being lost, `T` counts the
//! BSM opportunities until the next success. A loss is attributed to
//! dominant interferers on the two attempts; it persists until an interferer
//! or the transmitter reselects. Reselection at opportunity `k` is a
//! non-uniform geometric process with probability `q_k`; SPS and one-shot
//! processes combine as independent events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{tail_slope, Ccdf, TailFit};
use crate::scheduler::CounterConfig;

/// `(rho, sigma, p)`: counter range and reselection probability on expiry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReselectionParams {
    pub rho: u32,
    pub sigma: u32,
    pub p: f64,
}

impl ReselectionParams {
    pub fn new(rho: u32, sigma: u32, p: f64) -> Result<Self> {
        let params = ReselectionParams { rho, sigma, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho < 1 || self.sigma < self.rho {
            return Err(Error::Config(format!(
                "reselection range [{}, {}] must satisfy 1 <= rho <= sigma",
                self.rho, self.sigma
            )));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("reselection probability {} outside (0, 1]", self.p)));
        }
        Ok(())
    }

    /// Parameters of an enabled counter; `None` for a disabled one.
    pub fn from_counter(cfg: &CounterConfig) -> Option<Self> {
        cfg.enabled.then(|| ReselectionParams {
            rho: cfg.alpha,
            sigma: cfg.beta,
            p: cfg.reselection_probability(),
        })
    }

    /// Mean opportunities between reselections.
    pub fn expected_interval(&self) -> f64 {
        (self.rho as f64 + (self.sigma - self.rho) as f64 / 2.0) / self.p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfererMode {
    /// One dominant interferer per attempt.
    Single,
    /// Two dominant interferers per attempt.
    Double,
}

impl InterfererMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InterfererMode::Single => "single",
            InterfererMode::Double => "double",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailModelConfig {
    pub sps: ReselectionParams,
    pub oneshot: Option<ReselectionParams>,
    /// Probability that a transmitter reselection ends the loss run.
    pub p_f: f64,
    pub interferer_mode: InterfererMode,
    pub k_max: u32,
}

impl TailModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.sps.validate()?;
        if let Some(o) = &self.oneshot {
            o.validate()?;
        }
        if !(0.0..=1.0).contains(&self.p_f) {
            return Err(Error::Config(format!("p_f {} outside [0, 1]", self.p_f)));
        }
        if self.k_max < 1 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reselection probability at opportunity `k` (1-based), clamped to 1.
pub fn q_k(k: u32, params: &ReselectionParams) -> f64 {
    if k <= params.rho {
        return 0.0;
    }
    let (k, rho, sigma) = (k as f64, params.rho as f64, params.sigma as f64);
    (2.0 * k * params.p / ((sigma + rho) * (k - rho))).min(1.0)
}

/// Reselection probability with SPS and one-shot processes interleaved.
pub fn q_i(k: u32, sps: &ReselectionParams, oneshot: Option<&ReselectionParams>) -> f64 {
    let qs = q_k(k, sps);
    let qo = oneshot.map_or(0.0, |o| q_k(k, o));
    qo * (1.0 - qs) + qs * (1.0 - qo) + qs * qo
}

/// Success probability of one opportunity given the per-party reselection
/// probability `q`.
pub fn p_u_from_q(q: f64, p_f: f64, mode: InterfererMode) -> f64 {
    let p_r = q * p_f;
    match mode {
        InterfererMode::Single => {
            let p_a = 1.0 - (1.0 - q).powi(2);
            let p_d = 1.0 - q;
            let p_n = (1.0 - q).powi(2);
            p_a * p_d + p_n * p_r + p_a * p_r
        }
        InterfererMode::Double => {
            let none = (1.0 - q * q).powi(2);
            let p_a = 1.0 - none;
            p_a * (1.0 - q) + none * p_r + p_a * p_r
        }
    }
}

pub fn p_u(k: u32, cfg: &TailModelConfig) -> f64 {
    p_u_from_q(q_i(k, &cfg.sps, cfg.oneshot.as_ref()), cfg.p_f, cfg.interferer_mode)
}

/// `P(T > k)` for `k = 0..=k_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailCurve {
    values: Vec<f64>,
}

impl TailCurve {
    pub fn from_values(values: Vec<f64>) -> Self {
        TailCurve { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k_max(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    pub fn at(&self, k: u32) -> Option<f64> {
        self.values.get(k as usize).copied()
    }

    /// `(k, P(T > k))` points.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.values.iter().enumerate().map(|(k, v)| (k as f64, *v)).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        TailCurve {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

pub fn tail(cfg: &TailModelConfig) -> TailCurve {
    let mut values = Vec::with_capacity(cfg.k_max as usize + 1);
    let mut survival = 1.0;
    values.push(survival);
    for k in 1..=cfg.k_max {
        survival *= 1.0 - p_u(k, cfg);
        values.push(survival);
    }
    TailCurve { values }
}

const ORACLE_BATCH: u64 = 20_000;

/// Monte Carlo estimate of the tail from the abstract reselection process.
///
/// Each trial follows a transmitter and its dominant interferers (two, or
/// two per attempt in double mode). At every opportunity each party
/// independently fires its SPS trigger with probability `q_s` and its
/// one-shot trigger with `q_o`. An attempt is cleared when all of its
/// interferers moved. The opportunity succeeds when an attempt is cleared
/// while the transmitter stays, or when the transmitter moves onto a clean
/// slot (probability `p_f`).
pub fn oracle_tail(cfg: &TailModelConfig, trials: u64, seed: u64) -> TailCurve {
    let k_max = cfg.k_max as usize;
    let batches = trials.div_ceil(ORACLE_BATCH);
    let counts = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let n = ORACLE_BATCH.min(trials - b * ORACLE_BATCH);
            let mut survivors = vec![0u64; k_max + 1];
            for _ in 0..n {
                let t = oracle_trial(cfg, &mut rng);
                // T > k for k < t
                for s in survivors.iter_mut().take(t.min(k_max + 1)) {
                    *s += 1;
                }
            }
            survivors
        })
        .reduce(
            || vec![0u64; k_max + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    TailCurve {
        values: counts.iter().map(|&c| c as f64 / trials as f64).collect(),
    }
}

/// First successful opportunity, or `k_max + 1` if none.
fn oracle_trial<R: Rng + ?Sized>(cfg: &TailModelConfig, rng: &mut R) -> usize {
    let per_attempt = match cfg.interferer_mode {
        InterfererMode::Single => 1,
        InterfererMode::Double => 2,
    };
    for k in 1..=cfg.k_max {
        let qs = q_k(k, &cfg.sps);
        let qo = cfg.oneshot.as_ref().map_or(0.0, |o| q_k(k, o));
        let mut moves = || {
            let sps = rng.random::<f64>() < qs;
            let one = cfg.oneshot.is_some() && rng.random::<f64>() < qo;
            sps || one
        };
        let mut cleared = false;
        for _attempt in 0..2 {
            let mut all_moved = true;
            for _ in 0..per_attempt {
                all_moved &= moves();
            }
            cleared |= all_moved;
        }
        let tx_moved = moves();
        let success = if tx_moved {
            rng.random::<f64>() < cfg.p_f
        } else {
            cleared
        };
        if success {
            return k as usize;
        }
    }
    cfg.k_max as usize + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeComparison {
    /// log10 decay per BSM period.
    pub slope_analytic: f64,
    pub slope_simulated: f64,
    pub relative_gap: f64,
    /// Grid points used in the fit.
    pub points: usize,
}

/// Compare tail slopes on the BSM-period grid. A simulated point at `k`
/// is the fraction of IPGs of at least `k + 1` periods, i.e. `P(T >= k)`,
/// so it is paired with the analytic `P(T > k - 1)`. Constant offsets
/// between the curves cancel in the slope.
pub fn compare_slopes(analytic: &TailCurve, simulated: &Ccdf, period_ms: f64, fit: &TailFit) -> Result<SlopeComparison> {
    let sim_points = simulated.period_points(period_ms, fit);
    let ana_points: Vec<(f64, f64)> = sim_points
        .iter()
        .filter_map(|&(k, _)| (k as u32).checked_sub(1).and_then(|i| analytic.at(i)).map(|v| (k, v)))
        .collect();
    if ana_points.len() != sim_points.len() {
        return Err(Error::InsufficientData(format!(
            "analytic curve stops at k = {}, below the fit range",
            analytic.k_max()
        )));
    }
    let slope_simulated = tail_slope(&sim_points, fit)?;
    let slope_analytic = tail_slope(&ana_points, fit)?;
    if slope_simulated == 0.0 {
        return Err(Error::InsufficientData("simulated tail slope is zero".into()));
    }
    Ok(SlopeComparison {
        slope_analytic,
        slope_simulated,
        relative_gap: (slope_analytic - slope_simulated).abs() / slope_simulated.abs(),
        points: sim_points.len(),
    })
}

/// Slope of the analytic curve alone, `P(T > k)` against `k`.
pub fn analytic_slope(curve: &TailCurve, fit: &TailFit) -> Result<f64> {
    tail_slope(&curve.points(), fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sps() -> ReselectionParams {
        ReselectionParams::new(5, 15, 0.2).unwrap()
    }

    fn oneshot() -> ReselectionParams {
        ReselectionParams::new(2, 6, 1.0).unwrap()
    }

    fn cfg(mode: InterfererMode) -> TailModelConfig {
        TailModelConfig {
            sps: sps(),
            oneshot: Some(oneshot()),
            p_f: 0.8,
            interferer_mode: mode,
            k_max: 60,
        }
    }

    #[test]
    fn q_k_values() {
        assert_eq!(q_k(5, &sps()), 0.0);
        assert_eq!(q_k(1, &sps()), 0.0);
        assert!((q_k(6, &sps()) - 0.12).abs() < 1e-12);
        let far = q_k(10_000_000, &sps());
        assert!((far - 0.02).abs() < 1e-6);
        assert!((far - 1.0 / sps().expected_interval()).abs() < 1e-6);
        // clamp just above rho with p = 1
        assert_eq!(q_k(3, &oneshot()), 0.75);
        assert_eq!(q_k(3, &ReselectionParams::new(2, 2, 1.0).unwrap()), 1.0);
    }

    #[test]
    fn q_k_running_mean_matches_rate() {
        let k = 10_000u32;
        let total: f64 = (1..=k).map(|i| q_k(i, &sps())).sum();
        let expected = k as f64 / sps().expected_interval();
        assert!((total / expected - 1.0).abs() < 0.05, "{total} vs {expected}");
    }

    #[test]
    fn q_i_combinations() {
        assert_eq!(q_i(8, &sps(), None), q_k(8, &sps()));
        // q_s = 0.12 at k = 6; choose one-shot params giving q_o = 0.75 at k = 6
        let os = ReselectionParams::new(4, 4, 1.0).unwrap();
        assert!((q_k(6, &os) - 0.75).abs() < 1e-12);
        assert!((q_i(6, &sps(), Some(&os)) - 0.78).abs() < 1e-12);
        let certain = ReselectionParams::new(1, 1, 1.0).unwrap();
        assert_eq!(q_i(2, &certain, Some(&os)), 1.0);
    }

    #[test]
    fn p_u_hand_values() {
        assert_eq!(p_u_from_q(0.0, 0.8, InterfererMode::Single), 0.0);
        assert_eq!(p_u_from_q(0.0, 0.8, InterfererMode::Double), 0.0);
        assert!((p_u_from_q(0.5, 0.8, InterfererMode::Single) - 0.775).abs() < 1e-12);
        assert!((p_u_from_q(0.5, 0.8, InterfererMode::Double) - 0.61875).abs() < 1e-12);
    }

    #[test]
    fn p_u_grid_properties() {
        let steps: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        for &q in &steps {
            for &pf in &steps {
                let s = p_u_from_q(q, pf, InterfererMode::Single);
                let d = p_u_from_q(q, pf, InterfererMode::Double);
                assert!(d <= s + 1e-12, "q={q} pf={pf}");
                assert!((0.0..=1.0 + 1e-12).contains(&s));
                for mode in [InterfererMode::Single, InterfererMode::Double] {
                    let base = p_u_from_q(q, pf, mode);
                    if pf + 0.05 <= 1.0 + 1e-9 {
                        assert!(p_u_from_q(q, pf + 0.05, mode) >= base - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn p_u_falls_as_q_approaches_one() {
        // With q near 1 the transmitter almost surely moves, so success
        // hinges on p_f alone; below that the interferer term dominates.
        let lo = p_u_from_q(0.5, 0.5, InterfererMode::Single);
        let hi = p_u_from_q(0.95, 0.5, InterfererMode::Single);
        assert!(hi < lo, "{hi} vs {lo}");
        assert_eq!(p_u_from_q(1.0, 0.5, InterfererMode::Single), 0.5);
        for i in 0..=20 {
            let pf = i as f64 * 0.05;
            for j in 0..8 {
                let q = j as f64 * 0.05;
                assert!(p_u_from_q(q + 0.05, pf, InterfererMode::Single) >= p_u_from_q(q, pf, InterfererMode::Single));
            }
        }
    }

    #[test]
    fn tail_basics() {
        let c = tail(&cfg(InterfererMode::Single));
        assert_eq!(c.at(0), Some(1.0));
        assert!(c.values().windows(2).all(|w| w[1] <= w[0]));
        assert!(c.values().iter().all(|v| (0.0..=1.0).contains(v)));
        // k <= 2: no reselection possible, nothing succeeds
        assert_eq!(c.at(2), Some(1.0));
    }

    #[test]
    fn constant_success_is_geometric() {
        let cfg = TailModelConfig {
            sps: ReselectionParams::new(1, 1, 1.0).unwrap(),
            oneshot: None,
            p_f: 0.5,
            interferer_mode: InterfererMode::Single,
            k_max: 3,
        };
        // q = 1 for every k >= 2: transmitter always moves, succeeds w.p. p_f
        let c = tail(&cfg);
        assert_eq!(c.at(1), Some(1.0));
        assert_eq!(c.at(3), Some(0.25));
    }

    #[test]
    fn oracle_degenerate_cases() {
        let never = TailModelConfig {
            sps: ReselectionParams::new(100, 100, 0.2).unwrap(),
            oneshot: None,
            p_f: 1.0,
            interferer_mode: InterfererMode::Single,
            k_max: 50,
        };
        let o = oracle_tail(&never, 10_000, 1);
        assert!(o.values().iter().all(|&v| v == 1.0));

        let always = TailModelConfig {
            sps: ReselectionParams::new(1, 1, 1.0).unwrap(),
            oneshot: None,
            p_f: 1.0,
            interferer_mode: InterfererMode::Single,
            k_max: 5,
        };
        // q_1 = 0 (k <= rho), q_k = 1 afterwards: success at k = 2 always
        let o = oracle_tail(&always, 10_000, 1);
        assert_eq!(o.at(1), Some(1.0));
        assert_eq!(o.at(2), Some(0.0));
    }

    #[test]
    fn oracle_tracks_closed_form() {
        for mode in [InterfererMode::Single, InterfererMode::Double] {
            let c = cfg(mode);
            let a = tail(&c);
            let o = oracle_tail(&c, 200_000, 11);
            for k in 0..=60 {
                let d = (a.at(k).unwrap() - o.at(k).unwrap()).abs();
                assert!(d < 0.01, "{mode:?} k={k} diff={d}");
            }
        }
    }

    #[test]
    fn oracle_is_deterministic() {
        let c = cfg(InterfererMode::Double);
        assert_eq!(oracle_tail(&c, 50_000, 5), oracle_tail(&c, 50_000, 5));
    }

    fn geometric(ratio: f64) -> (TailCurve, Ccdf) {
        let curve = TailCurve::from_values((0..=80).map(|k| ratio.powi(k)).collect());
        let mut hist = BTreeMap::new();
        for k in 1..=400u32 {
            let n = (1e17 * ratio.powi(k as i32 - 1) * (1.0 - ratio)).round() as u64;
            if n > 0 {
                hist.insert(100 * k, n);
            }
        }
        (curve, Ccdf::from_histogram(&hist).unwrap())
    }

    #[test]
    fn slope_comparisons() {
        let fit = TailFit { k_lo: 3, k_hi: 30, min_exceedances: 1 };
        let (curve, ccdf) = geometric(0.9);
        let same = compare_slopes(&curve, &ccdf, 100.0, &fit).unwrap();
        assert!(same.relative_gap < 1e-9);
        let scaled = compare_slopes(&curve.scaled(0.01), &ccdf, 100.0, &fit).unwrap();
        assert!((scaled.relative_gap - same.relative_gap).abs() < 1e-9);

        let (_, ccdf8) = geometric(0.8);
        let cmp = compare_slopes(&curve, &ccdf8, 100.0, &fit).unwrap();
        assert!((cmp.slope_analytic - 0.9f64.log10()).abs() < 1e-9);
        assert!((cmp.slope_simulated - 0.8f64.log10()).abs() < 1e-9);
        assert!((cmp.relative_gap - 0.5278).abs() < 1e-3, "{}", cmp.relative_gap);
    }

    #[test]
    fn zero_simulated_slope_is_an_error() {
        let mut hist = BTreeMap::new();
        hist.insert(100, 10);
        hist.insert(100_000, 1000);
        let ccdf = Ccdf::from_histogram(&hist).unwrap();
        let curve = TailCurve::from_values((0..=80).map(|k| 0.9f64.powi(k)).collect());
        let fit = TailFit { k_lo: 3, k_hi: 30, min_exceedances: 1 };
        assert!(compare_slopes(&curve, &ccdf, 100.0, &fit).is_err());
    }
}
