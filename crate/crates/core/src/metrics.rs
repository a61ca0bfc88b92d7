//! Inter-packet gap and packet reception ratio bookkeeping.
//!
//! Statistics are binned by transmitter-receiver distance. An IPG sample is
//! the time between two consecutive successful receptions of the same
//! transmitter at the same receiver, binned at the later success.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceBins {
    pub width_m: f64,
    pub count: usize,
}

impl Default for DistanceBins {
    fn default() -> Self {
        DistanceBins {
            width_m: 20.0,
            count: 30,
        }
    }
}

impl DistanceBins {
    pub fn bin_of(&self, distance_m: f64) -> Option<usize> {
        if !(distance_m >= 0.0) {
            return None;
        }
        let i = (distance_m / self.width_m) as usize;
        (i < self.count).then_some(i)
    }

    pub fn center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.width_m
    }

    pub fn max_distance(&self) -> f64 {
        self.width_m * self.count as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BinStats {
    /// IPG histogram: gap in ms -> occurrences.
    pub ipg_ms: BTreeMap<u32, u64>,
    pub tx_count: u64,
    pub rx_success: u64,
}

impl BinStats {
    pub fn ipg_samples(&self) -> u64 {
        self.ipg_ms.values().sum()
    }
}

#[derive(Clone, Debug)]
pub struct MetricStore {
    bins: DistanceBins,
    stats: Vec<BinStats>,
    last_success: HashMap<(u32, u32), u64>,
    /// Gaps between consecutive BSM generations of measured transmitters.
    generation_gaps: BTreeMap<u32, u64>,
}

impl PartialEq for MetricStore {
    fn eq(&self, other: &Self) -> bool {
        self.bins == other.bins && self.stats == other.stats && self.generation_gaps == other.generation_gaps
    }
}

impl MetricStore {
    pub fn new(bins: DistanceBins) -> Self {
        MetricStore {
            bins,
            stats: vec![BinStats::default(); bins.count],
            last_success: HashMap::new(),
            generation_gaps: BTreeMap::new(),
        }
    }

    pub fn bins(&self) -> &DistanceBins {
        &self.bins
    }

    pub fn bin(&self, bin: usize) -> Option<&BinStats> {
        self.stats.get(bin)
    }

    pub fn bin_stats(&self) -> &[BinStats] {
        &self.stats
    }

    pub fn generation_gaps(&self) -> &BTreeMap<u32, u64> {
        &self.generation_gaps
    }

    /// Most frequent gap between BSM generations, if any were recorded.
    pub fn modal_generation_gap(&self) -> Option<u32> {
        self.generation_gaps
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(gap, _)| *gap)
    }

    pub fn record_generation_gap(&mut self, gap_ms: u32) {
        *self.generation_gaps.entry(gap_ms).or_default() += 1;
    }

    /// Count one BSM sent to a receiver at `distance_m`.
    pub fn record_transmission(&mut self, distance_m: f64) {
        if let Some(b) = self.bins.bin_of(distance_m) {
            self.stats[b].tx_count += 1;
        }
    }

    /// Count a decoded BSM and, if the pair has a previous success, add the
    /// gap as an IPG sample.
    pub fn record_reception(&mut self, tx: u32, rx: u32, time_ms: u64, distance_m: f64) {
        let Some(b) = self.bins.bin_of(distance_m) else {
            return;
        };
        self.stats[b].rx_success += 1;
        if let Some(prev) = self.last_success.insert((tx, rx), time_ms) {
            debug_assert!(time_ms > prev);
            *self.stats[b].ipg_ms.entry((time_ms - prev) as u32).or_default() += 1;
        }
    }

    pub fn ccdf(&self, bin: usize) -> Result<Ccdf> {
        let stats = self
            .stats
            .get(bin)
            .ok_or_else(|| Error::InsufficientData(format!("bin {bin} out of range")))?;
        Ccdf::from_histogram(&stats.ipg_ms)
    }

    pub fn prr(&self, bin: usize) -> Result<f64> {
        let stats = self
            .stats
            .get(bin)
            .ok_or_else(|| Error::InsufficientData(format!("bin {bin} out of range")))?;
        if stats.tx_count == 0 {
            return Err(Error::InsufficientData(format!(
                "no transmissions in bin centred at {} m",
                self.bins.center(bin)
            )));
        }
        Ok(stats.rx_success as f64 / stats.tx_count as f64)
    }

    /// Combine statistics of an independent run. Per-pair timestamps are
    /// run-local and are not carried over.
    pub fn merge(&mut self, other: &MetricStore) {
        assert_eq!(self.bins, other.bins, "merging stores with different binning");
        for (mine, theirs) in self.stats.iter_mut().zip(&other.stats) {
            mine.tx_count += theirs.tx_count;
            mine.rx_success += theirs.rx_success;
            for (gap, n) in &theirs.ipg_ms {
                *mine.ipg_ms.entry(*gap).or_default() += n;
            }
        }
        for (gap, n) in &other.generation_gaps {
            *self.generation_gaps.entry(*gap).or_default() += n;
        }
        self.last_success.clear();
    }
}

/// Empirical complementary CDF of IPG samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Ccdf {
    /// `(threshold_ms, fraction of samples > threshold)` at 0 and at every
    /// distinct sample value, ascending.
    points: Vec<(f64, f64)>,
    /// Samples strictly above each point's threshold.
    above: Vec<u64>,
    total: u64,
}

impl Ccdf {
    pub fn from_histogram(hist: &BTreeMap<u32, u64>) -> Result<Self> {
        let total: u64 = hist.values().sum();
        if total == 0 {
            return Err(Error::InsufficientData("no IPG samples".into()));
        }
        let mut points = Vec::with_capacity(hist.len() + 1);
        let mut above = Vec::with_capacity(hist.len() + 1);
        let mut remaining = total;
        points.push((0.0, 1.0));
        above.push(total);
        for (&value, &n) in hist {
            remaining -= n;
            if value == 0 {
                points[0] = (0.0, remaining as f64 / total as f64);
                above[0] = remaining;
                continue;
            }
            points.push((value as f64, remaining as f64 / total as f64));
            above.push(remaining);
        }
        Ok(Ccdf { points, above, total })
    }

    /// Rebuild from emitted `(threshold, fraction)` points and the sample
    /// count they were computed from.
    pub fn from_fractions(points: &[(f64, f64)], total: u64) -> Result<Self> {
        let above: Vec<u64> = points.iter().map(|p| (p.1 * total as f64).round() as u64).collect();
        let mut hist = BTreeMap::new();
        let mut prev = total;
        for (p, &a) in points.iter().zip(&above) {
            if a > prev {
                return Err(Error::InsufficientData(format!("CCDF increases at {} ms", p.0)));
            }
            if prev > a {
                hist.insert(p.0.round() as u32, prev - a);
            }
            prev = a;
        }
        if prev != 0 {
            return Err(Error::InsufficientData("CCDF does not reach zero".into()));
        }
        Self::from_histogram(&hist)
    }

    pub fn from_samples(samples: &[u32]) -> Result<Self> {
        let mut hist = BTreeMap::new();
        for &s in samples {
            *hist.entry(s).or_insert(0u64) += 1;
        }
        Self::from_histogram(&hist)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn index_at(&self, threshold: f64) -> Option<usize> {
        let i = self.points.partition_point(|p| p.0 <= threshold);
        i.checked_sub(1)
    }

    /// Number of samples strictly greater than `threshold`.
    pub fn exceedances(&self, threshold: f64) -> u64 {
        match self.index_at(threshold) {
            Some(i) => self.above[i],
            None => self.total,
        }
    }

    pub fn fraction_above(&self, threshold: f64) -> f64 {
        self.exceedances(threshold) as f64 / self.total as f64
    }

    /// Survival points on the BSM-period grid: `(k, fraction above (k+½)·period)`
    /// for integer `k` in the fit range with at least `min_exceedances` samples.
    pub fn period_points(&self, period_ms: f64, fit: &TailFit) -> Vec<(f64, f64)> {
        fit.grid()
            .map(|k| (k as f64, (k as f64 + 0.5) * period_ms))
            .filter(|&(_, thr)| self.exceedances(thr) >= fit.min_exceedances.max(1))
            .map(|(k, thr)| (k, self.fraction_above(thr)))
            .collect()
    }
}

/// Range of BSM periods over which a tail slope is fitted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub k_lo: u32,
    pub k_hi: u32,
    /// Grid points with fewer simulated exceedances are dropped.
    #[serde(default = "TailFit::default_min_exceedances")]
    pub min_exceedances: u64,
}

impl Default for TailFit {
    fn default() -> Self {
        TailFit {
            k_lo: 10,
            k_hi: 50,
            min_exceedances: Self::default_min_exceedances(),
        }
    }
}

impl TailFit {
    fn default_min_exceedances() -> u64 {
        10
    }

    pub fn new(k_lo: u32, k_hi: u32) -> Self {
        TailFit {
            k_lo,
            k_hi,
            ..Default::default()
        }
    }

    pub fn grid(&self) -> impl Iterator<Item = u32> {
        self.k_lo..=self.k_hi
    }

    pub fn contains(&self, k: f64) -> bool {
        k >= self.k_lo as f64 && k <= self.k_hi as f64
    }
}

/// Least-squares slope of `log10(fraction)` against `x` over points inside
/// the fit range with positive fraction.
pub fn tail_slope(points: &[(f64, f64)], fit: &TailFit) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|(x, f)| fit.contains(*x) && *f > 0.0)
        .map(|(x, f)| (*x, f.log10()))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable tail points in [{}, {}], need 3",
            xs.len(),
            fit.k_lo,
            fit.k_hi
        )));
    }
    Ok(least_squares_slope(&xs, &ys))
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Percentile bootstrap band of the CCDF at each threshold. Resampling the
/// samples with replacement makes the exceedance count binomial.
pub fn bootstrap_band<R: Rng + ?Sized>(
    ccdf: &Ccdf,
    thresholds: &[f64],
    resamples: usize,
    confidence: f64,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let n = ccdf.total();
    let lo_q = (1.0 - confidence) / 2.0;
    thresholds
        .iter()
        .map(|&t| {
            let f = ccdf.fraction_above(t);
            let dist = Binomial::new(n, f).expect("fraction is a probability");
            let mut draws: Vec<f64> = (0..resamples).map(|_| dist.sample(rng) as f64 / n as f64).collect();
            draws.sort_by(f64::total_cmp);
            let at = |q: f64| draws[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
            (at(lo_q), at(1.0 - lo_q))
        })
        .collect()
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// One row of `ccdf.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcdfRow {
    pub density: f64,
    pub bandwidth_mhz: u32,
    pub oneshot_cfg: String,
    pub harq: String,
    pub distance_bin_m: f64,
    pub ipg_ms: f64,
    pub ccdf: f64,
}

/// One row of `prr.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrrRow {
    pub density: f64,
    pub bandwidth_mhz: u32,
    pub oneshot_cfg: String,
    pub harq: String,
    pub distance_bin_m: f64,
    pub prr: f64,
    pub tx_count: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_success_only_timestamps() {
        let mut s = MetricStore::new(DistanceBins::default());
        s.record_reception(1, 2, 1000, 300.0);
        assert_eq!(s.bin(15).unwrap().ipg_samples(), 0);
        assert_eq!(s.bin(15).unwrap().rx_success, 1);
    }

    #[test]
    fn consecutive_differences() {
        let mut s = MetricStore::new(DistanceBins::default());
        for t in [1000, 1100, 1800] {
            s.record_reception(4, 9, t, 201.0);
        }
        // another pair does not interfere
        s.record_reception(9, 4, 1050, 201.0);
        let hist = &s.bin(10).unwrap().ipg_ms;
        assert_eq!(hist.iter().map(|(k, v)| (*k, *v)).collect::<Vec<_>>(), vec![(100, 1), (700, 1)]);
    }

    #[test]
    fn out_of_range_distance_ignored() {
        let mut s = MetricStore::new(DistanceBins::default());
        s.record_transmission(600.0);
        s.record_reception(1, 2, 10, 600.0);
        assert!(s.bin_stats().iter().all(|b| b.tx_count == 0 && b.rx_success == 0));
    }

    #[test]
    fn ccdf_point_mass() {
        let c = Ccdf::from_samples(&[100, 100, 100]).unwrap();
        assert_eq!(c.fraction_above(99.0), 1.0);
        assert_eq!(c.fraction_above(100.0), 0.0);
        assert_eq!(c.fraction_above(0.0), 1.0);
    }

    #[test]
    fn ccdf_median_split() {
        let c = Ccdf::from_samples(&[100, 200]).unwrap();
        assert_eq!(c.fraction_above(150.0), 0.5);
        assert_eq!(c.points(), &[(0.0, 1.0), (100.0, 0.5), (200.0, 0.0)]);
    }

    #[test]
    fn empty_bin_errors() {
        let s = MetricStore::new(DistanceBins::default());
        assert!(matches!(s.ccdf(3), Err(Error::InsufficientData(_))));
        assert!(matches!(s.prr(3), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn prr_ratios() {
        let mut s = MetricStore::new(DistanceBins::default());
        for i in 0..4 {
            s.record_transmission(50.0);
            if i < 3 {
                s.record_reception(0, 1, 100 * (i + 1), 50.0);
            }
        }
        assert_eq!(s.prr(2).unwrap(), 0.75);
        let mut all = MetricStore::new(DistanceBins::default());
        all.record_transmission(5.0);
        all.record_reception(0, 1, 1, 5.0);
        assert_eq!(all.prr(0).unwrap(), 1.0);
        let mut none = MetricStore::new(DistanceBins::default());
        none.record_transmission(5.0);
        assert_eq!(none.prr(0).unwrap(), 0.0);
    }

    fn geometric_ccdf(p: f64) -> Ccdf {
        // IPG of k periods with probability (1-p)^(k-1) p, scaled to counts.
        let mut hist = BTreeMap::new();
        for k in 1..=400u32 {
            let n = (1e18 * (1.0 - p).powi(k as i32 - 1) * p).round() as u64;
            if n > 0 {
                hist.insert(100 * k, n);
            }
        }
        Ccdf::from_histogram(&hist).unwrap()
    }

    #[test]
    fn geometric_tail_slopes() {
        for p in [0.5, 0.1] {
            let c = geometric_ccdf(p);
            let fit = TailFit { k_lo: 2, k_hi: 20, min_exceedances: 1 };
            let slope = tail_slope(&c.period_points(100.0, &fit), &fit).unwrap();
            assert!((slope - (1.0 - p).log10()).abs() < 1e-9, "p={p} slope={slope}");
        }
    }

    #[test]
    fn fractions_round_trip() {
        let c = Ccdf::from_samples(&[100, 100, 200, 700, 100, 300]).unwrap();
        assert_eq!(Ccdf::from_fractions(c.points(), c.total()).unwrap(), c);
        assert!(Ccdf::from_fractions(&[(0.0, 1.0), (100.0, 0.5)], 4).is_err());
    }

    #[test]
    fn flat_segment_has_zero_slope() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.3)).collect();
        assert_eq!(tail_slope(&pts, &TailFit::new(0, 9)).unwrap(), 0.0);
    }

    #[test]
    fn too_few_points() {
        let pts = [(1.0, 0.5), (2.0, 0.25)];
        assert!(tail_slope(&pts, &TailFit::new(0, 9)).is_err());
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = MetricStore::new(DistanceBins::default());
        let mut b = MetricStore::new(DistanceBins::default());
        for (s, base) in [(&mut a, 0u64), (&mut b, 10_000)] {
            s.record_transmission(10.0);
            s.record_reception(0, 1, base + 100, 10.0);
            s.record_reception(0, 1, base + 300, 10.0);
        }
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.bin(0).unwrap().ipg_ms.get(&200), Some(&2));
        assert_eq!(ab.bin(0).unwrap().tx_count, 2);
    }

    #[test]
    fn bootstrap_band_brackets_estimate() {
        let c = Ccdf::from_samples(&(1..=1000).collect::<Vec<u32>>()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let band = bootstrap_band(&c, &[500.0, 900.0], 2000, 0.95, &mut rng);
        assert!(band[0].0 < 0.5 && band[0].1 > 0.5);
        assert!((band[0].1 - band[0].0) < 0.08);
        assert!(band[1].0 < 0.1 && band[1].1 > 0.1);
    }

    #[test]
    fn spearman_extremes() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let up: Vec<f64> = x.iter().map(|v| v * v).collect();
        let down: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn modal_gap() {
        let mut s = MetricStore::new(DistanceBins::default());
        for g in [100, 100, 600, 600, 600, 612] {
            s.record_generation_gap(g);
        }
        assert_eq!(s.modal_generation_gap(), Some(600));
    }
}
