//! Manifests, sweep execution and result files.
//!
//! A manifest is a TOML file describing one sweep grid plus the settings of
//! the analytic and validation steps. Every emitted CSV starts with a
//! `# config_hash=<hex>` line; `validate` refuses simulation outputs whose
//! hash does not match the manifest it is given.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{
    compare_slopes, oracle_tail, tail, InterfererMode, ReselectionParams, SlopeComparison, TailCurve, TailModelConfig,
};
use crate::channel::ChannelConfig;
use crate::congestion::CongestionConfig;
use crate::engine::{run_replication, ReplicationSeeds, ScenarioConfig, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{tail_slope, Ccdf, CcdfRow, DistanceBins, MetricStore, PrrRow, TailFit};
use crate::resource_grid::Bandwidth;
use crate::scheduler::{CounterConfig, OneShotSetting, SchedulerConfig, SensingConfig};

/// Environment variable that overrides the manifest seed.
pub const SEED_ENV: &str = "CV2X_SEED";

pub const CCDF_FILE: &str = "ccdf.csv";
pub const PRR_FILE: &str = "prr.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TAIL_FILE: &str = "tail.csv";
pub const ORACLE_FILE: &str = "oracle.csv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub replications: u32,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, replications: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub densities: Vec<f64>,
    pub bandwidths: Vec<u32>,
    pub oneshot: Vec<OneShotSetting>,
    pub harq: Vec<bool>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            densities: vec![125.0],
            bandwidths: vec![10],
            oneshot: vec![OneShotSetting::Off],
            harq: vec![true],
        }
    }
}

/// SPS counter as written in manifests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsSection {
    pub alpha: u32,
    pub beta: u32,
    pub keep_probability: f64,
}

impl Default for SpsSection {
    fn default() -> Self {
        SpsSection {
            alpha: 5,
            beta: 15,
            keep_probability: 0.8,
        }
    }
}

impl SpsSection {
    pub fn counter(&self) -> CounterConfig {
        CounterConfig::sps(self.alpha, self.beta, self.keep_probability)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub sps: SpsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    /// Distance whose bin supplies the simulated CCDF and P_f.
    pub distance_m: f64,
    pub interferer_modes: Vec<InterfererMode>,
    pub k_max: u32,
    /// First BSM period of the fit. Unset: two past the smallest minimum
    /// counter, the first period at which the model can move.
    pub fit_k_lo: Option<u32>,
    pub fit_k_hi: u32,
    pub min_exceedances: u64,
    /// Fixed P_f; unset takes the simulated PRR at the validation bin.
    pub p_f: Option<f64>,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            distance_m: 200.0,
            interferer_modes: vec![InterfererMode::Single],
            k_max: 80,
            fit_k_lo: None,
            fit_k_hi: 50,
            min_exceedances: 10,
            p_f: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticSection {
    pub oneshot: OneShotSetting,
    pub p_f: f64,
    pub interferer_mode: InterfererMode,
    pub k_max: u32,
    pub trials: u64,
}

impl Default for AnalyticSection {
    fn default() -> Self {
        AnalyticSection {
            oneshot: OneShotSetting::Off,
            p_f: 0.9,
            interferer_mode: InterfererMode::Single,
            k_max: 60,
            trials: 1_000_000,
        }
    }
}

/// Overrides applied by `--desk-scale`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskScale {
    pub highway_length_m: Option<f64>,
    pub sim_time_s: Option<f64>,
    pub warmup_s: Option<f64>,
    pub replications: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub run: RunSection,
    pub scenario: ScenarioConfig,
    pub sweep: Sweep,
    pub scheduler: SchedulerSection,
    pub channel: ChannelConfig,
    pub sensing: SensingConfig,
    pub congestion: CongestionConfig,
    pub bins: DistanceBins,
    pub validation: ValidationSection,
    pub analytic: AnalyticSection,
    pub desk_scale: Option<DeskScale>,
}

/// Command-line adjustments to a manifest.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<u32>,
    pub desk_scale: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply desk scale, then the seed environment variable, then explicit
    /// overrides, and validate the result.
    pub fn resolve(&self, overrides: &Overrides) -> Result<ResolvedRun> {
        let mut m = self.clone();
        if overrides.desk_scale {
            let desk = m.desk_scale.ok_or_else(|| {
                Error::Config("--desk-scale given but the manifest has no [desk_scale] table".into())
            })?;
            if let Some(v) = desk.highway_length_m {
                m.scenario.highway_length_m = v;
            }
            if let Some(v) = desk.sim_time_s {
                m.scenario.sim_time_s = v;
            }
            if let Some(v) = desk.warmup_s {
                m.scenario.warmup_s = v;
            }
            if let Some(v) = desk.replications {
                m.run.replications = v;
            }
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            m.run.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        if let Some(seed) = overrides.seed {
            m.run.seed = seed;
        }
        if let Some(r) = overrides.replications {
            m.run.replications = r;
        }
        m.desk_scale = None;
        let run = ResolvedRun { manifest: m };
        run.validate()?;
        Ok(run)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub density: f64,
    pub bandwidth_mhz: u32,
    pub oneshot: OneShotSetting,
    pub harq: bool,
}

impl GridPoint {
    pub fn harq_label(&self) -> &'static str {
        if self.harq {
            "on"
        } else {
            "off"
        }
    }

    fn key(&self) -> (String, u32, String, &'static str) {
        (fmt_f64(self.density), self.bandwidth_mhz, self.oneshot.to_string(), self.harq_label())
    }
}

/// A manifest with all overrides applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedRun {
    pub manifest: RunManifest,
}

/// The part of a resolved run that determines simulation outputs.
#[derive(Serialize)]
struct SimulationIdentity<'a> {
    run: &'a RunSection,
    scenario: &'a ScenarioConfig,
    sweep: &'a Sweep,
    scheduler: &'a SchedulerSection,
    channel: &'a ChannelConfig,
    sensing: &'a SensingConfig,
    congestion: &'a CongestionConfig,
    bins: &'a DistanceBins,
}

impl ResolvedRun {
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.run.replications == 0 {
            return Err(Error::Config("run.replications must be at least 1".into()));
        }
        let s = &m.sweep;
        if s.densities.is_empty() || s.bandwidths.is_empty() || s.oneshot.is_empty() || s.harq.is_empty() {
            return Err(Error::Config("sweep lists must all be non-empty".into()));
        }
        for &mhz in &s.bandwidths {
            Bandwidth::from_mhz(mhz)?;
        }
        for point in self.grid() {
            self.sim_config(&point)?.validate()?;
        }
        let v = &m.validation;
        if v.interferer_modes.is_empty() {
            return Err(Error::Config("validation.interferer_modes must be non-empty".into()));
        }
        if m.bins.bin_of(v.distance_m).is_none() {
            return Err(Error::Config(format!(
                "validation.distance_m = {} lies outside the distance bins",
                v.distance_m
            )));
        }
        if let Some(p) = v.p_f {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("validation.p_f = {p} outside [0, 1]")));
            }
        }
        self.analytic_config()?.validate()?;
        if m.analytic.trials == 0 {
            return Err(Error::Config("analytic.trials must be positive".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.manifest.run.seed
    }

    pub fn replications(&self) -> u32 {
        self.manifest.run.replications
    }

    /// Densities, then bandwidths, then one-shot settings, then HARQ.
    pub fn grid(&self) -> Vec<GridPoint> {
        let s = &self.manifest.sweep;
        let mut out = Vec::new();
        for &density in &s.densities {
            for &bandwidth_mhz in &s.bandwidths {
                for &oneshot in &s.oneshot {
                    for &harq in &s.harq {
                        out.push(GridPoint {
                            density,
                            bandwidth_mhz,
                            oneshot,
                            harq,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn sim_config(&self, point: &GridPoint) -> Result<SimConfig> {
        let m = &self.manifest;
        Ok(SimConfig {
            scenario: ScenarioConfig {
                density_vue_per_km: point.density,
                ..m.scenario
            },
            bandwidth: Bandwidth::from_mhz(point.bandwidth_mhz)?,
            channel: m.channel,
            scheduler: SchedulerConfig {
                sps: m.scheduler.sps.counter(),
                one_shot: point.oneshot.counter(),
                harq: point.harq,
            },
            sensing: m.sensing,
            congestion: m.congestion,
            bins: m.bins,
        })
    }

    /// Hash of everything that shapes simulation outputs.
    pub fn simulation_hash(&self) -> String {
        let m = &self.manifest;
        hash_json(&SimulationIdentity {
            run: &m.run,
            scenario: &m.scenario,
            sweep: &m.sweep,
            scheduler: &m.scheduler,
            channel: &m.channel,
            sensing: &m.sensing,
            congestion: &m.congestion,
            bins: &m.bins,
        })
    }

    /// Hash of the whole resolved run.
    pub fn config_hash(&self) -> String {
        hash_json(&self.manifest)
    }

    fn sps_params(&self) -> Result<ReselectionParams> {
        let sps = self.manifest.scheduler.sps;
        ReselectionParams::new(sps.alpha, sps.beta, 1.0 - sps.keep_probability)
    }

    fn oneshot_params(setting: OneShotSetting) -> Result<Option<ReselectionParams>> {
        match setting {
            OneShotSetting::Off => Ok(None),
            OneShotSetting::Range(a, b) => ReselectionParams::new(a, b, 1.0).map(Some),
        }
    }

    /// Tail model settings of the `analytic` and `oracle` commands.
    pub fn analytic_config(&self) -> Result<TailModelConfig> {
        let a = &self.manifest.analytic;
        Ok(TailModelConfig {
            sps: self.sps_params()?,
            oneshot: Self::oneshot_params(a.oneshot)?,
            p_f: a.p_f,
            interferer_mode: a.interferer_mode,
            k_max: a.k_max,
        })
    }

    /// Fit range for a grid point.
    pub fn fit_for(&self, oneshot: OneShotSetting) -> TailFit {
        let v = &self.manifest.validation;
        let rho_min = match oneshot {
            OneShotSetting::Off => self.manifest.scheduler.sps.alpha,
            OneShotSetting::Range(a, _) => a.min(self.manifest.scheduler.sps.alpha),
        };
        TailFit {
            k_lo: v.fit_k_lo.unwrap_or(rho_min + 2),
            k_hi: v.fit_k_hi,
            min_exceedances: v.min_exceedances,
        }
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Shortest decimal that round-trips.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Merged statistics of one grid point.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub point: GridPoint,
    pub store: MetricStore,
}

impl PointResult {
    /// Modal gap between BSM generations; 100 ms if none were recorded.
    pub fn bsm_period_ms(&self) -> u32 {
        self.store.modal_generation_gap().unwrap_or(100)
    }
}

/// Run every replication of every grid point on the current rayon pool.
/// Results do not depend on the number of threads.
pub fn run_grid(run: &ResolvedRun) -> Result<Vec<PointResult>> {
    let grid = run.grid();
    let reps = run.replications();
    let tasks: Vec<(usize, u32)> = (0..grid.len()).flat_map(|p| (0..reps).map(move |r| (p, r))).collect();
    let stores: Vec<Result<MetricStore>> = tasks
        .par_iter()
        .map(|&(p, r)| {
            let cfg = run.sim_config(&grid[p])?;
            log::debug!("grid point {p} replication {r}");
            run_replication(&cfg, ReplicationSeeds::derive(run.seed(), p as u32, r))
        })
        .collect();
    let mut results: Vec<PointResult> = grid
        .iter()
        .map(|&point| PointResult {
            point,
            store: MetricStore::new(run.manifest.bins),
        })
        .collect();
    for (&(p, _), store) in tasks.iter().zip(stores) {
        results[p].store.merge(&store?);
    }
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMetadata {
    pub density: f64,
    pub bandwidth_mhz: u32,
    pub oneshot_cfg: String,
    pub harq: String,
    pub bsm_period_ms: u32,
    /// IPG samples per distance bin.
    pub ipg_samples: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub seed: u64,
    pub replications: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub points: Vec<PointMetadata>,
}

pub fn ccdf_rows(results: &[PointResult]) -> Vec<CcdfRow> {
    let mut rows = Vec::new();
    for r in results {
        let bins = r.store.bins();
        for b in 0..bins.count {
            let Ok(ccdf) = r.store.ccdf(b) else { continue };
            for &(ipg_ms, fraction) in ccdf.points() {
                rows.push(CcdfRow {
                    density: r.point.density,
                    bandwidth_mhz: r.point.bandwidth_mhz,
                    oneshot_cfg: r.point.oneshot.to_string(),
                    harq: r.point.harq_label().into(),
                    distance_bin_m: bins.center(b),
                    ipg_ms,
                    ccdf: fraction,
                });
            }
        }
    }
    rows
}

pub fn prr_rows(results: &[PointResult]) -> Vec<PrrRow> {
    let mut rows = Vec::new();
    for r in results {
        let bins = r.store.bins();
        for (b, stats) in r.store.bin_stats().iter().enumerate() {
            if stats.tx_count == 0 {
                continue;
            }
            rows.push(PrrRow {
                density: r.point.density,
                bandwidth_mhz: r.point.bandwidth_mhz,
                oneshot_cfg: r.point.oneshot.to_string(),
                harq: r.point.harq_label().into(),
                distance_bin_m: bins.center(b),
                prr: stats.rx_success as f64 / stats.tx_count as f64,
                tx_count: stats.tx_count,
            });
        }
    }
    rows
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write rows as CSV behind a hash comment line.
pub fn write_csv<T: Serialize>(path: &Path, hash: &str, rows: &[T], header: &[&str]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# config_hash={hash}").expect("write to memory");
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(header)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Hash recorded in the first line of an emitted CSV.
pub fn read_csv_hash(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .map(|h| h.trim().to_string())
        .ok_or_else(|| Error::InsufficientData(format!("{} has no config hash line", path.display())))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const CCDF_HEADER: [&str; 7] = ["density", "bandwidth_mhz", "oneshot_cfg", "harq", "distance_bin_m", "ipg_ms", "ccdf"];
const PRR_HEADER: [&str; 7] = ["density", "bandwidth_mhz", "oneshot_cfg", "harq", "distance_bin_m", "prr", "tx_count"];

#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub results: Vec<PointResult>,
    pub metadata: Metadata,
}

/// Run the sweep and write `ccdf.csv`, `prr.csv` and `metadata.json`.
pub fn simulate(run: &ResolvedRun, out_dir: &Path) -> Result<SimulateOutput> {
    create_dir(out_dir)?;
    let results = run_grid(run)?;
    let hash = run.simulation_hash();
    write_csv(&out_dir.join(CCDF_FILE), &hash, &ccdf_rows(&results), &CCDF_HEADER)?;
    write_csv(&out_dir.join(PRR_FILE), &hash, &prr_rows(&results), &PRR_HEADER)?;
    let metadata = Metadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: run.seed(),
        replications: run.replications(),
        config_hash: hash,
        config: serde_json::to_value(&run.manifest)?,
        points: results
            .iter()
            .map(|r| PointMetadata {
                density: r.point.density,
                bandwidth_mhz: r.point.bandwidth_mhz,
                oneshot_cfg: r.point.oneshot.to_string(),
                harq: r.point.harq_label().into(),
                bsm_period_ms: r.bsm_period_ms(),
                ipg_samples: r.store.bin_stats().iter().map(|s| s.ipg_samples()).collect(),
            })
            .collect(),
    };
    let path = out_dir.join(METADATA_FILE);
    let mut json = serde_json::to_vec_pretty(&metadata)?;
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(SimulateOutput { results, metadata })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub density: f64,
    pub bandwidth_mhz: u32,
    pub oneshot_cfg: String,
    pub harq: String,
    pub interferer_mode: InterfererMode,
    pub distance_bin_m: f64,
    pub slope_analytic: f64,
    pub slope_sim: f64,
    pub relative_gap: f64,
    pub p_f: f64,
    pub fit_k_lo: u32,
    pub fit_k_hi: u32,
    pub fit_points: usize,
}

const VALIDATION_HEADER: [&str; 13] = [
    "density",
    "bandwidth_mhz",
    "oneshot_cfg",
    "harq",
    "interferer_mode",
    "distance_bin_m",
    "slope_analytic",
    "slope_sim",
    "relative_gap",
    "p_f",
    "fit_k_lo",
    "fit_k_hi",
    "fit_points",
];

/// Simulation outputs read back from disk.
struct StoredSimulation {
    ccdf: Vec<CcdfRow>,
    prr: Vec<PrrRow>,
    metadata: Metadata,
}

fn load_simulation(out_dir: &Path, expected_hash: &str) -> Result<Option<StoredSimulation>> {
    let files = [CCDF_FILE, PRR_FILE, METADATA_FILE].map(|f| out_dir.join(f));
    if files.iter().any(|f| !f.exists()) {
        return Ok(None);
    }
    for f in &files[..2] {
        let found = read_csv_hash(f)?;
        if found != expected_hash {
            return Err(Error::HashMismatch {
                dir: out_dir.to_path_buf(),
                found,
                expected: expected_hash.to_string(),
            });
        }
    }
    let text = fs::read_to_string(&files[2]).map_err(|e| Error::io(&files[2], e))?;
    let metadata: Metadata = serde_json::from_str(&text)?;
    if metadata.config_hash != expected_hash {
        return Err(Error::HashMismatch {
            dir: out_dir.to_path_buf(),
            found: metadata.config_hash,
            expected: expected_hash.to_string(),
        });
    }
    Ok(Some(StoredSimulation {
        ccdf: read_csv(&files[0])?,
        prr: read_csv(&files[1])?,
        metadata,
    }))
}

/// Compare analytic and simulated tail slopes for every HARQ-enabled grid
/// point and interferer mode; runs `simulate` first if its outputs are
/// missing. Writes `validation.csv`.
pub fn validate(run: &ResolvedRun, out_dir: &Path) -> Result<Vec<ValidationRow>> {
    let hash = run.simulation_hash();
    let stored = match load_simulation(out_dir, &hash)? {
        Some(s) => s,
        None => {
            log::info!("no simulation outputs in {}, running simulate", out_dir.display());
            simulate(run, out_dir)?;
            load_simulation(out_dir, &hash)?.expect("outputs were just written")
        }
    };
    let v = &run.manifest.validation;
    let bins = run.manifest.bins;
    let bin = bins.bin_of(v.distance_m).expect("validated distance");
    let bin_centre = bins.center(bin);
    let mut rows = Vec::new();
    for (point, meta) in run.grid().iter().zip(&stored.metadata.points) {
        if !point.harq {
            continue;
        }
        let (d, bw, os, hq) = point.key();
        let same = |density: f64, bandwidth: u32, oneshot: &str, harq: &str, dist: f64| {
            fmt_f64(density) == d && bandwidth == bw && oneshot == os && harq == hq && dist == bin_centre
        };
        let p_f = match v.p_f {
            Some(p) => p,
            None => stored
                .prr
                .iter()
                .find(|r| same(r.density, r.bandwidth_mhz, &r.oneshot_cfg, &r.harq, r.distance_bin_m))
                .map(|r| r.prr)
                .ok_or_else(|| {
                    Error::MissingBin(format!(
                        "no PRR row for density {d}, {bw} MHz, one-shot {os}, HARQ {hq}, bin {bin_centre} m"
                    ))
                })?,
        };
        let points: Vec<(f64, f64)> = stored
            .ccdf
            .iter()
            .filter(|r| same(r.density, r.bandwidth_mhz, &r.oneshot_cfg, &r.harq, r.distance_bin_m))
            .map(|r| (r.ipg_ms, r.ccdf))
            .collect();
        let total = meta.ipg_samples.get(bin).copied().unwrap_or(0);
        if points.is_empty() || total == 0 {
            return Err(Error::MissingBin(format!(
                "no IPG samples for density {d}, {bw} MHz, one-shot {os}, bin {bin_centre} m"
            )));
        }
        let simulated = Ccdf::from_fractions(&points, total)?;
        let fit = run.fit_for(point.oneshot);
        for &mode in &v.interferer_modes {
            let cfg = TailModelConfig {
                sps: run.sps_params()?,
                oneshot: ResolvedRun::oneshot_params(point.oneshot)?,
                p_f,
                interferer_mode: mode,
                k_max: v.k_max,
            };
            let curve = tail(&cfg);
            let period = meta.bsm_period_ms as f64;
            let cmp = match compare_slopes(&curve, &simulated, period, &fit) {
                Ok(c) => c,
                // A tail too short to fit is reported, not fatal: the row
                // keeps the model slope and leaves the simulated side NaN.
                Err(Error::InsufficientData(why)) => {
                    log::warn!("{d} VUE/km {bw} MHz one-shot {os}: {why}");
                    let model: Vec<(f64, f64)> = fit
                        .grid()
                        .filter_map(|k| k.checked_sub(1).and_then(|i| curve.at(i)).map(|v| (k as f64, v)))
                        .collect();
                    SlopeComparison {
                        slope_analytic: tail_slope(&model, &fit).unwrap_or(f64::NAN),
                        slope_simulated: f64::NAN,
                        relative_gap: f64::NAN,
                        points: simulated.period_points(period, &fit).len(),
                    }
                }
                Err(e) => return Err(e),
            };
            rows.push(ValidationRow {
                density: point.density,
                bandwidth_mhz: point.bandwidth_mhz,
                oneshot_cfg: os.clone(),
                harq: hq.into(),
                interferer_mode: mode,
                distance_bin_m: bin_centre,
                slope_analytic: cmp.slope_analytic,
                slope_sim: cmp.slope_simulated,
                relative_gap: cmp.relative_gap,
                p_f,
                fit_k_lo: fit.k_lo,
                fit_k_hi: fit.k_hi,
                fit_points: cmp.points,
            });
        }
    }
    write_csv(&out_dir.join(VALIDATION_FILE), &run.config_hash(), &rows, &VALIDATION_HEADER)?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub k: u32,
    pub p_t_gt_k: f64,
}

fn tail_rows(curve: &TailCurve) -> Vec<TailRow> {
    curve
        .values()
        .iter()
        .enumerate()
        .map(|(k, &p)| TailRow { k: k as u32, p_t_gt_k: p })
        .collect()
}

/// Closed-form tail to `tail.csv`.
pub fn analytic(run: &ResolvedRun, out_dir: &Path) -> Result<TailCurve> {
    create_dir(out_dir)?;
    let curve = tail(&run.analytic_config()?);
    write_csv(&out_dir.join(TAIL_FILE), &run.config_hash(), &tail_rows(&curve), &["k", "p_t_gt_k"])?;
    Ok(curve)
}

/// Monte Carlo tail to `oracle.csv`.
pub fn oracle(run: &ResolvedRun, out_dir: &Path) -> Result<TailCurve> {
    create_dir(out_dir)?;
    let curve = oracle_tail(&run.analytic_config()?, run.manifest.analytic.trials, run.seed());
    write_csv(&out_dir.join(ORACLE_FILE), &run.config_hash(), &tail_rows(&curve), &["k", "p_t_gt_k"])?;
    Ok(curve)
}

/// Output directory for a command when `--out` is absent.
pub fn default_out_dir(config: &Path) -> PathBuf {
    let stem = config.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from("out").join(stem)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[run]
seed = 3
replications = 2

[scenario]
highway_length_m = 600
sim_time_s = 4
warmup_s = 1

[sweep]
densities = [60]
bandwidths = [10, 20]
oneshot = ["off"]
harq = [true, false]

[desk_scale]
sim_time_s = 3
"#;

    #[test]
    fn defaults_parse() {
        let m = RunManifest::from_toml_str("").unwrap();
        assert_eq!(m, RunManifest::default());
        assert_eq!(m.scheduler.sps.counter(), CounterConfig::sps(5, 15, 0.8));
    }

    #[test]
    fn unknown_field_is_named() {
        let err = RunManifest::from_toml_str("[scenario]\nhighway_lenght_m = 3\n").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("highway_lenght_m"), "{err}");
    }

    #[test]
    fn grid_is_the_sweep_product() {
        let m = RunManifest::from_toml_str(SMALL).unwrap();
        let run = m.resolve(&Overrides::default()).unwrap();
        let grid = run.grid();
        assert_eq!(grid.len(), 4);
        assert_eq!(grid[1].bandwidth_mhz, 10);
        assert!(!grid[1].harq);
    }

    #[test]
    fn overrides_and_desk_scale() {
        let m = RunManifest::from_toml_str(SMALL).unwrap();
        let run = m
            .resolve(&Overrides {
                seed: Some(11),
                replications: Some(4),
                desk_scale: true,
            })
            .unwrap();
        assert_eq!(run.seed(), 11);
        assert_eq!(run.replications(), 4);
        assert_eq!(run.manifest.scenario.sim_time_s, 3.0);
        let plain = m.resolve(&Overrides::default()).unwrap();
        assert_ne!(plain.simulation_hash(), run.simulation_hash());
        let no_desk = RunManifest::default().resolve(&Overrides {
            desk_scale: true,
            ..Overrides::default()
        });
        assert!(no_desk.unwrap_err().is_config());
    }

    #[test]
    fn empty_sweep_rejected() {
        let m = RunManifest::from_toml_str("[sweep]\nharq = []\n").unwrap();
        assert!(m.resolve(&Overrides::default()).unwrap_err().is_config());
    }

    #[test]
    fn fit_start_follows_smallest_counter() {
        let run = RunManifest::default().resolve(&Overrides::default()).unwrap();
        assert_eq!(run.fit_for(OneShotSetting::Off).k_lo, 7);
        assert_eq!(run.fit_for(OneShotSetting::Range(2, 6)).k_lo, 4);
        assert_eq!(run.fit_for(OneShotSetting::Range(5, 15)).k_lo, 7);
    }

    #[test]
    fn csv_hash_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![TailRow { k: 0, p_t_gt_k: 1.0 }, TailRow { k: 1, p_t_gt_k: 0.25 }];
        write_csv(&path, "abc", &rows, &["k", "p_t_gt_k"]).unwrap();
        assert_eq!(read_csv_hash(&path).unwrap(), "abc");
        let back: Vec<TailRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abc\nk,p_t_gt_k\n0,1.0\n"));
    }

    #[test]
    fn simulate_writes_grid_groups() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunManifest::from_toml_str(SMALL)
            .unwrap()
            .resolve(&Overrides::default())
            .unwrap();
        let out = simulate(&run, dir.path()).unwrap();
        assert_eq!(out.results.len(), 4);
        let prr: Vec<PrrRow> = read_csv(&dir.path().join(PRR_FILE)).unwrap();
        let mut groups: Vec<(u32, String)> = prr.iter().map(|r| (r.bandwidth_mhz, r.harq.clone())).collect();
        groups.dedup();
        assert_eq!(groups.len(), 4);
        assert_eq!(out.metadata.points.len(), 4);
    }

    #[test]
    fn short_tail_gives_nan_row() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{SMALL}\n[validation]\nfit_k_lo = 30\nmin_exceedances = 1000000\n");
        let run = RunManifest::from_toml_str(&text)
            .unwrap()
            .resolve(&Overrides::default())
            .unwrap();
        let rows = validate(&run, dir.path()).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.slope_sim.is_nan() && r.relative_gap.is_nan());
            assert!(r.slope_analytic < 0.0);
            assert_eq!(r.fit_points, 0);
        }
        let back: Vec<ValidationRow> = read_csv(&dir.path().join(VALIDATION_FILE)).unwrap();
        assert!(back[0].slope_sim.is_nan());
    }
}
