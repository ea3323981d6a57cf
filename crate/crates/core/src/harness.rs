//! Experiment driver: enumerate failure scenarios over configured zones, run
//! the detectors, and aggregate per-scenario metrics into tables.
//!
//! Averages are taken per scenario and then grouped by zone, cardinality and
//! algorithm. Scenarios whose post-attack flow has no solution, or that
//! island a bus, are excluded from the averages and listed separately.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use itertools::Itertools;
use num_complex::Complex64;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, ZoneDiagnostics};
use crate::attack::{simulate_attack, AttackScenario, OperatingPoint, SimulatedAttack};
use crate::bfs::{bfs_detect, BfsOptions, DEFAULT_CAP};
use crate::detector::expose;
use crate::error::{Error, Result};
use crate::grid::{make_zone, Grid, Zone};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Expose,
    Bfs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Expose => "expose",
            Algorithm::Bfs => "bfs",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "expose" => Ok(Algorithm::Expose),
            "bfs" => Ok(Algorithm::Bfs),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedZone {
    pub name: String,
    pub nodes: Vec<usize>,
}

/// Level 1 is `seed_nodes`; each further level adds the neighbour ring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedSpec {
    pub seed_nodes: Vec<usize>,
    pub levels: usize,
}

/// Draw at most `per_k` failure sets per cardinality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub per_k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub zones: Vec<NamedZone>,
    #[serde(default)]
    pub nested: Option<NestedSpec>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub sample: Option<SampleSpec>,
    /// Run scenarios on the rayon pool. Wall times are then not comparable.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub bfs_early_stop: Option<f64>,
    #[serde(default = "default_bfs_cap")]
    pub bfs_cap: usize,
}

fn default_k_max() -> usize {
    3
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Expose]
}

fn default_bfs_cap() -> usize {
    DEFAULT_CAP
}

impl ExperimentConfig {
    pub fn new(zones: Vec<NamedZone>, k_max: usize, algorithms: Vec<Algorithm>) -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA,
            zones,
            nested: None,
            k_max,
            algorithms,
            sample: None,
            parallel: false,
            bfs_early_stop: None,
            bfs_cap: DEFAULT_CAP,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: CONFIG_SCHEMA,
            });
        }
        if self.zones.is_empty() && self.nested.is_none() {
            return Err(Error::Config("no zones configured".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if let Some(n) = &self.nested {
            if n.levels == 0 || n.seed_nodes.is_empty() {
                return Err(Error::Config("nested zones need seed nodes and levels >= 1".into()));
            }
        }
        if self.sample.is_some_and(|s| s.per_k == 0) {
            return Err(Error::Config("sample.per_k must be positive".into()));
        }
        let names: BTreeSet<&str> = self.zones.iter().map(|z| z.name.as_str()).collect();
        if names.len() != self.zones.len() {
            return Err(Error::Config("zone names must be unique".into()));
        }
        Ok(())
    }

    /// Explicit zones followed by the nested levels, named `level1`, ...
    pub fn resolve_zones(&self, grid: &Grid) -> Result<Vec<(String, Zone)>> {
        let mut out = Vec::new();
        for z in &self.zones {
            out.push((z.name.clone(), make_zone(grid, &z.nodes)?));
        }
        if let Some(n) = &self.nested {
            for (i, z) in build_nested_zones(grid, &n.seed_nodes, n.levels)?.into_iter().enumerate() {
                out.push((format!("level{}", i + 1), z));
            }
        }
        Ok(out)
    }
}

/// Nested zones grown by breadth-first rings around `seed_nodes` (bus ids),
/// never including the slack bus. Growth stops with a warning once no
/// further bus can be added or the zone would cover every non-slack bus.
pub fn build_nested_zones(grid: &Grid, seed_nodes: &[usize], levels: usize) -> Result<Vec<Zone>> {
    if levels == 0 {
        return Err(Error::Config("levels must be at least 1".into()));
    }
    let slack = grid.slack_index();
    let mut current = BTreeSet::new();
    for &id in seed_nodes {
        let p = grid.bus_index(id)?;
        if p == slack {
            return Err(Error::InvalidZone("seed nodes include the slack bus".into()));
        }
        current.insert(p);
    }
    let adjacency = grid.adjacency();
    let mut zones = vec![Zone::from_positions(grid, current.iter().copied().collect())?];
    for level in 2..=levels {
        let ring: BTreeSet<usize> = current
            .iter()
            .flat_map(|&i| adjacency[i].iter().copied())
            .filter(|&j| j != slack && !current.contains(&j))
            .collect();
        if ring.is_empty() || current.len() + ring.len() >= grid.n() - 1 {
            log::warn!("nested zone growth stopped at level {} of {levels}", level - 1);
            break;
        }
        current.extend(ring);
        zones.push(Zone::from_positions(grid, current.iter().copied().collect())?);
    }
    Ok(zones)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub false_negatives: usize,
    pub false_positives: usize,
    pub v_mag_err_pct: f64,
    /// `None` when the true angles are all zero but the recovered ones are not.
    pub v_ang_err_pct: Option<f64>,
    pub c_p: Option<f64>,
    pub c_q: Option<f64>,
    pub wall_time_s: f64,
}

/// `|F \ F_hat|`.
pub fn false_negatives(truth: &[usize], detected: &[usize]) -> usize {
    truth.iter().filter(|l| !detected.contains(l)).count()
}

/// `|F_hat \ F|`.
pub fn false_positives(truth: &[usize], detected: &[usize]) -> usize {
    detected.iter().filter(|l| !truth.contains(l)).count()
}

/// `100 ||(|V_hat| - |V|)||_2 / |||V|||_2`.
pub fn v_mag_err_pct(truth: &[Complex64], recovered: &[Complex64]) -> f64 {
    let num: f64 = truth
        .iter()
        .zip(recovered)
        .map(|(t, r)| (r.norm() - t.norm()).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = truth.iter().map(|t| t.norm_sqr()).sum::<f64>().sqrt();
    100.0 * num / den
}

/// Difference of two angles wrapped into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * std::f64::consts::PI);
    if w > std::f64::consts::PI {
        w - 2.0 * std::f64::consts::PI
    } else {
        w
    }
}

/// `100 ||wrap(angle(V_hat) - angle(V))||_2 / ||angle(V)||_2`. Zero when the
/// error is zero; `None` when only the denominator is.
pub fn v_ang_err_pct(truth: &[Complex64], recovered: &[Complex64]) -> Option<f64> {
    let num: f64 = truth
        .iter()
        .zip(recovered)
        .map(|(t, r)| wrap_angle(r.arg() - t.arg()).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = truth.iter().map(|t| t.arg().powi(2)).sum::<f64>().sqrt();
    if num == 0.0 {
        Some(0.0)
    } else if den == 0.0 {
        None
    } else {
        Some(100.0 * num / den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub name: String,
    pub nodes: Vec<usize>,
    pub n_h: usize,
    pub m_h: usize,
    pub lambda_h: usize,
    pub gamma_h: usize,
    pub has_covering_matching: bool,
    pub is_acyclic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub zone: String,
    pub k: usize,
    pub failed_lines: Vec<usize>,
    pub algorithm: Algorithm,
    pub detected_lines: Vec<usize>,
    pub metrics: Option<ScenarioMetrics>,
    /// Detector error, when it failed on this scenario.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NoSolution,
    Islanded,
    ZoneTooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRecord {
    pub zone: String,
    pub k: Option<usize>,
    pub failed_lines: Vec<usize>,
    /// Set when only one algorithm was skipped.
    pub algorithm: Option<Algorithm>,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub zone: String,
    pub lambda_h: usize,
    pub gamma_h: usize,
    pub k: usize,
    pub algorithm: Algorithm,
    pub scenarios: usize,
    pub excluded: usize,
    pub detector_errors: usize,
    pub mean_fn: f64,
    pub mean_fp: f64,
    pub mean_v_mag_err_pct: f64,
    pub mean_v_ang_err_pct: Option<f64>,
    pub mean_c_p: Option<f64>,
    pub mean_c_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub zone: String,
    pub m_h: usize,
    pub k: usize,
    pub algorithm: Algorithm,
    pub scenarios: usize,
    pub mean_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub zones: Vec<ZoneSummary>,
    pub scenarios: Vec<ScenarioRecord>,
    pub excluded: Vec<ExcludedRecord>,
    pub metrics: Vec<MetricsRow>,
    pub timing: Vec<TimingRow>,
}

/// Failure sets of each cardinality `1..=k_max`, subsampled when configured.
fn failure_sets(h_lines: &[usize], k_max: usize, sample: Option<SampleSpec>, zone_index: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for k in 1..=k_max.min(h_lines.len()) {
        let all: Vec<Vec<usize>> = h_lines.iter().copied().combinations(k).collect();
        match sample {
            Some(s) if all.len() > s.per_k => {
                let seed = s.seed ^ ((zone_index as u64) << 32) ^ k as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picks = index::sample(&mut rng, all.len(), s.per_k).into_vec();
                picks.sort_unstable();
                out.extend(picks.into_iter().map(|i| all[i].clone()));
            }
            _ => out.extend(all),
        }
    }
    out
}

struct ZoneRun<'a> {
    grid: &'a Grid,
    name: &'a str,
    diag: ZoneDiagnostics,
    bfs: Option<BfsOptions>,
}

impl ZoneRun<'_> {
    fn run(&self, alg: Algorithm, failed: &[usize], sim: &SimulatedAttack) -> ScenarioRecord {
        let grid = self.grid;
        let obs = &sim.observation;
        let t0 = Instant::now();
        let outcome = match alg {
            Algorithm::Expose => {
                expose(grid, obs, &self.diag).map(|d| (d.detected, d.zone_voltages, Some(d.confidence)))
            }
            Algorithm::Bfs => {
                bfs_detect(grid, obs, self.bfs.as_ref().expect("bfs enabled")).map(|r| (r.detected, r.zone_voltages, None))
            }
        };
        let wall_time_s = t0.elapsed().as_secs_f64();
        let mut record = ScenarioRecord {
            zone: self.name.to_string(),
            k: failed.len(),
            failed_lines: grid.line_ids(failed),
            algorithm: alg,
            detected_lines: Vec::new(),
            metrics: None,
            error: None,
        };
        match outcome {
            Ok((detected, v_hat, conf)) => {
                let truth = sim.true_zone_voltages();
                let conf = conf.unwrap_or_else(|| {
                    crate::detector::confidence(grid, &detected, &obs.assemble(&v_hat), obs)
                });
                record.metrics = Some(ScenarioMetrics {
                    false_negatives: false_negatives(failed, &detected),
                    false_positives: false_positives(failed, &detected),
                    v_mag_err_pct: v_mag_err_pct(truth.as_slice(), v_hat.as_slice()),
                    v_ang_err_pct: v_ang_err_pct(truth.as_slice(), v_hat.as_slice()),
                    c_p: conf.c_p,
                    c_q: conf.c_q,
                    wall_time_s,
                });
                record.detected_lines = grid.line_ids(&detected);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    }
}

enum Simulated {
    Ok(Vec<usize>, Box<SimulatedAttack>),
    Excluded(Vec<usize>, ExclusionReason),
}

/// Runs every configured scenario. Fails only on configuration problems;
/// per-scenario problems are recorded in the output.
pub fn run_experiment(grid: &Grid, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let zones = config.resolve_zones(grid)?;
    let pre = OperatingPoint::solve(grid)?;
    let mut out = ExperimentOutput::default();

    for (zi, (name, zone)) in zones.iter().enumerate() {
        let diag = analyze(grid, zone);
        out.zones.push(ZoneSummary {
            name: name.clone(),
            nodes: zone.h_node_ids(grid),
            n_h: zone.n_h(),
            m_h: zone.m_h(),
            lambda_h: diag.lambda_h,
            gamma_h: diag.gamma_h,
            has_covering_matching: diag.has_covering_matching,
            is_acyclic: diag.is_acyclic,
        });
        let mut algorithms: Vec<Algorithm> = config.algorithms.iter().copied().unique().collect();
        if algorithms.contains(&Algorithm::Bfs) && zone.m_h() > config.bfs_cap {
            log::warn!("zone {name}: {} in-zone lines exceed the search cap; skipping bfs", zone.m_h());
            out.excluded.push(ExcludedRecord {
                zone: name.clone(),
                k: None,
                failed_lines: Vec::new(),
                algorithm: Some(Algorithm::Bfs),
                reason: ExclusionReason::ZoneTooLarge,
            });
            algorithms.retain(|&a| a != Algorithm::Bfs);
        }
        let run = ZoneRun {
            grid,
            name,
            diag,
            bfs: Some(BfsOptions {
                cap: Some(config.bfs_cap),
                early_stop: config.bfs_early_stop,
                parallel: false,
            }),
        };

        let sets = failure_sets(&zone.h_lines, config.k_max, config.sample, zi);
        let simulate = |f: &Vec<usize>| -> Result<Simulated> {
            let sc = AttackScenario::new(grid, zone.clone(), f.clone())?;
            match simulate_attack(grid, &sc, &pre) {
                Ok(sim) => Ok(Simulated::Ok(f.clone(), Box::new(sim))),
                Err(Error::NoSolution { .. }) => Ok(Simulated::Excluded(f.clone(), ExclusionReason::NoSolution)),
                Err(Error::IslandedGrid(_)) => Ok(Simulated::Excluded(f.clone(), ExclusionReason::Islanded)),
                Err(e) => Err(e),
            }
        };
        let evaluate = |s: Result<Simulated>| -> Result<(Option<ExcludedRecord>, Vec<ScenarioRecord>)> {
            Ok(match s? {
                Simulated::Excluded(f, reason) => (
                    Some(ExcludedRecord {
                        zone: name.clone(),
                        k: Some(f.len()),
                        failed_lines: grid.line_ids(&f),
                        algorithm: None,
                        reason,
                    }),
                    Vec::new(),
                ),
                Simulated::Ok(f, sim) => (None, algorithms.iter().map(|&a| run.run(a, &f, &sim)).collect()),
            })
        };
        let results: Vec<Result<_>> = if config.parallel {
            sets.par_iter().map(|f| evaluate(simulate(f))).collect()
        } else {
            sets.iter().map(|f| evaluate(simulate(f))).collect()
        };
        for r in results {
            let (excluded, records) = r?;
            out.excluded.extend(excluded);
            out.scenarios.extend(records);
        }
    }
    aggregate(&mut out);
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(out: &mut ExperimentOutput) {
    let mut metrics = Vec::new();
    let mut timing = Vec::new();
    for z in &out.zones {
        let ks: BTreeSet<usize> = out
            .scenarios
            .iter()
            .filter(|s| s.zone == z.name)
            .map(|s| s.k)
            .chain(out.excluded.iter().filter(|e| e.zone == z.name).filter_map(|e| e.k))
            .collect();
        let algs: BTreeSet<Algorithm> = out.scenarios.iter().filter(|s| s.zone == z.name).map(|s| s.algorithm).collect();
        for &k in &ks {
            let excluded = out
                .excluded
                .iter()
                .filter(|e| e.zone == z.name && e.k == Some(k))
                .count();
            for &alg in &algs {
                let group: Vec<&ScenarioRecord> = out
                    .scenarios
                    .iter()
                    .filter(|s| s.zone == z.name && s.k == k && s.algorithm == alg)
                    .collect();
                let ok: Vec<&ScenarioMetrics> = group.iter().filter_map(|s| s.metrics.as_ref()).collect();
                metrics.push(MetricsRow {
                    zone: z.name.clone(),
                    lambda_h: z.lambda_h,
                    gamma_h: z.gamma_h,
                    k,
                    algorithm: alg,
                    scenarios: ok.len(),
                    excluded,
                    detector_errors: group.len() - ok.len(),
                    mean_fn: mean(ok.iter().map(|m| m.false_negatives as f64)).unwrap_or(0.0),
                    mean_fp: mean(ok.iter().map(|m| m.false_positives as f64)).unwrap_or(0.0),
                    mean_v_mag_err_pct: mean(ok.iter().map(|m| m.v_mag_err_pct)).unwrap_or(0.0),
                    mean_v_ang_err_pct: mean(ok.iter().filter_map(|m| m.v_ang_err_pct)),
                    mean_c_p: mean(ok.iter().filter_map(|m| m.c_p)),
                    mean_c_q: mean(ok.iter().filter_map(|m| m.c_q)),
                });
                let total: f64 = ok.iter().map(|m| m.wall_time_s).sum();
                timing.push(TimingRow {
                    zone: z.name.clone(),
                    m_h: z.m_h,
                    k,
                    algorithm: alg,
                    scenarios: ok.len(),
                    mean_seconds: if ok.is_empty() { 0.0 } else { total / ok.len() as f64 },
                    total_seconds: total,
                });
            }
        }
    }
    out.metrics = metrics;
    out.timing = timing;
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl ExperimentOutput {
    /// Writes `metrics.csv`, `timing.csv`, `zones.json`, `scenarios.jsonl`
    /// and `excluded.jsonl` into `dir`. `metrics.csv` holds no timings, so a
    /// fixed configuration reproduces it byte for byte.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("metrics.csv"), &self.metrics)?;
        write_csv(&dir.join("timing.csv"), &self.timing)?;
        std::fs::write(dir.join("zones.json"), serde_json::to_string_pretty(&self.zones)?)?;
        write_jsonl(&dir.join("scenarios.jsonl"), &self.scenarios)?;
        write_jsonl(&dir.join("excluded.jsonl"), &self.excluded)?;
        Ok(())
    }
}
