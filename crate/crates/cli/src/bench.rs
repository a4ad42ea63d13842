//! Benchmark driver: every scheduler on every instance of every setting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use roars_core::rewriter::SearchConfig;
use roars_core::scenario::{generate_scenario, GenConfig};
use roars_core::schedule::Instance;
use serde::{Deserialize, Serialize};

use crate::config::ensure_parent;
use crate::sim::{run_online, RoarsModel, RunSpec, SchedulerKind};
use crate::svg::{grouped_bars, BarGroup};
use crate::CliError;

/// One generator setting, e.g. one point of a property ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSetting {
    pub name: String,
    pub generator: GenConfig,
    /// Overrides the top-level checkpoint for this setting.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

/// Instance seeds: an explicit list, or `count` seeds from `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

/// Contents of a `bench --config` file. Relative checkpoint paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub settings: Vec<BenchSetting>,
    pub seeds: Seeds,
    pub schedulers: Vec<SchedulerKind>,
    #[serde(default = "default_queue_cap")]
    pub queue_cap: usize,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Search budgets for ROARS and ROARS-RANDOM; defaults by site count.
    #[serde(default)]
    pub search: Option<SearchConfig>,
    /// Seeds the schedulers' own randomness.
    #[serde(default)]
    pub seed: u64,
}

fn default_queue_cap() -> usize {
    roars_core::heuristics::DEFAULT_QUEUE_CAP
}

/// One scheduler on one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub setting: String,
    pub scheduler: String,
    pub seed: u64,
    pub tasks: usize,
    pub placed: usize,
    pub dropped: usize,
    pub avg_slowdown: Option<f64>,
    pub replans: usize,
    pub error: Option<String>,
}

/// Wall time of one row; kept apart from `BenchRow` so the row file is
/// byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub setting: String,
    pub scheduler: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

/// Per setting and scheduler aggregate over instances with a result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: String,
    pub scheduler: String,
    pub instances: usize,
    pub errors: usize,
    pub mean_avg_slowdown: Option<f64>,
    pub std_avg_slowdown: Option<f64>,
    pub drop_count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub timing: Vec<TimingRow>,
    pub summary: Vec<SummaryRow>,
}

impl BenchReport {
    /// Mean of `scheduler` in `setting`, if any instance produced one.
    pub fn mean(&self, setting: &str, scheduler: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.setting == setting && r.scheduler == scheduler)
            .and_then(|r| r.mean_avg_slowdown)
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

/// Runs the benchmark. `base` is the directory relative checkpoint paths
/// are resolved against.
pub fn run_benchmark(cfg: &BenchConfig, base: Option<&Path>) -> Result<BenchReport, CliError> {
    if cfg.settings.is_empty() || cfg.schedulers.is_empty() {
        return Err(CliError::Invalid("bench config needs at least one setting and one scheduler".into()));
    }
    if let Some(s) = &cfg.search {
        s.validate().map_err(CliError::Invalid)?;
    }
    let needs_model = cfg.schedulers.contains(&SchedulerKind::Roars);
    let mut specs = Vec::with_capacity(cfg.settings.len());
    for setting in &cfg.settings {
        setting.generator.validate()?;
        let search = cfg.search.unwrap_or_else(|| crate::train::default_search(&setting.generator));
        // a missing or unreadable checkpoint fails the ROARS rows only
        let model = match setting.checkpoint.as_ref().or(cfg.checkpoint.as_ref()) {
            Some(p) if needs_model => Some(RoarsModel::load(resolve(base, p), search).map_err(|e| e.to_string())),
            _ => None,
        };
        specs.push((search, model));
    }

    let seeds = cfg.seeds.to_vec();
    let jobs: Vec<(usize, u64)> = (0..cfg.settings.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<Vec<(BenchRow, TimingRow)>> = jobs
        .par_iter()
        .map(|&(si, seed)| {
            let setting = &cfg.settings[si];
            let (search, model) = &specs[si];
            let inst = generate_scenario(&setting.generator, seed)
                .and_then(Instance::new)
                .map(Arc::new)
                .map_err(|e| e.to_string());
            cfg.schedulers
                .iter()
                .map(|&kind| {
                    let spec = RunSpec {
                        kind,
                        queue_cap: cfg.queue_cap,
                        model: model.as_ref().and_then(|m| m.as_ref().ok()).cloned(),
                        search: *search,
                        seed: mix(cfg.seed, seed),
                    };
                    let outcome = match (&inst, model) {
                        (Err(e), _) => Err(e.clone()),
                        (Ok(_), Some(Err(e))) if kind == SchedulerKind::Roars => Err(e.clone()),
                        (Ok(inst), _) => run_online(inst, &spec).map(|(_, m)| m).map_err(|e| e.to_string()),
                    };
                    let mut row = BenchRow {
                        setting: setting.name.clone(),
                        scheduler: kind.to_string(),
                        seed,
                        tasks: 0,
                        placed: 0,
                        dropped: 0,
                        avg_slowdown: None,
                        replans: 0,
                        error: None,
                    };
                    let mut wall = 0.0;
                    match outcome {
                        Ok(m) => {
                            row.tasks = m.num_tasks;
                            row.placed = m.placed;
                            row.dropped = m.dropped.len();
                            row.avg_slowdown = m.avg_slowdown;
                            row.replans = m.replans;
                            wall = m.wall_time;
                        }
                        Err(e) => row.error = Some(e),
                    }
                    let timing = TimingRow {
                        setting: row.setting.clone(),
                        scheduler: row.scheduler.clone(),
                        seed,
                        wall_time_seconds: wall,
                    };
                    (row, timing)
                })
                .collect()
        })
        .collect();

    let mut report = BenchReport::default();
    for (row, timing) in results.into_iter().flatten() {
        report.rows.push(row);
        report.timing.push(timing);
    }
    report.summary = summarize(&report.rows, cfg);
    Ok(report)
}

fn summarize(rows: &[BenchRow], cfg: &BenchConfig) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        let s = cfg.settings.iter().position(|x| x.name == r.setting).unwrap_or(0);
        let k = cfg.schedulers.iter().position(|x| x.to_string() == r.scheduler).unwrap_or(0);
        groups.entry((s, k)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((s, k), rs)| {
            let vals: Vec<f64> = rs.iter().filter_map(|r| r.avg_slowdown).collect();
            let n = vals.len() as f64;
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / n);
            let std = mean.map(|m| (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt());
            SummaryRow {
                setting: cfg.settings[s].name.clone(),
                scheduler: cfg.schedulers[k].to_string(),
                instances: vals.len(),
                errors: rs.iter().filter(|r| r.error.is_some()).count(),
                mean_avg_slowdown: mean,
                std_avg_slowdown: std,
                drop_count: rs.iter().map(|r| r.dropped).sum(),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Writes `rows.csv`, `summary.csv`, `timing.csv` and `slowdown.svg` into `dir`.
pub fn write_report(report: &BenchReport, cfg: &BenchConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_csv(&report.rows, &dir.join("rows.csv"))?;
    write_csv(&report.summary, &dir.join("summary.csv"))?;
    write_csv(&report.timing, &dir.join("timing.csv"))?;
    let groups: Vec<BarGroup> = cfg
        .settings
        .iter()
        .map(|s| BarGroup {
            label: s.name.clone(),
            values: cfg
                .schedulers
                .iter()
                .map(|k| report.mean(&s.name, &k.to_string()))
                .collect(),
        })
        .collect();
    let series: Vec<String> = cfg.schedulers.iter().map(|k| k.to_string()).collect();
    let svg = grouped_bars("Average slowdown", &series, &groups);
    let path = dir.join("slowdown.svg");
    std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
    Ok(())
}
