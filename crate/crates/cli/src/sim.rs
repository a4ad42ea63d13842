//! The online simulation loop for every kind of scheduler.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roars_core::heuristics::{schedule_offline_stf, schedule_online_heuristic, Heuristic};
use roars_core::policy::{load_checkpoint, NetPolicy, PolicyNet};
use roars_core::rewriter::{replan_online, OnlineRun, RandomPolicy, SearchConfig};
use roars_core::schedule::{Instance, ScheduleDag, TaskId};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which scheduler to run, by name.
///
/// Heuristic names are the intra-site rules (`STF`, `FCFS`, `SPT`, `EDD`,
/// `RIP`) and the distributed pairs (`SQTF`, ..., `RPTF`). `OFFLINE` is
/// offline shortest-task-first with every task known up front. `ROARS`
/// re-plans online with a trained policy; `ROARS-RANDOM` re-plans with
/// uniformly random rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchedulerKind {
    Heuristic(Heuristic),
    Offline,
    Roars,
    RoarsRandom,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerKind::Heuristic(h) => write!(f, "{h}"),
            SchedulerKind::Offline => f.write_str("OFFLINE"),
            SchedulerKind::Roars => f.write_str("ROARS"),
            SchedulerKind::RoarsRandom => f.write_str("ROARS-RANDOM"),
        }
    }
}

impl FromStr for SchedulerKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "OFFLINE" | "OFFLINE-STF" => Ok(SchedulerKind::Offline),
            "ROARS" => Ok(SchedulerKind::Roars),
            "ROARS-RANDOM" => Ok(SchedulerKind::RoarsRandom),
            _ => s
                .parse()
                .map(SchedulerKind::Heuristic)
                .map_err(|_| CliError::Invalid(format!("unknown scheduler {s:?}"))),
        }
    }
}

impl TryFrom<String> for SchedulerKind {
    type Error = CliError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SchedulerKind> for String {
    fn from(k: SchedulerKind) -> Self {
        k.to_string()
    }
}

/// A trained policy and the search settings it re-plans with.
#[derive(Debug, Clone)]
pub struct RoarsModel {
    pub net: Arc<PolicyNet>,
    pub search: SearchConfig,
}

impl RoarsModel {
    pub fn load(path: impl AsRef<Path>, search: SearchConfig) -> Result<Self, CliError> {
        let (net, _) = load_checkpoint(path, None)?;
        Ok(Self {
            net: Arc::new(net),
            search,
        })
    }

    fn check(&self, inst: &Instance) -> Result<(), CliError> {
        if self.net.config.accepts(inst.num_sites(), inst.num_filters()) {
            Ok(())
        } else {
            let l = self.net.config.layout;
            Err(CliError::Invalid(format!(
                "checkpoint expects {} site(s) and {} filter(s), scenario has {} and {}",
                l.sites.unwrap_or(1),
                l.num_filters,
                inst.num_sites(),
                inst.num_filters()
            )))
        }
    }
}

/// Everything `run_online` needs besides the instance.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub kind: SchedulerKind,
    pub queue_cap: usize,
    pub model: Option<RoarsModel>,
    pub search: SearchConfig,
    pub seed: u64,
}

impl RunSpec {
    pub fn new(kind: SchedulerKind) -> Self {
        Self {
            kind,
            queue_cap: roars_core::heuristics::DEFAULT_QUEUE_CAP,
            model: None,
            search: SearchConfig::default(),
            seed: 0,
        }
    }
}

/// Metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub num_tasks: usize,
    pub placed: usize,
    pub dropped: Vec<TaskId>,
    /// Mean slowdown over placed tasks; `None` when nothing was placed.
    pub avg_slowdown: Option<f64>,
    pub wall_time: f64,
    pub replans: usize,
}

/// Runs one scheduler over the arrival stream of `inst`.
pub fn run_online(inst: &Arc<Instance>, spec: &RunSpec) -> Result<(ScheduleDag, RunMetrics), CliError> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dag, dropped, replans) = match spec.kind {
        SchedulerKind::Heuristic(h) => {
            let o = schedule_online_heuristic(inst, h, spec.queue_cap);
            (o.dag, o.dropped, 0)
        }
        SchedulerKind::Offline => {
            let o = schedule_offline_stf(inst);
            (o.dag, o.dropped, 0)
        }
        SchedulerKind::Roars => {
            let model = spec
                .model
                .as_ref()
                .ok_or_else(|| CliError::Invalid("ROARS needs a checkpoint".into()))?;
            model.check(inst)?;
            let mut pol = NetPolicy::greedy(&model.net);
            let OnlineRun { dag, dropped, replans } = replan_online(inst, &mut pol, &model.search, &mut rng);
            (dag, dropped, replans)
        }
        SchedulerKind::RoarsRandom => {
            let OnlineRun { dag, dropped, replans } = replan_online(inst, &mut RandomPolicy, &spec.search, &mut rng);
            (dag, dropped, replans)
        }
    };
    let metrics = RunMetrics {
        num_tasks: inst.num_tasks(),
        placed: dag.num_placed(),
        avg_slowdown: dag.average_slowdown().ok(),
        dropped,
        wall_time: t0.elapsed().as_secs_f64(),
        replans,
    };
    Ok((dag, metrics))
}
