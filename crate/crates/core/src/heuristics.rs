//! Baseline schedulers: online list heuristics with a bounded waiting queue,
//! offline shortest-task-first, and an exhaustive oracle for tiny instances.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{Constraint, Instance, ScheduleDag, TaskId};

/// Queue capacity used throughout the experiments.
pub const DEFAULT_QUEUE_CAP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskRule {
    Fcfs,
    Stf,
    Edd,
    Spt,
    Rip,
}

impl TaskRule {
    pub const ALL: [TaskRule; 5] = [TaskRule::Stf, TaskRule::Fcfs, TaskRule::Spt, TaskRule::Edd, TaskRule::Rip];

    pub fn name(self) -> &'static str {
        match self {
            TaskRule::Fcfs => "FCFS",
            TaskRule::Stf => "STF",
            TaskRule::Edd => "EDD",
            TaskRule::Spt => "SPT",
            TaskRule::Rip => "RIP",
        }
    }

    /// Letter used in the distributed baseline names (SQTF, FPTF, ...).
    fn letter(self) -> char {
        match self {
            TaskRule::Fcfs => 'F',
            TaskRule::Stf => 'S',
            TaskRule::Edd => 'D',
            TaskRule::Spt => 'P',
            TaskRule::Rip => 'R',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteRule {
    /// Lowest airmass at the candidate start.
    BestQuality,
    /// Highest equipment priority factor.
    BestPriority,
}

impl SiteRule {
    pub const ALL: [SiteRule; 2] = [SiteRule::BestQuality, SiteRule::BestPriority];

    fn letter(self) -> char {
        match self {
            SiteRule::BestQuality => 'Q',
            SiteRule::BestPriority => 'P',
        }
    }
}

/// A task rule, optionally paired with a site rule for multi-site arrays.
/// Without a site rule the earliest start wins, ties to the lower site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Heuristic {
    pub task_rule: TaskRule,
    pub site_rule: Option<SiteRule>,
}

impl Heuristic {
    pub fn intra(task_rule: TaskRule) -> Self {
        Self {
            task_rule,
            site_rule: None,
        }
    }

    pub fn distributed(task_rule: TaskRule, site_rule: SiteRule) -> Self {
        Self {
            task_rule,
            site_rule: Some(site_rule),
        }
    }

    /// The five intra-site baselines.
    pub fn intra_site_set() -> Vec<Heuristic> {
        TaskRule::ALL.iter().map(|&r| Self::intra(r)).collect()
    }

    /// The ten distributed baselines, task rule × site rule.
    pub fn distributed_set() -> Vec<Heuristic> {
        TaskRule::ALL
            .iter()
            .flat_map(|&r| SiteRule::ALL.iter().map(move |&s| Self::distributed(r, s)))
            .collect()
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.site_rule {
            None => f.write_str(self.task_rule.name()),
            Some(s) => write!(f, "{}{}TF", self.task_rule.letter(), s.letter()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown heuristic {0:?}")]
pub struct UnknownHeuristic(pub String);

impl FromStr for Heuristic {
    type Err = UnknownHeuristic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase();
        if let Some(r) = TaskRule::ALL.iter().find(|r| r.name() == up) {
            return Ok(Self::intra(*r));
        }
        Self::distributed_set()
            .into_iter()
            .find(|h| h.to_string() == up)
            .ok_or_else(|| UnknownHeuristic(s.to_string()))
    }
}

/// Sort key of a task under `rule`; smaller runs first. Ties fall back to
/// arrival, then id.
pub fn rank_key(inst: &Instance, rule: TaskRule, task: TaskId) -> (i64, u32, TaskId) {
    let info = inst.task(task);
    let target = &inst.scenario().targets[info.target as usize];
    let primary = match rule {
        TaskRule::Fcfs => i64::from(info.arrival),
        TaskRule::Stf => i64::from(info.exposure),
        TaskRule::Edd => i64::from(target.fade_time),
        TaskRule::Spt => i64::from(target.duration()),
        TaskRule::Rip => -(i64::from(info.filter_count()) * i64::from(inst.target_task_count(info.target))),
    };
    (primary, info.arrival, task)
}

/// Picks a site among `(site, start)` candidates.
fn choose_site(inst: &Instance, task: TaskId, rule: Option<SiteRule>, cands: &[(usize, u32)]) -> Option<(usize, u32)> {
    let key = |&(s, b): &(usize, u32)| -> (f64, u32, usize) {
        match rule {
            None => (0.0, b, s),
            Some(SiteRule::BestQuality) => (inst.airmass(task, s, b), b, s),
            Some(SiteRule::BestPriority) => (-inst.equipment_priority(s), b, s),
        }
    };
    cands
        .iter()
        .copied()
        .min_by(|x, y| key(x).partial_cmp(&key(y)).unwrap())
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub dag: ScheduleDag,
    /// Tasks whose deadline became unreachable, in drop order.
    pub dropped: Vec<TaskId>,
}

/// Online list scheduling over the arrival stream.
///
/// A target's tasks join the waiting queue when the target arrives. At every
/// step the queue is scanned in rank order. A task is ready when only busy
/// filters keep it from starting now; ready tasks are started in rank order
/// and the scan stops at the first ready task that has to wait (no
/// backfilling past it). Tasks not ready yet (future required time, target
/// not visible, cadence gap) are skipped. While more than `queue_cap` tasks
/// wait, the rank-minimal one is committed to its earliest feasible slot.
/// Tasks with no feasible slot left are dropped.
pub fn schedule_online_heuristic(inst: &Arc<Instance>, heuristic: Heuristic, queue_cap: usize) -> OnlineOutcome {
    let mut dag = ScheduleDag::empty(inst.clone());
    let mut dropped = Vec::new();
    let mut by_arrival: Vec<Vec<TaskId>> = vec![Vec::new(); inst.horizon() as usize + 1];
    for t in 0..inst.num_tasks() as TaskId {
        let target = &inst.scenario().targets[inst.task(t).target as usize];
        by_arrival[target.arrival_step.min(inst.horizon()) as usize].push(t);
    }
    let rank = |t: TaskId| rank_key(inst, heuristic.task_rule, t);
    let mut queue: Vec<TaskId> = Vec::new();
    // last known feasible (site, start) per queued task
    let mut reach: HashMap<TaskId, (usize, u32)> = HashMap::new();
    let sites = inst.num_sites();

    for now in 0..inst.horizon() {
        queue.extend(by_arrival[now as usize].iter().copied());
        queue.sort_by_key(|&t| rank(t));

        queue.retain(|&t| {
            if let Some(&(s, b)) = reach.get(&t) {
                if b >= now && dag.check_placement(t, s, b).is_ok() {
                    return true;
                }
            }
            match dag.earliest_any_site(t, now) {
                Some(x) => {
                    reach.insert(t, x);
                    true
                }
                None => {
                    dropped.push(t);
                    false
                }
            }
        });

        let mut i = 0;
        while i < queue.len() {
            let t = queue[i];
            let mut ready = false;
            let mut cands: Vec<(usize, u32)> = Vec::new();
            for s in 0..sites {
                match dag.check_placement(t, s, now) {
                    Ok(()) => {
                        ready = true;
                        cands.push((s, now));
                    }
                    Err(Constraint::Resource) => ready = true,
                    Err(_) => {}
                }
            }
            if let Some((s, b)) = choose_site(inst, t, heuristic.site_rule, &cands) {
                dag.place_unchecked(t, s, b);
                queue.remove(i);
                continue;
            }
            if ready {
                break;
            }
            i += 1;
        }

        while queue.len() > queue_cap {
            let t = queue.remove(0);
            let cands: Vec<(usize, u32)> = (0..sites)
                .filter_map(|s| dag.earliest_start(t, s, now).map(|b| (s, b)))
                .collect();
            match choose_site(inst, t, heuristic.site_rule, &cands) {
                Some((s, b)) => dag.place_unchecked(t, s, b),
                None => dropped.push(t),
            }
        }
    }
    dropped.extend(queue);
    dag.rebuild_edges();
    OnlineOutcome { dag, dropped }
}

/// Offline shortest-task-first: every task is known up front and placed in
/// ascending exposure order at its earliest feasible slot.
pub fn schedule_offline_stf(inst: &Arc<Instance>) -> OnlineOutcome {
    let mut order: Vec<TaskId> = (0..inst.num_tasks() as TaskId).collect();
    order.sort_by_key(|&t| rank_key(inst, TaskRule::Stf, t));
    let mut dag = ScheduleDag::empty(inst.clone());
    let mut dropped = Vec::new();
    for t in order {
        match dag.earliest_any_site(t, 0) {
            Some((s, b)) => dag.place_unchecked(t, s, b),
            None => dropped.push(t),
        }
    }
    dag.rebuild_edges();
    OnlineOutcome { dag, dropped }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("no feasible schedule")]
    Infeasible,
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
}

pub const ORACLE_MAX_TASKS: usize = 6;
pub const ORACLE_MAX_HORIZON: u32 = 60;

/// Minimum total-slowdown schedule placing every task.
///
/// Enumerates every task order and every site choice, placing each task at
/// its earliest feasible start given the tasks before it. Any feasible
/// schedule can be left-shifted, task by task in start order, into one of
/// these without increasing a completion time, so the minimum is exact.
pub fn brute_force_optimal(inst: &Arc<Instance>) -> Result<ScheduleDag, OracleError> {
    let n = inst.num_tasks();
    if n > ORACLE_MAX_TASKS {
        return Err(OracleError::TooLarge(format!("{n} tasks")));
    }
    if inst.horizon() > ORACLE_MAX_HORIZON {
        return Err(OracleError::TooLarge(format!("horizon {}", inst.horizon())));
    }
    let mut best: Option<(f64, ScheduleDag)> = None;
    let mut used = vec![false; n];
    let mut dag = ScheduleDag::empty(inst.clone());
    search(&mut dag, &mut used, 0.0, &mut best);
    let (_, mut dag) = best.ok_or(OracleError::Infeasible)?;
    dag.rebuild_edges();
    Ok(dag)
}

fn search(dag: &mut ScheduleDag, used: &mut [bool], partial: f64, best: &mut Option<(f64, ScheduleDag)>) {
    let inst = dag.instance().clone();
    if used.iter().all(|&u| u) {
        if best.as_ref().is_none_or(|(c, _)| partial < *c - 1e-12) {
            *best = Some((partial, dag.clone()));
        }
        return;
    }
    // slowdowns only add up, so a partial cost at or above the best prunes
    if best.as_ref().is_some_and(|(c, _)| partial >= *c - 1e-12) {
        return;
    }
    for t in 0..used.len() {
        if used[t] {
            continue;
        }
        let id = t as TaskId;
        for s in 0..inst.num_sites() {
            if let Some(b) = dag.earliest_start(id, s, 0) {
                let info = inst.task(id);
                let eta = f64::from(b + info.exposure - info.arrival) / f64::from(info.exposure);
                used[t] = true;
                dag.place_unchecked(id, s, b);
                search(dag, used, partial + eta, best);
                dag.remove_unchecked(id);
                used[t] = false;
            }
        }
    }
}
