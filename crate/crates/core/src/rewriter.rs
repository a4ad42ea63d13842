//! Local rewriting of schedules.
//!
//! An action picks a placed task (the region) and a new parent for it (the
//! rule): either a site root, meaning "start at the required time", or
//! another task, meaning "start when that task completes". The moved task
//! takes its new slot and every task it now collides with is greedily
//! re-placed at its earliest feasible start.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::schedule::{Node, ScheduleDag, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RewriteAction {
    pub region: TaskId,
    pub rule: Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOutcome {
    Applied,
    /// The guard of the step fired: the new parent would not change anything
    /// or completes before the task is required.
    Unchanged,
    /// Some displaced task could not be re-placed; the schedule is kept.
    Rejected,
}

/// How `p_c` is used when picking a region during training rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResampleMode {
    /// With probability `p_c` take the best-scored region, otherwise sample
    /// from the softmax.
    ArgmaxWithPc,
    /// With probability `p_c` pick a region uniformly, otherwise sample from
    /// the softmax.
    UniformWithPc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub num_steps: usize,
    pub region_candidates: usize,
    pub rule_candidates: usize,
    pub pc_initial: f64,
    pub pc_decay: f64,
    pub pc_interval: u64,
    pub pc_floor: f64,
    pub resample_mode: ResampleMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::intra_site()
    }
}

impl SearchConfig {
    pub fn intra_site() -> Self {
        Self {
            num_steps: 100,
            region_candidates: 15,
            rule_candidates: 15,
            pc_initial: 0.5,
            pc_decay: 0.8,
            pc_interval: 1000,
            pc_floor: 0.01,
            resample_mode: ResampleMode::ArgmaxWithPc,
        }
    }

    pub fn distributed() -> Self {
        Self {
            region_candidates: 30,
            rule_candidates: 30,
            ..Self::intra_site()
        }
    }

    /// `p_c` after `step` rollout steps.
    pub fn resample_prob(&self, step: u64) -> f64 {
        let k = (step / self.pc_interval.max(1)) as i32;
        (self.pc_initial * self.pc_decay.powi(k)).clamp(self.pc_floor, 1.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.region_candidates == 0 || self.rule_candidates == 0 {
            return Err("candidate budgets must be at least 1".into());
        }
        if !(0.01..=1.0).contains(&self.pc_initial) || !(0.01..=1.0).contains(&self.pc_floor) {
            return Err("p_c must lie in [0.01, 1]".into());
        }
        Ok(())
    }
}

/// Cost of a state: the sum of slowdowns of every placed task.
pub fn cost(dag: &ScheduleDag) -> f64 {
    dag.total_slowdown()
}

/// Movable task nodes, by ascending id. Frozen tasks are excluded.
pub fn candidate_regions(dag: &ScheduleDag) -> Vec<TaskId> {
    dag.placed().filter(|&t| !dag.is_frozen(t)).collect()
}

/// New start implied by `rule` for `region`, or `None` if the guard fires.
fn target_slot(dag: &ScheduleDag, region: TaskId, rule: Node) -> Option<(usize, u32)> {
    let inst = dag.instance();
    let cur = dag.slot(region)?;
    let arrival = inst.task(region).arrival;
    let (site, start) = match rule {
        Node::Root(site) => {
            if site >= inst.num_sites() {
                return None;
            }
            (site, arrival.max(dag.not_before()))
        }
        Node::Task(p) => {
            if p == region {
                return None;
            }
            let ps = dag.slot(p)?;
            let c = dag.completion(p)?;
            if c < arrival {
                return None;
            }
            (ps.site, c)
        }
    };
    if site == cur.site && start == cur.start {
        return None;
    }
    Some((site, start))
}

/// Rules worth trying for `region`: every site root and every other placed
/// task whose completion gives a new, not-yet-frozen start. Roots first, then
/// tasks by id.
pub fn candidate_rules(dag: &ScheduleDag, region: TaskId) -> Vec<Node> {
    let inst = dag.instance();
    let mut out: Vec<Node> = (0..inst.num_sites()).map(Node::Root).collect();
    for p in dag.placed() {
        if let Some((_, start)) = target_slot(dag, region, Node::Task(p)) {
            if start >= dag.not_before() {
                out.push(Node::Task(p));
            }
        }
    }
    out
}

/// One rewriting step. Never returns an infeasible schedule: when the moved
/// task or a displaced task cannot be placed the input is returned with
/// [`StepOutcome::Rejected`].
pub fn rewrite_step(dag: &ScheduleDag, action: RewriteAction) -> (ScheduleDag, StepOutcome) {
    let j = action.region;
    if !dag.is_placed(j) || dag.is_frozen(j) {
        return (dag.clone(), StepOutcome::Unchanged);
    }
    let Some((site, start)) = target_slot(dag, j, action.rule) else {
        return (dag.clone(), StepOutcome::Unchanged);
    };
    match apply(dag, j, site, start) {
        Some(next) => (next, StepOutcome::Applied),
        None => (dag.clone(), StepOutcome::Rejected),
    }
}

fn apply(dag: &ScheduleDag, j: TaskId, site: usize, start: u32) -> Option<ScheduleDag> {
    let inst = dag.instance().clone();
    let info = *inst.task(j);
    let end = start + info.exposure;
    if start < dag.not_before() || end > info.deadline.min(inst.horizon()) || !inst.visible(j, site, start) {
        return None;
    }

    // J: everything on the destination site overlapping the new interval
    let mut displaced: BTreeSet<(u32, TaskId)> = BTreeSet::new();
    for t in dag.placed() {
        if t == j {
            continue;
        }
        let s = dag.slot(t).unwrap();
        if s.site == site && s.start < end && start < s.start + inst.task(t).exposure {
            displaced.insert((s.start, t));
        }
    }

    let mut next = dag.clone();
    next.remove_unchecked(j);
    for &(_, t) in &displaced {
        if next.is_frozen(t) {
            return None;
        }
        next.remove_unchecked(t);
    }
    // a later sibling that the move pushes inside the cadence gap goes too
    if let Some(n) = info.next_sibling.filter(|&n| next.is_placed(n)) {
        if next.slot(n).unwrap().start < end + info.gap {
            let s = next.slot(n).unwrap();
            if next.is_frozen(n) {
                return None;
            }
            next.remove_unchecked(n);
            displaced.insert((s.start, n));
        }
    }
    next.check_placement(j, site, start).ok()?;
    next.place_unchecked(j, site, start);

    // re-place in (old start, id) order; siblings knocked out of their gap
    // by a re-placement join the queue
    let mut sites = std::collections::HashMap::new();
    for &(_, t) in &displaced {
        sites.insert(t, dag.slot(t).unwrap().site);
    }
    while let Some((_, p)) = displaced.pop_first() {
        let ps = sites[&p];
        let pi = inst.task(p);
        let b = match next.earliest_start(p, ps, pi.arrival) {
            Some(b) => b,
            None => {
                // pinned under its successor: push the successor instead,
                // unless that is the moved task itself
                let n = pi
                    .next_sibling
                    .filter(|&n| n != j && next.is_placed(n) && !next.is_frozen(n))?;
                let s = next.slot(n).unwrap();
                next.remove_unchecked(n);
                sites.insert(n, s.site);
                displaced.insert((s.start, n));
                next.earliest_start(p, ps, pi.arrival)?
            }
        };
        next.place_unchecked(p, ps, b);
        if let Some(n) = pi.next_sibling.filter(|&n| next.is_placed(n)) {
            let s = next.slot(n).unwrap();
            if s.start < b + pi.exposure + pi.gap {
                if n == j || next.is_frozen(n) {
                    return None;
                }
                next.remove_unchecked(n);
                sites.insert(n, s.site);
                displaced.insert((s.start, n));
            }
        }
    }
    next.rebuild_edges();
    Some(next)
}

/// Chooses regions and rules during a search. Candidate lists are already
/// trimmed to the configured budgets and are never empty.
pub trait RewritePolicy {
    fn pick_region<R: Rng + ?Sized>(&mut self, dag: &ScheduleDag, regions: &[TaskId], p_c: f64, rng: &mut R) -> usize;

    fn pick_rule<R: Rng + ?Sized>(&mut self, dag: &ScheduleDag, region: TaskId, rules: &[Node], rng: &mut R) -> usize;

    /// Told after every step whether the schedule changed.
    fn observe(&mut self, _outcome: StepOutcome) {}
}

/// Uniform choice of region and rule.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl RewritePolicy for RandomPolicy {
    fn pick_region<R: Rng + ?Sized>(&mut self, _: &ScheduleDag, regions: &[TaskId], _: f64, rng: &mut R) -> usize {
        rng.gen_range(0..regions.len())
    }

    fn pick_rule<R: Rng + ?Sized>(&mut self, _: &ScheduleDag, _: TaskId, rules: &[Node], rng: &mut R) -> usize {
        rng.gen_range(0..rules.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub region: TaskId,
    pub rule: Node,
    pub cost_before: f64,
    pub cost_after: f64,
    pub rejected: bool,
}

impl TrajectoryStep {
    /// Reward of the step, `c(s_t) - c(s_{t+1})`.
    pub fn reward(&self) -> f64 {
        self.cost_before - self.cost_after
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: ScheduleDag,
    pub best_cost: f64,
    pub last: ScheduleDag,
    pub trajectory: Vec<TrajectoryStep>,
}

/// Uniform subsample of `items` of size at most `budget`, order kept.
pub fn subsample<T: Copy, R: Rng + ?Sized>(items: &[T], budget: usize, rng: &mut R) -> Vec<T> {
    if items.len() <= budget {
        return items.to_vec();
    }
    let mut idx = sample(rng, items.len(), budget).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i]).collect()
}

/// Runs `config.num_steps` rewriting steps from `dag0`, committing every
/// accepted rewrite and keeping the cheapest state seen. `pc_step` is the
/// global step used for the `p_c` schedule.
pub fn rewrite_search<P: RewritePolicy, R: Rng + ?Sized>(
    dag0: &ScheduleDag,
    policy: &mut P,
    config: &SearchConfig,
    pc_step: u64,
    rng: &mut R,
) -> SearchResult {
    let mut cur = dag0.clone();
    let mut cur_cost = cost(&cur);
    let mut best = cur.clone();
    let mut best_cost = cur_cost;
    let mut trajectory = Vec::with_capacity(config.num_steps);
    let p_c = config.resample_prob(pc_step);
    for step in 0..config.num_steps {
        let regions = subsample(&candidate_regions(&cur), config.region_candidates, rng);
        if regions.is_empty() {
            break;
        }
        let region = regions[policy.pick_region(&cur, &regions, p_c, rng)];
        let rules = subsample(&candidate_rules(&cur, region), config.rule_candidates, rng);
        let rule = rules[policy.pick_rule(&cur, region, &rules, rng)];
        let (next, outcome) = rewrite_step(&cur, RewriteAction { region, rule });
        policy.observe(outcome);
        let next_cost = if outcome == StepOutcome::Applied { cost(&next) } else { cur_cost };
        trajectory.push(TrajectoryStep {
            step,
            region,
            rule,
            cost_before: cur_cost,
            cost_after: next_cost,
            rejected: outcome == StepOutcome::Rejected,
        });
        if outcome == StepOutcome::Applied {
            cur = next;
            cur_cost = next_cost;
            if cur_cost < best_cost {
                best = cur.clone();
                best_cost = cur_cost;
            }
        }
    }
    SearchResult {
        best,
        best_cost,
        last: cur,
        trajectory,
    }
}

/// Writes a trajectory as JSON lines.
pub fn write_trajectory<W: Write>(steps: &[TrajectoryStep], mut out: W) -> std::io::Result<()> {
    for s in steps {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Outcome of an online run.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub dag: ScheduleDag,
    pub dropped: Vec<TaskId>,
    /// Number of re-planning searches performed.
    pub replans: usize,
}

/// Inserts `tasks` in arrival order at their earliest feasible slot not
/// before the freeze line; returns the ones that fit nowhere.
pub fn insert_fcfs(dag: &mut ScheduleDag, tasks: &[TaskId]) -> Vec<TaskId> {
    let inst = dag.instance().clone();
    let mut order = tasks.to_vec();
    order.sort_by_key(|&t| (inst.task(t).arrival, t));
    let mut dropped = Vec::new();
    for t in order {
        match dag.earliest_any_site(t, dag.not_before()) {
            Some((s, b)) => dag.place_unchecked(t, s, b),
            None => dropped.push(t),
        }
    }
    dag.rebuild_edges();
    dropped
}

/// Online re-planning: tasks are revealed when their target arrives and
/// appended to the plan in arrival order; on every arrival and every
/// completion the plan is rewritten from the current state with everything
/// already started frozen.
pub fn replan_online<P: RewritePolicy, R: Rng + ?Sized>(
    inst: &std::sync::Arc<crate::schedule::Instance>,
    policy: &mut P,
    config: &SearchConfig,
    rng: &mut R,
) -> OnlineRun {
    let mut by_arrival: Vec<Vec<TaskId>> = vec![Vec::new(); inst.horizon() as usize + 1];
    for t in 0..inst.num_tasks() as TaskId {
        let target = &inst.scenario().targets[inst.task(t).target as usize];
        by_arrival[target.arrival_step.min(inst.horizon()) as usize].push(t);
    }
    let mut dag = ScheduleDag::empty(inst.clone());
    let mut dropped = Vec::new();
    let mut replans = 0;
    for now in 0..inst.horizon() {
        let revealed = &by_arrival[now as usize];
        let completes = dag.placed().any(|t| dag.completion(t) == Some(now));
        if revealed.is_empty() && !completes {
            continue;
        }
        dag.set_not_before(now);
        dropped.extend(insert_fcfs(&mut dag, revealed));
        if candidate_regions(&dag).is_empty() {
            continue;
        }
        dag = rewrite_search(&dag, policy, config, 0, rng).best;
        replans += 1;
    }
    dag.set_not_before(0);
    OnlineRun { dag, dropped, replans }
}
