//! Schedules as dependency DAGs.
//!
//! A task that starts at its required time hangs off its site's root node; a
//! task that starts the moment another task on the same site completes hangs
//! off that task. Tasks that start at neither (held back by a visibility
//! window opening or a cadence gap) are attached to the site root as well, so
//! every task node has at least one parent.

mod embed;
mod instance;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{EmbeddingLayout, SparseEmbedding};
pub use instance::{Instance, TaskId, TaskInfo};

/// Which constraint an assignment breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Arrival,
    Deadline,
    Visibility,
    Resource,
    Cadence,
    Site,
    Frozen,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::Arrival => "arrival",
            Constraint::Deadline => "deadline",
            Constraint::Visibility => "visibility",
            Constraint::Resource => "resource",
            Constraint::Cadence => "cadence",
            Constraint::Site => "site",
            Constraint::Frozen => "frozen",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("infeasible assignment: {constraint} (task {task}, site {site}, step {start})")]
    Infeasible {
        task: TaskId,
        site: usize,
        start: u32,
        constraint: Constraint,
    },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} assigned twice")]
    Duplicate(TaskId),
    #[error("unassigned tasks: {0:?}")]
    Unassigned(Vec<TaskId>),
    #[error("schedule has no tasks")]
    Empty,
    #[error("schedules cover different task sets")]
    TaskSetMismatch,
}

/// Sparse form of the binary decision variables: task `task_id` runs on
/// `site_index` from `start_step` for its whole exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: TaskId,
    pub site_index: usize,
    pub start_step: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    Root(usize),
    Task(TaskId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub site: usize,
    pub start: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotState {
    Absent,
    Pending,
    Placed(Slot),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Arrival,
    Deadline,
    Visibility,
    Resource,
    Cadence,
    Edge,
    Orphan,
    Cycle,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub task: Option<TaskId>,
    pub detail: String,
}

/// A feasible assignment of (a subset of) an instance's tasks, together with
/// its dependency edges and per-step filter usage.
#[derive(Clone)]
pub struct ScheduleDag {
    inst: Arc<Instance>,
    slots: Vec<SlotState>,
    /// `usage[site * horizon + step]` has bit `f` set while filter `f` is busy.
    usage: Vec<u8>,
    parents: Vec<Vec<Node>>,
    not_before: u32,
}

impl fmt::Debug for ScheduleDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScheduleDag")
            .field("assignments", &self.assignments())
            .field("not_before", &self.not_before)
            .finish()
    }
}

impl PartialEq for ScheduleDag {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inst, &other.inst) && self.slots == other.slots && self.not_before == other.not_before
    }
}

impl ScheduleDag {
    pub fn empty(inst: Arc<Instance>) -> Self {
        let n = inst.num_tasks();
        let usage = vec![0; inst.num_sites() * inst.horizon() as usize];
        Self {
            inst,
            slots: vec![SlotState::Absent; n],
            usage,
            parents: vec![Vec::new(); n],
            not_before: 0,
        }
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.inst
    }

    /// Tasks starting before this step are frozen; new placements may not
    /// start earlier.
    pub fn not_before(&self) -> u32 {
        self.not_before
    }

    pub fn set_not_before(&mut self, step: u32) {
        self.not_before = step;
    }

    pub fn slot(&self, task: TaskId) -> Option<Slot> {
        match self.slots.get(task as usize) {
            Some(SlotState::Placed(s)) => Some(*s),
            _ => None,
        }
    }

    pub fn is_placed(&self, task: TaskId) -> bool {
        self.slot(task).is_some()
    }

    pub fn is_frozen(&self, task: TaskId) -> bool {
        self.slot(task).is_some_and(|s| s.start < self.not_before)
    }

    pub fn completion(&self, task: TaskId) -> Option<u32> {
        self.slot(task).map(|s| s.start + self.inst.task(task).exposure)
    }

    /// Placed task ids in ascending order.
    pub fn placed(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, SlotState::Placed(_)))
            .map(|(i, _)| i as TaskId)
    }

    pub fn num_placed(&self) -> usize {
        self.placed().count()
    }

    pub fn pending(&self) -> Vec<TaskId> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, SlotState::Pending))
            .map(|(i, _)| i as TaskId)
            .collect()
    }

    /// Records `task` as part of the schedule without a slot yet.
    pub fn declare_pending(&mut self, task: TaskId) {
        if let Some(s @ SlotState::Absent) = self.slots.get_mut(task as usize) {
            *s = SlotState::Pending;
        }
    }

    pub fn assignments(&self) -> Vec<Assignment> {
        self.placed()
            .map(|t| {
                let s = self.slot(t).unwrap();
                Assignment {
                    task_id: t,
                    site_index: s.site,
                    start_step: s.start,
                }
            })
            .collect()
    }

    pub fn parents(&self, task: TaskId) -> &[Node] {
        &self.parents[task as usize]
    }

    pub fn edges(&self) -> Vec<(Node, Node)> {
        self.placed()
            .flat_map(|t| self.parents[t as usize].iter().map(move |&p| (p, Node::Task(t))))
            .collect()
    }

    /// Placed tasks in topological order: by start step, then id.
    pub fn topological_order(&self) -> Vec<TaskId> {
        let mut ids: Vec<TaskId> = self.placed().collect();
        ids.sort_by_key(|&t| (self.slot(t).unwrap().start, t));
        ids
    }

    pub fn usage(&self, site: usize, step: u32) -> u8 {
        if step >= self.inst.horizon() {
            return 0;
        }
        self.usage[site * self.inst.horizon() as usize + step as usize]
    }

    fn usage_range(&self, site: usize, start: u32, len: u32) -> &[u8] {
        let base = site * self.inst.horizon() as usize;
        &self.usage[base + start as usize..base + (start + len) as usize]
    }

    pub fn slowdown(&self, task: TaskId) -> Option<f64> {
        let info = self.inst.task(task);
        self.slot(task)
            .map(|s| f64::from(s.start + info.exposure - info.arrival) / f64::from(info.exposure))
    }

    /// Sum of slowdowns over placed tasks.
    pub fn total_slowdown(&self) -> f64 {
        self.placed().map(|t| self.slowdown(t).unwrap()).sum()
    }

    pub fn average_slowdown(&self) -> Result<f64, ScheduleError> {
        average_slowdown(self)
    }

    // -- feasibility -------------------------------------------------------

    /// Nearest placed sibling before `task` (skipping dropped ones).
    fn placed_prev_sibling(&self, task: TaskId) -> Option<TaskId> {
        let mut cur = self.inst.task(task).prev_sibling;
        while let Some(p) = cur {
            if self.is_placed(p) {
                return Some(p);
            }
            cur = self.inst.task(p).prev_sibling;
        }
        None
    }

    fn placed_next_sibling(&self, task: TaskId) -> Option<TaskId> {
        let mut cur = self.inst.task(task).next_sibling;
        while let Some(n) = cur {
            if self.is_placed(n) {
                return Some(n);
            }
            cur = self.inst.task(n).next_sibling;
        }
        None
    }

    /// Checks every constraint for placing an unplaced `task` at
    /// `(site, start)` against the current contents.
    pub fn check_placement(&self, task: TaskId, site: usize, start: u32) -> Result<(), Constraint> {
        let info = self.inst.task(task);
        if site >= self.inst.num_sites() {
            return Err(Constraint::Site);
        }
        if start < self.not_before {
            return Err(Constraint::Frozen);
        }
        if start < info.arrival {
            return Err(Constraint::Arrival);
        }
        if start + info.exposure > info.deadline || start + info.exposure > self.inst.horizon() {
            return Err(Constraint::Deadline);
        }
        if !self.inst.visible(task, site, start) {
            return Err(Constraint::Visibility);
        }
        if self.usage_range(site, start, info.exposure).iter().any(|&u| u & info.mask != 0) {
            return Err(Constraint::Resource);
        }
        let (lo, hi) = self.sibling_bounds(task);
        if start < lo || hi.is_some_and(|h| start > h) {
            return Err(Constraint::Cadence);
        }
        Ok(())
    }

    /// Start bounds imposed by the placed neighbours of `task` in its
    /// target's sequence. An impossible window is reported as
    /// `(u32::MAX, Some(u32::MAX))`.
    fn sibling_bounds(&self, task: TaskId) -> (u32, Option<u32>) {
        let info = self.inst.task(task);
        let lo = self
            .placed_prev_sibling(task)
            .map(|p| self.completion(p).unwrap() + self.inst.task(p).gap)
            .unwrap_or(0);
        match self.placed_next_sibling(task) {
            None => (lo, None),
            Some(n) => {
                let nb = self.slot(n).unwrap().start;
                match nb.checked_sub(info.gap + info.exposure) {
                    Some(h) => (lo, Some(h)),
                    None => (u32::MAX, Some(u32::MAX)),
                }
            }
        }
    }

    /// Earliest feasible start of unplaced `task` on `site` at or after `from`.
    pub fn earliest_start(&self, task: TaskId, site: usize, from: u32) -> Option<u32> {
        if site >= self.inst.num_sites() {
            return None;
        }
        let info = *self.inst.task(task);
        let (sib_lo, sib_hi) = self.sibling_bounds(task);
        if sib_lo == u32::MAX {
            return None;
        }
        let lo = from.max(info.arrival).max(self.not_before).max(sib_lo);
        let mut last = info.deadline.min(self.inst.horizon()).checked_sub(info.exposure)?;
        if let Some(h) = sib_hi {
            last = last.min(h);
        }
        let mut b = lo;
        while b <= last {
            b = self.inst.next_visible_start(task, site, b)?;
            if b > last {
                return None;
            }
            match self
                .usage_range(site, b, info.exposure)
                .iter()
                .rposition(|&u| u & info.mask != 0)
            {
                Some(k) => b += k as u32 + 1,
                None => return Some(b),
            }
        }
        None
    }

    /// Earliest feasible `(site, start)` over all sites, ties to the lower site.
    pub fn earliest_any_site(&self, task: TaskId, from: u32) -> Option<(usize, u32)> {
        (0..self.inst.num_sites())
            .filter_map(|s| self.earliest_start(task, s, from).map(|b| (s, b)))
            .min_by_key(|&(s, b)| (b, s))
    }

    pub(crate) fn place_unchecked(&mut self, task: TaskId, site: usize, start: u32) {
        let info = *self.inst.task(task);
        let base = site * self.inst.horizon() as usize;
        for u in &mut self.usage[base + start as usize..base + (start + info.exposure) as usize] {
            debug_assert_eq!(*u & info.mask, 0);
            *u |= info.mask;
        }
        self.slots[task as usize] = SlotState::Placed(Slot { site, start });
    }

    pub(crate) fn remove_unchecked(&mut self, task: TaskId) {
        if let SlotState::Placed(s) = self.slots[task as usize] {
            let info = *self.inst.task(task);
            let base = s.site * self.inst.horizon() as usize;
            for u in &mut self.usage[base + s.start as usize..base + (s.start + info.exposure) as usize] {
                *u &= !info.mask;
            }
            self.slots[task as usize] = SlotState::Absent;
        }
    }

    /// Places `task` after checking every constraint, then refreshes edges.
    pub fn try_place(&mut self, task: TaskId, site: usize, start: u32) -> Result<(), ScheduleError> {
        if task as usize >= self.slots.len() {
            return Err(ScheduleError::UnknownTask(task));
        }
        if self.is_placed(task) {
            return Err(ScheduleError::Duplicate(task));
        }
        self.check_placement(task, site, start)
            .map_err(|constraint| ScheduleError::Infeasible {
                task,
                site,
                start,
                constraint,
            })?;
        self.place_unchecked(task, site, start);
        self.rebuild_edges();
        Ok(())
    }

    /// Removes `task` from the schedule; it becomes absent.
    pub fn unplace(&mut self, task: TaskId) {
        self.remove_unchecked(task);
        self.rebuild_edges();
    }

    pub(crate) fn rebuild_edges(&mut self) {
        self.parents = expected_parents(self);
    }
}

/// Parent lists implied by the current slots.
fn expected_parents(dag: &ScheduleDag) -> Vec<Vec<Node>> {
    let inst = &dag.inst;
    let mut by_completion: Vec<Vec<(u32, TaskId)>> = vec![Vec::new(); inst.num_sites()];
    for t in dag.placed() {
        let s = dag.slot(t).unwrap();
        by_completion[s.site].push((s.start + inst.task(t).exposure, t));
    }
    for v in &mut by_completion {
        v.sort_unstable();
    }
    let mut parents = vec![Vec::new(); dag.slots.len()];
    for t in dag.placed() {
        let s = dag.slot(t).unwrap();
        let list = &by_completion[s.site];
        let lo = list.partition_point(|&(c, _)| c < s.start);
        let mut ps: Vec<Node> = list[lo..]
            .iter()
            .take_while(|&&(c, _)| c == s.start)
            .map(|&(_, id)| Node::Task(id))
            .collect();
        if s.start == inst.task(t).arrival || ps.is_empty() {
            ps.insert(0, Node::Root(s.site));
        }
        parents[t as usize] = ps;
    }
    parents
}

/// Builds a schedule from explicit assignments, rejecting the first one that
/// breaks a constraint.
pub fn build_dag(inst: &Arc<Instance>, assignments: &[Assignment]) -> Result<ScheduleDag, ScheduleError> {
    let mut dag = ScheduleDag::empty(inst.clone());
    let mut seen = vec![false; inst.num_tasks()];
    for a in assignments {
        if a.task_id as usize >= inst.num_tasks() {
            return Err(ScheduleError::UnknownTask(a.task_id));
        }
        if std::mem::replace(&mut seen[a.task_id as usize], true) {
            return Err(ScheduleError::Duplicate(a.task_id));
        }
    }
    // sibling checks need the whole assignment set, so resources and windows
    // are checked while placing and cadence afterwards
    for a in assignments {
        let info = inst.task(a.task_id);
        let fail = |constraint| ScheduleError::Infeasible {
            task: a.task_id,
            site: a.site_index,
            start: a.start_step,
            constraint,
        };
        if a.site_index >= inst.num_sites() {
            return Err(fail(Constraint::Site));
        }
        if a.start_step < info.arrival {
            return Err(fail(Constraint::Arrival));
        }
        if a.start_step + info.exposure > info.deadline.min(inst.horizon()) {
            return Err(fail(Constraint::Deadline));
        }
        if !inst.visible(a.task_id, a.site_index, a.start_step) {
            return Err(fail(Constraint::Visibility));
        }
        if dag
            .usage_range(a.site_index, a.start_step, info.exposure)
            .iter()
            .any(|&u| u & info.mask != 0)
        {
            return Err(fail(Constraint::Resource));
        }
        dag.place_unchecked(a.task_id, a.site_index, a.start_step);
    }
    for a in assignments {
        if let Some(n) = dag.placed_next_sibling(a.task_id) {
            let c = dag.completion(a.task_id).unwrap() + inst.task(a.task_id).gap;
            if dag.slot(n).unwrap().start < c {
                let s = dag.slot(n).unwrap();
                return Err(ScheduleError::Infeasible {
                    task: n,
                    site: s.site,
                    start: s.start,
                    constraint: Constraint::Cadence,
                });
            }
        }
    }
    dag.rebuild_edges();
    Ok(dag)
}

pub fn extract_assignments(dag: &ScheduleDag) -> Vec<Assignment> {
    dag.assignments()
}

/// Re-derives every invariant from the slots alone. Empty means feasible.
pub fn validate(dag: &ScheduleDag) -> Vec<Violation> {
    let inst = &dag.inst;
    let mut out = Vec::new();
    let mut push = |kind, task: Option<TaskId>, detail: String| out.push(Violation { kind, task, detail });
    let h = inst.horizon() as usize;
    let d = inst.num_filters();
    let mut counts = vec![0u16; inst.num_sites() * h * d];
    for t in dag.placed() {
        let s = dag.slot(t).unwrap();
        let info = inst.task(t);
        if s.start < info.arrival {
            push(ViolationKind::Arrival, Some(t), format!("starts at {} before {}", s.start, info.arrival));
        }
        let end = s.start + info.exposure;
        if end > info.deadline || end > inst.horizon() {
            push(ViolationKind::Deadline, Some(t), format!("completes at {end} after {}", info.deadline));
            continue;
        }
        if !inst.visible(t, s.site, s.start) {
            push(ViolationKind::Visibility, Some(t), format!("not observable on site {} at {}", s.site, s.start));
        }
        for k in s.start..end {
            for f in 0..d {
                if info.mask & (1 << f) != 0 {
                    counts[(s.site * h + k as usize) * d + f] += 1;
                }
            }
        }
        if let Some(n) = dag.placed_next_sibling(t) {
            if dag.slot(n).unwrap().start < end + info.gap {
                push(ViolationKind::Cadence, Some(n), format!("starts before sibling {t} completes plus gap"));
            }
        }
    }
    for site in 0..inst.num_sites() {
        for k in 0..h {
            let mut mask = 0u8;
            for f in 0..d {
                let c = counts[(site * h + k) * d + f];
                if c > 1 {
                    push(ViolationKind::Resource, None, format!("filter {f} used {c} times on site {site} at {k}"));
                }
                if c > 0 {
                    mask |= 1 << f;
                }
            }
            if mask != dag.usage[site * h + k] {
                push(ViolationKind::Cache, None, format!("usage cache stale on site {site} at {k}"));
            }
        }
    }
    let expected = expected_parents(dag);
    for t in dag.placed() {
        let mut want = expected[t as usize].clone();
        let mut have = dag.parents[t as usize].clone();
        want.sort();
        have.sort();
        if want != have {
            push(ViolationKind::Edge, Some(t), format!("parents {have:?}, expected {want:?}"));
        }
        if have.is_empty() {
            push(ViolationKind::Orphan, Some(t), "no incoming edge".into());
        }
    }
    // Kahn's algorithm over the stored edges
    let placed: BTreeSet<TaskId> = dag.placed().collect();
    let mut indeg: Vec<usize> = vec![0; dag.slots.len()];
    let mut children: Vec<Vec<TaskId>> = vec![Vec::new(); dag.slots.len()];
    let mut ready: Vec<TaskId> = Vec::new();
    for &t in &placed {
        for p in &dag.parents[t as usize] {
            if let Node::Task(p) = *p {
                indeg[t as usize] += 1;
                children[p as usize].push(t);
            }
        }
        if indeg[t as usize] == 0 {
            ready.push(t);
        }
    }
    let mut seen = 0;
    while let Some(t) = ready.pop() {
        seen += 1;
        for &c in &children[t as usize] {
            indeg[c as usize] -= 1;
            if indeg[c as usize] == 0 {
                ready.push(c);
            }
        }
    }
    if seen != placed.len() {
        push(ViolationKind::Cycle, None, format!("{} nodes on cycles", placed.len() - seen));
    }
    out
}

/// Mean slowdown over the schedule's tasks.
pub fn average_slowdown(dag: &ScheduleDag) -> Result<f64, ScheduleError> {
    let pending = dag.pending();
    if !pending.is_empty() {
        return Err(ScheduleError::Unassigned(pending));
    }
    let n = dag.num_placed();
    if n == 0 {
        return Err(ScheduleError::Empty);
    }
    Ok(dag.total_slowdown() / n as f64)
}

/// `c(before) - c(after)` with `c` the total slowdown; positive means the
/// second schedule is better.
pub fn immediate_cost(before: &ScheduleDag, after: &ScheduleDag) -> Result<f64, ScheduleError> {
    if !before.placed().eq(after.placed()) {
        return Err(ScheduleError::TaskSetMismatch);
    }
    Ok(before.total_slowdown() - after.total_slowdown())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub task_id: TaskId,
    pub site: usize,
    pub start: u32,
    pub slowdown: f64,
}

/// Writes one JSON object per placed task.
pub fn write_schedule_dump<W: Write>(dag: &ScheduleDag, mut out: W) -> std::io::Result<()> {
    for t in dag.placed() {
        let s = dag.slot(t).unwrap();
        let rec = DumpRecord {
            task_id: t,
            site: s.site,
            start: s.start,
            slowdown: dag.slowdown(t).unwrap(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
