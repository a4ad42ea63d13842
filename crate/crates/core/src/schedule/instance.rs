use serde::{Deserialize, Serialize};

use crate::ephemeris::{windows_from_track, SiteTrack, VisibilityWindow};
use crate::scenario::{filter_mask, Scenario, ScenarioError};

pub type TaskId = u32;

/// Per-task data flattened for the scheduler's inner loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub arrival: u32,
    pub exposure: u32,
    pub deadline: u32,
    pub mask: u8,
    pub target: u32,
    pub seq_index: u32,
    pub prev_sibling: Option<TaskId>,
    pub next_sibling: Option<TaskId>,
    /// Minimum idle time between this task and its next sibling.
    pub gap: u32,
}

impl TaskInfo {
    pub fn filter_count(&self) -> u32 {
        self.mask.count_ones()
    }
}

/// A scenario with every per-step visibility quantity precomputed.
#[derive(Debug, Clone)]
pub struct Instance {
    scenario: Scenario,
    tasks: Vec<TaskInfo>,
    num_sites: usize,
    horizon: u32,
    /// Indexed by `target * num_sites + site`; entry `k` is the first step
    /// at or after `k` where the target is not observable (`k` itself when
    /// it is not observable at `k`). Length `horizon + 1`.
    run_end: Vec<Vec<u32>>,
    /// First observable step at or after `k`, `horizon` if none.
    next_visible: Vec<Vec<u32>>,
    airmass: Vec<Vec<f32>>,
    windows: Vec<Vec<VisibilityWindow>>,
    target_task_count: Vec<u32>,
}

impl Instance {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let num_sites = scenario.sites.len();
        let horizon = scenario.grid.horizon_steps;
        let h = horizon as usize;
        let tracks: Vec<_> = scenario
            .sites
            .iter()
            .map(|s| SiteTrack::new(&s.geo(), &scenario.grid, &scenario.constraints))
            .collect();

        let mut run_end = Vec::with_capacity(scenario.targets.len() * num_sites);
        let mut next_visible = Vec::with_capacity(run_end.capacity());
        let mut airmass = Vec::with_capacity(run_end.capacity());
        let mut windows = Vec::with_capacity(run_end.capacity());
        for target in &scenario.targets {
            for (si, site) in scenario.sites.iter().enumerate() {
                let track = tracks[si].observable_airmass(&target.coord, &site.geo(), &scenario.constraints);
                let mut ends = vec![horizon; h + 1];
                let mut next = vec![horizon; h + 1];
                for k in (0..h).rev() {
                    if track[k].is_some() {
                        ends[k] = ends[k + 1];
                        next[k] = k as u32;
                    } else {
                        ends[k] = k as u32;
                        next[k] = next[k + 1];
                    }
                }
                airmass.push(track.iter().map(|x| x.map_or(f32::INFINITY, |v| v as f32)).collect());
                windows.push(windows_from_track(si, &track));
                run_end.push(ends);
                next_visible.push(next);
            }
        }

        let mut tasks: Vec<TaskInfo> = scenario
            .tasks
            .iter()
            .map(|t| TaskInfo {
                arrival: t.arrival,
                exposure: t.exposure,
                deadline: t.deadline,
                mask: filter_mask(&t.rho),
                target: t.target_id,
                seq_index: t.seq_index,
                prev_sibling: None,
                next_sibling: None,
                gap: scenario.targets[t.target_id as usize].mode.gap(),
            })
            .collect();
        let mut by_target: Vec<Vec<TaskId>> = vec![Vec::new(); scenario.targets.len()];
        for (i, t) in tasks.iter().enumerate() {
            by_target[t.target as usize].push(i as TaskId);
        }
        for ids in &mut by_target {
            ids.sort_by_key(|&i| (tasks[i as usize].seq_index, i));
            for w in ids.windows(2) {
                tasks[w[0] as usize].next_sibling = Some(w[1]);
                tasks[w[1] as usize].prev_sibling = Some(w[0]);
            }
        }
        let target_task_count = by_target.iter().map(|v| v.len() as u32).collect();

        Ok(Self {
            scenario,
            tasks,
            num_sites,
            horizon,
            run_end,
            next_visible,
            airmass,
            windows,
            target_task_count,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn num_filters(&self) -> usize {
        self.scenario.num_filters
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn task(&self, id: TaskId) -> &TaskInfo {
        &self.tasks[id as usize]
    }

    pub fn tasks(&self) -> &[TaskInfo] {
        &self.tasks
    }

    pub fn target_task_count(&self, target: u32) -> u32 {
        self.target_task_count[target as usize]
    }

    fn key(&self, task: TaskId, site: usize) -> usize {
        self.tasks[task as usize].target as usize * self.num_sites + site
    }

    /// Whether the whole exposure `[start, start + exposure)` is observable.
    pub fn visible(&self, task: TaskId, site: usize, start: u32) -> bool {
        let e = self.tasks[task as usize].exposure;
        start + e <= self.horizon && self.run_end[self.key(task, site)][start as usize] >= start + e
    }

    /// Smallest start `>= from` whose exposure fits inside one visibility
    /// window, ignoring every other constraint.
    pub fn next_visible_start(&self, task: TaskId, site: usize, from: u32) -> Option<u32> {
        let key = self.key(task, site);
        let e = self.tasks[task as usize].exposure;
        let mut b = from;
        while b + e <= self.horizon {
            let nb = self.next_visible[key][b as usize];
            if nb + e > self.horizon {
                return None;
            }
            if self.run_end[key][nb as usize] >= nb + e {
                return Some(nb);
            }
            b = self.run_end[key][nb as usize];
        }
        None
    }

    /// Airmass at `step`, infinite when not observable.
    pub fn airmass(&self, task: TaskId, site: usize, step: u32) -> f64 {
        self.airmass[self.key(task, site)]
            .get(step as usize)
            .map_or(f64::INFINITY, |&x| f64::from(x))
    }

    pub fn windows(&self, task: TaskId, site: usize) -> &[VisibilityWindow] {
        &self.windows[self.key(task, site)]
    }

    pub fn equipment_priority(&self, site: usize) -> f64 {
        self.scenario.sites[site].equipment_priority
    }
}
