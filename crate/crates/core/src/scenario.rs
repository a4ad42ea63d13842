//! Targets of opportunity, their split into observation tasks, and the
//! seeded generator that produces whole scenarios.

use std::fs;
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ephemeris::{GeoCoord, SiteTrack, SkyCoord, TimeGrid, VisibilityConstraints};

pub const SCENARIO_VERSION: u32 = 1;
/// Filter demands are stored as bitmasks.
pub const MAX_FILTERS: usize = 8;

const DEFAULT_SITES: &str = include_str!("../data/default_sites.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid field {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unsupported scenario version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid generator config: {0}")]
    Config(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// An observing site as it appears in the site list file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub name: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
    pub equipment_priority: f64,
}

impl Site {
    pub fn geo(&self) -> GeoCoord {
        GeoCoord::new(self.lat_deg, self.lon_deg, self.alt_m)
    }
}

pub fn default_sites() -> Vec<Site> {
    serde_json::from_str(DEFAULT_SITES).expect("bundled site list is valid")
}

pub fn load_sites(path: impl AsRef<Path>) -> Result<Vec<Site>, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let sites: Vec<Site> = serde_json::from_str(&text)?;
    for (i, s) in sites.iter().enumerate() {
        check_site(i, s)?;
    }
    Ok(sites)
}

fn check_site(i: usize, s: &Site) -> Result<(), ScenarioError> {
    if !(-90.0..=90.0).contains(&s.lat_deg) {
        return Err(invalid(format!("sites[{i}].lat_deg"), "lat out of range"));
    }
    if !(s.lon_deg > -180.0 && s.lon_deg <= 180.0) {
        return Err(invalid(format!("sites[{i}].lon_deg"), "lon out of range"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ObservationMode {
    /// Exposures follow one another back to back.
    ExposureCount,
    /// Consecutive exposures are separated by a fixed gap.
    Cadence { gap_minutes: u32 },
}

impl ObservationMode {
    pub fn gap(&self) -> u32 {
        match *self {
            ObservationMode::ExposureCount => 0,
            ObservationMode::Cadence { gap_minutes } => gap_minutes,
        }
    }
}

/// A target of opportunity awaiting follow-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: u32,
    pub coord: SkyCoord,
    pub filters_required: Vec<bool>,
    pub start_time: u32,
    pub fade_time: u32,
    pub exposure_minutes: u32,
    pub mode: ObservationMode,
    pub priority: u32,
    pub arrival_step: u32,
}

impl Target {
    pub fn duration(&self) -> u32 {
        self.fade_time.saturating_sub(self.start_time)
    }

    pub fn filter_count(&self) -> usize {
        self.filters_required.iter().filter(|&&f| f).count()
    }
}

/// One exposure of a target: the unit the scheduler places.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationTask {
    pub id: u32,
    pub target_id: u32,
    pub rho: Vec<bool>,
    pub arrival: u32,
    pub exposure: u32,
    pub deadline: u32,
    pub seq_index: u32,
}

pub fn filter_mask(rho: &[bool]) -> u8 {
    rho.iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .fold(0u8, |m, (i, _)| m | (1 << i))
}

/// Splits a target into its exposures. Task ids start at 0 and deadlines are
/// the fade time; callers renumber and re-deadline as needed.
pub fn target_to_tasks(target: &Target) -> Vec<ObservationTask> {
    let e = target.exposure_minutes;
    if e == 0 {
        return Vec::new();
    }
    let stride = e + target.mode.gap();
    let mut tasks = Vec::new();
    let mut a = target.start_time;
    while a + e <= target.fade_time {
        tasks.push(ObservationTask {
            id: tasks.len() as u32,
            target_id: target.id,
            rho: target.filters_required.clone(),
            arrival: a,
            exposure: e,
            deadline: target.fade_time,
            seq_index: tasks.len() as u32,
        });
        a += stride;
    }
    tasks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub grid: TimeGrid,
    pub sites: Vec<Site>,
    pub num_filters: usize,
    #[serde(default)]
    pub constraints: VisibilityConstraints,
    pub targets: Vec<Target>,
    pub tasks: Vec<ObservationTask>,
    #[serde(rename = "seed")]
    pub rng_seed: u64,
}

impl Scenario {
    pub fn empty(grid: TimeGrid, sites: Vec<Site>, num_filters: usize) -> Self {
        Self {
            version: SCENARIO_VERSION,
            grid,
            sites,
            num_filters,
            constraints: VisibilityConstraints::default(),
            targets: Vec::new(),
            tasks: Vec::new(),
            rng_seed: 0,
        }
    }

    /// Appends `target` (its id is overwritten) and its tasks.
    pub fn push_target(&mut self, mut target: Target, deadline: DeadlinePolicy) -> u32 {
        target.id = self.targets.len() as u32;
        for mut task in target_to_tasks(&target) {
            task.id = self.tasks.len() as u32;
            if deadline == DeadlinePolicy::Horizon {
                task.deadline = self.grid.horizon_steps;
            }
            self.tasks.push(task);
        }
        self.targets.push(target);
        self.targets.len() as u32 - 1
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version {
                found: self.version,
                expected: SCENARIO_VERSION,
            });
        }
        let d = self.num_filters;
        if d == 0 || d > MAX_FILTERS {
            return Err(invalid("num_filters", format!("must be in 1..={MAX_FILTERS}")));
        }
        if self.grid.step_minutes == 0 || self.grid.horizon_steps == 0 {
            return Err(invalid("grid", "step_minutes and horizon_steps must be positive"));
        }
        if self.sites.is_empty() {
            return Err(invalid("sites", "at least one site is required"));
        }
        for (i, s) in self.sites.iter().enumerate() {
            check_site(i, s)?;
        }
        for (i, t) in self.targets.iter().enumerate() {
            let f = |name: &str| format!("targets[{i}].{name}");
            if t.id as usize != i {
                return Err(invalid(f("id"), "target ids must be dense and ordered"));
            }
            if !(-90.0..=90.0).contains(&t.coord.dec) {
                return Err(invalid(f("coord.dec"), format!("dec out of range: {}", t.coord.dec)));
            }
            if !(0.0..360.0).contains(&t.coord.ra) {
                return Err(invalid(f("coord.ra"), format!("ra out of range: {}", t.coord.ra)));
            }
            if t.filters_required.len() != d {
                return Err(invalid(f("filters_required"), format!("expected {d} entries")));
            }
            if t.filter_count() == 0 {
                return Err(invalid(f("filters_required"), "at least one filter is required"));
            }
            if t.start_time >= t.fade_time {
                return Err(invalid(f("fade_time"), "start_time must precede fade_time"));
            }
            if t.exposure_minutes == 0 {
                return Err(invalid(f("exposure_minutes"), "must be positive"));
            }
            if t.arrival_step > t.start_time {
                return Err(invalid(f("arrival_step"), "target arrives after its start time"));
            }
        }
        for (i, task) in self.tasks.iter().enumerate() {
            let f = |name: &str| format!("tasks[{i}].{name}");
            if task.id as usize != i {
                return Err(invalid(f("id"), "task ids must be dense and ordered"));
            }
            let Some(target) = self.targets.get(task.target_id as usize) else {
                return Err(invalid(f("target_id"), format!("unknown target {}", task.target_id)));
            };
            if task.rho != target.filters_required {
                return Err(invalid(f("rho"), "must equal the target's filter demand"));
            }
            if task.exposure == 0 || task.arrival + task.exposure > task.deadline {
                return Err(invalid(f("deadline"), "arrival + exposure exceeds deadline"));
            }
            if task.deadline > self.grid.horizon_steps {
                return Err(invalid(f("deadline"), "deadline beyond the grid horizon"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    fs::write(path, s.to_json()).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ArrivalMode {
    /// Fixed per-step arrival probability.
    Steady { p: f64 },
    /// Per-step probability redrawn uniformly from `[0, max_p]` each step.
    Dynamic { max_p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ResourceMix {
    /// Two of the filters, every pair equally likely.
    Uniform,
    /// One, two or three filters with relative weights `p1 : p2 : p3`.
    NonUniform { p1: f64, p2: f64, p3: f64 },
}

/// What a task's deadline is tied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeadlinePolicy {
    /// Each exposure must complete by its target's fade time.
    Fade,
    /// Exposures may run late, up to the end of the grid.
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub arrival: ArrivalMode,
    /// Targets arrive during `[0, arrival_window_steps)`.
    pub arrival_window_steps: u32,
    /// Extra grid steps after the last possible fade.
    pub completion_slack_steps: u32,
    pub long_duration_fraction: f64,
    pub long_duration: [u32; 2],
    pub short_duration: [u32; 2],
    pub resources: ResourceMix,
    pub long_exposure_fraction: f64,
    pub long_exposure: [u32; 2],
    pub short_exposure: [u32; 2],
    /// Fraction of targets observed in cadence mode (the rest back to back).
    pub cadence_fraction: f64,
    pub cadence_gap: [u32; 2],
    pub num_fields: usize,
    /// A sky field is kept only if some site can observe it for at least
    /// this fraction of the grid.
    pub min_field_visible_fraction: f64,
    /// Redraw a target's field until some site can observe its first
    /// exposure at the target's start.
    pub visible_at_start: bool,
    pub priority_max: u32,
    pub num_filters: usize,
    pub sites: Vec<Site>,
    pub randomize_equipment_priority: bool,
    pub epoch_utc: DateTime<Utc>,
    pub step_minutes: u32,
    pub constraints: VisibilityConstraints,
    pub deadline: DeadlinePolicy,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            arrival: ArrivalMode::Steady { p: 0.10 },
            arrival_window_steps: 240,
            completion_slack_steps: 120,
            long_duration_fraction: 0.2,
            long_duration: [120, 240],
            short_duration: [60, 119],
            resources: ResourceMix::NonUniform {
                p1: 0.10,
                p2: 0.20,
                p3: 0.30,
            },
            long_exposure_fraction: 0.8,
            long_exposure: [10, 20],
            short_exposure: [1, 9],
            cadence_fraction: 1.0,
            cadence_gap: [10, 30],
            num_fields: 100,
            min_field_visible_fraction: 0.6,
            visible_at_start: true,
            priority_max: 5,
            num_filters: 3,
            sites: default_sites().into_iter().take(1).collect(),
            randomize_equipment_priority: true,
            epoch_utc: Utc.with_ymd_and_hms(2024, 6, 14, 23, 0, 0).unwrap(),
            step_minutes: 1,
            constraints: VisibilityConstraints::default(),
            deadline: DeadlinePolicy::Horizon,
        }
    }
}

impl GenConfig {
    /// The single-site comparison setting: steady arrivals, cadence mode,
    /// 20% long durations, non-uniform filters, 80% long exposures.
    pub fn intra_site() -> Self {
        Self::default()
    }

    /// Same task properties over all five default sites.
    pub fn distributed() -> Self {
        Self {
            sites: default_sites(),
            ..Self::default()
        }
    }

    /// Shrinks the arrival window by `factor` (4 gives the quarter-scale
    /// setting with a 60-step arrival window).
    pub fn scaled(mut self, factor: u32) -> Self {
        self.arrival_window_steps = (self.arrival_window_steps / factor.max(1)).max(1);
        self
    }

    pub fn horizon_steps(&self) -> u32 {
        self.arrival_window_steps + self.long_duration[1].max(self.short_duration[1]) + self.completion_slack_steps
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        for (name, iv) in [
            ("long_duration", self.long_duration),
            ("short_duration", self.short_duration),
            ("long_exposure", self.long_exposure),
            ("short_exposure", self.short_exposure),
            ("cadence_gap", self.cadence_gap),
        ] {
            if iv[0] > iv[1] {
                return bad(format!("{name}: inverted interval [{}, {}]", iv[0], iv[1]));
            }
        }
        if self.long_exposure[0] == 0 || self.short_exposure[0] == 0 {
            return bad("exposure intervals must start at 1 or later".into());
        }
        if self.short_duration[0] == 0 || self.long_duration[0] == 0 {
            return bad("durations must be positive".into());
        }
        let probs = [
            ("long_duration_fraction", self.long_duration_fraction),
            ("long_exposure_fraction", self.long_exposure_fraction),
            ("cadence_fraction", self.cadence_fraction),
            ("min_field_visible_fraction", self.min_field_visible_fraction),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        match self.arrival {
            ArrivalMode::Steady { p } if !(0.0..=1.0).contains(&p) => return bad("arrival p must be in [0, 1]".into()),
            ArrivalMode::Dynamic { max_p } if !(0.0..=1.0).contains(&max_p) => {
                return bad("arrival max_p must be in [0, 1]".into())
            }
            _ => {}
        }
        if let ResourceMix::NonUniform { p1, p2, p3 } = self.resources {
            if [p1, p2, p3].iter().any(|p| !(0.0..=1.0).contains(p)) || p1 + p2 + p3 <= 0.0 {
                return bad("resource weights must be in [0, 1] and not all zero".into());
            }
            if self.num_filters < 3 {
                return bad("non-uniform resource mix needs at least 3 filters".into());
            }
        }
        if self.num_filters == 0 || self.num_filters > MAX_FILTERS {
            return bad(format!("num_filters must be in 1..={MAX_FILTERS}"));
        }
        if self.sites.is_empty() {
            return bad("at least one site is required".into());
        }
        if self.num_fields == 0 {
            return bad("num_fields must be positive".into());
        }
        if self.step_minutes == 0 {
            return bad("step_minutes must be positive".into());
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, iv: [u32; 2]) -> u32 {
    rng.gen_range(iv[0]..=iv[1])
}

fn draw_filters(rng: &mut ChaCha8Rng, mix: &ResourceMix, d: usize) -> Vec<bool> {
    let count = match *mix {
        ResourceMix::Uniform => 2.min(d),
        ResourceMix::NonUniform { p1, p2, p3 } => {
            let u = rng.gen::<f64>() * (p1 + p2 + p3);
            if u < p1 {
                1
            } else if u < p1 + p2 {
                2
            } else {
                3
            }
        }
    };
    let mut rho = vec![false; d];
    for i in sample(rng, d, count) {
        rho[i] = true;
    }
    rho
}

/// Draws `num_fields` sky positions above dec -30 that at least one site can
/// observe for a useful share of the night.
fn draw_fields(rng: &mut ChaCha8Rng, config: &GenConfig, grid: &TimeGrid) -> Vec<SkyCoord> {
    // coarse 10-step sampling is plenty for the acceptance test
    let coarse = TimeGrid::new(grid.epoch_utc, grid.step_minutes * 10, grid.horizon_steps.div_ceil(10));
    let tracks: Vec<(GeoCoord, SiteTrack)> = config
        .sites
        .iter()
        .map(|s| {
            let g = s.geo();
            (g, SiteTrack::new(&g, &coarse, &config.constraints))
        })
        .collect();
    let need = (config.min_field_visible_fraction * coarse.horizon_steps as f64).ceil() as usize;
    let mut fields = Vec::with_capacity(config.num_fields);
    let mut attempts = 0usize;
    while fields.len() < config.num_fields {
        attempts += 1;
        let ra = rng.gen_range(0.0..360.0);
        let dec = rng.gen_range(-0.5f64..1.0).asin().to_degrees();
        let coord = SkyCoord::new(ra, dec);
        let visible = tracks.iter().any(|(geo, track)| {
            let n = track
                .observable_airmass(&coord, geo, &config.constraints)
                .iter()
                .filter(|x| x.is_some())
                .count();
            n >= need
        });
        // give up on the visibility filter if the sky is hopeless
        if visible || attempts > 200 * config.num_fields {
            fields.push(coord);
        }
    }
    fields
}

/// Builds a seeded scenario. The same `(config, seed)` always yields the
/// same scenario.
pub fn generate_scenario(config: &GenConfig, seed: u64) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::new(config.epoch_utc, config.step_minutes, config.horizon_steps());
    let mut sites = config.sites.clone();
    if config.randomize_equipment_priority {
        for s in &mut sites {
            s.equipment_priority = rng.gen::<f64>();
        }
    }
    let mut scenario = Scenario {
        version: SCENARIO_VERSION,
        grid: grid.clone(),
        sites,
        num_filters: config.num_filters,
        constraints: config.constraints,
        targets: Vec::new(),
        tasks: Vec::new(),
        rng_seed: seed,
    };
    let arrival_p = |rng: &mut ChaCha8Rng| match config.arrival {
        ArrivalMode::Steady { p } => p,
        ArrivalMode::Dynamic { max_p } => rng.gen_range(0.0..=max_p),
    };
    let mut arrivals = Vec::new();
    for t in 0..config.arrival_window_steps {
        let p = arrival_p(&mut rng);
        if rng.gen::<f64>() < p {
            arrivals.push(t);
        }
    }
    if arrivals.is_empty() {
        return Ok(scenario);
    }
    let fields = draw_fields(&mut rng, config, &grid);
    let tracks: Vec<(GeoCoord, SiteTrack)> = if config.visible_at_start {
        config
            .sites
            .iter()
            .map(|s| {
                let g = s.geo();
                (g, SiteTrack::new(&g, &grid, &config.constraints))
            })
            .collect()
    } else {
        Vec::new()
    };
    for t in arrivals {
        let mut coord = fields[rng.gen_range(0..fields.len())];
        let filters_required = draw_filters(&mut rng, &config.resources, config.num_filters);
        let duration = if rng.gen::<f64>() < config.long_duration_fraction {
            draw(&mut rng, config.long_duration)
        } else {
            draw(&mut rng, config.short_duration)
        };
        let exposure_minutes = if rng.gen::<f64>() < config.long_exposure_fraction {
            draw(&mut rng, config.long_exposure)
        } else {
            draw(&mut rng, config.short_exposure)
        };
        if config.visible_at_start {
            // a follow-up is only requested for a target some site can
            // observe right away; redraw the field a bounded number of times
            let end = (t + exposure_minutes).min(grid.horizon_steps) as usize;
            let ok = |c: &SkyCoord| {
                tracks.iter().any(|(geo, track)| {
                    let am = track.observable_airmass(c, geo, &config.constraints);
                    am[t as usize..end].iter().all(|x| x.is_some())
                })
            };
            for _ in 0..50 {
                if ok(&coord) {
                    break;
                }
                coord = fields[rng.gen_range(0..fields.len())];
            }
        }
        let mode = if rng.gen::<f64>() < config.cadence_fraction {
            ObservationMode::Cadence {
                gap_minutes: draw(&mut rng, config.cadence_gap),
            }
        } else {
            ObservationMode::ExposureCount
        };
        let priority = rng.gen_range(1..=config.priority_max.max(1));
        let target = Target {
            id: 0,
            coord,
            filters_required,
            start_time: t,
            fade_time: (t + duration).min(grid.horizon_steps),
            exposure_minutes,
            mode,
            priority,
            arrival_step: t,
        };
        scenario.push_target(target, config.deadline);
    }
    Ok(scenario)
}
