//! Small hand-controlled scenarios for tests, benchmarks and oracles.
//!
//! "Open sky" scenarios disable the darkness and airmass limits and put every
//! target at the site's latitude, so visibility never binds and only the
//! resource, cadence and deadline constraints shape a schedule.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ephemeris::{SkyCoord, TimeGrid, VisibilityConstraints};
use crate::scenario::{DeadlinePolicy, ObservationMode, Scenario, Site, Target};
use crate::schedule::{Instance, TaskId};

const OPEN_LAT: f64 = 60.0;

pub fn open_sky_scenario(num_sites: usize, horizon: u32, num_filters: usize) -> Scenario {
    let sites = (0..num_sites)
        .map(|i| Site {
            name: format!("site-{i}"),
            lat_deg: OPEN_LAT,
            lon_deg: -60.0 + 30.0 * i as f64,
            alt_m: 0.0,
            equipment_priority: 1.0 - 0.1 * i as f64,
        })
        .collect();
    let grid = TimeGrid::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), 1, horizon);
    let mut s = Scenario::empty(grid, sites, num_filters);
    s.constraints = VisibilityConstraints {
        min_altitude_deg: 5.0,
        max_airmass: f64::INFINITY,
        max_sun_altitude_deg: 90.0,
    };
    s
}

fn mask_to_filters(mask: u8, d: usize) -> Vec<bool> {
    (0..d).map(|f| mask & (1 << f) != 0).collect()
}

/// Adds a one-exposure target and returns its task id. `deadline` defaults
/// to the grid horizon.
pub fn push_task(s: &mut Scenario, arrival: u32, exposure: u32, mask: u8, deadline: Option<u32>) -> TaskId {
    let horizon = s.grid.horizon_steps;
    let target = Target {
        id: 0,
        coord: SkyCoord::new(15.0 * s.targets.len() as f64, OPEN_LAT),
        filters_required: mask_to_filters(mask, s.num_filters),
        start_time: arrival,
        fade_time: arrival + exposure,
        exposure_minutes: exposure,
        mode: ObservationMode::ExposureCount,
        priority: 1,
        arrival_step: arrival,
    };
    s.push_target(target, DeadlinePolicy::Fade);
    let task = s.tasks.last_mut().unwrap();
    task.deadline = deadline.unwrap_or(horizon);
    task.id
}

/// Adds a multi-exposure target, deadlines at the horizon.
pub fn push_target(
    s: &mut Scenario,
    start: u32,
    fade: u32,
    exposure: u32,
    mask: u8,
    mode: ObservationMode,
) -> Vec<TaskId> {
    let before = s.tasks.len();
    let target = Target {
        id: 0,
        coord: SkyCoord::new(15.0 * s.targets.len() as f64, OPEN_LAT),
        filters_required: mask_to_filters(mask, s.num_filters),
        start_time: start,
        fade_time: fade,
        exposure_minutes: exposure,
        mode,
        priority: 1,
        arrival_step: start,
    };
    s.push_target(target, DeadlinePolicy::Horizon);
    (before as TaskId..s.tasks.len() as TaskId).collect()
}

pub fn instance(s: Scenario) -> Arc<Instance> {
    Arc::new(Instance::new(s).expect("fixture scenario is valid"))
}

/// Random open-sky instance with at most `max_tasks` tasks on `num_sites`
/// sites: single exposures and occasional two-exposure cadence targets,
/// arrivals in the first half of the horizon.
pub fn random_small(seed: u64, max_tasks: usize, num_sites: usize, num_filters: usize, horizon: u32) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = open_sky_scenario(num_sites, horizon, num_filters);
    s.rng_seed = seed;
    let n = rng.gen_range(2..=max_tasks.max(2));
    let full = (1u16 << num_filters) - 1;
    while s.tasks.len() < n {
        let arrival = rng.gen_range(0..horizon / 2);
        let exposure = rng.gen_range(3..=10).min(horizon - arrival);
        let mask = rng.gen_range(1..=full) as u8;
        let gap = rng.gen_range(0..=5);
        if s.tasks.len() + 2 <= n && arrival + 2 * exposure + gap <= horizon && rng.gen_bool(0.3) {
            push_target(
                &mut s,
                arrival,
                arrival + 2 * exposure + gap,
                exposure,
                mask,
                ObservationMode::Cadence { gap_minutes: gap },
            );
        } else {
            push_task(&mut s, arrival, exposure, mask, None);
        }
    }
    s
}
