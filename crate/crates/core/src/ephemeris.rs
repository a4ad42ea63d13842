//! Observability physics: sidereal time, altitude, airmass, the Sun, and
//! per-site visibility windows on the scheduling grid.
//!
//! Everything here is a closed-form, low-precision model. Thresholds used by
//! the scheduler are coarse (degrees, not arcseconds), so refraction,
//! precession and nutation are ignored.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

const J2000_JD: f64 = 2_451_545.0;
const UNIX_EPOCH_JD: f64 = 2_440_587.5;

/// Equatorial coordinates of a target, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkyCoord {
    pub ra: f64,
    pub dec: f64,
}

impl SkyCoord {
    /// Wraps `ra` into `[0, 360)` and clamps `dec` to `[-90, 90]`.
    pub fn new(ra: f64, dec: f64) -> Self {
        Self {
            ra: wrap_degrees(ra),
            dec: dec.clamp(-90.0, 90.0),
        }
    }
}

/// Geographic location of an observing site. Longitude is east-positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lat: f64,
    pub lon: f64,
    pub altitude_m: f64,
}

impl GeoCoord {
    pub fn new(lat: f64, lon: f64, altitude_m: f64) -> Self {
        Self {
            lat: lat.clamp(-90.0, 90.0),
            lon: wrap_longitude(lon),
            altitude_m,
        }
    }
}

/// Discrete scheduling clock: step `k` is the instant `epoch_utc + k * step_minutes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub epoch_utc: DateTime<Utc>,
    pub step_minutes: u32,
    pub horizon_steps: u32,
}

impl TimeGrid {
    pub fn new(epoch_utc: DateTime<Utc>, step_minutes: u32, horizon_steps: u32) -> Self {
        Self {
            epoch_utc,
            step_minutes: step_minutes.max(1),
            horizon_steps: horizon_steps.max(1),
        }
    }

    pub fn instant(&self, step: u32) -> DateTime<Utc> {
        self.epoch_utc + Duration::minutes(i64::from(step) * i64::from(self.step_minutes))
    }

    pub fn julian_date(&self, step: u32) -> f64 {
        julian_date(self.epoch_utc)
            + f64::from(step) * f64::from(self.step_minutes) / (24.0 * 60.0)
    }
}

/// Half-open run of visible steps `[start_step, end_step)` at one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityWindow {
    pub site_index: usize,
    pub start_step: u32,
    pub end_step: u32,
    pub min_airmass_in_window: f64,
}

/// Thresholds that decide whether a target can be observed at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityConstraints {
    /// Targets at or below this altitude have no defined airmass.
    pub min_altitude_deg: f64,
    pub max_airmass: f64,
    /// The sky counts as dark while the Sun is at or below this altitude.
    pub max_sun_altitude_deg: f64,
}

impl Default for VisibilityConstraints {
    fn default() -> Self {
        Self {
            min_altitude_deg: 5.0,
            max_airmass: 3.0,
            max_sun_altitude_deg: -12.0,
        }
    }
}

pub fn wrap_degrees(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

fn wrap_longitude(lon: f64) -> f64 {
    let w = wrap_degrees(lon);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

pub fn julian_date(t: DateTime<Utc>) -> f64 {
    let secs = t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9;
    secs / 86_400.0 + UNIX_EPOCH_JD
}

/// Greenwich mean sidereal time in degrees (IAU 1982 polynomial in UT days).
pub fn gmst_degrees(jd: f64) -> f64 {
    let d = jd - J2000_JD;
    let t = d / 36_525.0;
    wrap_degrees(280.460_618_37 + 360.985_647_366_29 * d + 0.000_387_933 * t * t - t * t * t / 38_710_000.0)
}

/// Local sidereal time in degrees at grid step `step` for `site`.
pub fn local_sidereal_time(epoch_utc: DateTime<Utc>, step_minutes: u32, step: u32, site: &GeoCoord) -> f64 {
    let jd = julian_date(epoch_utc) + f64::from(step) * f64::from(step_minutes) / 1440.0;
    wrap_degrees(gmst_degrees(jd) + site.lon)
}

/// Altitude of `target` above the horizon, in degrees.
pub fn altitude(target: &SkyCoord, site: &GeoCoord, lst: f64) -> f64 {
    let ha = (lst - target.ra).to_radians();
    let (lat, dec) = (site.lat.to_radians(), target.dec.to_radians());
    let s = lat.sin() * dec.sin() + lat.cos() * dec.cos() * ha.cos();
    s.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Kasten & Young (1989) relative airmass with the default 5 degree cutoff.
///
/// `None` means the target is too low to observe.
pub fn airmass(alt_deg: f64) -> Option<f64> {
    airmass_with_cutoff(alt_deg, VisibilityConstraints::default().min_altitude_deg)
}

pub fn airmass_with_cutoff(alt_deg: f64, cutoff_deg: f64) -> Option<f64> {
    if alt_deg <= cutoff_deg || alt_deg.is_nan() {
        return None;
    }
    let alt = alt_deg.min(90.0);
    Some(1.0 / (alt.to_radians().sin() + 0.50572 * (alt + 6.07995).powf(-1.6364)))
}

/// Low-precision apparent position of the Sun (good to about 0.01 degree
/// between 1950 and 2050).
pub fn sun_position(jd: f64) -> SkyCoord {
    let n = jd - J2000_JD;
    let mean_lon = 280.460 + 0.985_647_4 * n;
    let g = (357.528 + 0.985_600_3 * n).to_radians();
    let lambda = (mean_lon + 1.915 * g.sin() + 0.020 * (2.0 * g).sin()).to_radians();
    let eps = (23.439 - 0.000_000_4 * n).to_radians();
    let ra = (eps.cos() * lambda.sin()).atan2(lambda.cos()).to_degrees();
    let dec = (eps.sin() * lambda.sin()).asin().to_degrees();
    SkyCoord::new(ra, dec)
}

pub fn sun_altitude(epoch_utc: DateTime<Utc>, step_minutes: u32, step: u32, site: &GeoCoord) -> f64 {
    let jd = julian_date(epoch_utc) + f64::from(step) * f64::from(step_minutes) / 1440.0;
    let lst = wrap_degrees(gmst_degrees(jd) + site.lon);
    altitude(&sun_position(jd), site, lst)
}

/// Per-step quantities of one site that do not depend on the target.
#[derive(Debug, Clone)]
pub struct SiteTrack {
    pub lst: Vec<f64>,
    pub dark: Vec<bool>,
}

impl SiteTrack {
    pub fn new(site: &GeoCoord, grid: &TimeGrid, constraints: &VisibilityConstraints) -> Self {
        let steps = grid.horizon_steps;
        let mut lst = Vec::with_capacity(steps as usize);
        let mut dark = Vec::with_capacity(steps as usize);
        for k in 0..steps {
            lst.push(local_sidereal_time(grid.epoch_utc, grid.step_minutes, k, site));
            dark.push(sun_altitude(grid.epoch_utc, grid.step_minutes, k, site) <= constraints.max_sun_altitude_deg);
        }
        Self { lst, dark }
    }

    /// Airmass of `target` at every step, `None` where it is not observable
    /// (too low, too much air, or not dark).
    pub fn observable_airmass(
        &self,
        target: &SkyCoord,
        site: &GeoCoord,
        constraints: &VisibilityConstraints,
    ) -> Vec<Option<f64>> {
        self.lst
            .iter()
            .zip(&self.dark)
            .map(|(&lst, &dark)| {
                if !dark {
                    return None;
                }
                airmass_with_cutoff(altitude(target, site, lst), constraints.min_altitude_deg)
                    .filter(|&x| x <= constraints.max_airmass)
            })
            .collect()
    }
}

/// Collapses a per-step airmass track into maximal visible runs.
pub fn windows_from_track(site_index: usize, track: &[Option<f64>]) -> Vec<VisibilityWindow> {
    let mut out = Vec::new();
    let mut open: Option<(u32, f64)> = None;
    for (k, x) in track.iter().enumerate() {
        let k = k as u32;
        match (x, open.as_mut()) {
            (Some(x), Some((_, best))) => *best = best.min(*x),
            (Some(x), None) => open = Some((k, *x)),
            (None, Some(&mut (start, best))) => {
                out.push(VisibilityWindow {
                    site_index,
                    start_step: start,
                    end_step: k,
                    min_airmass_in_window: best,
                });
                open = None;
            }
            (None, None) => {}
        }
    }
    if let Some((start, best)) = open {
        out.push(VisibilityWindow {
            site_index,
            start_step: start,
            end_step: track.len() as u32,
            min_airmass_in_window: best,
        });
    }
    out
}

/// Maximal windows during which `target` is observable from `site`.
pub fn visibility_windows(
    target: &SkyCoord,
    site_index: usize,
    site: &GeoCoord,
    grid: &TimeGrid,
    constraints: &VisibilityConstraints,
) -> Vec<VisibilityWindow> {
    let track = SiteTrack::new(site, grid, constraints).observable_airmass(target, site, constraints);
    windows_from_track(site_index, &track)
}
