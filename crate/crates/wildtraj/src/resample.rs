//! Fixed-grid resampling of irregular fix streams, single-gap linear
//! interpolation, and UTC daily segmentation with coverage filtering.

use std::collections::BTreeMap;

use crate::features::movement_validity;
use crate::ingest::{AnimalTrack, FixRecord};

pub const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resolution {
    Hour,
    HalfHour,
}

impl Resolution {
    pub fn step_secs(self) -> i64 {
        match self {
            Resolution::Hour => 3600,
            Resolution::HalfHour => 1800,
        }
    }

    pub fn slots_per_day(self) -> usize {
        match self {
            Resolution::Hour => 24,
            Resolution::HalfHour => 48,
        }
    }

    /// Minimum defined slots for a day to be retained.
    pub fn coverage_min(self) -> usize {
        match self {
            Resolution::Hour => 12,
            Resolution::HalfHour => 25,
        }
    }

    /// Step expressed in hours, the time base for speeds.
    pub fn step_hours(self) -> f64 {
        self.step_secs() as f64 / 3600.0
    }

    pub fn parse(s: &str) -> Option<Resolution> {
        match s {
            "1h" | "hour" | "3600" => Some(Resolution::Hour),
            "30m" | "halfhour" | "1800" => Some(Resolution::HalfHour),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Resolution::Hour => "1h",
            Resolution::HalfHour => "30m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEntry {
    pub lat: f64,
    pub lon: f64,
    pub interpolated: bool,
}

/// One animal's positions on a regular grid. Index `k` corresponds to the
/// instant `start + k * step`; `start` is a multiple of the step, so grids
/// are anchored at UTC midnight and day slots align with segmentation.
#[derive(Debug, Clone)]
pub struct GridTrack {
    pub animal_id: String,
    pub study_id: String,
    pub species: String,
    pub resolution: Resolution,
    pub start: i64,
    pub entries: Vec<Option<GridEntry>>,
}

impl GridTrack {
    pub fn time_at(&self, k: usize) -> i64 {
        self.start + k as i64 * self.resolution.step_secs()
    }
}

/// One animal-day on the grid: `positions[t]` for slot `t` of the UTC day.
#[derive(Debug, Clone)]
pub struct DailySequence {
    pub animal_id: String,
    pub study_id: String,
    pub species: String,
    /// Days since the unix epoch (UTC calendar day).
    pub day: i64,
    pub resolution: Resolution,
    pub positions: Vec<Option<(f64, f64)>>,
    pub obs_mask: Vec<bool>,
    pub movement_valid: Vec<bool>,
}

impl DailySequence {
    pub fn date_string(&self) -> String {
        let secs = self.day * SECS_PER_DAY;
        chrono::DateTime::from_timestamp(secs, 0)
            .map(|d| d.format("%Y-%m-%d").to_string())
            .unwrap_or_else(|| format!("day{}", self.day))
    }

    pub fn observed_count(&self) -> usize {
        self.obs_mask.iter().filter(|&&m| m).count()
    }
}

/// Round `t` to the nearest multiple of `step`; exact half-intervals round
/// up (toward later time).
pub fn round_to_grid(t: i64, step: i64) -> i64 {
    debug_assert!(step > 0);
    (t + step / 2).div_euclid(step) * step
}

/// Map each fix to its nearest grid time and keep, per grid time, the fix
/// with minimal |t - t_grid|; exact-distance ties keep the earlier fix.
pub fn snap_and_select(track: &AnimalTrack, resolution: Resolution) -> BTreeMap<i64, FixRecord> {
    let step = resolution.step_secs();
    let mut best: BTreeMap<i64, (i64, FixRecord)> = BTreeMap::new();
    for f in &track.fixes {
        let grid_t = round_to_grid(f.timestamp, step);
        let dist = (f.timestamp - grid_t).abs();
        match best.get(&grid_t) {
            // Fixes arrive in increasing time order, so on an equal
            // distance the already-stored (earlier) fix wins.
            Some((d, _)) if dist >= *d => {}
            _ => {
                best.insert(grid_t, (dist, f.clone()));
            }
        }
    }
    best.into_iter().map(|(k, (_, f))| (k, f)).collect()
}

/// Build the contiguous grid track from snapped fixes.
pub fn to_grid_track(track: &AnimalTrack, resolution: Resolution) -> GridTrack {
    let snapped = snap_and_select(track, resolution);
    let step = resolution.step_secs();
    let (start, end) = match (snapped.keys().next(), snapped.keys().next_back()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            return GridTrack {
                animal_id: track.animal_id.clone(),
                study_id: track.study_id.clone(),
                species: track.species.clone(),
                resolution,
                start: 0,
                entries: Vec::new(),
            }
        }
    };
    let n = ((end - start) / step) as usize + 1;
    let mut entries = vec![None; n];
    for (t, f) in &snapped {
        let k = ((t - start) / step) as usize;
        entries[k] = Some(GridEntry {
            lat: f.lat,
            lon: f.lon,
            interpolated: false,
        });
    }
    GridTrack {
        animal_id: track.animal_id.clone(),
        study_id: track.study_id.clone(),
        species: track.species.clone(),
        resolution,
        start,
        entries,
    }
}

/// Fill undefined slots that have observed neighbors exactly one step away
/// on both sides with the component-wise midpoint. Longer gaps stay
/// undefined; no forward/backward fill. Pairs straddling the antimeridian
/// are not interpolated (returned as warnings).
pub fn fill_single_gaps(grid: &GridTrack) -> (GridTrack, Vec<String>) {
    let mut out = grid.clone();
    let mut warnings = Vec::new();
    for k in 1..grid.entries.len().saturating_sub(1) {
        if grid.entries[k].is_some() {
            continue;
        }
        let (prev, next) = match (&grid.entries[k - 1], &grid.entries[k + 1]) {
            (Some(p), Some(n)) => (p, n),
            _ => continue,
        };
        if (prev.lon - next.lon).abs() > 180.0 {
            warnings.push(format!(
                "animal {}: antimeridian-crossing gap at grid index {k} left undefined",
                grid.animal_id
            ));
            continue;
        }
        out.entries[k] = Some(GridEntry {
            lat: 0.5 * (prev.lat + next.lat),
            lon: 0.5 * (prev.lon + next.lon),
            interpolated: true,
        });
    }
    (out, warnings)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SegmentStats {
    pub retained: usize,
    pub dropped: usize,
}

/// Slice a grid track into UTC calendar days and keep days meeting the
/// coverage threshold. Interpolated slots count as defined.
pub fn segment_days(grid: &GridTrack) -> (Vec<DailySequence>, SegmentStats) {
    let step = grid.resolution.step_secs();
    let t_slots = grid.resolution.slots_per_day();
    let mut by_day: BTreeMap<i64, Vec<Option<(f64, f64)>>> = BTreeMap::new();
    for (k, entry) in grid.entries.iter().enumerate() {
        let Some(e) = entry else { continue };
        let t = grid.time_at(k);
        let day = t.div_euclid(SECS_PER_DAY);
        let slot = (t.rem_euclid(SECS_PER_DAY) / step) as usize;
        by_day
            .entry(day)
            .or_insert_with(|| vec![None; t_slots])[slot] = Some((e.lat, e.lon));
    }

    let mut days = Vec::new();
    let mut stats = SegmentStats::default();
    for (day, positions) in by_day {
        let obs_mask: Vec<bool> = positions.iter().map(|p| p.is_some()).collect();
        let defined = obs_mask.iter().filter(|&&m| m).count();
        if defined < grid.resolution.coverage_min() {
            stats.dropped += 1;
            continue;
        }
        stats.retained += 1;
        let movement_valid = movement_validity(&obs_mask);
        days.push(DailySequence {
            animal_id: grid.animal_id.clone(),
            study_id: grid.study_id.clone(),
            species: grid.species.clone(),
            day,
            resolution: grid.resolution,
            positions,
            obs_mask,
            movement_valid,
        });
    }
    (days, stats)
}

/// Serialize defined grid slots as `grid_time_iso,lat,lon,origin{O|I}`.
pub fn grid_track_to_csv(grid: &GridTrack) -> String {
    let mut out = String::from("grid_time,lat,lon,origin\n");
    for (k, entry) in grid.entries.iter().enumerate() {
        let Some(e) = entry else { continue };
        let t = chrono::DateTime::from_timestamp(grid.time_at(k), 0).unwrap();
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.format("%Y-%m-%dT%H:%M:%SZ"),
            e.lat,
            e.lon,
            if e.interpolated { "I" } else { "O" }
        ));
    }
    out
}
