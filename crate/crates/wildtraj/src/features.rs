//! Kinematic feature engineering on the unit sphere, gap-aware validity
//! semantics, z-score standardization, and the TRJF tensor container.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::resample::{DailySequence, Resolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSchema {
    /// [dx, dy, dz, t_sin, t_cos]
    Minimal5,
    /// [dx, dy, dz, v, b_sin, b_cos, turn_sin, turn_cos, t_sin, t_cos]
    Augmented10,
}

impl FeatureSchema {
    pub fn ncols(self) -> usize {
        match self {
            FeatureSchema::Minimal5 => 5,
            FeatureSchema::Augmented10 => 10,
        }
    }

    /// Movement-derived columns (everything except the trailing time pair).
    pub fn movement_cols(self) -> usize {
        self.ncols() - 2
    }

    pub fn parse(s: &str) -> Option<FeatureSchema> {
        match s {
            "minimal" | "minimal5" | "5" => Some(FeatureSchema::Minimal5),
            "augmented" | "augmented10" | "10" => Some(FeatureSchema::Augmented10),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FeatureSchema::Minimal5 => "minimal5",
            FeatureSchema::Augmented10 => "augmented10",
        }
    }
}

/// movement_valid[t] = 1 iff slots t and t-1 are both defined, so the
/// inter-fix interval equals the nominal grid step. Slot 0 is always 0.
pub fn movement_validity(obs_mask: &[bool]) -> Vec<bool> {
    let mut v = vec![false; obs_mask.len()];
    for t in 1..obs_mask.len() {
        v[t] = obs_mask[t] && obs_mask[t - 1];
    }
    v
}

/// Project (lat, lon) in degrees onto the unit sphere.
pub fn to_unit_sphere(lat_deg: f64, lon_deg: f64) -> [f64; 3] {
    let phi = lat_deg.to_radians();
    let lam = lon_deg.to_radians();
    [
        phi.cos() * lam.cos(),
        phi.cos() * lam.sin(),
        phi.sin(),
    ]
}

pub fn displacement(curr: [f64; 3], prev: [f64; 3]) -> [f64; 3] {
    [curr[0] - prev[0], curr[1] - prev[1], curr[2] - prev[2]]
}

/// Euclidean chord length of a displacement.
pub fn step_length(d: [f64; 3]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Sphere-units per hour.
pub fn speed(step: f64, dt_hours: f64) -> f64 {
    assert!(dt_hours > 0.0, "speed needs a positive time base");
    step / dt_hours
}

/// Bearing angle of a displacement, from its x and y sphere components
/// only. `None` when both components are zero (stationary step); callers
/// encode that case as (0, 0), off the unit circle.
pub fn bearing(d: [f64; 3]) -> Option<f64> {
    if d[0] == 0.0 && d[1] == 0.0 {
        None
    } else {
        Some(d[1].atan2(d[0]))
    }
}

/// Wrap an angle into [-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    // rem_euclid maps +pi inputs to -pi; keep the closed upper end.
    if w == -std::f64::consts::PI && a > 0.0 {
        w = std::f64::consts::PI;
    }
    w
}

/// Turning angle between consecutive bearings, wrapped into [-pi, pi].
pub fn turning_angle(curr: f64, prev: f64) -> f64 {
    wrap_angle(curr - prev)
}

/// Cyclic time-of-day encoding for a grid slot.
pub fn time_encoding(slot: usize, resolution: Resolution) -> (f64, f64) {
    let frac = match resolution {
        Resolution::Hour => slot as f64 / 24.0,
        Resolution::HalfHour => (slot as f64 * 30.0) / 1440.0,
    };
    let a = std::f64::consts::TAU * frac;
    (a.sin(), a.cos())
}

/// Per-column mean / std fitted on training rows with valid entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub schema: FeatureSchema,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

/// T x F feature matrix with masks, ready for model input. Rows with
/// `obs_mask = 0` are all zero; observed rows with `movement_valid = 0`
/// carry zeros in the movement columns and real values in the time pair.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    pub animal_id: String,
    pub study_id: String,
    pub species: String,
    pub date: String,
    pub resolution: Resolution,
    pub schema: FeatureSchema,
    pub t: usize,
    pub f: usize,
    /// Row-major T x F.
    pub x: Vec<f32>,
    pub obs_mask: Vec<bool>,
    pub movement_valid: Vec<bool>,
}

/// Raw feature matrix in f64 with NaN marking undefined movement entries.
/// NaN -> 0 happens at tensor assembly, after standardization.
pub fn raw_features(day: &DailySequence, schema: FeatureSchema) -> Vec<f64> {
    let t_slots = day.obs_mask.len();
    let f = schema.ncols();
    let dt_hours = day.resolution.step_hours();
    let mut x = vec![f64::NAN; t_slots * f];

    // Unit-sphere projections for defined slots.
    let unit: Vec<Option<[f64; 3]>> = day
        .positions
        .iter()
        .map(|p| p.map(|(lat, lon)| to_unit_sphere(lat, lon)))
        .collect();

    // Bearings per slot, defined only on valid movement steps.
    let mut bearings: Vec<Option<f64>> = vec![None; t_slots];

    for t in 0..t_slots {
        let row = &mut x[t * f..(t + 1) * f];
        if !day.obs_mask[t] {
            // padding row: stays NaN here, zeroed at assembly
            continue;
        }
        let (tsin, tcos) = time_encoding(t, day.resolution);
        row[f - 2] = tsin;
        row[f - 1] = tcos;
        if !day.movement_valid[t] {
            continue;
        }
        let d = displacement(unit[t].unwrap(), unit[t - 1].unwrap());
        row[0] = d[0];
        row[1] = d[1];
        row[2] = d[2];
        if schema == FeatureSchema::Augmented10 {
            let ell = step_length(d);
            row[3] = speed(ell, dt_hours);
            let b = bearing(d);
            bearings[t] = b;
            let (bsin, bcos) = match b {
                Some(th) => (th.sin(), th.cos()),
                None => (0.0, 0.0), // stationary step, documented convention
            };
            row[4] = bsin;
            row[5] = bcos;
            let turn = match (b, bearings[t - 1]) {
                (Some(curr), Some(prev)) if day.movement_valid[t - 1] => {
                    Some(turning_angle(curr, prev))
                }
                _ => None,
            };
            let (dsin, dcos) = match turn {
                Some(dth) => (dth.sin(), dth.cos()),
                None => (0.0, 0.0),
            };
            row[6] = dsin;
            row[7] = dcos;
        }
    }
    x
}

/// Fit per-column stats over the movement columns of training tensors,
/// using only rows with `movement_valid = 1`. Time columns get identity
/// stats (mean 0, std 1) and are never standardized.
pub fn fit_norm_stats(days: &[&DailySequence], schema: FeatureSchema) -> Result<NormStats> {
    let f = schema.ncols();
    let mcols = schema.movement_cols();
    let mut sum = vec![0.0; f];
    let mut sumsq = vec![0.0; f];
    let mut n = 0usize;
    for day in days {
        let x = raw_features(day, schema);
        for t in 0..day.obs_mask.len() {
            if !day.movement_valid[t] {
                continue;
            }
            n += 1;
            for c in 0..mcols {
                let v = x[t * f + c];
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
    }
    if n == 0 {
        return Err(Error::Train(
            "cannot fit normalization stats: no valid movement rows in training set".into(),
        ));
    }
    let mut mean = vec![0.0; f];
    let mut std = vec![1.0; f];
    for c in 0..mcols {
        mean[c] = sum[c] / n as f64;
        let var = (sumsq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt().max(STD_FLOOR);
    }
    Ok(NormStats { schema, mean, std })
}

/// Assemble the final tensor for one day: standardize movement columns on
/// valid entries (when stats are supplied), then convert NaN to zero and
/// zero out padded rows.
pub fn assemble(
    day: &DailySequence,
    schema: FeatureSchema,
    stats: Option<&NormStats>,
) -> Result<FeatureTensor> {
    if let Some(s) = stats {
        if s.schema != schema {
            return Err(Error::Config(format!(
                "normalization stats were fitted for schema {} but tensor uses {}",
                s.schema.label(),
                schema.label()
            )));
        }
    }
    let f = schema.ncols();
    let t_slots = day.obs_mask.len();
    let mut x = raw_features(day, schema);
    if let Some(s) = stats {
        for t in 0..t_slots {
            if !day.movement_valid[t] {
                continue;
            }
            for c in 0..schema.movement_cols() {
                let v = &mut x[t * f + c];
                *v = (*v - s.mean[c]) / s.std[c];
            }
        }
    }
    let x32: Vec<f32> = x
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { v as f32 })
        .collect();
    Ok(FeatureTensor {
        animal_id: day.animal_id.clone(),
        study_id: day.study_id.clone(),
        species: day.species.clone(),
        date: day.date_string(),
        resolution: day.resolution,
        schema,
        t: t_slots,
        f,
        x: x32,
        obs_mask: day.obs_mask.clone(),
        movement_valid: day.movement_valid.clone(),
    })
}

// ---------------------------------------------------------------------------
// TRJF container: magic, version, T, F, count, resolution, schema, then one
// record per day. All integers little-endian.

const TRJF_MAGIC: &[u8; 4] = b"TRJF";
const TRJF_VERSION: u32 = 1;
const MAX_STRING: usize = 1 << 16;
const MAX_T: usize = 1 << 12;
const MAX_F: usize = 64;

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let b = s.as_bytes();
    if b.len() > MAX_STRING {
        return Err(Error::Schema("string too long for container".into()));
    }
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Schema("truncated container".into()))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let b = read_exact(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > MAX_STRING {
        return Err(Error::Schema("string length out of bounds".into()));
    }
    String::from_utf8(read_exact(r, len)?)
        .map_err(|_| Error::Schema("invalid utf-8 in container string".into()))
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[FeatureTensor]) -> Result<()> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Schema("refusing to write empty tensor container".into()))?;
    w.write_all(TRJF_MAGIC)?;
    w.write_all(&TRJF_VERSION.to_le_bytes())?;
    w.write_all(&(first.t as u32).to_le_bytes())?;
    w.write_all(&(first.f as u32).to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    w.write_all(&[match first.resolution {
        Resolution::Hour => 0u8,
        Resolution::HalfHour => 1u8,
    }])?;
    w.write_all(&[match first.schema {
        FeatureSchema::Minimal5 => 0u8,
        FeatureSchema::Augmented10 => 1u8,
    }])?;
    for ten in tensors {
        if ten.t != first.t || ten.f != first.f {
            return Err(Error::Schema("mixed tensor shapes in one container".into()));
        }
        write_string(w, &ten.animal_id)?;
        write_string(w, &ten.study_id)?;
        write_string(w, &ten.species)?;
        write_string(w, &ten.date)?;
        for v in &ten.x {
            w.write_all(&v.to_le_bytes())?;
        }
        for &m in &ten.obs_mask {
            w.write_all(&[m as u8])?;
        }
        for &m in &ten.movement_valid {
            w.write_all(&[m as u8])?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<FeatureTensor>> {
    let magic = read_exact(r, 4)?;
    if magic != TRJF_MAGIC {
        return Err(Error::Schema("bad magic: not a TRJF container".into()));
    }
    let version = read_u32(r)?;
    if version != TRJF_VERSION {
        return Err(Error::Schema(format!("unsupported TRJF version {version}")));
    }
    let t = read_u32(r)? as usize;
    let f = read_u32(r)? as usize;
    let count = read_u32(r)? as usize;
    if t == 0 || t > MAX_T || f == 0 || f > MAX_F {
        return Err(Error::Schema(format!("implausible tensor shape {t}x{f}")));
    }
    let resolution = match read_exact(r, 1)?[0] {
        0 => Resolution::Hour,
        1 => Resolution::HalfHour,
        b => return Err(Error::Schema(format!("unknown resolution tag {b}"))),
    };
    let schema = match read_exact(r, 1)?[0] {
        0 => FeatureSchema::Minimal5,
        1 => FeatureSchema::Augmented10,
        b => return Err(Error::Schema(format!("unknown schema tag {b}"))),
    };
    if f != schema.ncols() {
        return Err(Error::Schema(format!(
            "column count {f} does not match schema {}",
            schema.label()
        )));
    }
    let mut out = Vec::new();
    for _ in 0..count {
        let animal_id = read_string(r)?;
        let study_id = read_string(r)?;
        let species = read_string(r)?;
        let date = read_string(r)?;
        let raw = read_exact(r, t * f * 4)?;
        let mut x = Vec::with_capacity(t * f);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Schema("non-finite feature value".into()));
            }
            x.push(v);
        }
        let parse_mask = |bytes: Vec<u8>| -> Result<Vec<bool>> {
            bytes
                .into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::Schema("mask byte not 0/1".into())),
                })
                .collect()
        };
        let obs_mask = parse_mask(read_exact(r, t)?)?;
        let movement_valid = parse_mask(read_exact(r, t)?)?;
        for s in 0..t {
            if movement_valid[s] && !(obs_mask[s] && s > 0 && obs_mask[s - 1]) {
                return Err(Error::Schema(
                    "movement_valid set on a slot without defined neighbors".into(),
                ));
            }
        }
        out.push(FeatureTensor {
            animal_id,
            study_id,
            species,
            date,
            resolution,
            schema,
            t,
            f,
            x,
            obs_mask,
            movement_valid,
        });
    }
    Ok(out)
}
