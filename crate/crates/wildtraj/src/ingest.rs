//! CSV telemetry ingest: parse fixes, validate ranges, average duplicate
//! timestamps, and build per-animal tracks.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{NaiveDateTime, TimeZone, Utc};

use crate::error::{Error, Result};

/// One raw GPS observation. Timestamps are UTC unix seconds (sub-second
/// precision is truncated on parse; the grids downstream are >= 30 min).
#[derive(Debug, Clone, PartialEq)]
pub struct FixRecord {
    pub animal_id: String,
    pub study_id: String,
    pub species: String,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
}

/// Time-ordered fixes of one animal. Strictly increasing timestamps after
/// [`dedup_same_timestamp`].
#[derive(Debug, Clone)]
pub struct AnimalTrack {
    pub animal_id: String,
    pub study_id: String,
    pub species: String,
    pub fixes: Vec<FixRecord>,
}

/// Binds logical fields to CSV header names. Defaults mirror Movebank
/// export columns; `study` / `species` fall back to per-file values when
/// the column is absent.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub animal: String,
    pub study: Option<String>,
    pub species: Option<String>,
    /// Value used for every row when no study column is bound.
    pub default_study: Option<String>,
    /// Value used for every row when no species column is bound.
    pub default_species: Option<String>,
    /// Fixed offset (seconds east of UTC) applied to timestamps that carry
    /// no explicit zone. Default 0: naive timestamps are treated as UTC.
    pub utc_offset_secs: i64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: "timestamp".into(),
            lat: "location-lat".into(),
            lon: "location-long".into(),
            animal: "individual-local-identifier".into(),
            study: Some("study-id".into()),
            species: Some("species".into()),
            default_study: None,
            default_species: None,
            utc_offset_secs: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub records: Vec<FixRecord>,
    pub rejections: Vec<Rejection>,
}

impl ParseOutcome {
    /// One line per rejected row, for the rejection report file.
    pub fn rejection_report(&self) -> String {
        let mut out = String::new();
        for r in &self.rejections {
            out.push_str(&format!("line {}: {}\n", r.line, r.reason));
        }
        out
    }
}

/// Parse `YYYY-MM-DD HH:MM:SS[.fff]` or ISO-8601 with `Z`/offset into unix
/// seconds. Naive strings get `naive_offset_secs` subtracted (i.e. are
/// interpreted as local time at that fixed offset).
pub fn parse_timestamp(s: &str, naive_offset_secs: i64) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            let secs = Utc.from_utc_datetime(&naive).timestamp();
            return Some(secs - naive_offset_secs);
        }
    }
    None
}

/// Parse a telemetry CSV stream into fix records, in file order.
///
/// Rows with unparseable timestamps or out-of-range coordinates are
/// rejected and counted, never silently dropped. Missing required columns
/// and empty files are fatal; so is a rejection rate above 50%.
pub fn parse_fixes<R: Read>(reader: R, map: &ColumnMap) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let ts_i = find(&map.timestamp)
        .ok_or_else(|| Error::Schema(format!("missing required column `{}`", map.timestamp)))?;
    let lat_i = find(&map.lat)
        .ok_or_else(|| Error::Schema(format!("missing required column `{}`", map.lat)))?;
    let lon_i = find(&map.lon)
        .ok_or_else(|| Error::Schema(format!("missing required column `{}`", map.lon)))?;
    let animal_i = find(&map.animal)
        .ok_or_else(|| Error::Schema(format!("missing required column `{}`", map.animal)))?;
    let study_i = map.study.as_deref().and_then(find);
    let species_i = map.species.as_deref().and_then(find);

    if study_i.is_none() && map.default_study.is_none() {
        return Err(Error::Schema(
            "no study column bound and no per-file study id supplied".into(),
        ));
    }
    if species_i.is_none() && map.default_species.is_none() {
        // Refuse to guess species labels.
        return Err(Error::Schema(
            "no species column bound and no per-file species supplied".into(),
        ));
    }

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut total = 0usize;

    for (row_idx, row) in rdr.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        total += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejections.push(Rejection {
                    line,
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();

        let ts = match parse_timestamp(&field(ts_i), map.utc_offset_secs) {
            Some(t) => t,
            None => {
                rejections.push(Rejection {
                    line,
                    reason: format!("unparseable timestamp `{}`", field(ts_i)),
                });
                continue;
            }
        };
        let lat: f64 = match field(lat_i).parse() {
            Ok(v) => v,
            Err(_) => {
                rejections.push(Rejection {
                    line,
                    reason: format!("unparseable latitude `{}`", field(lat_i)),
                });
                continue;
            }
        };
        let lon: f64 = match field(lon_i).parse() {
            Ok(v) => v,
            Err(_) => {
                rejections.push(Rejection {
                    line,
                    reason: format!("unparseable longitude `{}`", field(lon_i)),
                });
                continue;
            }
        };
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            rejections.push(Rejection {
                line,
                reason: format!("latitude {lat} out of [-90, 90]"),
            });
            continue;
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            rejections.push(Rejection {
                line,
                reason: format!("longitude {lon} out of (-180, 180]"),
            });
            continue;
        }
        // Canonical longitude range is (-180, 180].
        let lon = if lon == -180.0 { 180.0 } else { lon };

        let animal_id = field(animal_i);
        if animal_id.is_empty() {
            rejections.push(Rejection {
                line,
                reason: "empty animal identifier".into(),
            });
            continue;
        }
        let study_id = study_i
            .map(|i| field(i))
            .filter(|s| !s.is_empty())
            .or_else(|| map.default_study.clone())
            .unwrap_or_default();
        let species = species_i
            .map(|i| field(i))
            .filter(|s| !s.is_empty())
            .or_else(|| map.default_species.clone())
            .unwrap_or_default();
        if species.is_empty() {
            rejections.push(Rejection {
                line,
                reason: "row has no species label and no per-file default".into(),
            });
            continue;
        }

        records.push(FixRecord {
            animal_id,
            study_id,
            species,
            timestamp: ts,
            lat,
            lon,
        });
    }

    if total == 0 {
        return Err(Error::Schema("empty file: no data rows".into()));
    }
    if rejections.len() * 2 > total {
        return Err(Error::CorruptInput {
            rejected: rejections.len(),
            total,
        });
    }
    Ok(ParseOutcome {
        records,
        rejections,
    })
}

/// Group parsed fixes into per-animal tracks sorted by timestamp.
/// Animals appearing with conflicting study or species labels are an error.
pub fn group_tracks(records: Vec<FixRecord>) -> Result<Vec<AnimalTrack>> {
    let mut by_animal: BTreeMap<String, Vec<FixRecord>> = BTreeMap::new();
    for r in records {
        by_animal.entry(r.animal_id.clone()).or_default().push(r);
    }
    let mut tracks = Vec::new();
    for (animal_id, mut fixes) in by_animal {
        let study_id = fixes[0].study_id.clone();
        let species = fixes[0].species.clone();
        for f in &fixes {
            if f.study_id != study_id || f.species != species {
                return Err(Error::Schema(format!(
                    "animal `{animal_id}` carries conflicting study/species labels"
                )));
            }
        }
        fixes.sort_by_key(|f| f.timestamp);
        tracks.push(AnimalTrack {
            animal_id,
            study_id,
            species,
            fixes,
        });
    }
    Ok(tracks)
}

/// Collapse fixes sharing one timestamp into a single fix at the
/// arithmetic mean of lat and lon. Output is strictly increasing in time.
pub fn dedup_same_timestamp(track: AnimalTrack) -> AnimalTrack {
    let mut out: Vec<FixRecord> = Vec::with_capacity(track.fixes.len());
    let mut i = 0;
    let fixes = track.fixes;
    while i < fixes.len() {
        let t = fixes[i].timestamp;
        let mut j = i;
        let mut lat_sum = 0.0;
        let mut lon_sum = 0.0;
        while j < fixes.len() && fixes[j].timestamp == t {
            lat_sum += fixes[j].lat;
            lon_sum += fixes[j].lon;
            j += 1;
        }
        let n = (j - i) as f64;
        let mut f = fixes[i].clone();
        f.lat = lat_sum / n;
        f.lon = lon_sum / n;
        out.push(f);
        i = j;
    }
    AnimalTrack {
        fixes: out,
        ..track
    }
}
