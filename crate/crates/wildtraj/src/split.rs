//! Leakage-proof split manifests: whole-study holdout for test, strict
//! animal-level partition for train/val.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Identity of one animal-day, the unit of assignment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DayKey {
    pub animal_id: String,
    pub study_id: String,
    pub species: String,
    pub date: String,
}

#[derive(Debug, Clone)]
pub struct SplitManifest {
    pub assignments: BTreeMap<DayKey, Split>,
    /// species -> held-out study id.
    pub holdout: BTreeMap<String, String>,
    pub seed: u64,
    pub val_fraction: f64,
}

/// Build a manifest. Test gets every day from held-out studies; remaining
/// animals are shuffled deterministically and assigned whole to val until
/// the val day count reaches `val_fraction` of the remainder, the rest to
/// train. Species without a holdout entry are rejected unless
/// `allow_within_study_test` is set, in which case their animals are split
/// train/val/test within the study.
pub fn make_manifest(
    days: &[DayKey],
    holdout: &BTreeMap<String, String>,
    val_fraction: f64,
    seed: u64,
    allow_within_study_test: bool,
) -> Result<SplitManifest> {
    if days.is_empty() {
        return Err(Error::Split("no days to assign".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Split(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }

    let species_present: BTreeSet<&str> = days.iter().map(|d| d.species.as_str()).collect();
    let studies_per_species: BTreeMap<&str, BTreeSet<&str>> = {
        let mut m: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for d in days {
            m.entry(d.species.as_str())
                .or_default()
                .insert(d.study_id.as_str());
        }
        m
    };

    for (species, study) in holdout {
        let studies = studies_per_species
            .get(species.as_str())
            .ok_or_else(|| Error::Split(format!("holdout species `{species}` absent from data")))?;
        if !studies.contains(study.as_str()) {
            return Err(Error::Split(format!(
                "holdout study `{study}` absent from data for species `{species}`"
            )));
        }
        if studies.len() == 1 {
            return Err(Error::Split(format!(
                "species `{species}` has only the holdout study `{study}`: no training data"
            )));
        }
    }
    let mut within_study: BTreeSet<&str> = BTreeSet::new();
    for species in &species_present {
        if !holdout.contains_key(*species) {
            if !allow_within_study_test {
                return Err(Error::Split(format!(
                    "species `{species}` has no holdout study; pass \
                     --allow-within-study-test to split within studies instead"
                )));
            }
            within_study.insert(species);
        }
    }

    let mut assignments: BTreeMap<DayKey, Split> = BTreeMap::new();
    // Fixed test membership first: whole held-out studies.
    let mut remaining: Vec<&DayKey> = Vec::new();
    for d in days {
        match holdout.get(&d.species) {
            Some(study) if *study == d.study_id => {
                assignments.insert(d.clone(), Split::Test);
            }
            _ => remaining.push(d),
        }
    }

    // Within-study fallback species: carve a test set at the animal level.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trainval: Vec<&DayKey> = Vec::new();
    for species in &within_study {
        let sp_days: Vec<&DayKey> = remaining
            .iter()
            .copied()
            .filter(|d| d.species == *species)
            .collect();
        let mut animals: Vec<&str> = sp_days
            .iter()
            .map(|d| d.animal_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if animals.len() < 3 {
            return Err(Error::Split(format!(
                "species `{species}` has {} animals; within-study splitting needs at least 3",
                animals.len()
            )));
        }
        animals.shuffle(&mut rng);
        let day_count: BTreeMap<&str, usize> = {
            let mut m = BTreeMap::new();
            for d in &sp_days {
                *m.entry(d.animal_id.as_str()).or_insert(0) += 1;
            }
            m
        };
        let target = (sp_days.len() as f64 * 0.2).ceil() as usize;
        let mut test_animals: BTreeSet<&str> = BTreeSet::new();
        let mut got = 0usize;
        for a in &animals {
            if got >= target || test_animals.len() + 2 > animals.len() {
                break;
            }
            test_animals.insert(a);
            got += day_count[a];
        }
        for d in sp_days {
            if test_animals.contains(d.animal_id.as_str()) {
                assignments.insert(d.clone(), Split::Test);
            } else {
                trainval.push(d);
            }
        }
    }
    for d in &remaining {
        if !within_study.contains(d.species.as_str()) {
            trainval.push(d);
        }
    }

    // Animal-level train/val partition of the remainder.
    let mut animals: Vec<&str> = trainval
        .iter()
        .map(|d| d.animal_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if animals.is_empty() {
        return Err(Error::Split("no train/val data left after holdout".into()));
    }
    animals.shuffle(&mut rng);
    let day_count: BTreeMap<&str, usize> = {
        let mut m = BTreeMap::new();
        for d in &trainval {
            *m.entry(d.animal_id.as_str()).or_insert(0) += 1;
        }
        m
    };
    let target = (trainval.len() as f64 * val_fraction).round() as usize;
    let mut val_animals: BTreeSet<&str> = BTreeSet::new();
    let mut val_days = 0usize;
    for a in &animals {
        if val_days >= target || val_animals.len() + 1 >= animals.len() {
            break;
        }
        val_animals.insert(a);
        val_days += day_count[a];
    }
    for d in trainval {
        let split = if val_animals.contains(d.animal_id.as_str()) {
            Split::Val
        } else {
            Split::Train
        };
        assignments.insert(d.clone(), split);
    }

    Ok(SplitManifest {
        assignments,
        holdout: holdout.clone(),
        seed,
        val_fraction,
    })
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_text(&self) -> String {
        if self.passed() {
            "leakage audit: pass (0 violations)\n".to_string()
        } else {
            let mut s = format!("leakage audit: FAIL ({} violations)\n", self.violations.len());
            for v in &self.violations {
                s.push_str(v);
                s.push('\n');
            }
            s
        }
    }
}

/// Verify the manifest invariants: every day assigned, test days only from
/// declared holdout studies (or within-study fallback species), no holdout
/// study leaking into train/val, and no animal in more than one split.
pub fn audit_leakage(manifest: &SplitManifest, days: &[DayKey]) -> AuditReport {
    let mut report = AuditReport::default();
    let mut animal_split: BTreeMap<&str, Split> = BTreeMap::new();

    for d in days {
        let Some(&split) = manifest.assignments.get(d) else {
            report
                .violations
                .push(format!("day {:?} missing from manifest", d));
            continue;
        };
        let holdout = manifest.holdout.get(&d.species);
        match split {
            Split::Test => {
                if let Some(study) = holdout {
                    if *study != d.study_id {
                        report.violations.push(format!(
                            "test day of animal `{}` comes from non-holdout study `{}`",
                            d.animal_id, d.study_id
                        ));
                    }
                }
            }
            Split::Train | Split::Val => {
                if holdout == Some(&d.study_id) {
                    report.violations.push(format!(
                        "{split} day of animal `{}` belongs to holdout study `{}`",
                        d.animal_id, d.study_id
                    ));
                }
            }
        }
        match animal_split.get(d.animal_id.as_str()) {
            Some(&prev) if prev != split => {
                report.violations.push(format!(
                    "animal `{}` appears in both {prev} and {split}",
                    d.animal_id
                ));
            }
            Some(_) => {}
            None => {
                animal_split.insert(d.animal_id.as_str(), split);
            }
        }
    }
    report
}

/// Serialize as `animal_id,study_id,species,date,split` CSV.
pub fn manifest_to_csv(manifest: &SplitManifest) -> String {
    let mut out = String::from("animal_id,study_id,species,date,split\n");
    for (k, split) in &manifest.assignments {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            k.animal_id, k.study_id, k.species, k.date, split
        ));
    }
    out
}

pub fn manifest_from_csv(text: &str) -> Result<SplitManifest> {
    let mut assignments = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "animal_id,study_id,species,date,split" {
                return Err(Error::Schema("bad manifest header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Schema(format!("bad manifest line {}", i + 1)));
        }
        let split = Split::parse(parts[4])
            .ok_or_else(|| Error::Schema(format!("unknown split `{}`", parts[4])))?;
        assignments.insert(
            DayKey {
                animal_id: parts[0].to_string(),
                study_id: parts[1].to_string(),
                species: parts[2].to_string(),
                date: parts[3].to_string(),
            },
            split,
        );
    }
    if assignments.is_empty() {
        return Err(Error::Schema("empty manifest".into()));
    }
    Ok(SplitManifest {
        assignments,
        holdout: BTreeMap::new(),
        seed: 0,
        val_fraction: 0.0,
    })
}
