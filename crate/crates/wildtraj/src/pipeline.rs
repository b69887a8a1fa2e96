//! End-to-end wiring: raw fixes -> tracks -> grids -> day sequences ->
//! leakage-audited splits -> feature tensors -> training -> evaluation,
//! with every artifact written into a deterministic run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, Prediction};
use crate::features::{assemble, fit_norm_stats, FeatureTensor, NormStats};
use crate::ingest::{dedup_same_timestamp, group_tracks, FixRecord};
use crate::models::{save_checkpoint, Model, ModelCheckpoint, ModelConfig};
use crate::resample::{fill_single_gaps, segment_days, to_grid_track, DailySequence, Resolution};
use crate::split::{audit_leakage, make_manifest, manifest_to_csv, DayKey, Split, SplitManifest};
use crate::train::{fit, history_to_csv, EpochRecord, FitReport, Sample, TrainConfig};

/// Fixes -> coverage-filtered daily sequences. Returns the sequences, the
/// retained/dropped day counts, and any resampling warnings.
pub fn prepare_days(
    records: Vec<FixRecord>,
    resolution: Resolution,
) -> Result<(Vec<DailySequence>, usize, usize, Vec<String>)> {
    let tracks = group_tracks(records)?;
    let mut days = Vec::new();
    let mut retained = 0;
    let mut dropped = 0;
    let mut warnings = Vec::new();
    for track in tracks {
        let track = dedup_same_timestamp(track);
        let grid = to_grid_track(&track, resolution);
        let (filled, mut warns) = fill_single_gaps(&grid);
        warnings.append(&mut warns);
        let (mut track_days, stats) = segment_days(&filled);
        retained += stats.retained;
        dropped += stats.dropped;
        days.append(&mut track_days);
    }
    if days.is_empty() {
        return Err(Error::Schema(
            "no animal-day meets the coverage threshold".into(),
        ));
    }
    Ok((days, retained, dropped, warnings))
}

/// Sorted species names; the index in this list is the class label.
pub fn class_names(days: &[DailySequence]) -> Vec<String> {
    let mut names: Vec<String> = days
        .iter()
        .map(|d| d.species.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    names.sort();
    names
}

pub fn day_keys(days: &[DailySequence]) -> Vec<DayKey> {
    days.iter()
        .map(|d| DayKey {
            animal_id: d.animal_id.clone(),
            study_id: d.study_id.clone(),
            species: d.species.clone(),
            date: d.date_string(),
        })
        .collect()
}

/// Indices of `days` per split according to the manifest.
pub fn split_indices(
    days: &[DailySequence],
    manifest: &SplitManifest,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let keys = day_keys(days);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, key) in keys.iter().enumerate() {
        match manifest.assignments.get(key) {
            Some(Split::Train) => train.push(i),
            Some(Split::Val) => val.push(i),
            Some(Split::Test) => test.push(i),
            None => {
                return Err(Error::Split(format!(
                    "day {}/{} missing from split manifest",
                    key.animal_id, key.date
                )))
            }
        }
    }
    Ok((train, val, test))
}

fn tensor_to_sample(tensor: &FeatureTensor, label: usize) -> Sample {
    Sample {
        x: Tensor::new(vec![tensor.t, tensor.f], tensor.x.clone()),
        obs_mask: tensor.obs_mask.clone(),
        label,
    }
}

/// Assemble tensors for the given day indices.
pub fn build_tensors(
    days: &[DailySequence],
    indices: &[usize],
    cfg: &RunConfig,
    stats: Option<&NormStats>,
) -> Result<Vec<FeatureTensor>> {
    indices
        .iter()
        .map(|&i| assemble(&days[i], cfg.schema, stats))
        .collect()
}

fn label_of(classes: &[String], species: &str) -> Result<usize> {
    classes
        .iter()
        .position(|c| c == species)
        .ok_or_else(|| Error::Eval(format!("species `{species}` unknown to the model")))
}

/// Model predictions over tensors, as evaluation records. The score is the
/// probability of class 1 (only meaningful for binary tasks).
pub fn predict(
    model: &Model<f32>,
    tensors: &[FeatureTensor],
    classes: &[String],
) -> Result<Vec<Prediction>> {
    tensors
        .iter()
        .map(|t| {
            let sample = tensor_to_sample(t, 0);
            let probs = model.predict_probs(&sample.x, &sample.obs_mask);
            let pred = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            Ok(Prediction {
                study_id: t.study_id.clone(),
                truth: label_of(classes, &t.species)?,
                pred,
                score: probs.get(1).copied().unwrap_or(0.0),
            })
        })
        .collect()
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    /// Test-set metrics; `None` when the run stopped after training.
    pub evaluation: Option<Evaluation>,
    pub fit: FitReport,
    pub classes: Vec<String>,
    pub manifest: SplitManifest,
}

/// Deterministic run directory name for a configuration.
pub fn run_dir_name(cfg: &RunConfig) -> String {
    format!(
        "{}-{}-{}-seed{}",
        cfg.arch.label(),
        cfg.schema.label(),
        cfg.resolution.label(),
        cfg.seed
    )
}

/// The whole pipeline on in-memory fixes. Writes config echo, split
/// manifest, audit report, training history, checkpoint, and evaluation
/// reports under `out_root/<run_dir_name>/`.
pub fn run_all(
    records: Vec<FixRecord>,
    cfg: &RunConfig,
    out_root: &Path,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<RunArtifacts> {
    run_pipeline(records, cfg, out_root, progress, true)
}

/// Like [`run_all`], with test-set evaluation optional (the `train`
/// subcommand stops at the checkpoint).
pub fn run_pipeline(
    records: Vec<FixRecord>,
    cfg: &RunConfig,
    out_root: &Path,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
    evaluate_test: bool,
) -> Result<RunArtifacts> {
    let dir = out_root.join(run_dir_name(cfg));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.echo())?;

    let (days, retained, dropped, warnings) = prepare_days(records, cfg.resolution)?;
    fs::write(
        dir.join("resample.txt"),
        format!(
            "days_retained={retained}\ndays_dropped={dropped}\nwarnings={}\n{}",
            warnings.len(),
            warnings.join("\n")
        ),
    )?;

    let classes = class_names(&days);
    if classes.len() < 2 {
        return Err(Error::Split(
            "need at least two species to train a classifier".into(),
        ));
    }

    let keys = day_keys(&days);
    let manifest = make_manifest(
        &keys,
        &cfg.holdout,
        cfg.val_fraction,
        cfg.seed,
        cfg.allow_within_study_test,
    )?;
    fs::write(dir.join("manifest.csv"), manifest_to_csv(&manifest))?;

    // hard gate: refuse to train on a leaking split
    let audit = audit_leakage(&manifest, &keys);
    fs::write(dir.join("audit.txt"), audit.to_text())?;
    if !audit.passed() {
        return Err(Error::LeakageAudit(format!(
            "{} violation(s); see audit.txt",
            audit.violations.len()
        )));
    }

    let (train_idx, val_idx, test_idx) = split_indices(&days, &manifest)?;
    let stats = if cfg.standardize {
        let train_days: Vec<&DailySequence> = train_idx.iter().map(|&i| &days[i]).collect();
        Some(fit_norm_stats(&train_days, cfg.schema)?)
    } else {
        None
    };

    let train_tensors = build_tensors(&days, &train_idx, cfg, stats.as_ref())?;
    let val_tensors = build_tensors(&days, &val_idx, cfg, stats.as_ref())?;
    let test_tensors = build_tensors(&days, &test_idx, cfg, stats.as_ref())?;

    let to_samples = |tensors: &[FeatureTensor]| -> Result<Vec<Sample>> {
        tensors
            .iter()
            .map(|t| Ok(tensor_to_sample(t, label_of(&classes, &t.species)?)))
            .collect()
    };
    let train_set = to_samples(&train_tensors)?;
    let val_set = to_samples(&val_tensors)?;

    let mut model_cfg = ModelConfig::new(
        cfg.arch,
        cfg.schema.ncols(),
        cfg.resolution.slots_per_day(),
    );
    model_cfg.num_classes = classes.len();
    model_cfg.seed = cfg.seed;
    let mut model: Model<f32> = Model::init(model_cfg)?;

    let tcfg = TrainConfig {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let fit_report = fit(&mut model, &train_set, &val_set, &tcfg, progress)?;
    fs::write(dir.join("history.csv"), history_to_csv(&fit_report.history))?;

    let ckpt = ModelCheckpoint {
        config: model.config.clone(),
        norm_stats: stats,
        classes: classes.clone(),
        params: model.params.clone(),
    };
    let mut buf = Vec::new();
    save_checkpoint(&mut buf, &ckpt)?;
    fs::write(dir.join("model.trjm"), buf)?;

    let evaluation = if evaluate_test {
        let preds = predict(&model, &test_tensors, &classes)?;
        let evaluation = evaluate(&preds, classes.len())?;
        let mut report = evaluation.report_text();
        report.push_str(&format!("classes={}\n", classes.join(",")));
        report.push_str(&format!("best_epoch={}\n", fit_report.best_epoch));
        report.push_str(&format!("best_val_loss={:.6}\n", fit_report.best_val_loss));
        fs::write(dir.join("report.txt"), report)?;
        fs::write(dir.join("confusion.csv"), evaluation.confusion.to_csv())?;
        fs::write(dir.join("per_study.csv"), evaluation.per_study_csv())?;
        Some(evaluation)
    } else {
        None
    };

    Ok(RunArtifacts {
        dir,
        evaluation,
        fit: fit_report,
        classes,
        manifest,
    })
}

/// Evaluate a loaded checkpoint on fixes, grouped per study.
pub fn evaluate_checkpoint(
    ckpt: &ModelCheckpoint,
    records: Vec<FixRecord>,
    resolution: Resolution,
) -> Result<Evaluation> {
    if ckpt.classes.is_empty() {
        return Err(Error::Schema(
            "checkpoint carries no class names; cannot map species labels".into(),
        ));
    }
    if resolution.slots_per_day() != ckpt.config.seq_len {
        return Err(Error::Config(format!(
            "checkpoint expects {} slots per day but resolution {} yields {}",
            ckpt.config.seq_len,
            resolution.label(),
            resolution.slots_per_day()
        )));
    }
    let (days, _, _, _) = prepare_days(records, resolution)?;
    let schema = match &ckpt.norm_stats {
        Some(s) => s.schema,
        None => {
            use crate::features::FeatureSchema;
            match ckpt.config.input_dim {
                5 => FeatureSchema::Minimal5,
                10 => FeatureSchema::Augmented10,
                other => {
                    return Err(Error::Schema(format!(
                        "cannot infer feature schema from input dim {other}"
                    )))
                }
            }
        }
    };
    let model = ckpt.to_model();
    let tensors: Result<Vec<FeatureTensor>> = days
        .iter()
        .map(|d| assemble(d, schema, ckpt.norm_stats.as_ref()))
        .collect();
    let preds = predict(&model, &tensors?, &ckpt.classes)?;
    evaluate(&preds, ckpt.classes.len())
}

/// Per-class day counts, for dataset summaries.
pub fn day_counts_by_species(days: &[DailySequence]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for d in days {
        *m.entry(d.species.clone()).or_insert(0) += 1;
    }
    m
}
