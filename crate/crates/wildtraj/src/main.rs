//! Command-line interface over the trajectory-classification library.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wildtraj::config::RunConfig;
use wildtraj::error::{Error, Result};
use wildtraj::features::{assemble, fit_norm_stats, write_tensors, FeatureSchema};
use wildtraj::ingest::{parse_fixes, ColumnMap, FixRecord};
use wildtraj::models::load_checkpoint;
use wildtraj::pipeline::{
    day_counts_by_species, day_keys, evaluate_checkpoint, prepare_days, run_pipeline,
};
use wildtraj::resample::{
    fill_single_gaps, grid_track_to_csv, segment_days, to_grid_track, Resolution,
};
use wildtraj::split::{audit_leakage, make_manifest, manifest_to_csv};
use wildtraj::synth::{
    fixes_to_csv, generate, grazer, matched_kappa_pair, parse_archetypes, ranger, SynthConfig,
};
use wildtraj::train::EpochRecord;

#[derive(Parser)]
#[command(
    name = "wildtraj",
    about = "Species classification from daily GPS trajectories",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Column bindings and filters shared by every data-reading subcommand.
#[derive(Args, Debug)]
struct InputArgs {
    /// Input CSV file(s); repeat to merge several files.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Species label applied to files without a species column.
    #[arg(long)]
    default_species: Option<String>,
    /// Study id applied to files without a study column.
    #[arg(long)]
    default_study: Option<String>,
    /// Offset (seconds east of UTC) for timestamps without a zone.
    #[arg(long, default_value_t = 0)]
    utc_offset_secs: i64,
    /// Keep only these species; repeatable. Default: keep all.
    #[arg(long = "species")]
    species_filter: Vec<String>,
}

impl InputArgs {
    fn read(&self) -> Result<Vec<FixRecord>> {
        let map = ColumnMap {
            default_species: self.default_species.clone(),
            default_study: self.default_study.clone(),
            utc_offset_secs: self.utc_offset_secs,
            ..ColumnMap::default()
        };
        let mut all = Vec::new();
        let mut rejections = 0usize;
        for path in &self.input {
            let file = fs::File::open(path)?;
            let outcome = parse_fixes(file, &map)?;
            rejections += outcome.rejections.len();
            all.extend(outcome.records);
        }
        if rejections > 0 {
            eprintln!("note: {rejections} row(s) rejected during ingest");
        }
        if !self.species_filter.is_empty() {
            let keep: BTreeSet<&str> = self.species_filter.iter().map(|s| s.as_str()).collect();
            all.retain(|r| keep.contains(r.species.as_str()));
            if all.is_empty() {
                return Err(Error::Schema(
                    "species filter removed every record".into(),
                ));
            }
        }
        Ok(all)
    }
}

/// Configuration file plus command-line overrides (flags win).
#[derive(Args, Debug)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid resolution: 1h or 30m.
    #[arg(long)]
    resolution: Option<String>,
    /// Feature set: minimal or augmented.
    #[arg(long)]
    features: Option<String>,
    /// Architecture: transformer, lstm, cnn1d, or tcn.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Held-out test study per species, as SPECIES=STUDY; repeatable.
    #[arg(long)]
    holdout: Vec<String>,
    /// Skip feature standardization.
    #[arg(long)]
    no_standardize: bool,
    /// Allow an animal-level test split within a single-study species.
    #[arg(long)]
    allow_within_study_test: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_text(&fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.resolution {
            cfg.apply("resolution", v)?;
        }
        if let Some(v) = &self.features {
            cfg.apply("features", v)?;
        }
        if let Some(v) = &self.arch {
            cfg.apply("arch", v)?;
        }
        if let Some(v) = self.seed {
            cfg.apply("seed", &v.to_string())?;
        }
        if let Some(v) = self.val_fraction {
            cfg.apply("val_fraction", &v.to_string())?;
        }
        for pair in &self.holdout {
            cfg.apply("holdout", pair)?;
        }
        if self.no_standardize {
            cfg.apply("standardize", "false")?;
        }
        if self.allow_within_study_test {
            cfg.apply("allow_within_study_test", "true")?;
        }
        if let Some(v) = self.lr {
            cfg.apply("lr", &v.to_string())?;
        }
        if let Some(v) = self.batch_size {
            cfg.apply("batch_size", &v.to_string())?;
        }
        if let Some(v) = self.max_epochs {
            cfg.apply("max_epochs", &v.to_string())?;
        }
        if let Some(v) = self.patience {
            cfg.apply("patience", &v.to_string())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate telemetry CSV; report rejected rows.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        /// Directory for normalized.csv and rejections.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Snap fixes to the regular grid and write per-animal grid files.
    Resample {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "1h")]
        resolution: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build per-day feature tensors and write a TRJF container.
    Featurize {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "1h")]
        resolution: String,
        #[arg(long, default_value = "augmented")]
        features: String,
        #[arg(long)]
        no_standardize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a study-holdout split manifest and audit it for leakage.
    Split {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "1h")]
        resolution: String,
        #[arg(long)]
        holdout: Vec<String>,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        allow_within_study_test: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline through training and save a checkpoint.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved checkpoint on telemetry CSV.
    Evaluate {
        #[command(flatten)]
        input: InputArgs,
        /// TRJM checkpoint written by `train` or `run-all`.
        #[arg(long)]
        model: PathBuf,
        /// Optional file for the report text.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic telemetry CSV from movement archetypes.
    Synth {
        /// Archetype definition file (name.field=value lines).
        #[arg(long)]
        archetypes: Option<PathBuf>,
        /// Use the matched-turning pair instead of grazer/ranger.
        #[arg(long)]
        pair: bool,
        #[arg(long, default_value_t = 2)]
        studies: usize,
        #[arg(long, default_value_t = 4)]
        animals: usize,
        #[arg(long, default_value_t = 12)]
        days: usize,
        #[arg(long, default_value = "1h")]
        resolution: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: ingest, resample, featurize, split, train, evaluate.
    RunAll {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_resolution(s: &str) -> Result<Resolution> {
    Resolution::parse(s)
        .ok_or_else(|| Error::Config(format!("unknown resolution `{s}` (use 1h or 30m)")))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn print_progress(record: &EpochRecord) {
    eprintln!(
        "epoch {:>3}  train {:.4}  val {:.4}  lr {:.2e}  ({:.1}s)",
        record.epoch, record.train_loss, record.val_loss, record.lr, record.seconds
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out } => {
            let map = ColumnMap {
                default_species: input.default_species.clone(),
                default_study: input.default_study.clone(),
                utc_offset_secs: input.utc_offset_secs,
                ..ColumnMap::default()
            };
            let mut records = Vec::new();
            let mut report = String::new();
            for path in &input.input {
                let outcome = parse_fixes(fs::File::open(path)?, &map)?;
                println!(
                    "{}: {} records, {} rejected",
                    path.display(),
                    outcome.records.len(),
                    outcome.rejections.len()
                );
                report.push_str(&outcome.rejection_report());
                records.extend(outcome.records);
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("normalized.csv"), fixes_to_csv(&records))?;
                fs::write(dir.join("rejections.txt"), report)?;
            }
        }
        Command::Resample {
            input,
            resolution,
            out,
        } => {
            let resolution = parse_resolution(&resolution)?;
            let records = input.read()?;
            let tracks = wildtraj::ingest::group_tracks(records)?;
            fs::create_dir_all(&out)?;
            let mut retained = 0;
            let mut dropped = 0;
            for track in tracks {
                let track = wildtraj::ingest::dedup_same_timestamp(track);
                let grid = to_grid_track(&track, resolution);
                let (filled, warnings) = fill_single_gaps(&grid);
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                let (_, stats) = segment_days(&filled);
                retained += stats.retained;
                dropped += stats.dropped;
                fs::write(
                    out.join(format!("{}.grid.csv", sanitize(&filled.animal_id))),
                    grid_track_to_csv(&filled),
                )?;
            }
            println!("days retained={retained} dropped={dropped}");
        }
        Command::Featurize {
            input,
            resolution,
            features,
            no_standardize,
            out,
        } => {
            let resolution = parse_resolution(&resolution)?;
            let schema = FeatureSchema::parse(&features)
                .ok_or_else(|| Error::Config(format!("unknown feature set `{features}`")))?;
            let (days, retained, dropped, warnings) = prepare_days(input.read()?, resolution)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let stats = if no_standardize {
                None
            } else {
                let refs: Vec<_> = days.iter().collect();
                Some(fit_norm_stats(&refs, schema)?)
            };
            let tensors: Result<Vec<_>> = days
                .iter()
                .map(|d| assemble(d, schema, stats.as_ref()))
                .collect();
            let tensors = tensors?;
            let mut buf = Vec::new();
            write_tensors(&mut buf, &tensors)?;
            fs::write(&out, buf)?;
            println!(
                "wrote {} day tensors ({retained} retained, {dropped} dropped) to {}",
                tensors.len(),
                out.display()
            );
        }
        Command::Split {
            input,
            resolution,
            holdout,
            val_fraction,
            seed,
            allow_within_study_test,
            out,
        } => {
            let resolution = parse_resolution(&resolution)?;
            let (days, _, _, _) = prepare_days(input.read()?, resolution)?;
            let mut holdout_map = std::collections::BTreeMap::new();
            for pair in &holdout {
                let (species, study) = pair.split_once('=').ok_or_else(|| {
                    Error::Config(format!("holdout must be SPECIES=STUDY, got `{pair}`"))
                })?;
                holdout_map.insert(species.to_string(), study.to_string());
            }
            let keys = day_keys(&days);
            let manifest = make_manifest(
                &keys,
                &holdout_map,
                val_fraction,
                seed,
                allow_within_study_test,
            )?;
            let audit = audit_leakage(&manifest, &keys);
            fs::create_dir_all(&out)?;
            fs::write(out.join("manifest.csv"), manifest_to_csv(&manifest))?;
            fs::write(out.join("audit.txt"), audit.to_text())?;
            if !audit.passed() {
                return Err(Error::LeakageAudit(format!(
                    "{} violation(s); see audit.txt",
                    audit.violations.len()
                )));
            }
            println!("split manifest written to {}", out.display());
            for (species, count) in day_counts_by_species(&days) {
                println!("  {species}: {count} days");
            }
        }
        Command::Train { input, config, out } => {
            let cfg = config.build()?;
            let artifacts = run_pipeline(
                input.read()?,
                &cfg,
                &out,
                Some(&mut print_progress),
                false,
            )?;
            println!(
                "trained {} (best epoch {}, val loss {:.4}); artifacts in {}",
                cfg.arch.label(),
                artifacts.fit.best_epoch,
                artifacts.fit.best_val_loss,
                artifacts.dir.display()
            );
        }
        Command::Evaluate { input, model, out } => {
            let bytes = fs::read(&model)?;
            let ckpt = load_checkpoint(&mut bytes.as_slice())?;
            let resolution = match ckpt.config.seq_len {
                24 => Resolution::Hour,
                48 => Resolution::HalfHour,
                other => {
                    return Err(Error::Schema(format!(
                        "checkpoint sequence length {other} matches no known grid"
                    )))
                }
            };
            let ev = evaluate_checkpoint(&ckpt, input.read()?, resolution)?;
            print!("{}", ev.report_text());
            if let Some(path) = out {
                let mut text = ev.report_text();
                text.push_str(&ev.per_study_csv());
                fs::write(path, text)?;
            }
        }
        Command::Synth {
            archetypes,
            pair,
            studies,
            animals,
            days,
            resolution,
            seed,
            out,
        } => {
            let resolution = parse_resolution(&resolution)?;
            let list = match (&archetypes, pair) {
                (Some(_), true) => {
                    return Err(Error::Config(
                        "--archetypes and --pair are mutually exclusive".into(),
                    ))
                }
                (Some(path), false) => parse_archetypes(&fs::read_to_string(path)?)?,
                (None, true) => {
                    let (a, b) = matched_kappa_pair();
                    vec![a, b]
                }
                (None, false) => vec![grazer(), ranger()],
            };
            let mut cfg = SynthConfig::new(list, resolution, seed);
            cfg.studies_per_species = studies;
            cfg.animals_per_study = animals;
            cfg.days_per_animal = days;
            let fixes = generate(&cfg)?;
            fs::write(&out, fixes_to_csv(&fixes))?;
            println!("wrote {} fixes to {}", fixes.len(), out.display());
        }
        Command::RunAll { input, config, out } => {
            let cfg = config.build()?;
            let artifacts = run_pipeline(
                input.read()?,
                &cfg,
                &out,
                Some(&mut print_progress),
                true,
            )?;
            let ev = artifacts.evaluation.as_ref().unwrap();
            print!("{}", ev.report_text());
            println!("classes={}", artifacts.classes.join(","));
            println!("artifacts in {}", artifacts.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
