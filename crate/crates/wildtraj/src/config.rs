//! Run configuration: defaults, key=value config files, and merging with
//! command-line overrides. Unknown keys are rejected so typos fail loudly,
//! and every run can echo its effective configuration.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::models::Arch;
use crate::resample::Resolution;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub resolution: Resolution,
    pub schema: FeatureSchema,
    pub arch: Arch,
    pub seed: u64,
    pub val_fraction: f64,
    pub standardize: bool,
    pub allow_within_study_test: bool,
    /// species -> study held out entirely for test.
    pub holdout: BTreeMap<String, String>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: Resolution::Hour,
            schema: FeatureSchema::Augmented10,
            arch: Arch::Transformer,
            seed: 0,
            val_fraction: 0.2,
            standardize: true,
            allow_within_study_test: false,
            holdout: BTreeMap::new(),
            lr: 3e-4,
            batch_size: 128,
            max_epochs: 50,
            patience: 6,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean for `{key}`: `{value}`"))),
    }
}

impl RunConfig {
    /// Apply one key=value setting. `holdout` may repeat, one
    /// `SPECIES=STUDY` pair per occurrence.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "resolution" => {
                self.resolution = Resolution::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown resolution `{value}` (use 1h or 30m)")))?
            }
            "features" => {
                self.schema = FeatureSchema::parse(value).ok_or_else(|| {
                    Error::Config(format!("unknown feature set `{value}` (use minimal or augmented)"))
                })?
            }
            "arch" => {
                self.arch = Arch::parse(value).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown architecture `{value}` (use transformer, lstm, cnn1d, or tcn)"
                    ))
                })?
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed `{value}`")))?
            }
            "val_fraction" => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad val_fraction `{value}`")))?;
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::Config(format!("val_fraction {v} outside [0, 1)")));
                }
                self.val_fraction = v;
            }
            "standardize" => self.standardize = parse_bool(key, value)?,
            "allow_within_study_test" => self.allow_within_study_test = parse_bool(key, value)?,
            "holdout" => {
                let (species, study) = value.split_once('=').ok_or_else(|| {
                    Error::Config(format!("holdout must be SPECIES=STUDY, got `{value}`"))
                })?;
                if species.is_empty() || study.is_empty() {
                    return Err(Error::Config("holdout species and study must be non-empty".into()));
                }
                self.holdout.insert(species.to_string(), study.to_string());
            }
            "lr" => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad lr `{value}`")))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("lr must be positive, got {v}")));
                }
                self.lr = v;
            }
            "batch_size" => {
                self.batch_size = value
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Config(format!("bad batch_size `{value}`")))?
            }
            "max_epochs" => {
                self.max_epochs = value
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Config(format!("bad max_epochs `{value}`")))?
            }
            "patience" => {
                self.patience = value
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Config(format!("bad patience `{value}`")))?
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a config file (key=value lines, `#` comments) on top of the
    /// defaults.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Effective configuration as key=value text, echoed into each run
    /// directory.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("resolution={}\n", self.resolution.label()));
        s.push_str(&format!("features={}\n", self.schema.label()));
        s.push_str(&format!("arch={}\n", self.arch.label()));
        s.push_str(&format!("seed={}\n", self.seed));
        s.push_str(&format!("val_fraction={}\n", self.val_fraction));
        s.push_str(&format!("standardize={}\n", self.standardize));
        s.push_str(&format!(
            "allow_within_study_test={}\n",
            self.allow_within_study_test
        ));
        for (species, study) in &self.holdout {
            s.push_str(&format!("holdout={species}={study}\n"));
        }
        s.push_str(&format!("lr={}\n", self.lr));
        s.push_str(&format!("batch_size={}\n", self.batch_size));
        s.push_str(&format!("max_epochs={}\n", self.max_epochs));
        s.push_str(&format!("patience={}\n", self.patience));
        s
    }
}
