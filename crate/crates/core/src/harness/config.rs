use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::cdd::{equal_phases, CddOptions, CddSchedules, InnerPasses, LambdaMode, Strategy};
use crate::datagen::{DefectShape, GenSpec, PatternFamily, Setting};
use crate::distill::TrainSettings;
use crate::metrics::EvalSettings;
use crate::models::{Fusion, ModelConfig, Nonlinearity, LEVELS};
use crate::seeds::hex_digest;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Rd,
    Cdd,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Rd => "rd",
            Algorithm::Cdd => "cdd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rd" => Some(Algorithm::Rd),
            "cdd" => Some(Algorithm::Cdd),
            _ => None,
        }
    }
}

/// Where the images of a run come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Generated from the run's [`GenSpec`].
    Synthetic,
    /// A corpus directory written by `save_corpus`.
    Corpus,
    /// An MVTec-style category directory; the anomaly pool is its anomalous test images.
    Mvtec,
}

impl DataSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Corpus => "corpus",
            DataSource::Mvtec => "mvtec",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "synthetic" => Some(DataSource::Synthetic),
            "corpus" => Some(DataSource::Corpus),
            "mvtec" => Some(DataSource::Mvtec),
            _ => None,
        }
    }
}

/// Random seeds of a run. Each governs an independent part of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    /// Teacher and student initialization.
    pub model: u64,
    /// Batch order, domain construction and feature noise.
    pub train: u64,
}

/// Everything a run needs; two equal configs give byte-identical metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    /// Directory of a corpus or MVTec category; unused for synthetic data.
    pub data_path: PathBuf,
    pub gen: GenSpec,
    pub r_noise: f64,
    /// Settings evaluated after training. Both share the same training set.
    pub settings: Vec<Setting>,
    pub model: ModelConfig,
    pub algorithm: Algorithm,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub strategy: Strategy,
    pub schedules: CddSchedules,
    pub passes: InnerPasses,
    pub seeds: Seeds,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            data_path: PathBuf::new(),
            gen: GenSpec::default(),
            r_noise: 0.1,
            settings: Setting::BOTH.to_vec(),
            model: ModelConfig::default(),
            algorithm: Algorithm::Cdd,
            lr: 0.005,
            batch_size: 8,
            epochs: 20,
            checkpoint_every: 1,
            strategy: Strategy::Consensual,
            schedules: CddSchedules::default(),
            passes: InnerPasses {
                domain: 2,
                cross: 1,
                hc: 16,
            },
            seeds: Seeds {
                data: 0,
                split: 0,
                model: 0,
                train: 0,
            },
            eval: EvalSettings::default(),
        }
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_value(key, v)).collect()
}

fn parse_array<T: FromStr + Copy>(key: &str, value: &str) -> Result<[T; LEVELS]> {
    let v: Vec<T> = parse_list(key, value)?;
    <[T; LEVELS]>::try_from(v)
        .map_err(|_| Error::config(key, format!("expected {LEVELS} comma-separated values")))
}

fn parse_enum<T>(key: &str, value: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
    parse(value.trim()).ok_or_else(|| Error::config(key, format!("unknown value `{value}`")))
}

impl RunConfig {
    /// Every key in canonical (sorted) order with its current value.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let g = &self.gen;
        let m = &self.model;
        let s = &self.schedules;
        let k_values: Vec<usize> = s.k_schedule.iter().map(|p| p.1).collect();
        let equal = s.k_schedule == equal_phases(&k_values);
        let k_schedule = if equal {
            join(&k_values)
        } else {
            s.k_schedule
                .iter()
                .map(|(f, k)| format!("{k}:{f}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut pairs = vec![
            ("cdd.cross_passes", self.passes.cross.to_string()),
            ("cdd.domain_passes", self.passes.domain.to_string()),
            ("cdd.hc_passes", self.passes.hc.to_string()),
            ("cdd.k_schedule", k_schedule),
            ("cdd.lambda_mode", s.lambda_mode.as_str().to_string()),
            ("cdd.p", s.p.to_string()),
            ("cdd.r_normal", s.r_normal.to_string()),
            ("cdd.sigma_noise", s.sigma_noise.to_string()),
            ("cdd.strategy", self.strategy.as_str().to_string()),
            ("data.contrast", g.defect.contrast.to_string()),
            ("data.defect_max", g.defect.max_size.to_string()),
            ("data.defect_min", g.defect.min_size.to_string()),
            (
                "data.defect_shapes",
                g.defect
                    .shapes
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("data.defect_types", g.defect.n_types.to_string()),
            ("data.image_size", g.image_size.to_string()),
            ("data.jitter", g.jitter.to_string()),
            (
                "data.n_anomalous_pool",
                g.counts.n_anomalous_pool.to_string(),
            ),
            ("data.n_test_normal", g.counts.n_test_normal.to_string()),
            ("data.n_train_normal", g.counts.n_train_normal.to_string()),
            ("data.path", self.data_path.display().to_string()),
            ("data.pattern", g.pattern.as_str().to_string()),
            ("data.source", self.source.as_str().to_string()),
            ("eval.fpr_limit", self.eval.fpr_limit.to_string()),
            ("eval.n_thresholds", self.eval.n_thresholds.to_string()),
            (
                "eval.settings",
                self.settings
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("eval.smooth_sigma", self.eval.smooth_sigma.to_string()),
            ("model.bottleneck", m.bottleneck.to_string()),
            ("model.bottleneck_kernel", m.bottleneck_kernel.to_string()),
            ("model.channels", join(&m.channels)),
            ("model.decoder_kernels", join(&m.decoder_kernels)),
            ("model.fusion", m.fusion.as_str().to_string()),
            ("model.nonlinearity", m.nonlinearity.as_str().to_string()),
            ("model.strides", join(&m.strides)),
            ("seed.data", self.seeds.data.to_string()),
            ("seed.model", self.seeds.model.to_string()),
            ("seed.split", self.seeds.split.to_string()),
            ("seed.train", self.seeds.train.to_string()),
            ("split.r_noise", self.r_noise.to_string()),
            ("train.algorithm", self.algorithm.as_str().to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.lr", self.lr.to_string()),
        ];
        pairs.sort_by_key(|p| p.0);
        pairs
    }

    /// Names of every accepted key.
    pub fn keys() -> Vec<&'static str> {
        RunConfig::default()
            .pairs()
            .into_iter()
            .map(|p| p.0)
            .collect()
    }

    /// Assigns one key. The model's input size and channel count follow the data.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "cdd.cross_passes" => self.passes.cross = parse_value(key, v)?,
            "cdd.domain_passes" => self.passes.domain = parse_value(key, v)?,
            "cdd.hc_passes" => self.passes.hc = parse_value(key, v)?,
            "cdd.k_schedule" => self.schedules.k_schedule = parse_k_schedule(v)?,
            "cdd.lambda_mode" => {
                self.schedules.lambda_mode = parse_enum(key, v, LambdaMode::parse)?
            }
            "cdd.p" => self.schedules.p = parse_value(key, v)?,
            "cdd.r_normal" => self.schedules.r_normal = parse_value(key, v)?,
            "cdd.sigma_noise" => self.schedules.sigma_noise = parse_value(key, v)?,
            "cdd.strategy" => self.strategy = parse_enum(key, v, Strategy::parse)?,
            "data.contrast" => self.gen.defect.contrast = parse_value(key, v)?,
            "data.defect_max" => self.gen.defect.max_size = parse_value(key, v)?,
            "data.defect_min" => self.gen.defect.min_size = parse_value(key, v)?,
            "data.defect_shapes" => {
                self.gen.defect.shapes = v
                    .split(',')
                    .map(|s| parse_enum(key, s, DefectShape::parse))
                    .collect::<Result<_>>()?
            }
            "data.defect_types" => self.gen.defect.n_types = parse_value(key, v)?,
            "data.image_size" => {
                self.gen.image_size = parse_value(key, v)?;
                self.model.input_size = self.gen.image_size;
            }
            "data.jitter" => self.gen.jitter = parse_value(key, v)?,
            "data.n_anomalous_pool" => self.gen.counts.n_anomalous_pool = parse_value(key, v)?,
            "data.n_test_normal" => self.gen.counts.n_test_normal = parse_value(key, v)?,
            "data.n_train_normal" => self.gen.counts.n_train_normal = parse_value(key, v)?,
            "data.path" => self.data_path = PathBuf::from(v),
            "data.source" => self.source = parse_enum(key, v, DataSource::parse)?,
            "data.pattern" => self.gen.pattern = parse_enum(key, v, PatternFamily::parse)?,
            "eval.fpr_limit" => self.eval.fpr_limit = parse_value(key, v)?,
            "eval.n_thresholds" => self.eval.n_thresholds = parse_value(key, v)?,
            "eval.settings" => {
                self.settings = v
                    .split(',')
                    .map(|s| parse_enum(key, s, Setting::parse))
                    .collect::<Result<_>>()?
            }
            "eval.smooth_sigma" => self.eval.smooth_sigma = parse_value(key, v)?,
            "model.bottleneck" => self.model.bottleneck = parse_value(key, v)?,
            "model.bottleneck_kernel" => self.model.bottleneck_kernel = parse_value(key, v)?,
            "model.channels" => self.model.channels = parse_array(key, v)?,
            "model.decoder_kernels" => self.model.decoder_kernels = parse_array(key, v)?,
            "model.fusion" => self.model.fusion = parse_enum(key, v, Fusion::parse)?,
            "model.nonlinearity" => {
                self.model.nonlinearity = parse_enum(key, v, Nonlinearity::parse)?
            }
            "model.strides" => self.model.strides = parse_array(key, v)?,
            "seed.data" => self.seeds.data = parse_value(key, v)?,
            "seed.model" => self.seeds.model = parse_value(key, v)?,
            "seed.split" => self.seeds.split = parse_value(key, v)?,
            "seed.train" => self.seeds.train = parse_value(key, v)?,
            "split.r_noise" => self.r_noise = parse_value(key, v)?,
            "train.algorithm" => self.algorithm = parse_enum(key, v, Algorithm::parse)?,
            "train.batch_size" => self.batch_size = parse_value(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            "train.epochs" => {
                self.epochs = parse_value(key, v)?;
                self.schedules.epochs = self.epochs;
            }
            "train.lr" => self.lr = parse_value(key, v)?,
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the defaults. Blank lines and `#`
    /// comments are skipped; unknown or repeated keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", i + 1),
                    format!("expected key=value, got `{line}`"),
                )
            })?;
            let key = key.trim();
            if seen.insert(key.to_string(), i).is_some() {
                return Err(Error::config(key, "key given twice"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sorted `key=value` lines; parsing them back yields an equal config.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn digest(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.pairs().into_iter().find(|p| p.0 == key).map(|p| p.1)
    }

    pub fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Synthetic => self.gen.validate()?,
            _ if self.data_path.as_os_str().is_empty() => {
                return Err(Error::config(
                    "data.path",
                    "a corpus or MVTec source needs a path",
                ))
            }
            _ => {}
        }
        if self.model.input_size != self.gen.image_size {
            return Err(Error::config(
                "data.image_size",
                "model input size must follow the image size",
            ));
        }
        self.model.validate()?;
        self.train_settings().validate()?;
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.r_noise) {
            return Err(Error::config("split.r_noise", "must lie in [0, 0.5)"));
        }
        if self.settings.is_empty() {
            return Err(Error::config(
                "eval.settings",
                "at least one setting is required",
            ));
        }
        let repeated =
            (1..self.settings.len()).any(|i| self.settings[..i].contains(&self.settings[i]));
        if repeated {
            return Err(Error::config("eval.settings", "settings must not repeat"));
        }
        if !(self.eval.fpr_limit > 0.0 && self.eval.fpr_limit <= 1.0) {
            return Err(Error::config("eval.fpr_limit", "must lie in (0, 1]"));
        }
        if self.eval.n_thresholds < 2 {
            return Err(Error::config("eval.n_thresholds", "must be at least 2"));
        }
        if !(self.eval.smooth_sigma >= 0.0 && self.eval.smooth_sigma.is_finite()) {
            return Err(Error::config("eval.smooth_sigma", "must be nonnegative"));
        }
        if self.algorithm == Algorithm::Cdd {
            self.schedules.validate()?;
            if self.passes.domain == 0 || self.passes.cross == 0 || self.passes.hc == 0 {
                return Err(Error::config(
                    "cdd.domain_passes",
                    "inner pass counts must be positive",
                ));
            }
            if self.strategy != Strategy::All && self.schedules.k_schedule.iter().any(|p| p.1 == 1)
            {
                return Err(Error::config(
                    "cdd.strategy",
                    "needs K >= 2 in every phase unless it is `all`",
                ));
            }
        }
        Ok(())
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seeds.train,
        }
    }

    pub fn cdd_options(&self) -> CddOptions {
        CddOptions {
            strategy: self.strategy,
            train: self.train_settings(),
            passes: self.passes,
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            seed: self.seeds.data,
            ..self.gen.clone()
        }
    }
}

/// `2,3,3,2` gives equal phases; `2:0.5,3:0.5` gives explicit fractions.
fn parse_k_schedule(v: &str) -> Result<Vec<(f64, usize)>> {
    let key = "cdd.k_schedule";
    if v.contains(':') {
        v.split(',')
            .map(|item| {
                let (k, f) = item
                    .split_once(':')
                    .ok_or_else(|| Error::config(key, "mix of plain and `K:fraction` items"))?;
                Ok((parse_value(key, f)?, parse_value(key, k)?))
            })
            .collect()
    } else {
        Ok(equal_phases(&parse_list::<usize>(key, v)?))
    }
}
