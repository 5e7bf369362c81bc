//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Precedence when assembling a run: file, then the
//! `LIGHTAVSEG_SEED` environment variable, then command-line overrides.
use std::path::PathBuf;

use lightavseg_core::backbone::BackboneConfig;
use lightavseg_core::dataset::DatasetSpec;
use lightavseg_core::loss::LossVariant;
use lightavseg_core::model::ModelConfig;
use lightavseg_core::train::TrainConfig;

use crate::error::{Error, Result};

pub const SEED_ENV: &str = "LIGHTAVSEG_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Synthetic scenes, used when `data_root` is unset.
    pub data: DatasetSpec,
    /// AVSBench-style directory to train or evaluate on.
    pub data_root: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                backbone: BackboneConfig { input_hw: 64, ..BackboneConfig::default() },
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            data: DatasetSpec::default(),
            data_root: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "lr",
    "batch_size",
    "steps",
    "lambda",
    "tau",
    "weight_decay",
    "seed",
    "freeze_audio_backbone",
    "loss_variant",
    "log_every",
    "ckpt_every",
    "channels",
    "audio_channels",
    "audio_hidden",
    "input_hw",
    "num_classes",
    "supervised_stages",
    "agve",
    "har",
    "cmfd",
    "recurrent",
    "n_scenes",
    "size",
    "frames",
    "shapes",
    "freqs",
    "snr_db",
    "data_seed",
    "data_root",
];

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| num(key, v)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, m, d) = (&mut self.train, &mut self.model, &mut self.data);
        match key {
            "lr" => t.lr = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "steps" => t.steps = num(key, value)?,
            "lambda" => t.lambda = num(key, value)?,
            "tau" => t.tau = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "freeze_audio_backbone" => t.freeze_audio_backbone = flag(key, value)?,
            "loss_variant" => t.loss_variant = LossVariant::parse(value.trim()).map_err(|_| bad(key, value))?,
            "log_every" => t.log_every = num(key, value)?,
            "ckpt_every" => t.ckpt_every = num(key, value)?,
            "channels" => m.backbone.stage_channels = list(key, value)?,
            "audio_channels" => m.backbone.audio_channels = num(key, value)?,
            "audio_hidden" => m.backbone.audio_hidden = num(key, value)?,
            "input_hw" => m.backbone.input_hw = num(key, value)?,
            "num_classes" => m.num_classes = num(key, value)?,
            "supervised_stages" => m.supervised_stages = num(key, value)?,
            "agve" => m.ablation.agve = flag(key, value)?,
            "har" => m.ablation.har = flag(key, value)?,
            "cmfd" => m.ablation.cmfd = flag(key, value)?,
            "recurrent" => m.ablation.recurrent = flag(key, value)?,
            "n_scenes" => d.n_scenes = num(key, value)?,
            "size" => d.size = num(key, value)?,
            "frames" => d.frames = num(key, value)?,
            "shapes" => d.shapes = num(key, value)?,
            "freqs" => d.freq_table = list(key, value)?,
            "snr_db" => d.snr_db = if value.trim() == "none" { None } else { Some(num(key, value)?) },
            "data_seed" => d.seed = num(key, value)?,
            "data_root" => {
                self.data_root = if value.trim().is_empty() { None } else { Some(PathBuf::from(value.trim())) }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Seed override from the environment value, if any.
    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        match value {
            Some(v) => self.set("seed", v),
            None => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data_root.is_none() {
            self.data.validate()?;
        }
        Ok(())
    }

    /// Every key, one per line, in [`KEYS`] order. Floats print in their
    /// shortest round-trip form, so `parse(to_text())` is exact.
    pub fn to_text(&self) -> String {
        let (t, m, d) = (&self.train, &self.model, &self.data);
        let value = |key: &str| -> String {
            match key {
                "lr" => t.lr.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "steps" => t.steps.to_string(),
                "lambda" => t.lambda.to_string(),
                "tau" => t.tau.to_string(),
                "weight_decay" => t.weight_decay.to_string(),
                "seed" => t.seed.to_string(),
                "freeze_audio_backbone" => t.freeze_audio_backbone.to_string(),
                "loss_variant" => t.loss_variant.as_str().to_string(),
                "log_every" => t.log_every.to_string(),
                "ckpt_every" => t.ckpt_every.to_string(),
                "channels" => join(&m.backbone.stage_channels),
                "audio_channels" => m.backbone.audio_channels.to_string(),
                "audio_hidden" => m.backbone.audio_hidden.to_string(),
                "input_hw" => m.backbone.input_hw.to_string(),
                "num_classes" => m.num_classes.to_string(),
                "supervised_stages" => m.supervised_stages.to_string(),
                "agve" => m.ablation.agve.to_string(),
                "har" => m.ablation.har.to_string(),
                "cmfd" => m.ablation.cmfd.to_string(),
                "recurrent" => m.ablation.recurrent.to_string(),
                "n_scenes" => d.n_scenes.to_string(),
                "size" => d.size.to_string(),
                "frames" => d.frames.to_string(),
                "shapes" => d.shapes.to_string(),
                "freqs" => join(&d.freq_table),
                "snr_db" => d.snr_db.map_or_else(|| "none".to_string(), |v| v.to_string()),
                "data_seed" => d.seed.to_string(),
                "data_root" => self.data_root.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                _ => unreachable!("key list and formatter disagree on `{key}`"),
            }
        };
        KEYS.iter().map(|k| format!("{k}={}\n", value(k))).collect()
    }
}
