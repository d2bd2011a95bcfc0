//! Flat `key = value` run configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a comment.
//! Command-line `--set key=value` overrides are applied afterwards. Unknown
//! keys are rejected and every value is validated before a command runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::{validate_levels, EvalConfig};
use crate::forecaster::{default_levels, DEFAULT_NUM_SAMPLES};
use crate::kernelsynth::KernelSynthConfig;
use crate::models::LinearTrainConfig;
use crate::tokenizer::TokenizerConfig;
use crate::tsmixup::TSMixupConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Markov,
    Linear,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" => Ok(ModelKind::Markov),
            "linear" => Ok(ModelKind::Linear),
            other => Err(Error::Config(format!(
                "model.kind must be 'markov' or 'linear', got '{other}'"
            ))),
        }
    }
}

impl ModelKind {
    fn as_str(self) -> &'static str {
        match self {
            ModelKind::Markov => "markov",
            ModelKind::Linear => "linear",
        }
    }
}

/// Upper bound on LinearSoftmax parameters (`window · V²`) accepted by the
/// CLI.
pub const MAX_LINEAR_PARAMS: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tokenizer: TokenizerConfig,
    pub tsmixup: TSMixupConfig,
    pub kernelsynth: KernelSynthConfig,
    pub model_kind: ModelKind,
    pub markov_order: usize,
    pub markov_smoothing: f64,
    pub linear: LinearTrainConfig,
    pub num_samples: usize,
    pub eval: EvalConfig,
    pub mix_ratio: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tokenizer: TokenizerConfig::default(),
            tsmixup: TSMixupConfig::default(),
            kernelsynth: KernelSynthConfig::default(),
            model_kind: ModelKind::Markov,
            markov_order: 1,
            markov_smoothing: 1.0,
            linear: LinearTrainConfig::default(),
            num_samples: DEFAULT_NUM_SAMPLES,
            eval: EvalConfig::default(),
            mix_ratio: 0.9,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_levels(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| parse::<f64>("eval.levels", s))
        .collect()
}

fn join_levels(levels: &[f64]) -> String {
    levels.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every accepted key in documentation order.
    pub const KEYS: &'static [&'static str] = &[
        "tokenizer.num_bins",
        "tokenizer.low_center",
        "tokenizer.high_center",
        "tokenizer.context_length",
        "tokenizer.prediction_length",
        "tsmixup.max_mix",
        "tsmixup.alpha",
        "tsmixup.min_length",
        "tsmixup.max_length",
        "kernelsynth.max_kernels",
        "kernelsynth.length",
        "kernelsynth.jitter",
        "generate.mix_ratio",
        "model.kind",
        "model.order",
        "model.smoothing",
        "model.window",
        "model.epochs",
        "model.learning_rate",
        "model.full_batch",
        "forecast.num_samples",
        "eval.levels",
        "eval.baseline",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "tokenizer.num_bins" => self.tokenizer.num_bins = parse(key, v)?,
            "tokenizer.low_center" => self.tokenizer.low_center = parse(key, v)?,
            "tokenizer.high_center" => self.tokenizer.high_center = parse(key, v)?,
            "tokenizer.context_length" => self.tokenizer.context_length = parse(key, v)?,
            "tokenizer.prediction_length" => self.tokenizer.prediction_length = parse(key, v)?,
            "tsmixup.max_mix" => self.tsmixup.max_mix = parse(key, v)?,
            "tsmixup.alpha" => self.tsmixup.alpha = parse(key, v)?,
            "tsmixup.min_length" => self.tsmixup.min_length = parse(key, v)?,
            "tsmixup.max_length" => self.tsmixup.max_length = parse(key, v)?,
            "kernelsynth.max_kernels" => self.kernelsynth.max_kernels = parse(key, v)?,
            "kernelsynth.length" => self.kernelsynth.length = parse(key, v)?,
            "kernelsynth.jitter" => self.kernelsynth.jitter = parse(key, v)?,
            "generate.mix_ratio" => self.mix_ratio = parse(key, v)?,
            "model.kind" => self.model_kind = v.parse()?,
            "model.order" => self.markov_order = parse(key, v)?,
            "model.smoothing" => self.markov_smoothing = parse(key, v)?,
            "model.window" => self.linear.window = parse(key, v)?,
            "model.epochs" => self.linear.epochs = parse(key, v)?,
            "model.learning_rate" => self.linear.learning_rate = parse(key, v)?,
            "model.full_batch" => self.linear.full_batch = parse(key, v)?,
            "forecast.num_samples" => self.num_samples = parse(key, v)?,
            "eval.levels" => self.eval.levels = parse_levels(v)?,
            "eval.baseline" => self.eval.baseline = v.to_string(),
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_file_contents(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_file_contents(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.tsmixup.validate()?;
        self.kernelsynth.validate()?;
        self.eval.validate()?;
        validate_levels(&self.eval.levels)?;
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::Config("generate.mix_ratio must lie in [0, 1]".into()));
        }
        if self.markov_order == 0 {
            return Err(Error::Config("model.order must be at least 1".into()));
        }
        if !(self.markov_smoothing > 0.0 && self.markov_smoothing.is_finite()) {
            return Err(Error::Config("model.smoothing must be positive".into()));
        }
        if self.linear.window == 0 {
            return Err(Error::Config("model.window must be at least 1".into()));
        }
        if !(self.linear.learning_rate >= 0.0 && self.linear.learning_rate.is_finite()) {
            return Err(Error::Config("model.learning_rate must be non-negative".into()));
        }
        if self.model_kind == ModelKind::Linear {
            let v = self.tokenizer.num_bins + 2;
            if self.linear.window.saturating_mul(v).saturating_mul(v) > MAX_LINEAR_PARAMS {
                return Err(Error::Config(format!(
                    "linear model with window {} and vocabulary {v} exceeds {MAX_LINEAR_PARAMS} parameters; lower tokenizer.num_bins",
                    self.linear.window
                )));
            }
        }
        if self.num_samples == 0 {
            return Err(Error::Config("forecast.num_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Current value of every key, for embedding in output metadata.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let t = &self.tokenizer;
        let values = [
            t.num_bins.to_string(),
            t.low_center.to_string(),
            t.high_center.to_string(),
            t.context_length.to_string(),
            t.prediction_length.to_string(),
            self.tsmixup.max_mix.to_string(),
            self.tsmixup.alpha.to_string(),
            self.tsmixup.min_length.to_string(),
            self.tsmixup.max_length.to_string(),
            self.kernelsynth.max_kernels.to_string(),
            self.kernelsynth.length.to_string(),
            self.kernelsynth.jitter.to_string(),
            self.mix_ratio.to_string(),
            self.model_kind.as_str().to_string(),
            self.markov_order.to_string(),
            self.markov_smoothing.to_string(),
            self.linear.window.to_string(),
            self.linear.epochs.to_string(),
            self.linear.learning_rate.to_string(),
            self.linear.full_batch.to_string(),
            self.num_samples.to_string(),
            join_levels(&self.eval.levels),
            self.eval.baseline.clone(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (format!("config.{k}"), v))
            .collect()
    }
}

/// Default quantile levels as a config value.
pub fn default_levels_value() -> String {
    join_levels(&default_levels())
}
