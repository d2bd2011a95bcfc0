//! Autoregressive sampling of future paths and quantile extraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NextTokenModel;
use crate::series_io::TimeSeries;
use crate::tokenizer::{TokenId, Tokenizer, EOS_ID, PAD_ID};

pub const DEFAULT_NUM_SAMPLES: usize = 20;

pub fn default_levels() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Sampled trajectories in original units, `samples[path][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSamples {
    pub item_id: String,
    pub samples: Vec<Vec<f64>>,
    pub scale: f64,
    /// Sampled tokens, parallel to `samples`.
    pub tokens: Vec<Vec<TokenId>>,
}

impl ForecastSamples {
    pub fn horizon(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }
}

/// Quantile forecast, `values[level][step]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub item_id: String,
    pub levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl QuantileForecast {
    pub fn horizon(&self) -> usize {
        self.mean.len()
    }

    /// Row for `level`, matched exactly.
    pub fn level(&self, level: f64) -> Option<&[f64]> {
        self.levels
            .iter()
            .position(|&l| l == level)
            .map(|i| self.values[i].as_slice())
    }

    pub fn median(&self) -> Option<&[f64]> {
        self.level(0.5)
    }
}

/// Draws one token from `probs` with PAD and EOS masked out, by inverse CDF
/// over the remaining mass.
fn sample_bin_token<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<TokenId> {
    let mass: f64 = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i as TokenId != PAD_ID && i as TokenId != EOS_ID)
        .map(|(_, p)| *p)
        .sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Degenerate(format!(
            "model puts total mass {mass} on bin tokens"
        )));
    }
    let target = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &p) in probs.iter().enumerate() {
        let tok = i as TokenId;
        if tok == PAD_ID || tok == EOS_ID || p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = Some(tok);
        if target < acc {
            return Ok(tok);
        }
    }
    // rounding left `target` at or past the accumulated mass
    Ok(last_positive.expect("positive mass implies a positive entry"))
}

/// Samples `num_samples` paths of length `horizon` for `series`, whose values
/// are all treated as context.
pub fn forecast<M, R>(
    model: &M,
    series: &TimeSeries,
    horizon: usize,
    num_samples: usize,
    tokenizer: &Tokenizer,
    rng: &mut R,
) -> Result<ForecastSamples>
where
    M: NextTokenModel + ?Sized,
    R: Rng + ?Sized,
{
    if horizon == 0 {
        return Err(Error::Validation("forecast horizon must be at least 1".into()));
    }
    if num_samples == 0 {
        return Err(Error::Validation("num_samples must be at least 1".into()));
    }
    let vocab = tokenizer.vocab();
    if model.vocab_size() != vocab.size() {
        return Err(Error::Validation(format!(
            "model vocabulary {} does not match tokenizer vocabulary {}",
            model.vocab_size(),
            vocab.size()
        )));
    }
    let ctx = tokenizer.tokenize_context(&series.values)?;
    let c = tokenizer.config().context_length;
    let mut samples = Vec::with_capacity(num_samples);
    let mut tokens = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let mut running = ctx.tokens.clone();
        let mut path = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let window = &running[running.len().saturating_sub(c)..];
            let tok = sample_bin_token(&model.probs(window), rng)?;
            debug_assert!(vocab.is_bin(tok));
            path.push(tok);
            running.push(tok);
        }
        samples.push(tokenizer.detokenize(&path, ctx.scale)?);
        tokens.push(path);
    }
    Ok(ForecastSamples {
        item_id: series.id.clone(),
        samples,
        scale: ctx.scale,
        tokens,
    })
}

/// Empirical quantile of sorted data, interpolating linearly between order
/// statistics at position `(n − 1)·level`.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let pos = (n - 1) as f64 * level;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 || lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn samples_to_quantiles(fs: &ForecastSamples, levels: &[f64]) -> Result<QuantileForecast> {
    if fs.samples.is_empty() {
        return Err(Error::Validation("no sample paths".into()));
    }
    if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::Validation("quantile levels must lie in (0, 1)".into()));
    }
    let h = fs.horizon();
    let n = fs.samples.len() as f64;
    let mut values = vec![vec![0.0; h]; levels.len()];
    let mut mean = vec![0.0; h];
    let mut column = Vec::with_capacity(fs.samples.len());
    for step in 0..h {
        column.clear();
        column.extend(fs.samples.iter().map(|p| p[step]));
        column.sort_by(f64::total_cmp);
        let mut qs: Vec<f64> = levels.iter().map(|&l| empirical_quantile(&column, l)).collect();
        qs.sort_by(f64::total_cmp);
        for (row, q) in values.iter_mut().zip(qs) {
            row[step] = q;
        }
        mean[step] = column.iter().sum::<f64>() / n;
    }
    Ok(QuantileForecast {
        item_id: fs.item_id.clone(),
        levels: levels.to_vec(),
        values,
        mean,
    })
}
