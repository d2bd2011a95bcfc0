//! Mixup augmentation for time series.
//!
//! Each augmented series is a convex combination of `k ~ U{1..K}` mean-scaled
//! windows of a common length `l ~ U{l_min..l_max}`, with weights drawn from
//! a symmetric Dirichlet(α). Windows come from a uniformly chosen dataset and
//! a uniformly chosen series within it.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::series_io::{Dataset, Obs};
use crate::tokenizer::mean_scale;

/// Window redraws allowed per mixture component when windows hit missing
/// values.
const MAX_WINDOW_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TSMixupConfig {
    pub max_mix: usize,
    pub alpha: f64,
    pub min_length: usize,
    pub max_length: usize,
}

impl Default for TSMixupConfig {
    fn default() -> Self {
        TSMixupConfig {
            max_mix: 3,
            alpha: 1.5,
            min_length: 128,
            max_length: 2048,
        }
    }
}

impl TSMixupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_mix == 0 {
            return Err(Error::Config("tsmixup.max_mix must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("tsmixup.alpha must be positive".into()));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::Config(
                "tsmixup lengths must satisfy 1 <= min_length <= max_length".into(),
            ));
        }
        Ok(())
    }
}

/// Gamma(shape, 1) by Marsaglia and Tsang's squeeze method. Shapes below one
/// are boosted: `G(a) = G(a + 1) * U^(1/a)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Symmetric Dirichlet(α) on `k` coordinates via normalized gammas.
pub fn sample_dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    assert!(k >= 1, "dirichlet needs at least one coordinate");
    if k == 1 {
        return vec![1.0];
    }
    loop {
        let g: Vec<f64> = (0..k).map(|_| sample_gamma(alpha, rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            let w: Vec<f64> = g.iter().map(|x| x / total).collect();
            // one more pass absorbs the rounding of the first division
            let s: f64 = w.iter().sum();
            return w.iter().map(|x| x / s).collect();
        }
    }
}

/// Elementwise `Σ λ_i · w_i` over equal-length windows.
pub fn mix_windows(windows: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    assert_eq!(windows.len(), weights.len());
    let len = windows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for (w, &lambda) in windows.iter().zip(weights) {
        assert_eq!(w.len(), len, "mixed windows must share a length");
        for (o, x) in out.iter_mut().zip(w) {
            *o += lambda * x;
        }
    }
    out
}

fn longest_series(datasets: &[Dataset]) -> usize {
    datasets
        .iter()
        .flat_map(|d| d.series.iter().map(|s| s.len()))
        .max()
        .unwrap_or(0)
}

/// Draws a fully observed window of length `len` and returns it mean-scaled.
fn draw_window<R: Rng + ?Sized>(datasets: &[Dataset], len: usize, rng: &mut R) -> Result<Vec<f64>> {
    // Uniform over datasets (and then series) that can supply a window of
    // this length; equivalent to redrawing ineligible picks.
    let eligible: Vec<Vec<usize>> = datasets
        .iter()
        .map(|d| {
            d.series
                .iter()
                .enumerate()
                .filter(|(_, s)| s.len() >= len)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let usable: Vec<usize> = (0..datasets.len())
        .filter(|&i| !eligible[i].is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::Config(format!("no series of length >= {len}")));
    }
    for _ in 0..MAX_WINDOW_RETRIES {
        let di = usable[rng.random_range(0..usable.len())];
        let choices = &eligible[di];
        let series = &datasets[di].series[choices[rng.random_range(0..choices.len())]];
        let start = rng.random_range(0..=series.len() - len);
        let window: &[Obs] = &series.values[start..start + len];
        if window.iter().all(Option::is_some) {
            let scaled = mean_scale(window);
            return Ok(scaled.values.into_iter().flatten().collect());
        }
    }
    Err(Error::Validation(format!(
        "could not draw a window of length {len} without missing values after {MAX_WINDOW_RETRIES} attempts"
    )))
}

/// One augmented series.
pub fn tsmixup_sample<R: Rng + ?Sized>(
    datasets: &[Dataset],
    cfg: &TSMixupConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let longest = longest_series(datasets);
    if longest < cfg.min_length {
        return Err(Error::Config(format!(
            "tsmixup needs at least one series of length >= {} (longest is {})",
            cfg.min_length, longest
        )));
    }
    let k = rng.random_range(1..=cfg.max_mix);
    let len = rng.random_range(cfg.min_length..=cfg.max_length.min(longest));
    let windows = (0..k)
        .map(|_| draw_window(datasets, len, rng))
        .collect::<Result<Vec<_>>>()?;
    let weights = sample_dirichlet(k, cfg.alpha, rng);
    Ok(mix_windows(&windows, &weights))
}

/// `n` augmentations; item `i` uses the stream derived from `(seed, i)`.
pub fn generate_corpus(
    datasets: &[Dataset],
    cfg: &TSMixupConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .into_par_iter()
        .map(|i| tsmixup_sample(datasets, cfg, &mut derive_rng(seed, &[i as u64])))
        .collect()
}
