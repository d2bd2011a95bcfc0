//! Real values to tokens and back.
//!
//! A context is divided by the mean of its absolute values, each scaled value
//! is assigned to one of `B` uniform bins, and bins are shifted past the two
//! special tokens. Decoding maps a token to its bin center and multiplies by
//! the scale.
//!
//! Bin `j` (1-based) covers `[b_{j-1}, b_j)` with `b_0 = -inf`, `b_B = +inf`
//! and `b_i` the midpoint of centers `i` and `i+1`. Values outside the center
//! range saturate into the first or last bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series_io::Obs;

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const BIN_OFFSET: TokenId = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub num_bins: usize,
    pub low_center: f64,
    pub high_center: f64,
    pub context_length: usize,
    pub prediction_length: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            num_bins: 4094,
            low_center: -15.0,
            high_center: 15.0,
            context_length: 512,
            prediction_length: 64,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 2 {
            return Err(Error::Config("tokenizer.num_bins must be at least 2".into()));
        }
        if self.num_bins as u64 + BIN_OFFSET as u64 > TokenId::MAX as u64 {
            return Err(Error::Config("tokenizer.num_bins is too large".into()));
        }
        if !(self.low_center.is_finite() && self.high_center.is_finite())
            || self.low_center >= self.high_center
        {
            return Err(Error::Config(
                "tokenizer.low_center must be finite and below tokenizer.high_center".into(),
            ));
        }
        if self.context_length == 0 {
            return Err(Error::Config("tokenizer.context_length must be positive".into()));
        }
        if self.prediction_length == 0 {
            return Err(Error::Config("tokenizer.prediction_length must be positive".into()));
        }
        Ok(())
    }

    /// Distance between neighbouring bin centers.
    pub fn bin_width(&self) -> f64 {
        (self.high_center - self.low_center) / (self.num_bins - 1) as f64
    }
}

/// Token id layout: PAD = 0, EOS = 1, bin `j` (1-based) = `j + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub num_bins: usize,
}

impl Vocabulary {
    pub fn new(num_bins: usize) -> Self {
        Vocabulary { num_bins }
    }

    pub fn size(&self) -> usize {
        self.num_bins + BIN_OFFSET as usize
    }

    pub fn bin_to_token(&self, bin: usize) -> TokenId {
        debug_assert!((1..=self.num_bins).contains(&bin));
        bin as TokenId - 1 + BIN_OFFSET
    }

    /// The 1-based bin of a token, or `None` for PAD/EOS/out-of-vocabulary ids.
    pub fn token_to_bin(&self, token: TokenId) -> Option<usize> {
        if token >= BIN_OFFSET && ((token - BIN_OFFSET) as usize) < self.num_bins {
            Some((token - BIN_OFFSET) as usize + 1)
        } else {
            None
        }
    }

    pub fn is_bin(&self, token: TokenId) -> bool {
        self.token_to_bin(token).is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSeries {
    pub values: Vec<Obs>,
    pub scale: f64,
}

/// Divides by the mean absolute value of the observed entries. An all-missing
/// or all-zero input gets scale 1.
pub fn mean_scale(context: &[Obs]) -> ScaledSeries {
    let (sum, count) = context
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
    let mut scale = if count == 0 { 0.0 } else { sum / count as f64 };
    if !(scale > 0.0 && scale.is_finite()) {
        scale = 1.0;
    }
    ScaledSeries {
        values: context.iter().map(|v| v.map(|x| x / scale)).collect(),
        scale,
    }
}

/// Bin centers `c_1..c_B` and the `B-1` edges between them.
pub fn bin_geometry(cfg: &TokenizerConfig) -> (Vec<f64>, Vec<f64>) {
    let b = cfg.num_bins;
    let step = cfg.bin_width();
    let centers: Vec<f64> = (0..b)
        .map(|i| {
            if i == b - 1 {
                cfg.high_center
            } else {
                cfg.low_center + i as f64 * step
            }
        })
        .collect();
    let edges = centers.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    (centers, edges)
}

/// A token sequence plus the scale needed to map it back to original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub scale: f64,
}

/// Input and teacher-forced labels for one training window. Labels end with
/// EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: Vec<TokenId>,
    pub labels: Vec<TokenId>,
}

impl TrainingExample {
    /// Context followed by labels, as one sequence.
    pub fn full_sequence(&self) -> Vec<TokenId> {
        let mut s = self.context.clone();
        s.extend_from_slice(&self.labels);
        s
    }
}

/// Precomputed bin geometry for one configuration.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    cfg: TokenizerConfig,
    vocab: Vocabulary,
    centers: Vec<f64>,
    edges: Vec<f64>,
}

impl Tokenizer {
    pub fn new(cfg: TokenizerConfig) -> Result<Self> {
        cfg.validate()?;
        let (centers, edges) = bin_geometry(&cfg);
        Ok(Tokenizer {
            vocab: Vocabulary::new(cfg.num_bins),
            cfg,
            centers,
            edges,
        })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// 1-based bin index of a finite value.
    pub fn quantize(&self, x: f64) -> Result<usize> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("cannot quantize non-finite value {x}")));
        }
        Ok(self.edges.partition_point(|&b| b <= x) + 1)
    }

    /// Center of a 1-based bin.
    pub fn dequantize(&self, bin: usize) -> Result<f64> {
        if bin == 0 || bin > self.cfg.num_bins {
            return Err(Error::Domain(format!(
                "bin {bin} outside 1..={}",
                self.cfg.num_bins
            )));
        }
        Ok(self.centers[bin - 1])
    }

    fn encode_scaled(&self, values: &[Obs]) -> Result<Vec<TokenId>> {
        values
            .iter()
            .map(|v| match v {
                None => Ok(PAD_ID),
                Some(x) => Ok(self.vocab.bin_to_token(self.quantize(*x)?)),
            })
            .collect()
    }

    /// Tokenizes the last `context_length` observations, left-padding with PAD
    /// to exactly `context_length` tokens. Missing values become PAD.
    pub fn tokenize_context(&self, context: &[Obs]) -> Result<TokenSeq> {
        if context.is_empty() {
            return Err(Error::Validation("cannot tokenize an empty context".into()));
        }
        let c = self.cfg.context_length;
        let window = &context[context.len().saturating_sub(c)..];
        let scaled = mean_scale(window);
        let mut tokens = vec![PAD_ID; c - window.len()];
        tokens.extend(self.encode_scaled(&scaled.values)?);
        Ok(TokenSeq {
            tokens,
            scale: scaled.scale,
        })
    }

    /// Builds a training window from a series: the last
    /// `min(prediction_length, len - 1)` values become labels (quantized with
    /// the context's scale, EOS appended), everything before is the context.
    pub fn training_example(&self, series: &[Obs]) -> Result<TrainingExample> {
        if series.len() < 2 {
            return Err(Error::Validation(
                "a training series needs at least two observations".into(),
            ));
        }
        let h = self.cfg.prediction_length.min(series.len() - 1);
        let (ctx, future) = series.split_at(series.len() - h);
        let seq = self.tokenize_context(ctx)?;
        let labels = future
            .iter()
            .map(|v| match v {
                Some(x) => Ok(self.vocab.bin_to_token(self.quantize(x / seq.scale)?)),
                None => Err(Error::Validation(
                    "missing value in a training label window".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingExample {
            context: seq.tokens,
            labels: append_eos(&labels),
        })
    }

    /// Maps bin tokens back to real values in original units.
    pub fn detokenize(&self, tokens: &[TokenId], scale: f64) -> Result<Vec<f64>> {
        tokens
            .iter()
            .map(|&t| match self.vocab.token_to_bin(t) {
                Some(bin) => Ok(self.centers[bin - 1] * scale),
                None => Err(Error::Contract(format!(
                    "token {t} is not a bin token and cannot be decoded"
                ))),
            })
            .collect()
    }
}

pub fn append_eos(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    out.extend_from_slice(tokens);
    out.push(EOS_ID);
    out
}
