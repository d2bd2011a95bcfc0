//! Probabilistic time series forecasting by treating a series as a sentence
//! over a fixed vocabulary of quantization bins.
//!
//! The pipeline is: mean-scale and quantize a context into tokens
//! ([`tokenizer`]), fit a categorical next-token model ([`models`]), sample
//! future token paths autoregressively and map them back to real values
//! ([`forecaster`]), then score the forecasts against Seasonal Naive
//! ([`baselines`], [`evaluation`]). Training data can be augmented with
//! mixup combinations of real series ([`tsmixup`]) and with synthetic
//! Gaussian-process draws from randomly composed kernels ([`kernelsynth`]).

pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod forecaster;
pub mod kernelsynth;
pub mod models;
pub mod rng;
pub mod series_io;
pub mod tokenizer;
pub mod tsmixup;

pub use error::{Error, Result};
