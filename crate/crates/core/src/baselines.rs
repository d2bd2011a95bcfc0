//! Naive and Seasonal Naive point forecasters.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::forecaster::QuantileForecast;
use crate::series_io::Obs;

/// Season length per frequency tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalityTable {
    pub seasons: BTreeMap<String, usize>,
}

impl Default for SeasonalityTable {
    fn default() -> Self {
        let seasons = [
            ("H", 24),
            ("D", 7),
            ("W", 1),
            ("M", 12),
            ("Q", 4),
            ("Y", 1),
            ("30min", 48),
            ("15min", 96),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SeasonalityTable { seasons }
    }
}

impl SeasonalityTable {
    pub fn season_length(&self, freq: &str) -> Option<usize> {
        self.seasons.get(freq).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalNaiveForecast {
    pub values: Vec<f64>,
    /// The context was shorter than one season and S = 1 was used instead.
    pub fell_back: bool,
}

fn last_observed(context: &[Obs]) -> Option<f64> {
    context.iter().rev().flatten().next().copied()
}

/// Repeats the last observed season: `forecast[h] = context[len − S + (h mod S)]`
/// (0-based `h`). A missing source value is replaced by the most recent
/// observation at the same phase, or else by the last observation.
pub fn seasonal_naive(context: &[Obs], horizon: usize, season: usize) -> Result<SeasonalNaiveForecast> {
    if season == 0 {
        return Err(Error::Validation("season length must be at least 1".into()));
    }
    let fallback = last_observed(context)
        .ok_or_else(|| Error::Validation("context has no observed values".into()))?;
    let (season, fell_back) = if context.len() < season {
        (1, true)
    } else {
        (season, false)
    };
    let n = context.len();
    let values = (0..horizon)
        .map(|h| {
            let idx = n - season + h % season;
            (0..=idx / season)
                .map(|back| idx - back * season)
                .find_map(|i| context[i])
                .unwrap_or(fallback)
        })
        .collect();
    Ok(SeasonalNaiveForecast { values, fell_back })
}

/// Last observed value carried forward.
pub fn naive(context: &[Obs], horizon: usize) -> Result<Vec<f64>> {
    let last = last_observed(context)
        .ok_or_else(|| Error::Validation("context has no observed values".into()))?;
    Ok(vec![last; horizon])
}

/// Wraps a point forecast as a degenerate distribution: every level and the
/// mean equal the point.
pub fn as_quantile_forecast(item_id: &str, point: &[f64], levels: &[f64]) -> QuantileForecast {
    QuantileForecast {
        item_id: item_id.to_string(),
        levels: levels.to_vec(),
        values: vec![point.to_vec(); levels.len()],
        mean: point.to_vec(),
    }
}
