//! Forecast metrics and the cross-dataset aggregation protocol.
//!
//! Per dataset and model we compute the weighted quantile loss (WQL) and the
//! mean absolute scaled error (MASE). Each score is divided by the Seasonal
//! Naive score on the same dataset, relative scores are combined across
//! datasets with a geometric mean, and models are also ranked per dataset.
//! A model with no score on a dataset gets relative score 1.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{as_quantile_forecast, seasonal_naive};
use crate::error::{Error, Result};
use crate::forecaster::{default_levels, QuantileForecast};
use crate::series_io::{split_context_target, Dataset, Obs};

pub const SEASONAL_NAIVE: &str = "seasonal_naive";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub levels: Vec<f64>,
    pub baseline: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            levels: default_levels(),
            baseline: SEASONAL_NAIVE.to_string(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.levels)?;
        if self.baseline.is_empty() {
            return Err(Error::Config("eval.baseline must be named".into()));
        }
        Ok(())
    }
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Config("at least one quantile level is required".into()));
    }
    if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::Config("quantile levels must lie strictly inside (0, 1)".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("quantile levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Pinball loss of quantile prediction `q` for outcome `x` at `level`.
pub fn quantile_loss(q: f64, x: f64, level: f64) -> f64 {
    if x > q {
        level * (x - q)
    } else {
        (1.0 - level) * (q - x)
    }
}

/// Dataset-level WQL: for each level, `2 Σ QL / Σ |x|` over all series and
/// steps jointly, then the mean over levels. Levels come from the forecasts.
pub fn wql(forecasts: &[QuantileForecast], actuals: &[Vec<f64>]) -> Result<f64> {
    if forecasts.len() != actuals.len() {
        return Err(Error::Validation(format!(
            "{} forecasts for {} series",
            forecasts.len(),
            actuals.len()
        )));
    }
    let levels = match forecasts.first() {
        Some(f) => f.levels.clone(),
        None => return Err(Error::UndefinedMetric("WQL of an empty forecast set".into())),
    };
    let mut numerators = vec![0.0; levels.len()];
    let mut denominator = 0.0;
    for (f, x) in forecasts.iter().zip(actuals) {
        if f.levels != levels {
            return Err(Error::Validation(format!(
                "forecast '{}' has a different level set",
                f.item_id
            )));
        }
        if f.horizon() != x.len() || f.values.iter().any(|row| row.len() != x.len()) {
            return Err(Error::Validation(format!(
                "forecast '{}' covers {} steps, actuals have {}",
                f.item_id,
                f.horizon(),
                x.len()
            )));
        }
        denominator += x.iter().map(|v| v.abs()).sum::<f64>();
        for (k, &level) in levels.iter().enumerate() {
            numerators[k] += f.values[k]
                .iter()
                .zip(x)
                .map(|(&q, &v)| quantile_loss(q, v, level))
                .sum::<f64>();
        }
    }
    if denominator <= 0.0 {
        return Err(Error::UndefinedMetric(
            "WQL is undefined when every actual value is zero".into(),
        ));
    }
    Ok(numerators.iter().map(|n| 2.0 * n / denominator).sum::<f64>() / levels.len() as f64)
}

/// `((C − S) / H) · Σ|x̂ − x| / Σ_t |x_t − x_{t+S}|` with `C` the in-sample
/// length. Pairs touching a missing in-sample value are left out and `C − S`
/// becomes the number of usable pairs.
pub fn mase(point: &[f64], actual: &[f64], insample: &[Obs], season: usize) -> Result<f64> {
    if point.len() != actual.len() || point.is_empty() {
        return Err(Error::Validation(format!(
            "point forecast has {} steps, actuals {}",
            point.len(),
            actual.len()
        )));
    }
    if season == 0 || insample.len() <= season {
        return Err(Error::UndefinedMetric(format!(
            "in-sample length {} does not exceed season {}",
            insample.len(),
            season
        )));
    }
    let (pairs, scale) = insample
        .iter()
        .zip(&insample[season..])
        .filter_map(|(a, b)| Some((*b)? - (*a)?))
        .fold((0usize, 0.0), |(n, s), d| (n + 1, s + d.abs()));
    if scale <= 0.0 {
        return Err(Error::UndefinedMetric(
            "seasonal naive in-sample error is zero".into(),
        ));
    }
    let abs_err: f64 = point.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(pairs as f64 / point.len() as f64 * abs_err / scale)
}

/// Mean MASE over the series for which it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaseSummary {
    pub value: Option<f64>,
    pub skipped: usize,
}

/// Scores indexed `[dataset][model]`; `None` marks a missing score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub scores: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m == name)
    }
}

/// Divides every score by the baseline's score on the same dataset. Missing
/// scores become 1.
pub fn relative_scores(table: &ScoreTable, baseline: &str) -> Result<ScoreTable> {
    let b = table
        .model_index(baseline)
        .ok_or_else(|| Error::Protocol(format!("baseline '{baseline}' has no scores")))?;
    let scores = table
        .datasets
        .iter()
        .zip(&table.scores)
        .map(|(name, row)| {
            let base = match row[b] {
                Some(v) if v > 0.0 && v.is_finite() => v,
                Some(v) => {
                    return Err(Error::Protocol(format!(
                        "baseline score {v} on dataset '{name}' cannot normalize"
                    )))
                }
                None => {
                    return Err(Error::Protocol(format!(
                        "baseline has no score on dataset '{name}'"
                    )))
                }
            };
            Ok(row.iter().map(|s| Some(s.map_or(1.0, |v| v / base))).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable {
        datasets: table.datasets.clone(),
        models: table.models.clone(),
        scores,
    })
}

pub fn agg_geometric_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Protocol("geometric mean of nothing".into()));
    }
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Protocol(format!(
            "geometric mean needs positive finite inputs, got {v}"
        )));
    }
    Ok((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Per dataset, ranks models by ascending score (1 = best) with tied models
/// sharing the mean of their positions and missing scores ranked last; then
/// averages each model's rank over datasets.
pub fn average_rank(table: &ScoreTable) -> Vec<f64> {
    let m = table.models.len();
    let mut totals = vec![0.0; m];
    for row in &table.scores {
        let mut order: Vec<usize> = (0..m).collect();
        let key = |i: usize| row[i].unwrap_or(f64::INFINITY);
        order.sort_by(|&a, &b| {
            // missing after every present score, including +inf
            row[a].is_none().cmp(&row[b].is_none()).then(key(a).total_cmp(&key(b)))
        });
        let mut start = 0;
        while start < m {
            let mut end = start + 1;
            while end < m && row[order[end]] == row[order[start]] {
                end += 1;
            }
            // positions start+1 ..= end share their mean
            let rank = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                totals[i] += rank;
            }
            start = end;
        }
    }
    let n = table.scores.len().max(1) as f64;
    totals.into_iter().map(|t| t / n).collect()
}

/// Forecasts of one model for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub model: String,
    pub dataset: String,
    pub forecasts: Vec<QuantileForecast>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub dataset: String,
    pub model: String,
    pub wql: Option<f64>,
    pub mase: Option<f64>,
    pub mase_skipped: usize,
    pub relative_wql: f64,
    pub relative_mase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub model: String,
    pub agg_relative_wql: f64,
    pub agg_relative_mase: f64,
    pub avg_rank_wql: f64,
    pub avg_rank_mase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: BTreeMap<String, String>,
    pub levels: Vec<f64>,
    pub baseline: String,
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub entries: Vec<ReportEntry>,
    pub aggregates: Vec<ModelAggregate>,
}

impl EvalReport {
    pub fn aggregate(&self, model: &str) -> Option<&ModelAggregate> {
        self.aggregates.iter().find(|a| a.model == model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

struct PairScore {
    wql: f64,
    mase: MaseSummary,
}

/// Scores one model on one dataset. Steps with a missing actual are dropped
/// from both the forecast and the actuals.
fn score_pair(dataset: &Dataset, forecasts: &[QuantileForecast]) -> Result<PairScore> {
    let split = split_context_target(dataset);
    let by_id: HashMap<&str, &QuantileForecast> =
        forecasts.iter().map(|f| (f.item_id.as_str(), f)).collect();
    let mut kept_forecasts = Vec::with_capacity(split.len());
    let mut kept_actuals = Vec::with_capacity(split.len());
    let mut mase_values = Vec::new();
    let mut skipped = 0;
    for s in &split {
        let f = by_id.get(s.context.id.as_str()).ok_or_else(|| {
            Error::Validation(format!(
                "no forecast for series '{}' of dataset '{}'",
                s.context.id, dataset.name
            ))
        })?;
        if f.horizon() != dataset.prediction_length {
            return Err(Error::Validation(format!(
                "forecast for '{}' has {} steps, dataset '{}' needs {}",
                f.item_id,
                f.horizon(),
                dataset.name,
                dataset.prediction_length
            )));
        }
        let observed: Vec<usize> = (0..s.target.len()).filter(|&t| s.target[t].is_some()).collect();
        if observed.is_empty() {
            skipped += 1;
            continue;
        }
        let actual: Vec<f64> = observed.iter().map(|&t| s.target[t].unwrap()).collect();
        let pick = |row: &[f64]| observed.iter().map(|&t| row[t]).collect::<Vec<f64>>();
        let sub = QuantileForecast {
            item_id: f.item_id.clone(),
            levels: f.levels.clone(),
            values: f.values.iter().map(|r| pick(r)).collect(),
            mean: pick(&f.mean),
        };
        let median = sub.median().ok_or_else(|| {
            Error::Protocol(format!("forecast '{}' has no 0.5 quantile for MASE", f.item_id))
        })?;
        match mase(median, &actual, &s.context.values, dataset.seasonality) {
            Ok(v) => mase_values.push(v),
            Err(Error::UndefinedMetric(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
        kept_forecasts.push(sub);
        kept_actuals.push(actual);
    }
    let wql = wql(&kept_forecasts, &kept_actuals)
        .map_err(|e| match e {
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("dataset '{}': {m}", dataset.name)),
            e => e,
        })?;
    let value = if mase_values.is_empty() {
        None
    } else {
        Some(mase_values.iter().sum::<f64>() / mase_values.len() as f64)
    };
    Ok(PairScore {
        wql,
        mase: MaseSummary { value, skipped },
    })
}

/// Seasonal Naive forecasts for every series of a dataset, wrapped as
/// degenerate quantile forecasts.
pub fn seasonal_naive_submission(dataset: &Dataset, levels: &[f64]) -> Result<Submission> {
    let forecasts = split_context_target(dataset)
        .iter()
        .map(|s| {
            let f = seasonal_naive(&s.context.values, dataset.prediction_length, dataset.seasonality)?;
            Ok(as_quantile_forecast(&s.context.id, &f.values, levels))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Submission {
        model: SEASONAL_NAIVE.to_string(),
        dataset: dataset.name.clone(),
        forecasts,
    })
}

/// Builds the full report. When the baseline is Seasonal Naive and no
/// submission provides it for a dataset, it is computed from the data.
pub fn evaluate(
    datasets: &[Dataset],
    submissions: &[Submission],
    cfg: &EvalConfig,
    metadata: BTreeMap<String, String>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut models: Vec<String> = Vec::new();
    if cfg.baseline == SEASONAL_NAIVE || submissions.iter().any(|s| s.model == cfg.baseline) {
        models.push(cfg.baseline.clone());
    }
    for s in submissions {
        if !models.contains(&s.model) {
            models.push(s.model.clone());
        }
        if !datasets.iter().any(|d| d.name == s.dataset) {
            return Err(Error::Validation(format!(
                "forecasts of '{}' refer to unknown dataset '{}'",
                s.model, s.dataset
            )));
        }
    }
    let mut all: Vec<Submission> = submissions.to_vec();
    if cfg.baseline == SEASONAL_NAIVE {
        for d in datasets {
            if !all.iter().any(|s| s.model == SEASONAL_NAIVE && s.dataset == d.name) {
                all.push(seasonal_naive_submission(d, &cfg.levels)?);
            }
        }
    }

    let cells: Vec<(usize, usize)> = (0..datasets.len())
        .flat_map(|d| (0..models.len()).map(move |m| (d, m)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(d, m)| {
            let sub = all
                .iter()
                .find(|s| s.dataset == datasets[d].name && s.model == models[m]);
            sub.map(|s| score_pair(&datasets[d], &s.forecasts)).transpose()
        })
        .collect::<Result<Vec<Option<PairScore>>>>()?;

    let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
    let mut wql_table = ScoreTable {
        datasets: names.clone(),
        models: models.clone(),
        scores: vec![vec![None; models.len()]; datasets.len()],
    };
    let mut mase_table = wql_table.clone();
    let mut skipped = vec![vec![0usize; models.len()]; datasets.len()];
    for (&(d, m), r) in cells.iter().zip(&results) {
        if let Some(r) = r {
            wql_table.scores[d][m] = Some(r.wql);
            mase_table.scores[d][m] = r.mase.value;
            skipped[d][m] = r.mase.skipped;
        }
    }

    let rel_wql = relative_scores(&wql_table, &cfg.baseline)?;
    let rel_mase = relative_scores(&mase_table, &cfg.baseline)?;
    let rank_wql = average_rank(&wql_table);
    let rank_mase = average_rank(&mase_table);

    let mut entries = Vec::with_capacity(cells.len());
    for &(d, m) in &cells {
        entries.push(ReportEntry {
            dataset: names[d].clone(),
            model: models[m].clone(),
            wql: wql_table.scores[d][m],
            mase: mase_table.scores[d][m],
            mase_skipped: skipped[d][m],
            relative_wql: rel_wql.scores[d][m].expect("relative scores are complete"),
            relative_mase: rel_mase.scores[d][m].expect("relative scores are complete"),
        });
    }
    let column = |t: &ScoreTable, m: usize| -> Vec<f64> {
        t.scores.iter().map(|row| row[m].expect("relative scores are complete")).collect()
    };
    let aggregates = (0..models.len())
        .map(|m| {
            Ok(ModelAggregate {
                model: models[m].clone(),
                agg_relative_wql: agg_geometric_mean(&column(&rel_wql, m))?,
                agg_relative_mase: agg_geometric_mean(&column(&rel_mase, m))?,
                avg_rank_wql: rank_wql[m],
                avg_rank_mase: rank_mase[m],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        metadata,
        levels: cfg.levels.clone(),
        baseline: cfg.baseline.clone(),
        datasets: names,
        models,
        entries,
        aggregates,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Aligned plain-text summary of a report.
pub fn render_table(report: &EvalReport) -> String {
    let mut rows: Vec<Vec<String>> = vec![vec![
        "model".into(),
        "agg_rel_wql".into(),
        "agg_rel_mase".into(),
        "rank_wql".into(),
        "rank_mase".into(),
    ]];
    for a in &report.aggregates {
        rows.push(vec![
            a.model.clone(),
            format!("{:.4}", a.agg_relative_wql),
            format!("{:.4}", a.agg_relative_mase),
            format!("{:.2}", a.avg_rank_wql),
            format!("{:.2}", a.avg_rank_mase),
        ]);
    }
    let mut out = align(&rows);
    out.push('\n');
    let mut rows: Vec<Vec<String>> = vec![vec![
        "dataset".into(),
        "model".into(),
        "wql".into(),
        "mase".into(),
        "rel_wql".into(),
        "rel_mase".into(),
    ]];
    for e in &report.entries {
        rows.push(vec![
            e.dataset.clone(),
            e.model.clone(),
            fmt_opt(e.wql),
            fmt_opt(e.mase),
            format!("{:.4}", e.relative_wql),
            format!("{:.4}", e.relative_mase),
        ]);
    }
    out.push_str(&align(&rows));
    out
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Long-format CSV of aggregates for plotting:
/// `model,metric,value` with metrics agg_relative_wql, agg_relative_mase,
/// avg_rank_wql, avg_rank_mase.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("model,metric,value\n");
    for a in &report.aggregates {
        for (metric, v) in [
            ("agg_relative_wql", a.agg_relative_wql),
            ("agg_relative_mase", a.agg_relative_mase),
            ("avg_rank_wql", a.avg_rank_wql),
            ("avg_rank_mase", a.avg_rank_mase),
        ] {
            out.push_str(&format!("{},{},{}\n", a.model, metric, v));
        }
    }
    out
}
