//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tokcast::baselines::naive;
use tokcast::evaluation::{
    agg_geometric_mean, average_rank, evaluate, mase, quantile_loss, relative_scores, wql,
    EvalConfig, ScoreTable, Submission, SEASONAL_NAIVE,
};
use tokcast::forecaster::{forecast, samples_to_quantiles, QuantileForecast};
use tokcast::kernelsynth::{gram_matrix, BaseKernel, GpSampler, KernelSpec};
use tokcast::models::{
    cross_entropy_loss, fit_markov, grad_cross_entropy, train_linear, CountMarkov, LinearSoftmax,
    LinearTrainConfig,
};
use tokcast::series_io::{Dataset, Obs, TimeSeries};
use tokcast::tokenizer::{Tokenizer, TokenizerConfig, TrainingExample, EOS_ID};
use tokcast::tsmixup::{sample_dirichlet, tsmixup_sample, TSMixupConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn obs(v: &[f64]) -> Vec<Obs> {
    v.iter().copied().map(Some).collect()
}

fn default_tokenizer() -> Tokenizer {
    Tokenizer::new(TokenizerConfig::default()).unwrap()
}

// 1 ---------------------------------------------------------------------------

fn quantization_roundtrip() -> Outcome {
    let tok = default_tokenizer();
    let bound = 15.0 / 4093.0 + 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        let x: f64 = rng.random_range(-15.0..=15.0);
        let err = (tok.dequantize(tok.quantize(x).unwrap()).unwrap() - x).abs();
        worst = worst.max(err);
    }
    ensure(worst <= bound, format!("max |d(q(x)) − x| = {worst:e} > {bound:e}"))?;
    for j in 1..=4094 {
        let c = tok.dequantize(j).unwrap();
        ensure(tok.quantize(c).unwrap() == j, format!("bin {j} does not round-trip"))?;
    }
    Ok(format!("max error {worst:.3e} ≤ {bound:.3e}; 4094/4094 bins fixed"))
}

// 2 ---------------------------------------------------------------------------

fn scale_invariance() -> Outcome {
    let tok = default_tokenizer();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut contexts = Vec::new();
    for _ in 0..1000 {
        let n = rng.random_range(8..600);
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0 + 1.0).collect();
        let alpha = 10f64.powf(rng.random_range(-3.0..3.0));
        let a = tok.tokenize_context(&obs(&x)).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let b = tok.tokenize_context(&obs(&scaled)).unwrap();
        ensure(a.tokens == b.tokens, format!("tokens differ for α = {alpha}"))?;
        contexts.push((x, scaled, alpha));
    }

    // model over the same vocabulary, fit on a few of the contexts
    let corpus: Vec<Vec<u32>> = contexts[..50]
        .iter()
        .map(|(x, _, _)| tok.training_example(&obs(x)).unwrap().full_sequence())
        .collect();
    let model = fit_markov(&corpus, 1, 0.01, tok.vocab().size()).unwrap();
    let mut worst_rel: f64 = 0.0;
    for (i, (x, scaled, alpha)) in contexts.iter().enumerate() {
        let s1 = TimeSeries::from_values("a", x).unwrap();
        let s2 = TimeSeries::from_values("a", scaled).unwrap();
        let f1 = forecast(&model, &s1, 8, 2, &tok, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        let f2 = forecast(&model, &s2, 8, 2, &tok, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        ensure(f1.tokens == f2.tokens, format!("forecast tokens differ for α = {alpha}"))?;
        for (p1, p2) in f1.samples.iter().zip(&f2.samples) {
            for (a, b) in p1.iter().zip(p2) {
                let want = alpha * a;
                worst_rel = worst_rel.max((b - want).abs() / want.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    // values differ from α·f(x) only by the rounding of the mean scale
    ensure(worst_rel < 1e-12, format!("forecast values off by {worst_rel:e} relative"))?;
    Ok(format!(
        "1000 contexts token-identical; forecast tokens identical, values within {worst_rel:.1e} relative"
    ))
}

// 3 ---------------------------------------------------------------------------

fn dirichlet_and_tsmixup() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut report = Vec::new();
    for k in [2usize, 3] {
        let n = 100_000;
        let mut means = vec![0.0; k];
        for _ in 0..n {
            let w = sample_dirichlet(k, 1.5, &mut rng);
            let sum: f64 = w.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, format!("weights sum to {sum}"))?;
            for (m, x) in means.iter_mut().zip(&w) {
                *m += x / n as f64;
            }
        }
        let dev = means.iter().map(|m| (m - 1.0 / k as f64).abs()).fold(0.0, f64::max);
        ensure(dev < 0.01, format!("k={k}: mean deviates by {dev}"))?;
        report.push(format!("k={k} max mean dev {dev:.4}"));
    }

    // single-component mix of a whole series is the mean-scaled series itself
    let len = 200;
    let x: Vec<f64> = (0..len).map(|_| rng.random_range(-4.0..9.0)).collect();
    let ts = TimeSeries::from_values("s", &x).unwrap();
    let ds = Dataset::new("d", vec![ts], 1, 1).unwrap();
    let cfg = TSMixupConfig {
        max_mix: 1,
        alpha: 1.5,
        min_length: len,
        max_length: len,
    };
    let out = tsmixup_sample(&[ds], &cfg, &mut rng).unwrap();
    let s = x.iter().map(|v| v.abs()).sum::<f64>() / len as f64;
    let want: Vec<f64> = x.iter().map(|v| v / s).collect();
    ensure(
        out.iter().map(|v| v.to_bits()).eq(want.iter().map(|v| v.to_bits())),
        "k=1 output differs from the mean-scaled window",
    )?;
    report.push("k=1 bitwise equal".into());
    Ok(report.join("; "))
}

// 4 ---------------------------------------------------------------------------

fn gp_correctness() -> Outcome {
    let lin = BaseKernel::Linear { sigma: 0.0 }.eval(2.0, 3.0);
    ensure((lin - 6.0).abs() <= 1e-12, format!("Linear(0)(2,3) = {lin}"))?;
    let rbf = BaseKernel::Rbf { length_scale: 7.0 }.eval(4.5, 4.5);
    ensure((rbf - 1.0).abs() <= 1e-12, format!("RBF diagonal = {rbf}"))?;
    let per = BaseKernel::Periodic { period: 24.0 }.eval(3.0, 27.0);
    ensure((per - 1.0).abs() <= 1e-12, format!("Periodic at lag p = {per}"))?;

    let grid: Vec<f64> = (0..64).map(f64::from).collect();
    let spec = KernelSpec::Leaf(BaseKernel::Rbf { length_scale: 10.0 });
    let sampler = GpSampler::new(&spec, &grid, 1e-6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 5000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    let mean: Vec<f64> = (0..64).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / n as f64).collect();
    let gram = gram_matrix(&spec, &grid, 0.0);
    let mut worst: f64 = 0.0;
    for i in 0..64 {
        for j in 0..64 {
            let c = draws.iter().map(|d| (d[i] - mean[i]) * (d[j] - mean[j])).sum::<f64>() / (n - 1) as f64;
            worst = worst.max((c - gram.get(i, j)).abs());
        }
    }
    ensure(worst < 0.1, format!("empirical covariance off by {worst}"))?;

    let grid: Vec<f64> = (0..200).map(f64::from).collect();
    let spec = KernelSpec::Leaf(BaseKernel::WhiteNoise { sigma_n: 1.0 });
    let sampler = GpSampler::new(&spec, &grid, 1e-6).map_err(|e| e.to_string())?;
    let pts: Vec<f64> = (0..500).flat_map(|_| sampler.sample(&mut rng)).collect();
    let m = pts.iter().sum::<f64>() / pts.len() as f64;
    let var = pts.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (pts.len() - 1) as f64;
    ensure((var - 1.0).abs() < 0.05, format!("white noise variance {var}"))?;
    Ok(format!(
        "formulas exact; RBF covariance max dev {worst:.3}; white-noise variance {var:.4} over {} points",
        pts.len()
    ))
}

// 5 ---------------------------------------------------------------------------

fn cross_entropy_correctness() -> Outcome {
    let v = 4096;
    let uniform = LinearSoftmax::zeros(4, v);
    let ex = TrainingExample {
        context: vec![5, 9, 100],
        labels: vec![7, 8, 2000, 3, EOS_ID],
    };
    let l = cross_entropy_loss(&uniform, &ex);
    let want = ex.labels.len() as f64 * (v as f64).ln();
    ensure((l - want).abs() <= 1e-9, format!("uniform loss {l} ≠ {want}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = LinearSoftmax::zeros(2, 8);
    for w in model.weights_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    for b in model.bias_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    let batch = vec![
        TrainingExample { context: vec![2, 3, 4], labels: vec![5, 6, 1] },
        TrainingExample { context: vec![0, 7], labels: vec![2, 1] },
    ];
    let mean_loss = |m: &LinearSoftmax| {
        batch.iter().map(|e| cross_entropy_loss(m, e)).sum::<f64>() / batch.len() as f64
    };
    let g = grad_cross_entropy(&model, &batch).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    for i in 0..model.weights().len() {
        let mut p = model.clone();
        p.weights_mut()[i] += h;
        let mut m = model.clone();
        m.weights_mut()[i] -= h;
        worst = worst.max(rel(g.weights[i], (mean_loss(&p) - mean_loss(&m)) / (2.0 * h)));
    }
    for i in 0..model.bias().len() {
        let mut p = model.clone();
        p.bias_mut()[i] += h;
        let mut m = model.clone();
        m.bias_mut()[i] -= h;
        worst = worst.max(rel(g.bias[i], (mean_loss(&p) - mean_loss(&m)) / (2.0 * h)));
    }
    ensure(worst < 1e-4, format!("gradient max relative error {worst:e}"))?;

    let start = Instant::now();
    let pattern = TrainingExample {
        context: vec![2, 3],
        labels: vec![4, 5, 6, 7, EOS_ID],
    };
    let corpus = vec![pattern.clone(); 4];
    let cfg = LinearTrainConfig {
        window: 2,
        epochs: 200,
        learning_rate: 1.0,
        full_batch: false,
    };
    let trained = train_linear(&corpus, 16, &cfg, 5).map_err(|e| e.to_string())?;
    let per_token = cross_entropy_loss(&trained, &pattern) / pattern.labels.len() as f64;
    let took = start.elapsed();
    ensure(per_token < 0.01, format!("memorization per-token loss {per_token}"))?;
    ensure(took < Duration::from_secs(10), format!("memorization took {took:?}"))?;
    Ok(format!(
        "uniform loss exact; FD max rel err {worst:.1e}; memorized to {per_token:.2e}/token in {:.2}s",
        took.as_secs_f64()
    ))
}

// 6 ---------------------------------------------------------------------------

/// Rank of model `i` counted directly: 1 + (strictly better) + ½·(tied
/// others), with missing scores worse than any present one.
fn brute_rank(row: &[Option<f64>], i: usize) -> f64 {
    let cmp = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap(),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    };
    let mut r = 1.0;
    for j in 0..row.len() {
        if j == i {
            continue;
        }
        match cmp(row[j], row[i]) {
            std::cmp::Ordering::Less => r += 1.0,
            std::cmp::Ordering::Equal => r += 0.5,
            std::cmp::Ordering::Greater => {}
        }
    }
    r
}

fn metric_oracles() -> Outcome {
    for (q, x, a, want) in [(2.0, 4.0, 0.5, 1.0), (0.0, 10.0, 0.1, 1.0), (10.0, 0.0, 0.1, 9.0), (3.0, 3.0, 0.3, 0.0)] {
        let got = quantile_loss(q, x, a);
        ensure(got == want, format!("quantile_loss({q},{x},{a}) = {got}"))?;
    }
    let f = QuantileForecast {
        item_id: "a".into(),
        levels: vec![0.5],
        values: vec![vec![1.0]],
        mean: vec![1.0],
    };
    let w = wql(&[f], &[vec![2.0]]).map_err(|e| e.to_string())?;
    ensure((w - 0.5).abs() <= 1e-12, format!("WQL hand example = {w}"))?;
    let m = mase(&[5.0, 6.0], &[5.0, 7.0], &obs(&[1.0, 2.0, 3.0, 4.0]), 1).map_err(|e| e.to_string())?;
    ensure((m - 0.5).abs() <= 1e-12, format!("MASE hand example = {m}"))?;
    let g = agg_geometric_mean(&[0.5, 0.5, 2.0]).map_err(|e| e.to_string())?;
    ensure((g - 0.5f64.powf(1.0 / 3.0)).abs() <= 1e-12, format!("geometric mean = {g}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let (d, k) = (5, 8);
        let scores: Vec<Vec<Option<f64>>> = (0..d)
            .map(|_| {
                (0..k)
                    .map(|_| match rng.random_range(0..10) {
                        0 => None,
                        // coarse values force ties
                        1..=4 => Some(f64::from(rng.random_range(0..4u8))),
                        _ => Some(rng.random()),
                    })
                    .collect()
            })
            .collect();
        let table = ScoreTable {
            datasets: (0..d).map(|i| format!("d{i}")).collect(),
            models: (0..k).map(|i| format!("m{i}")).collect(),
            scores: scores.clone(),
        };
        let got = average_rank(&table);
        for (i, g) in got.iter().enumerate() {
            let want = scores.iter().map(|row| brute_rank(row, i)).sum::<f64>() / d as f64;
            ensure((g - want).abs() <= 1e-12, format!("average rank of m{i}: {g} vs {want}"))?;
        }
    }
    Ok("loss branches, WQL 0.5, MASE 0.5, gmean 0.5^(1/3) exact; 100 rank tables match".into())
}

// 7 ---------------------------------------------------------------------------

fn protocol_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut datasets = Vec::new();
    let mut subs = Vec::new();
    for d in 0..4 {
        let h = 6;
        let series: Vec<TimeSeries> = (0..5)
            .map(|i| {
                let v: Vec<f64> = (0..40)
                    .map(|t| 10.0 + (t as f64 * 0.7 + i as f64).sin() * 3.0 + rng.random::<f64>())
                    .collect();
                TimeSeries::new(format!("s{i}"), "D", 0, obs(&v)).unwrap()
            })
            .collect();
        let ds = Dataset::new(format!("d{d}"), series, h, 7).unwrap();
        for m in 0..3 {
            let forecasts = ds
                .series
                .iter()
                .map(|s| {
                    let last = s.values[s.len() - h - 1].unwrap();
                    let levels = vec![0.1, 0.5, 0.9];
                    let values = levels
                        .iter()
                        .map(|l| (0..h).map(|_| last + (l - 0.5) * 4.0 + rng.random_range(-1.0..1.0) * m as f64).collect())
                        .collect();
                    QuantileForecast {
                        item_id: s.id.clone(),
                        levels,
                        values,
                        mean: vec![last; h],
                    }
                })
                .collect();
            subs.push(Submission {
                model: format!("model{m}"),
                dataset: ds.name.clone(),
                forecasts,
            });
        }
        datasets.push(ds);
    }
    let cfg = EvalConfig {
        levels: vec![0.1, 0.5, 0.9],
        baseline: SEASONAL_NAIVE.into(),
    };
    let report = evaluate(&datasets, &subs, &cfg, Default::default()).map_err(|e| e.to_string())?;
    for e in report.entries.iter().filter(|e| e.model == SEASONAL_NAIVE) {
        ensure(
            e.relative_wql == 1.0 && e.relative_mase == 1.0,
            format!("baseline relative score on {} is not 1", e.dataset),
        )?;
    }
    let agg = report.aggregate(SEASONAL_NAIVE).ok_or("no baseline aggregate")?;
    ensure(agg.agg_relative_wql == 1.0 && agg.agg_relative_mase == 1.0, "baseline aggregate is not 1")?;

    let table = ScoreTable {
        datasets: report.datasets.clone(),
        models: report.models.clone(),
        scores: report
            .datasets
            .iter()
            .map(|d| {
                report
                    .models
                    .iter()
                    .map(|m| report.entries.iter().find(|e| &e.dataset == d && &e.model == m).and_then(|e| e.wql))
                    .collect()
            })
            .collect(),
    };
    let b = table.model_index(SEASONAL_NAIVE).unwrap();
    // ordering of the compared models; the baseline's own aggregate is 1 by
    // construction and is not part of the comparison
    let ordering = |t: &ScoreTable| -> Vec<usize> {
        let rel = relative_scores(t, SEASONAL_NAIVE).unwrap();
        let aggs: Vec<f64> = (0..t.models.len())
            .map(|m| agg_geometric_mean(&rel.scores.iter().map(|r| r[m].unwrap()).collect::<Vec<_>>()).unwrap())
            .collect();
        let mut idx: Vec<usize> = (0..aggs.len()).filter(|&m| m != b).collect();
        idx.sort_by(|&x, &y| aggs[x].total_cmp(&aggs[y]));
        idx
    };
    let reference = ordering(&table);
    for _ in 0..10 {
        let mut t = table.clone();
        for row in &mut t.scores {
            row[b] = Some(10f64.powf(rng.random_range(-2.0..2.0)));
        }
        ensure(ordering(&t) == reference, "model ordering changed under a perturbed baseline")?;
    }
    Ok(format!("baseline exactly 1.0 on {} datasets; ordering stable under 10 perturbations", datasets.len()))
}

// 8 ---------------------------------------------------------------------------

fn noise_interval_coverage() -> Outcome {
    let tok = default_tokenizer();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut noise = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let corpus: Vec<Vec<u32>> = (0..200)
        .map(|_| tok.training_example(&obs(&noise(600))).unwrap().full_sequence())
        .collect();
    let model = fit_markov(&corpus, 1, 1e-3, tok.vocab().size()).map_err(|e| e.to_string())?;
    let h = 24;
    let (mut inside, mut total) = (0usize, 0usize);
    for i in 0..25 {
        let series = noise(512 + h);
        let ctx = TimeSeries::from_values("n", &series[..512]).unwrap();
        let fs = forecast(&model, &ctx, h, 20, &tok, &mut ChaCha8Rng::seed_from_u64(100 + i)).map_err(|e| e.to_string())?;
        let q = samples_to_quantiles(&fs, &[0.1, 0.9]).map_err(|e| e.to_string())?;
        for t in 0..h {
            let x = series[512 + t];
            total += 1;
            if q.values[0][t] <= x && x <= q.values[1][t] {
                inside += 1;
            }
        }
    }
    let cov = inside as f64 / total as f64;
    ensure((0.70..=0.90).contains(&cov), format!("coverage {cov:.3} over {total} points"))?;
    Ok(format!("[q0.1, q0.9] coverage {cov:.3} over {total} points"))
}

// 9 ---------------------------------------------------------------------------

fn sinusoid(len: usize, phase: f64) -> Vec<f64> {
    (0..len)
        .map(|t| (2.0 * std::f64::consts::PI * (t as f64 + phase) / 12.0).sin())
        .collect()
}

fn seasonal_pattern() -> Outcome {
    let tok = default_tokenizer();
    let corpus: Vec<Vec<u32>> = (0..12)
        .map(|p| tok.training_example(&obs(&sinusoid(600, p as f64))).unwrap().full_sequence())
        .collect();
    let model: CountMarkov = fit_markov(&corpus, 2, 1e-3, tok.vocab().size()).map_err(|e| e.to_string())?;
    let (h, c) = (24, 504);
    let full = sinusoid(c + h, 5.0);
    let ctx = TimeSeries::from_values("sin", &full[..c]).unwrap();
    let fs = forecast(&model, &ctx, h, 20, &tok, &mut ChaCha8Rng::seed_from_u64(9)).map_err(|e| e.to_string())?;
    let q = samples_to_quantiles(&fs, &[0.5]).map_err(|e| e.to_string())?;
    let median = q.median().unwrap();
    let actual = &full[c..];
    let mae = median.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / h as f64;
    let naive_point = naive(&ctx.values, h).map_err(|e| e.to_string())?;
    let naive_mae = naive_point.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / h as f64;
    let beats_naive = mae < naive_mae;
    let model_mase = mase(median, actual, &ctx.values, 12);
    let naive_mase = mase(&naive_point, actual, &ctx.values, 12);
    let detail = format!(
        "MAE model {mae:.2e} vs naive {naive_mae:.3}; MASE(S=12) model {} vs naive {}",
        model_mase.as_ref().map_or_else(|e| format!("undefined ({e})"), |v| format!("{v:.3e}")),
        naive_mase.as_ref().map_or_else(|e| format!("undefined ({e})"), |v| format!("{v:.3e}")),
    );
    ensure(beats_naive, format!("model does not beat naive: {detail}"))?;
    match model_mase {
        Ok(v) if v < 0.5 => Ok(detail),
        _ => Err(detail),
    }
}

// 10 --------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tokcast"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`tokcast {}` failed: {}",
            args.first().unwrap_or(&""),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn write_source_dataset(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut text = String::new();
    for i in 0..8 {
        let level = rng.random_range(5.0..50.0);
        let v: Vec<f64> = (0..300)
            .map(|t| level + (t as f64 * std::f64::consts::PI / 12.0).sin() * level / 4.0 + rng.random::<f64>())
            .collect();
        let ts = TimeSeries::new(format!("item{i}"), "H", 0, obs(&v)).unwrap();
        text.push_str(&serde_json::to_string(&ts).unwrap());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn pipeline(dir: &Path, source: &Path) -> std::result::Result<Vec<u8>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let src = source.to_string_lossy().into_owned();
    let small = [
        "--set", "kernelsynth.length=64",
        "--set", "tsmixup.min_length=32",
        "--set", "tsmixup.max_length=96",
        "--set", "tokenizer.prediction_length=24",
        "--set", "model.smoothing=0.01",
    ];
    let with = |base: &[&str]| -> Vec<String> {
        base.iter().chain(small.iter()).map(|s| s.to_string()).collect()
    };
    let call = |args: Vec<String>| run_cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    call(with(&["generate", "--kind", "mixed", "--n", "10000", "--seed", "42", "--mix-ratio", "0.9", "--dataset", &src, "--out", &p("corpus.jsonl")]))?;
    call(with(&["train", "--corpus", &p("corpus.jsonl"), "--seed", "42", "--out", &p("model.json")]))?;
    call(with(&["forecast", "--dataset", &src, "--model", &p("model.json"), "--seed", "42", "--out", &p("fc.csv")]))?;
    let fc = format!("markov={}", p("fc.csv"));
    call(with(&["evaluate", "--dataset", &src, "--forecast", &fc, "--seed", "42", "--out", &p("report.json")]))?;
    std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())
}

fn end_to_end_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let source = root.path().join("source.jsonl");
    write_source_dataset(&source);
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    std::fs::create_dir(&a).unwrap();
    std::fs::create_dir(&b).unwrap();
    let r1 = pipeline(&a, &source)?;
    let r2 = pipeline(&b, &source)?;
    ensure(r1 == r2, "report JSON differs between identical runs")?;
    let corpus = std::fs::read_to_string(a.join("corpus.jsonl")).unwrap();
    let kinds: Vec<serde_json::Value> = corpus.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mixup = kinds.iter().filter(|v| v["kind"] == "tsmixup").count();
    let frac = mixup as f64 / kinds.len() as f64;
    ensure(kinds.len() == 10_000, format!("corpus has {} records", kinds.len()))?;
    ensure((frac - 0.9).abs() <= 0.01, format!("TSMixup fraction {frac}"))?;
    Ok(format!("report {} bytes identical across runs; TSMixup fraction {frac:.4}", r1.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("quantization roundtrip", quantization_roundtrip, Duration::from_secs(1)),
        ("scale invariance", scale_invariance, Duration::from_secs(10)),
        ("dirichlet / tsmixup", dirichlet_and_tsmixup, Duration::from_secs(10)),
        ("gaussian process correctness", gp_correctness, Duration::from_secs(60)),
        ("cross-entropy correctness", cross_entropy_correctness, Duration::from_secs(10)),
        ("metric oracles", metric_oracles, Duration::from_secs(5)),
        ("protocol invariants", protocol_invariants, Duration::from_secs(5)),
        ("noise interval coverage", noise_interval_coverage, Duration::from_secs(120)),
        ("seasonal pattern", seasonal_pattern, Duration::from_secs(60)),
        ("end-to-end determinism", end_to_end_determinism, Duration::from_secs(180)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > *budget => Err(format!("{d} — exceeded {budget:?} budget")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] criterion {:>2} {name} ({:.2}s): {detail}", i + 1, took.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
