//! Command-line front end: `generate`, `tokenize`, `train`, `forecast`,
//! `evaluate` and `report`.
//!
//! Machine-readable outputs go to files (written atomically); commands print a
//! short human-readable summary to stdout. Outputs that cannot carry metadata
//! themselves (JSON Lines, CSV) get a `<out>.meta.json` sidecar with the seed
//! and the resolved configuration.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{as_quantile_forecast, naive, seasonal_naive, SeasonalityTable};
use crate::config::{ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, render_table, report_csv, EvalReport, Submission};
use crate::forecaster::{forecast, samples_to_quantiles, QuantileForecast};
use crate::kernelsynth::{kernelsynth_generate, KernelBank};
use crate::models::{fit_markov, train_linear, AnyModel, ModelFile};
use crate::rng::derive_rng;
use crate::series_io::{
    load_dataset, read_corpus, read_forecasts, split_context_target, write_atomic, write_forecasts,
    write_jsonl, CorpusRecord, Dataset,
};
use crate::tokenizer::{TokenSeq, Tokenizer, TrainingExample};
use crate::tsmixup::tsmixup_sample;

#[derive(Debug, Parser)]
#[command(name = "tokcast", version, about = "Forecast time series with next-token models over quantized values")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a training corpus of TSMixup and/or KernelSynth series.
    Generate(GenerateArgs),
    /// Tokenize the series of a corpus or dataset.
    Tokenize(TokenizeArgs),
    /// Fit a next-token model on a corpus.
    Train(TrainArgs),
    /// Forecast the held-out horizon of every series in a dataset.
    Forecast(ForecastArgs),
    /// Score forecast files against a dataset.
    Evaluate(EvaluateArgs),
    /// Render an evaluation report as a table and plotting CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenerateKind {
    Tsmixup,
    Kernelsynth,
    Mixed,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: GenerateKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Source datasets for TSMixup (repeatable).
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    /// Probability that a record of a mixed corpus is TSMixup.
    #[arg(long)]
    mix_ratio: Option<f64>,
    /// Store the composed kernel expression with each KernelSynth record.
    #[arg(long)]
    emit_kernel: bool,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    SeasonalNaive,
    Naive,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Held-out horizon H (defaults to tokenizer.prediction_length).
    #[arg(long)]
    prediction_length: Option<usize>,
    /// Season length S (defaults to the frequency table, else 1).
    #[arg(long)]
    seasonality: Option<usize>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Serialized model from `train`.
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    model: Option<PathBuf>,
    /// Use a built-in point baseline instead of a model.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Dataset files (repeatable).
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    /// `MODEL=PATH`, or `MODEL@DATASET=PATH` with several datasets.
    #[arg(long = "forecast")]
    forecasts: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Recorded in the report metadata.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    data: DatasetArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Write the plotting CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Command::Generate(g) = &cli.command {
        if let Some(r) = g.mix_ratio {
            cfg.mix_ratio = r;
        }
    }
    cfg.validate()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Generate(a) => cmd_generate(a, &cfg),
        Command::Tokenize(a) => cmd_tokenize(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Forecast(a) => cmd_forecast(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::Report(a) => cmd_report(a),
    })
}

fn metadata(command: &str, seed: Option<u64>, cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut m = cfg.entries();
    m.insert("command".into(), command.into());
    m.insert(
        "seed".into(),
        seed.map_or_else(|| "none".to_string(), |s| s.to_string()),
    );
    m
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn write_sidecar(out: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(meta).map_err(|e| Error::Validation(e.to_string()))?;
    json.push(b'\n');
    write_atomic(sidecar_path(out), &json)
}

/// Whether record `index` of a mixed corpus is a TSMixup draw. Consumes the
/// first value of the record's stream.
pub fn mixed_record_is_tsmixup<R: Rng + ?Sized>(ratio: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < ratio
}

fn data_source(path: &Path) -> Result<Dataset> {
    load_dataset(path, 1, 1)
}

fn cmd_generate(args: &GenerateArgs, cfg: &RunConfig) -> Result<()> {
    let needs_sources = match args.kind {
        GenerateKind::Tsmixup => true,
        GenerateKind::Mixed => cfg.mix_ratio > 0.0,
        GenerateKind::Kernelsynth => false,
    };
    let datasets = args
        .datasets
        .iter()
        .map(|p| data_source(p))
        .collect::<Result<Vec<_>>>()?;
    if needs_sources && datasets.is_empty() {
        return Err(Error::Config("TSMixup generation needs at least one --dataset".into()));
    }
    let bank = KernelBank::default();
    let records = (0..args.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(args.seed, &[i as u64]);
            let use_mixup = match args.kind {
                GenerateKind::Tsmixup => true,
                GenerateKind::Kernelsynth => false,
                GenerateKind::Mixed => mixed_record_is_tsmixup(cfg.mix_ratio, &mut rng),
            };
            if use_mixup {
                let values = tsmixup_sample(&datasets, &cfg.tsmixup, &mut rng)?;
                Ok(CorpusRecord {
                    id: format!("tsmixup-{i}"),
                    kind: "tsmixup".into(),
                    target: values.into_iter().map(Some).collect(),
                    kernel: None,
                })
            } else {
                let s = kernelsynth_generate(&bank, &cfg.kernelsynth, &mut rng)?;
                Ok(CorpusRecord {
                    id: format!("kernelsynth-{i}"),
                    kind: "kernelsynth".into(),
                    target: s.values.into_iter().map(Some).collect(),
                    kernel: args.emit_kernel.then(|| s.kernel.to_string()),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&args.out, &records)?;
    write_sidecar(&args.out, &metadata("generate", Some(args.seed), cfg))?;
    let mixup = records.iter().filter(|r| r.kind == "tsmixup").count();
    println!(
        "wrote {} series ({} tsmixup, {} kernelsynth) to {}",
        records.len(),
        mixup,
        records.len() - mixup,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TokenRecord {
    index: usize,
    tokens: Vec<u32>,
    scale: f64,
}

fn cmd_tokenize(args: &TokenizeArgs, cfg: &RunConfig) -> Result<()> {
    let tokenizer = Tokenizer::new(cfg.tokenizer.clone())?;
    let corpus = read_corpus(&args.input)?;
    let records = corpus
        .par_iter()
        .enumerate()
        .map(|(index, values)| {
            let TokenSeq { tokens, scale } = tokenizer.tokenize_context(values)?;
            Ok(TokenRecord { index, tokens, scale })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&args.out, &records)?;
    write_sidecar(&args.out, &metadata("tokenize", None, cfg))?;
    println!("tokenized {} series to {}", records.len(), args.out.display());
    Ok(())
}

fn training_examples(tokenizer: &Tokenizer, path: &Path) -> Result<Vec<TrainingExample>> {
    let corpus = read_corpus(path)?;
    let mut skipped = 0;
    let mut out = Vec::with_capacity(corpus.len());
    for values in &corpus {
        match tokenizer.training_example(values) {
            Ok(ex) => out.push(ex),
            Err(Error::Validation(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        println!("skipped {skipped} series too short or with missing label values");
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "{} contains no usable training series",
            path.display()
        )));
    }
    Ok(out)
}

fn cmd_train(args: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let tokenizer = Tokenizer::new(cfg.tokenizer.clone())?;
    let examples = training_examples(&tokenizer, &args.corpus)?;
    let vocab = tokenizer.vocab().size();
    let model = match cfg.model_kind {
        ModelKind::Markov => {
            let seqs: Vec<Vec<u32>> = examples.iter().map(TrainingExample::full_sequence).collect();
            AnyModel::CountMarkov(fit_markov(&seqs, cfg.markov_order, cfg.markov_smoothing, vocab)?)
        }
        ModelKind::Linear => {
            let m = train_linear(&examples, vocab, &cfg.linear, args.seed)?;
            if let Some(l) = m.loss_trace().last() {
                println!("final mean training loss {l:.6}");
            }
            AnyModel::LinearSoftmax(m)
        }
    };
    let file = ModelFile {
        tokenizer: cfg.tokenizer.clone(),
        model,
        metadata: metadata("train", Some(args.seed), cfg),
    };
    file.save(&args.out)?;
    println!(
        "trained {} model on {} series, saved to {}",
        match cfg.model_kind {
            ModelKind::Markov => "markov",
            ModelKind::Linear => "linear",
        },
        examples.len(),
        args.out.display()
    );
    Ok(())
}

fn open_dataset(path: &Path, data: &DatasetArgs, cfg: &RunConfig) -> Result<Dataset> {
    let h = data.prediction_length.unwrap_or(cfg.tokenizer.prediction_length);
    let season = match data.seasonality {
        Some(s) => s,
        None => {
            // peek at the frequency of the first series
            let probe = load_dataset(path, 1, 1).ok();
            probe
                .and_then(|d| d.series.first().map(|s| s.frequency.clone()))
                .and_then(|f| SeasonalityTable::default().season_length(&f))
                .unwrap_or(1)
        }
    };
    load_dataset(path, h, season)
}

fn cmd_forecast(args: &ForecastArgs, cfg: &RunConfig) -> Result<()> {
    let levels = cfg.eval.levels.clone();
    let (forecasts, seed_meta, mut meta) = match (&args.model, args.baseline) {
        (Some(model_path), _) => {
            let file = ModelFile::load(model_path)?;
            let mut run_cfg = cfg.clone();
            run_cfg.tokenizer = file.tokenizer.clone();
            let dataset = open_dataset(&args.dataset, &args.data, &run_cfg)?;
            let tokenizer = Tokenizer::new(file.tokenizer.clone())?;
            let split = split_context_target(&dataset);
            let forecasts = split
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut rng = derive_rng(args.seed, &[i as u64]);
                    let samples = forecast(
                        &file.model,
                        &s.context,
                        dataset.prediction_length,
                        cfg.num_samples,
                        &tokenizer,
                        &mut rng,
                    )?;
                    samples_to_quantiles(&samples, &levels)
                })
                .collect::<Result<Vec<QuantileForecast>>>()?;
            let mut meta = metadata("forecast", Some(args.seed), &run_cfg);
            meta.insert("model_kind".into(), match file.model {
                AnyModel::CountMarkov(_) => "count_markov".into(),
                AnyModel::LinearSoftmax(_) => "linear_softmax".into(),
            });
            (forecasts, args.seed, meta)
        }
        (None, Some(baseline)) => {
            let dataset = open_dataset(&args.dataset, &args.data, cfg)?;
            let forecasts = split_context_target(&dataset)
                .iter()
                .map(|s| {
                    let point = match baseline {
                        Baseline::SeasonalNaive => {
                            seasonal_naive(&s.context.values, dataset.prediction_length, dataset.seasonality)?.values
                        }
                        Baseline::Naive => naive(&s.context.values, dataset.prediction_length)?,
                    };
                    Ok(as_quantile_forecast(&s.context.id, &point, &levels))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut meta = metadata("forecast", Some(args.seed), cfg);
            meta.insert(
                "baseline".into(),
                match baseline {
                    Baseline::SeasonalNaive => "seasonal_naive".into(),
                    Baseline::Naive => "naive".into(),
                },
            );
            (forecasts, args.seed, meta)
        }
        (None, None) => unreachable!("clap requires --model or --baseline"),
    };
    meta.insert("seed".into(), seed_meta.to_string());
    write_forecasts(&args.out, &forecasts, &levels)?;
    write_sidecar(&args.out, &meta)?;
    println!("wrote forecasts for {} series to {}", forecasts.len(), args.out.display());
    Ok(())
}

/// Parses `MODEL=PATH` or `MODEL@DATASET=PATH`.
fn parse_forecast_spec(spec: &str) -> Result<(String, Option<String>, PathBuf)> {
    let (tag, path) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--forecast expects MODEL=PATH, got '{spec}'")))?;
    let (model, dataset) = match tag.split_once('@') {
        Some((m, d)) => (m.to_string(), Some(d.to_string())),
        None => (tag.to_string(), None),
    };
    if model.is_empty() || path.is_empty() {
        return Err(Error::Config(format!("--forecast expects MODEL=PATH, got '{spec}'")));
    }
    Ok((model, dataset, PathBuf::from(path)))
}

fn cmd_evaluate(args: &EvaluateArgs, cfg: &RunConfig) -> Result<()> {
    let datasets = args
        .datasets
        .iter()
        .map(|p| open_dataset(p, &args.data, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut submissions = Vec::new();
    for spec in &args.forecasts {
        let (model, dataset, path) = parse_forecast_spec(spec)?;
        let dataset = match dataset {
            Some(d) => d,
            None if datasets.len() == 1 => datasets[0].name.clone(),
            None => {
                return Err(Error::Config(format!(
                    "--forecast '{spec}' must name its dataset as MODEL@DATASET=PATH"
                )))
            }
        };
        let forecasts = read_forecasts(&path)?;
        submissions.push(Submission {
            model,
            dataset,
            forecasts,
        });
    }
    let mut meta = metadata("evaluate", args.seed, cfg);
    meta.insert(
        "datasets".into(),
        datasets.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join(","),
    );
    let report = evaluate(&datasets, &submissions, &cfg.eval, meta)?;
    write_atomic(&args.out, report.to_json()?.as_bytes())?;
    print!("{}", render_table(&report));
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let bytes = std::fs::read(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let report: EvalReport = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: args.input.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    print!("{}", render_table(&report));
    if let Some(csv) = &args.csv {
        write_atomic(csv, report_csv(&report).as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forecast_spec_parsing() {
        assert_eq!(
            parse_forecast_spec("m=/tmp/a.csv").unwrap(),
            ("m".into(), None, PathBuf::from("/tmp/a.csv"))
        );
        assert_eq!(
            parse_forecast_spec("m@d=x.csv").unwrap(),
            ("m".into(), Some("d".into()), PathBuf::from("x.csv"))
        );
        assert!(parse_forecast_spec("nothing").is_err());
        assert!(parse_forecast_spec("=x").is_err());
    }

    #[test]
    fn sidecar_sits_next_to_output() {
        assert_eq!(sidecar_path(Path::new("/a/b/out.csv")), PathBuf::from("/a/b/out.csv.meta.json"));
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["tokcast", "frobnicate"]), 1);
        assert_eq!(run(["tokcast", "train", "--corpus", "x"]), 1);
    }

    #[test]
    fn config_errors_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.jsonl");
        let code = run([
            "tokcast".as_ref(),
            "generate".as_ref(),
            "--kind".as_ref(),
            "kernelsynth".as_ref(),
            "--n".as_ref(),
            "1".as_ref(),
            "--seed".as_ref(),
            "1".as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
            "--set".as_ref(),
            "no.such.key=1".as_ref(),
        ]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }
}
