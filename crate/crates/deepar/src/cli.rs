use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use deepar_core::forecast::{check_level, forecast, ForecastRequest, DEFAULT_NUM_SAMPLES};
use deepar_core::metrics::{
    default_coverage_levels, evaluate, parse_spans, window_starts, BacktestReport, BacktestSpec, EvalItem,
    EvalSpec,
};
use deepar_core::stats::velocity_histogram;
use deepar_core::trainer::{grid_candidates, grid_search, train_logged};
use deepar_core::TrainLog;
use log::info;
use serde_json::{json, Value};

use crate::clock::WallClock;
use crate::config::{self, RunConfig};
use crate::data::{format_timestamp, load_panel, parse_timestamp};
use crate::error::{Error, Result};
use crate::forecasts::{self, ForecastRecord};
use crate::manifest::{digest_file, manifest_path, now_utc, write_atomic, RunManifest};
use crate::model_file;
use crate::parallel::Rayon;
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "deepar", version, about = "Probabilistic forecasting with an autoregressive recurrent network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a panel.
    Train(TrainArgs),
    /// Draw sample paths and quantiles for every series.
    Predict(PredictArgs),
    /// Score forecasts against ground truth.
    Evaluate(EvaluateArgs),
    /// Histogram of series velocities on a log10 scale.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Search the config's `grid_hidden_units` × `grid_embedding_dim`.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Training log; defaults to `<output>.log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Defaults to the model's prediction length.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_NUM_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value = "0.5,0.9")]
    pub quantiles: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include the full sample matrix in every record.
    #[arg(long)]
    pub emit_samples: bool,
    /// First forecast timestamp; by default forecasts start after each
    /// series ends, or end at it when `--windows` > 1.
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub windows: usize,
    /// Steps between rolling windows; defaults to the horizon.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub forecasts: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// `lead:length` pairs.
    #[arg(long, default_value = "0:1")]
    pub spans: String,
    #[arg(long, default_value = "0.5,0.9")]
    pub quantiles: String,
    /// Also report the loss summed over the first K steps.
    #[arg(long)]
    pub all_k: Option<usize>,
    /// Spans for coverage curves; needs forecasts made with --emit-samples.
    #[arg(long)]
    pub coverage: Option<String>,
    /// Report every rolling window separately as well as pooled.
    #[arg(long)]
    pub rolling: bool,
    /// Writes `<prefix>.json`, `<prefix>.txt` and `<prefix>.coverage.tsv`;
    /// prints the table when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub bucket_width: f64,
    /// Prints to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a, argv),
        Command::Predict(a) => cmd_predict(&a, argv),
        Command::Evaluate(a) => cmd_evaluate(&a, argv),
        Command::Stats(a) => cmd_stats(&a, argv),
    }
}

fn executor(workers: usize) -> Result<Rayon> {
    if workers == 0 {
        return Err(Error::Invalid("--workers must be at least 1".into()));
    }
    Rayon::new(workers).map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))
}

fn parse_levels(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let l: f64 = part
            .parse()
            .map_err(|_| Error::Invalid(format!("bad quantile level `{part}`")))?;
        check_level(l)?;
        if !out.contains(&l) {
            out.push(l);
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid("no quantile levels given".into()));
    }
    Ok(out)
}

struct Manifest<'a> {
    command: &'static str,
    argv: &'a [String],
    started_at: String,
    config: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<&'a Path>,
}

impl<'a> Manifest<'a> {
    fn new(command: &'static str, argv: &'a [String]) -> Self {
        Self {
            command,
            argv,
            started_at: now_utc(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    fn finish(self, primary: &Path, outputs: &[&Path], details: Value) -> Result<()> {
        let m = RunManifest {
            engine: concat!("deepar ", env!("CARGO_PKG_VERSION")).to_string(),
            command: self.command.to_string(),
            args: self.argv.to_vec(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
            started_at: self.started_at,
            finished_at: now_utc(),
            details,
        };
        m.write(&manifest_path(primary))
    }
}

fn log_details(log: &TrainLog) -> Value {
    json!({
        "stop": log.stop.map(|s| s.name()),
        "best_epoch": log.best.map(|i| log.records[i].epoch),
        "best_validation_nll": log.best_validation_nll(),
        "initial_validation_nll": log.initial_validation_nll(),
        "num_params": log.num_params,
        "skipped_batches": log.skipped_batches,
    })
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let RunConfig {
        train: mut cfg,
        grid_hidden_units,
        grid_embedding_dim,
    } = config::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let panel = load_panel(&a.data)?;
    panel.validate_for(cfg.kind)?;
    let exec = executor(a.workers)?;
    let clock = WallClock::start();

    let mut manifest = Manifest::new("train", argv);
    manifest.inputs = vec![&a.data, &a.config];
    manifest.seeds.insert("seed".into(), cfg.seed);
    for (k, v) in config::snapshot(&cfg) {
        manifest.set(k, v);
    }

    let (model, log, grid) = if a.grid {
        let hidden = if grid_hidden_units.is_empty() { vec![cfg.hidden] } else { grid_hidden_units };
        let emb = if grid_embedding_dim.is_empty() { vec![cfg.embedding_dim] } else { grid_embedding_dim };
        manifest.set("grid_hidden_units", join(&hidden));
        manifest.set("grid_embedding_dim", join(&emb));
        let candidates = grid_candidates(&cfg, &hidden, &emb)?;
        let result = grid_search(&panel, &candidates, &exec, &clock)?;
        let grid = json!({
            "best": result.best,
            "candidates": result.candidates.iter().map(|c| json!({
                "hidden_units": c.config.hidden,
                "embedding_dim": c.config.embedding_dim,
                "num_params": c.num_params,
                "validation_nll": c.validation_nll,
                "error": c.error,
            })).collect::<Vec<_>>(),
        });
        (result.model, result.log, Some(grid))
    } else {
        let (result, log) = train_logged(&panel, &cfg, &exec, &clock);
        match result {
            Ok(m) => (m, log, None),
            Err(e) => {
                // keep the log around for diagnosis
                let log_path = a.log.clone().unwrap_or_else(|| suffixed(&a.output, ".log.tsv"));
                let _ = write_atomic(&log_path, report::train_log_tsv(&log).as_bytes());
                return Err(e.into());
            }
        }
    };
    info!("training stopped: {:?}", log.stop);

    write_atomic(&a.output, &model_file::encode(&model))?;
    let log_path = a.log.clone().unwrap_or_else(|| suffixed(&a.output, ".log.tsv"));
    write_atomic(&log_path, report::train_log_tsv(&log).as_bytes())?;
    let mut details = log_details(&log);
    if let Some(g) = grid {
        details["grid"] = g;
    }
    manifest.finish(&a.output, &[&a.output, &log_path], details)
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_predict(a: &PredictArgs, argv: &[String]) -> Result<()> {
    let model = model_file::load(&a.model)?;
    let panel = load_panel(&a.data)?;
    if panel.is_empty() {
        return Err(deepar_core::Error::EmptyPanel.into());
    }
    panel.validate_for(model.kind())?;
    if panel.granularity() != model.config.granularity {
        return Err(Error::Invalid(format!(
            "data has granularity {} but the model was trained on {}",
            panel.granularity().code(),
            model.config.granularity.code()
        )));
    }
    let levels = parse_levels(&a.quantiles)?;
    let horizon = a.horizon.unwrap_or(model.config.spec.prediction);
    if horizon == 0 || a.samples == 0 || a.windows == 0 {
        return Err(Error::Invalid("--horizon, --samples and --windows must be positive".into()));
    }
    let start = match &a.start {
        Some(s) => Some(parse_timestamp(s).ok_or_else(|| Error::Invalid(format!("bad --start `{s}`")))?),
        None => None,
    };
    let stride = a.stride.unwrap_or(horizon);
    let exec = executor(a.workers)?;

    let rolling = BacktestSpec {
        windows: a.windows,
        stride,
        horizon,
        start,
        seed: a.seed,
        eval: EvalSpec::new(Vec::new(), Vec::new()),
    };
    let mut records = Vec::new();
    for (i, s) in panel.series().iter().enumerate() {
        let starts = if start.is_none() && a.windows == 1 {
            vec![s.len()]
        } else {
            window_starts(s, &rolling)?
        };
        for (w, &t0) in starts.iter().enumerate() {
            let req = ForecastRequest {
                start: t0,
                horizon,
                num_samples: a.samples,
                seed: deepar_core::metrics::forecast_seed(a.seed, i, w),
            };
            let samples = forecast(s, &model, &req, &exec)?;
            records.push(ForecastRecord::new(&samples, s.granularity, w, &levels, a.emit_samples)?);
        }
    }
    write_atomic(&a.output, &forecasts::to_jsonl(&records)?)?;

    let mut manifest = Manifest::new("predict", argv);
    manifest.inputs = vec![&a.model, &a.data];
    manifest.seeds.insert("seed".into(), a.seed);
    manifest.set("horizon", horizon);
    manifest.set("samples", a.samples);
    manifest.set("quantiles", levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","));
    manifest.set("emit_samples", a.emit_samples);
    manifest.set("windows", a.windows);
    manifest.set("stride", stride);
    if let Some(t) = start {
        manifest.set("start", format_timestamp(t));
    }
    manifest.finish(&a.output, &[&a.output], json!({ "records": records.len() }))
}

fn align(records: &[ForecastRecord], truth: &deepar_core::Panel) -> Result<Vec<(usize, EvalItem)>> {
    let by_id: HashMap<&str, &deepar_core::TimeSeries> = truth.series().iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = Vec::with_capacity(records.len());
    for (n, r) in records.iter().enumerate() {
        let line = n + 1;
        let s = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::Invalid(format!("forecast {line}: no truth series with id `{}`", r.id)))?;
        if r.freq != s.granularity.code() {
            return Err(Error::Invalid(format!(
                "forecast {line} (`{}`): freq {} but truth has {}",
                r.id,
                r.freq,
                s.granularity.code()
            )));
        }
        let start = parse_timestamp(&r.start)
            .ok_or_else(|| Error::Invalid(format!("forecast {line} (`{}`): bad start `{}`", r.id, r.start)))?;
        let t0 = s
            .granularity
            .periods_between(s.start, start)
            .filter(|&t| t >= 0)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "forecast {line} (`{}`): start {} is not a step of the truth series (which starts {})",
                    r.id,
                    r.start,
                    format_timestamp(s.start)
                ))
            })? as usize;
        let h = r.horizon();
        if t0 + h > s.len() {
            return Err(Error::Invalid(format!(
                "forecast {line} (`{}`): {h} steps from {} run past the end of the truth series",
                r.id, r.start
            )));
        }
        let truth_values = s.target[t0..t0 + h]
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| {
                    Error::Invalid(format!(
                        "forecast {line} (`{}`): truth is missing at {}",
                        r.id,
                        format_timestamp(s.time_at((t0 + k) as i64))
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((
            r.window,
            EvalItem {
                id: r.id.clone(),
                truth: truth_values,
                predictive: r.predictive()?,
            },
        ));
    }
    Ok(out)
}

fn cmd_evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let records = forecasts::load(&a.forecasts)?;
    let truth = load_panel(&a.truth)?;
    let mut spec = EvalSpec::new(parse_spans(&a.spans)?, parse_levels(&a.quantiles)?);
    spec.all_k = a.all_k;
    if let Some(c) = &a.coverage {
        spec.coverage_spans = parse_spans(c)?;
        spec.coverage_levels = default_coverage_levels();
    }
    let items = align(&records, &truth)?;

    let (json_out, text, pooled) = if a.rolling {
        let windows = items.iter().map(|(w, _)| *w).max().unwrap_or(0) + 1;
        let mut grouped: Vec<Vec<EvalItem>> = vec![Vec::new(); windows];
        for (w, item) in &items {
            grouped[*w].push(item.clone());
        }
        let reports = grouped
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| evaluate(g, &spec))
            .collect::<deepar_core::Result<Vec<_>>>()?;
        let all: Vec<EvalItem> = items.into_iter().map(|(_, i)| i).collect();
        let bt = BacktestReport {
            windows: reports,
            pooled: evaluate(&all, &spec)?,
        };
        (report::backtest_json(&bt), report::backtest_text(&bt), bt.pooled)
    } else {
        let all: Vec<EvalItem> = items.into_iter().map(|(_, i)| i).collect();
        let r = evaluate(&all, &spec)?;
        (report::metric_json(&r), report::metric_text(&r), r)
    };

    let Some(prefix) = &a.output else {
        print!("{text}");
        return Ok(());
    };
    let json_path = suffixed(prefix, ".json");
    let text_path = suffixed(prefix, ".txt");
    let cov_path = suffixed(prefix, ".coverage.tsv");
    let mut body = serde_json::to_vec_pretty(&json_out).map_err(|e| Error::Runtime(e.to_string()))?;
    body.push(b'\n');
    write_atomic(&json_path, &body)?;
    write_atomic(&text_path, text.as_bytes())?;
    write_atomic(&cov_path, report::coverage_tsv(&pooled).as_bytes())?;

    let mut manifest = Manifest::new("evaluate", argv);
    manifest.inputs = vec![&a.forecasts, &a.truth];
    manifest.set("spans", &a.spans);
    manifest.set("quantiles", &a.quantiles);
    manifest.set("rolling", a.rolling);
    if let Some(k) = a.all_k {
        manifest.set("all_k", k);
    }
    if let Some(c) = &a.coverage {
        manifest.set("coverage", c);
    }
    manifest.finish(prefix, &[&json_path, &text_path, &cov_path], Value::Null)
}

fn cmd_stats(a: &StatsArgs, argv: &[String]) -> Result<()> {
    let panel = load_panel(&a.data)?;
    let buckets = velocity_histogram(&panel, a.bucket_width)?;
    let table = report::histogram_tsv(&buckets, a.bucket_width);
    let Some(out) = &a.output else {
        print!("{table}");
        return Ok(());
    };
    write_atomic(out, table.as_bytes())?;
    let mut manifest = Manifest::new("stats", argv);
    manifest.inputs = vec![&a.data];
    manifest.set("bucket_width", a.bucket_width);
    manifest.finish(out, &[out], json!({ "series": panel.len(), "buckets": buckets.len() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_are_validated_and_deduplicated() {
        assert_eq!(parse_levels("0.5, 0.9,0.5").unwrap(), vec![0.5, 0.9]);
        assert!(parse_levels("1.5").is_err());
        assert!(parse_levels("").is_err());
        assert!(parse_levels("x").is_err());
    }

    #[test]
    fn missing_required_flag_is_a_usage_error() {
        assert_eq!(run(["deepar", "train", "--config", "c", "--output", "o"]), 2);
    }
}
