//! Accuracy and calibration metrics, a seasonal-naive reference and
//! rolling-window backtests.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDateTime;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::forecast::{check_level, check_span, empirical_quantile, forecast, ForecastRequest, ForecastSamples, QuantileForecast};
use crate::linalg::Matrix;
use crate::model::ModelParams;
use crate::rng::{derive_seed, Stream};
use crate::series::{Panel, TimeSeries};

/// `2 (Ẑ − Z)(ρ·1[Ẑ > Z] − (1 − ρ)·1[Ẑ ≤ Z])`
pub fn quantile_loss(z: f64, z_hat: f64, rho: f64) -> f64 {
    let ind = if z_hat > z { rho } else { -(1.0 - rho) };
    2.0 * (z_hat - z) * ind
}

/// `Σ L_ρ(Zᵢ, Ẑᵢ) / Σ Zᵢ`
pub fn rho_risk(truths: &[f64], predictions: &[f64], rho: f64) -> Result<f64> {
    check_level(rho)?;
    check_aligned(truths.len(), predictions.len())?;
    let denom: f64 = truths.iter().sum();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("rho-risk: truths sum to zero"));
    }
    let num: f64 = truths
        .iter()
        .zip(predictions)
        .map(|(&z, &p)| quantile_loss(z, p, rho))
        .sum();
    Ok(num / denom)
}

/// `ND = Σ|z − ẑ| / Σ|z|` and `RMSE = √(mean (z − ẑ)²) / mean |z|` over all
/// item-steps.
pub fn nd_rmse(truths: &[f64], medians: &[f64]) -> Result<(f64, f64)> {
    check_aligned(truths.len(), medians.len())?;
    let abs_sum: f64 = truths.iter().map(|z| z.abs()).sum();
    if abs_sum == 0.0 || truths.is_empty() {
        return Err(Error::UndefinedMetric("ND/RMSE: truths are all zero"));
    }
    let n = truths.len() as f64;
    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    for (&z, &p) in truths.iter().zip(medians) {
        abs_err += (z - p).abs();
        sq_err += (z - p) * (z - p);
    }
    Ok((abs_err / abs_sum, (sq_err / n).sqrt() / (abs_sum / n)))
}

/// Fraction of items whose predicted quantile strictly exceeds the truth.
pub fn coverage_fraction(truths: &[f64], quantiles: &[f64]) -> Result<f64> {
    check_aligned(truths.len(), quantiles.len())?;
    if truths.is_empty() {
        return Err(Error::UndefinedMetric("coverage: no items"));
    }
    let hits = truths.iter().zip(quantiles).filter(|(&z, &q)| q > z).count();
    Ok(hits as f64 / truths.len() as f64)
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            what: "truth/forecast length",
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Steps `[lead, lead + length)` of the forecast horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub lead: usize,
    pub length: usize,
}

impl Span {
    pub fn new(lead: usize, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("span length must be at least 1".into()));
        }
        Ok(Self { lead, length })
    }

    pub fn end(&self) -> usize {
        self.lead + self.length
    }
}

/// Parse `"L:S,L:S,..."`.
pub fn parse_spans(text: &str) -> Result<Vec<Span>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (l, s) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("span `{part}` is not of the form L:S")))?;
        let lead = l
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad lead time in span `{part}`")))?;
        let length = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad length in span `{part}`")))?;
        out.push(Span::new(lead, length)?);
    }
    if out.is_empty() {
        return Err(Error::Config("no spans given".into()));
    }
    Ok(out)
}

/// A forecast as seen by the evaluator: raw paths or precomputed
/// per-step quantiles.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictive {
    Samples(ForecastSamples),
    Quantiles(QuantileForecast),
}

impl Predictive {
    pub fn horizon(&self) -> usize {
        match self {
            Predictive::Samples(s) => s.horizon(),
            Predictive::Quantiles(q) => q.values.first().map_or(0, |v| v.len()),
        }
    }

    pub fn samples(&self) -> Option<&ForecastSamples> {
        match self {
            Predictive::Samples(s) => Some(s),
            Predictive::Quantiles(_) => None,
        }
    }

    /// `Ẑ^ρ(L, S)`.
    pub fn span_quantile(&self, span: Span, rho: f64) -> Result<f64> {
        check_span(span.lead, span.length, self.horizon())?;
        match self {
            Predictive::Samples(s) => crate::forecast::span_aggregate(s, span.lead, span.length, rho),
            Predictive::Quantiles(q) => {
                if span.length != 1 {
                    return Err(Error::Config(format!(
                        "span {}:{} needs sample paths; rerun predict with --emit-samples",
                        span.lead, span.length
                    )));
                }
                q.level(rho).map(|v| v[span.lead]).ok_or_else(|| {
                    Error::Config(format!(
                        "forecast has no {rho} quantile; rerun predict with that level or --emit-samples"
                    ))
                })
            }
        }
    }

    /// Per-step medians.
    pub fn medians(&self) -> Result<Vec<f64>> {
        (0..self.horizon()).map(|t| self.span_quantile(Span { lead: t, length: 1 }, 0.5)).collect()
    }
}

/// Ground truth aligned with one forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub truth: Vec<f64>,
    pub predictive: Predictive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub spans: Vec<Span>,
    pub levels: Vec<f64>,
    /// Report `all(K)` for this K when set.
    pub all_k: Option<usize>,
    /// Spans for which a coverage curve is computed; needs sample paths.
    pub coverage_spans: Vec<Span>,
    pub coverage_levels: Vec<f64>,
}

impl EvalSpec {
    pub fn new(spans: Vec<Span>, levels: Vec<f64>) -> Self {
        Self {
            spans,
            levels,
            all_k: None,
            coverage_spans: Vec::new(),
            coverage_levels: default_coverage_levels(),
        }
    }
}

/// `0.1, 0.2, …, 0.9`
pub fn default_coverage_levels() -> Vec<f64> {
    (1..10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanRisk {
    pub span: Span,
    pub level: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllK {
    pub k: usize,
    pub level: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    pub span: Span,
    /// `(p, Coverage(p))`
    pub points: Vec<(f64, f64)>,
}

impl CoverageCurve {
    /// Mean `|Coverage(p) − p|`.
    pub fn calibration_error(&self) -> f64 {
        self.points.iter().map(|(p, c)| (c - p).abs()).sum::<f64>() / self.points.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub num_items: usize,
    pub risks: Vec<SpanRisk>,
    pub all_k: Vec<AllK>,
    pub nd: f64,
    pub rmse: f64,
    pub coverage: Vec<CoverageCurve>,
}

impl MetricReport {
    pub fn risk(&self, span: Span, level: f64) -> Option<f64> {
        self.risks
            .iter()
            .find(|r| r.span == span && r.level == level)
            .map(|r| r.risk)
    }
}

fn span_truths(items: &[EvalItem], span: Span) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|it| {
            check_span(span.lead, span.length, it.truth.len())?;
            Ok(it.truth[span.lead..span.end()].iter().sum())
        })
        .collect()
}

/// ρ-risk over the items for one span.
pub fn span_risk(items: &[EvalItem], span: Span, rho: f64) -> Result<f64> {
    let truths = span_truths(items, span)?;
    let preds = items
        .iter()
        .map(|it| it.predictive.span_quantile(span, rho))
        .collect::<Result<Vec<_>>>()?;
    rho_risk(&truths, &preds, rho)
}

/// Mean of the single-step risks for leads `0..k`.
pub fn all_k(items: &[EvalItem], k: usize, rho: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("all(K) needs K ≥ 1".into()));
    }
    let mut total = 0.0;
    for lead in 0..k {
        total += span_risk(items, Span { lead, length: 1 }, rho)?;
    }
    Ok(total / k as f64)
}

/// Coverage curve for one span; requires sample paths.
pub fn coverage(items: &[EvalItem], levels: &[f64], span: Span) -> Result<CoverageCurve> {
    let truths = span_truths(items, span)?;
    let mut points = Vec::with_capacity(levels.len());
    let mut sums = Vec::with_capacity(items.len());
    for it in items {
        let s = it.predictive.samples().ok_or_else(|| {
            Error::Config(format!(
                "coverage needs sample paths but forecast `{}` has none; rerun predict with --emit-samples",
                it.id
            ))
        })?;
        sums.push(s.span_sums(span.lead, span.length)?);
    }
    for &p in levels {
        let q = sums
            .iter_mut()
            .map(|v| empirical_quantile(v, p))
            .collect::<Result<Vec<_>>>()?;
        points.push((p, coverage_fraction(&truths, &q)?));
    }
    Ok(CoverageCurve { span, points })
}

pub fn evaluate(items: &[EvalItem], spec: &EvalSpec) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    for it in items {
        if it.truth.len() != it.predictive.horizon() {
            return Err(Error::Data(format!(
                "`{}`: {} truth steps but a {}-step forecast",
                it.id,
                it.truth.len(),
                it.predictive.horizon()
            )));
        }
    }
    let mut risks = Vec::new();
    for &span in &spec.spans {
        for &level in &spec.levels {
            risks.push(SpanRisk {
                span,
                level,
                risk: span_risk(items, span, level)?,
            });
        }
    }
    let mut all = Vec::new();
    if let Some(k) = spec.all_k {
        for &level in &spec.levels {
            all.push(AllK {
                k,
                level,
                risk: all_k(items, k, level)?,
            });
        }
    }
    let mut truths = Vec::new();
    let mut medians = Vec::new();
    for it in items {
        truths.extend_from_slice(&it.truth);
        medians.extend(it.predictive.medians()?);
    }
    let (nd, rmse) = nd_rmse(&truths, &medians)?;
    let coverage = spec
        .coverage_spans
        .iter()
        .map(|&s| coverage(items, &spec.coverage_levels, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        num_items: items.len(),
        risks,
        all_k: all,
        nd,
        rmse,
        coverage,
    })
}

/// `ẑ_{n+k} = z_{n+k−m·⌈(k+1)/m⌉}`: the last observed season repeated.
/// Missing history values count as zero.
pub fn seasonal_naive(history: &[Option<f64>], horizon: usize, season: usize) -> Result<Vec<f64>> {
    if season == 0 {
        return Err(Error::Config("season length must be positive".into()));
    }
    if history.len() < season {
        return Err(Error::Data(format!(
            "seasonal naive needs {season} steps of history, got {}",
            history.len()
        )));
    }
    let base = history.len() - season;
    Ok((0..horizon).map(|k| history[base + k % season].unwrap_or(0.0)).collect())
}

/// Anything that can produce a forecast for one series at a given start.
pub trait Forecaster {
    fn predict(&self, series: &TimeSeries, start: usize, horizon: usize, seed: u64) -> Result<Predictive>;
}

pub struct ModelForecaster<'a, E: Executor> {
    pub model: &'a ModelParams,
    pub num_samples: usize,
    pub exec: &'a E,
}

impl<E: Executor> Forecaster for ModelForecaster<'_, E> {
    fn predict(&self, series: &TimeSeries, start: usize, horizon: usize, seed: u64) -> Result<Predictive> {
        let req = ForecastRequest {
            start,
            horizon,
            num_samples: self.num_samples,
            seed,
        };
        forecast(series, self.model, &req, self.exec).map(Predictive::Samples)
    }
}

/// Deterministic seasonal-naive forecaster, emitted as a single path.
#[derive(Debug, Clone, Copy)]
pub struct SeasonalNaive {
    pub season: usize,
}

impl Forecaster for SeasonalNaive {
    fn predict(&self, series: &TimeSeries, start: usize, horizon: usize, seed: u64) -> Result<Predictive> {
        let start = start.min(series.len());
        let path = seasonal_naive(&series.target[..start], horizon, self.season)?;
        Ok(Predictive::Samples(ForecastSamples {
            id: series.id.clone(),
            start: series.time_at(start as i64),
            seed,
            paths: Matrix::from_vec(1, horizon, path)?,
        }))
    }
}

/// Seed for the forecast of series `index` in rolling window `window`.
pub fn forecast_seed(seed: u64, index: usize, window: usize) -> u64 {
    derive_seed(derive_seed(seed, Stream::Series, index as u64), Stream::Paths, window as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestSpec {
    pub windows: usize,
    pub stride: usize,
    pub horizon: usize,
    /// Start of the first window; by default the last window ends at each
    /// series' final step.
    pub start: Option<NaiveDateTime>,
    pub seed: u64,
    pub eval: EvalSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub windows: Vec<MetricReport>,
    /// Metrics over all (series, window) items together.
    pub pooled: MetricReport,
}

/// Forecast starts of every window for `series`.
pub fn window_starts(series: &TimeSeries, spec: &BacktestSpec) -> Result<Vec<usize>> {
    if spec.windows == 0 || spec.horizon == 0 {
        return Err(Error::Config("backtest needs at least one window and a positive horizon".into()));
    }
    if spec.windows > 1 && spec.stride == 0 {
        return Err(Error::Config("rolling windows need a positive stride".into()));
    }
    let span = spec.horizon + (spec.windows - 1) * spec.stride;
    let first: i64 = match spec.start {
        Some(ts) => series.granularity.periods_between(series.start, ts).ok_or_else(|| {
            Error::Data(format!("start {ts} is not on the grid of series `{}`", series.id))
        })?,
        None => series.len() as i64 - span as i64,
    };
    let last_end = first + span as i64;
    if first < 1 || last_end > series.len() as i64 {
        let short = (1 - first).max(last_end - series.len() as i64);
        return Err(Error::Range(format!(
            "series `{}` is {short} step(s) short for {} window(s) of {} step(s) with stride {}",
            series.id, spec.windows, spec.horizon, spec.stride
        )));
    }
    Ok((0..spec.windows).map(|w| first as usize + w * spec.stride).collect())
}

/// Re-condition `forecaster` at each window start (never refitting) and
/// score every window and the pooled set.
pub fn rolling_backtest<F: Forecaster>(panel: &Panel, forecaster: &F, spec: &BacktestSpec) -> Result<BacktestReport> {
    let mut per_window: Vec<Vec<EvalItem>> = vec![Vec::new(); spec.windows];
    for (i, s) in panel.series().iter().enumerate() {
        let starts = window_starts(s, spec)?;
        for (w, &start) in starts.iter().enumerate() {
            let truth = s.target[start..start + spec.horizon]
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    v.ok_or_else(|| {
                        Error::Data(format!("series `{}` has no truth at step {}", s.id, start + k))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let predictive = forecaster.predict(s, start, spec.horizon, forecast_seed(spec.seed, i, w))?;
            per_window[w].push(EvalItem {
                id: s.id.clone(),
                truth,
                predictive,
            });
        }
    }
    let windows = per_window
        .iter()
        .map(|items| evaluate(items, &spec.eval))
        .collect::<Result<Vec<_>>>()?;
    let pooled_items: Vec<EvalItem> = per_window.into_iter().flatten().collect();
    let pooled = evaluate(&pooled_items, &spec.eval)?;
    Ok(BacktestReport { windows, pooled })
}
