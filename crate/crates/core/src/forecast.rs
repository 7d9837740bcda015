//! Ancestral sampling and empirical quantiles.
//!
//! A forecast encodes the conditioning range once (or once per path when
//! it contains missing values, which are imputed by sampling), then rolls
//! each sample path forward by drawing from the predictive distribution and
//! feeding the draw back as the next lagged target. Path `p` uses RNG
//! substream `p`, so adding paths never changes earlier ones.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDateTime;
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::likelihood::sample;
use crate::linalg::Matrix;
use crate::model::{Encoded, ModelParams, StepScratch};
use crate::rng::{substream, Stream};
use crate::series::TimeSeries;
use crate::window::{build_window, StepMask};

pub const DEFAULT_NUM_SAMPLES: usize = 200;

/// Joint sample paths for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSamples {
    pub id: String,
    /// Timestamp of the first forecast step.
    pub start: NaiveDateTime,
    pub seed: u64,
    /// `num_samples × horizon`
    pub paths: Matrix,
}

impl ForecastSamples {
    pub fn num_samples(&self) -> usize {
        self.paths.rows()
    }

    pub fn horizon(&self) -> usize {
        self.paths.cols()
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.num_samples()).map(|p| self.paths.get(p, t)).collect()
    }

    /// Per-path sums over `[lead, lead + length)`.
    pub fn span_sums(&self, lead: usize, length: usize) -> Result<Vec<f64>> {
        check_span(lead, length, self.horizon())?;
        Ok((0..self.num_samples())
            .map(|p| self.paths.row(p)[lead..lead + length].iter().sum())
            .collect())
    }
}

/// Empirical quantiles at requested levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub levels: Vec<f64>,
    /// `values[k][t]` is the `levels[k]` quantile at step `t`.
    pub values: Vec<Vec<f64>>,
}

impl QuantileForecast {
    pub fn level(&self, rho: f64) -> Option<&[f64]> {
        self.levels.iter().position(|&l| l == rho).map(|k| self.values[k].as_slice())
    }
}

pub fn check_span(lead: usize, length: usize, horizon: usize) -> Result<()> {
    if length == 0 || lead + length > horizon {
        return Err(Error::Range(format!(
            "span [{lead}, {}) outside horizon {horizon}",
            lead + length
        )));
    }
    Ok(())
}

pub fn check_level(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("{rho}"), "quantile level must lie in (0, 1)"));
    }
    Ok(())
}

/// Zero-based nearest-rank index `⌈ρn⌉ − 1`. The small tolerance keeps
/// products such as `0.7 × 10` that land a rounding error above an integer
/// from skipping a rank.
pub fn nearest_rank_index(rho: f64, n: usize) -> usize {
    let k = (rho * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize - 1).min(n - 1)
}

/// Nearest-rank `ρ`-quantile of `values` (sorted in place).
pub fn empirical_quantile(values: &mut [f64], rho: f64) -> Result<f64> {
    check_level(rho)?;
    if values.is_empty() {
        return Err(Error::Data("no samples to take a quantile of".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(values[nearest_rank_index(rho, values.len())])
}

pub fn quantiles(samples: &ForecastSamples, levels: &[f64]) -> Result<QuantileForecast> {
    for &l in levels {
        check_level(l)?;
    }
    if samples.num_samples() == 0 {
        return Err(Error::Data(format!("series `{}` has no sample paths", samples.id)));
    }
    let n = samples.num_samples();
    let mut values = alloc::vec![Vec::with_capacity(samples.horizon()); levels.len()];
    for t in 0..samples.horizon() {
        let mut col = samples.column(t);
        col.sort_by(f64::total_cmp);
        for (k, &l) in levels.iter().enumerate() {
            values[k].push(col[nearest_rank_index(l, n)]);
        }
    }
    Ok(QuantileForecast {
        levels: levels.to_vec(),
        values,
    })
}

/// `ρ`-quantile of per-path sums over `[lead, lead + length)`.
pub fn span_aggregate(samples: &ForecastSamples, lead: usize, length: usize, rho: f64) -> Result<f64> {
    let mut sums = samples.span_sums(lead, length)?;
    empirical_quantile(&mut sums, rho)
}

/// Permute the sample dimension independently at every step.
pub fn shuffle_paths(samples: &ForecastSamples, seed: u64) -> ForecastSamples {
    let mut out = samples.clone();
    let n = samples.num_samples();
    for t in 0..samples.horizon() {
        let mut col = samples.column(t);
        col.shuffle(&mut substream(seed, Stream::Shuffle, t as u64));
        for (p, v) in col.into_iter().enumerate() {
            out.paths.set(p, t, v);
        }
    }
    debug_assert_eq!(out.num_samples(), n);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRequest {
    /// Index of the first forecast step; the series' length for a forecast
    /// past its end.
    pub start: usize,
    pub horizon: usize,
    pub num_samples: usize,
    pub seed: u64,
}

impl ForecastRequest {
    /// Forecast beyond the end of `series`.
    pub fn after(series: &TimeSeries, horizon: usize, num_samples: usize, seed: u64) -> Self {
        Self {
            start: series.len(),
            horizon,
            num_samples,
            seed,
        }
    }
}

/// Draw `num_samples` joint paths of `horizon` steps starting at
/// `request.start`, conditioned on the preceding `conditioning` steps.
pub fn forecast<E: Executor>(
    series: &TimeSeries,
    model: &ModelParams,
    request: &ForecastRequest,
    exec: &E,
) -> Result<ForecastSamples> {
    if request.horizon == 0 || request.num_samples == 0 {
        return Err(Error::Config("horizon and sample count must be positive".into()));
    }
    if series.granularity != model.config.granularity {
        return Err(Error::Data(format!(
            "series `{}` has granularity {} but the model was trained on {}",
            series.id,
            series.granularity.code(),
            model.config.granularity.code()
        )));
    }
    if request.start > series.len() {
        return Err(Error::Range(format!(
            "forecast start {} beyond the end of series `{}` ({} steps)",
            request.start,
            series.id,
            series.len()
        )));
    }
    series.validate_for(model.kind())?;
    let c = model.config.spec.conditioning;
    let offset = request.start as i64 - c as i64;
    let window = build_window(
        series,
        0,
        offset,
        c,
        c + request.horizon,
        &model.standardizer,
        model.config.scaled,
    )?;
    let cond_mask = &window.mask[..c];
    if !cond_mask.contains(&StepMask::Observed) {
        return Err(Error::Data(format!(
            "series `{}` has no observed value in its conditioning range",
            series.id
        )));
    }
    let needs_imputation = cond_mask.contains(&StepMask::Missing);
    let shared: Option<Encoded> = if needs_imputation {
        None
    } else {
        // no draws are consumed without missing values
        Some(model.encode(&window, c, &mut substream(request.seed, Stream::Imputation, 0))?)
    };

    let indices: Vec<usize> = (0..request.num_samples).collect();
    let rows = exec.map(&indices, |_, &p| -> Result<Vec<f64>> {
        let mut rng = substream(request.seed, Stream::Paths, p as u64);
        let enc = match &shared {
            Some(e) => e.clone(),
            None => model.encode(&window, c, &mut rng)?,
        };
        let mut state = enc.state;
        let mut prev = enc.last_target;
        let mut scratch = StepScratch::default();
        let mut path = Vec::with_capacity(request.horizon);
        for k in 0..request.horizon {
            let theta = model.advance(
                &mut state,
                prev,
                window.covariates.row(c + k),
                window.scale,
                window.category,
                &mut scratch,
            );
            let z = sample(&theta, &mut rng);
            path.push(z);
            prev = z;
        }
        Ok(path)
    });
    let mut data = Vec::with_capacity(request.num_samples * request.horizon);
    for r in rows {
        data.extend(r?);
    }
    Ok(ForecastSamples {
        id: series.id.clone(),
        start: series.time_at(request.start as i64),
        seed: request.seed,
        paths: Matrix::from_vec(request.num_samples, request.horizon, data)?,
    })
}
