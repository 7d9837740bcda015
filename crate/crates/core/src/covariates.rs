//! Time features: the series "age" plus calendar fields for the panel's
//! granularity, encoded as plain numbers and standardized.
//!
//! | granularity | features                         |
//! |-------------|----------------------------------|
//! | hourly      | age, hour-of-day, day-of-week    |
//! | daily       | age, day-of-week                 |
//! | weekly      | age, ISO week-of-year            |
//! | monthly     | age, month-of-year               |
//!
//! Age is the step index relative to the first observation and is negative
//! in the zero-padded region before a series starts. Day-of-week counts from
//! Monday = 0; month-of-year runs 1..=12.

use alloc::vec::Vec;

use chrono::{Datelike, NaiveDateTime, Timelike};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::series::{Granularity, Panel, TimeSeries};

pub fn feature_names(granularity: Granularity) -> &'static [&'static str] {
    match granularity {
        Granularity::Hourly => &["age", "hour_of_day", "day_of_week"],
        Granularity::Daily => &["age", "day_of_week"],
        Granularity::Weekly => &["age", "week_of_year"],
        Granularity::Monthly => &["age", "month_of_year"],
    }
}

pub fn feature_dim(granularity: Granularity) -> usize {
    feature_names(granularity).len()
}

/// Unstandardized features for a step with the given age and timestamp.
pub fn raw_features(granularity: Granularity, age: i64, time: NaiveDateTime, out: &mut Vec<f64>) {
    out.clear();
    out.push(age as f64);
    match granularity {
        Granularity::Hourly => {
            out.push(time.hour() as f64);
            out.push(time.weekday().num_days_from_monday() as f64);
        }
        Granularity::Daily => out.push(time.weekday().num_days_from_monday() as f64),
        Granularity::Weekly => out.push(time.iso_week().week() as f64),
        Granularity::Monthly => out.push(time.month() as f64),
    }
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; dim],
            std: alloc::vec![1.0; dim],
        }
    }

    /// Statistics over every in-range step (age `0..len`) of every series
    /// in the panel. Constant features keep unit scale.
    pub fn fit(panel: &Panel) -> Self {
        let g = panel.granularity();
        let d = feature_dim(g);
        let mut n = 0.0;
        let mut mean = alloc::vec![0.0; d];
        let mut m2 = alloc::vec![0.0; d];
        let mut buf = Vec::with_capacity(d);
        // Welford, in fixed series/step order
        for s in panel.series() {
            for t in 0..s.len() as i64 {
                raw_features(g, t, s.time_at(t), &mut buf);
                n += 1.0;
                for k in 0..d {
                    let delta = buf[k] - mean[k];
                    mean[k] += delta / n;
                    m2[k] += delta * (buf[k] - mean[k]);
                }
            }
        }
        let std = m2
            .iter()
            .map(|&m| {
                let sd = if n > 0.0 { (m / n).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Standardized covariates for `len` steps of `series` beginning at step
/// `start_offset` (which may be negative). Rows are time steps.
pub fn build_covariates(
    series: &TimeSeries,
    start_offset: i64,
    len: usize,
    standardizer: &Standardizer,
) -> Result<Matrix> {
    let g = series.granularity;
    let d = feature_dim(g);
    if standardizer.dim() != d {
        return Err(Error::Shape {
            what: "standardizer",
            expected: d,
            got: standardizer.dim(),
        });
    }
    let mut m = Matrix::zeros(len, d);
    let mut buf = Vec::with_capacity(d);
    for k in 0..len {
        let age = start_offset + k as i64;
        raw_features(g, age, series.time_at(age), &mut buf);
        standardizer.apply(&mut buf);
        m.row_mut(k).copy_from_slice(&buf);
    }
    Ok(m)
}
