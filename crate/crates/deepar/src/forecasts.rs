//! Forecast JSON lines: one object per series (and rolling window) with
//! `id`, `start`, `freq`, `window`, `seed`, `num_samples`, a `quantiles`
//! map from level to per-step values and, optionally, the raw `samples`
//! matrix (one array per path).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use deepar_core::forecast::{quantiles, ForecastSamples, QuantileForecast};
use deepar_core::linalg::Matrix;
use deepar_core::metrics::Predictive;
use deepar_core::Granularity;
use serde::{Deserialize, Serialize};

use crate::data::{format_timestamp, parse_timestamp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRecord {
    pub id: String,
    pub start: String,
    pub freq: String,
    pub window: usize,
    pub seed: u64,
    pub num_samples: usize,
    pub quantiles: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<f64>>>,
}

pub fn level_key(level: f64) -> String {
    format!("{level}")
}

impl ForecastRecord {
    pub fn new(
        samples: &ForecastSamples,
        granularity: Granularity,
        window: usize,
        levels: &[f64],
        emit_samples: bool,
    ) -> Result<Self> {
        let q = quantiles(samples, levels)?;
        Ok(Self {
            id: samples.id.clone(),
            start: format_timestamp(samples.start),
            freq: granularity.code().to_string(),
            window,
            seed: samples.seed,
            num_samples: samples.num_samples(),
            quantiles: q
                .levels
                .iter()
                .zip(q.values)
                .map(|(&l, v)| (level_key(l), v))
                .collect(),
            samples: emit_samples.then(|| (0..samples.num_samples()).map(|p| samples.paths.row(p).to_vec()).collect()),
        })
    }

    pub fn horizon(&self) -> usize {
        match &self.samples {
            Some(s) => s.first().map_or(0, Vec::len),
            None => self.quantiles.values().next().map_or(0, Vec::len),
        }
    }

    pub fn predictive(&self) -> Result<Predictive> {
        let start = parse_timestamp(&self.start)
            .ok_or_else(|| Error::Invalid(format!("forecast `{}` has a bad start `{}`", self.id, self.start)))?;
        let h = self.horizon();
        if let Some(rows) = &self.samples {
            if rows.is_empty() || rows.iter().any(|r| r.len() != h) {
                return Err(Error::Invalid(format!("forecast `{}` has a ragged sample matrix", self.id)));
            }
            let paths = Matrix::from_vec(rows.len(), h, rows.concat())?;
            return Ok(Predictive::Samples(ForecastSamples {
                id: self.id.clone(),
                start,
                seed: self.seed,
                paths,
            }));
        }
        let mut levels = Vec::new();
        let mut values = Vec::new();
        for (k, v) in &self.quantiles {
            let l: f64 = k
                .parse()
                .map_err(|_| Error::Invalid(format!("forecast `{}` has a bad quantile key `{k}`", self.id)))?;
            if v.len() != h {
                return Err(Error::Invalid(format!("forecast `{}` has quantile arrays of different lengths", self.id)));
            }
            levels.push(l);
            values.push(v.clone());
        }
        Ok(Predictive::Quantiles(QuantileForecast { levels, values }))
    }
}

pub fn to_jsonl(records: &[ForecastRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Runtime(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<ForecastRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?);
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("{}: no forecasts", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn samples() -> ForecastSamples {
        ForecastSamples {
            id: "a".into(),
            start: NaiveDate::from_ymd_opt(2020, 2, 3).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            seed: 42,
            paths: Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.1 + 0.2]).unwrap(),
        }
    }

    #[test]
    fn only_requested_quantiles_are_written() {
        let r = ForecastRecord::new(&samples(), Granularity::Daily, 0, &[0.5], false).unwrap();
        assert_eq!(r.quantiles.len(), 1);
        assert!(r.quantiles.contains_key("0.5"));
        let text = String::from_utf8(to_jsonl(&[r]).unwrap()).unwrap();
        assert!(!text.contains("\"samples\""));
    }

    #[test]
    fn samples_round_trip_exactly() {
        let s = samples();
        let r = ForecastRecord::new(&s, Granularity::Daily, 1, &[0.1, 0.9], true).unwrap();
        let text = to_jsonl(std::slice::from_ref(&r)).unwrap();
        let back: ForecastRecord = serde_json::from_slice(&text[..text.len() - 1]).unwrap();
        assert_eq!(back, r);
        match back.predictive().unwrap() {
            Predictive::Samples(p) => assert_eq!(p, s),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn json_lines_round_trip_bit_exact(
            rows in 1usize..5,
            values in proptest::collection::vec(0.0f64..1e9, 12),
            seed in any::<u64>(),
        ) {
            let cols = values.len() / rows;
            let mut s = samples();
            s.seed = seed;
            s.paths = Matrix::from_vec(rows, cols, values[..rows * cols].to_vec()).unwrap();
            let r = ForecastRecord::new(&s, Granularity::Weekly, 2, &[0.25, 0.5], true).unwrap();
            let text = to_jsonl(std::slice::from_ref(&r)).unwrap();
            let back: ForecastRecord = serde_json::from_slice(&text).unwrap();
            prop_assert_eq!(&back, &r);
            match back.predictive().unwrap() {
                Predictive::Samples(p) => prop_assert_eq!(p, s),
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }
}
