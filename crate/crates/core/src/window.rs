//! Fixed-length training windows and the weighted window sampler.
//!
//! A window of `T = conditioning + prediction` steps is placed at a start
//! offset `s` relative to its series. Offsets may be negative: steps before
//! the series start are zero-padded and marked [`StepMask::Padded`]. A
//! placement is valid when the prediction range `[s + C, s + T)` lies inside
//! the observed span `[0, len)`, so `s ∈ [−C, len − T]`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::covariates::{build_covariates, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::series::{Panel, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    pub conditioning: usize,
    pub prediction: usize,
}

impl WindowSpec {
    pub fn new(conditioning: usize, prediction: usize) -> Result<Self> {
        if conditioning == 0 || prediction == 0 {
            return Err(Error::Config(format!(
                "window lengths must be positive (conditioning {conditioning}, prediction {prediction})"
            )));
        }
        Ok(Self {
            conditioning,
            prediction,
        })
    }

    pub fn total(&self) -> usize {
        self.conditioning + self.prediction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepMask {
    Observed,
    /// Before the series start; target is zero and counts as an observed zero in the loss.
    Padded,
    /// Missing observation; excluded from the loss and imputed when used as input.
    Missing,
}

impl StepMask {
    pub fn scored(self) -> bool {
        !matches!(self, StepMask::Missing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub series_index: usize,
    pub start_offset: i64,
    pub conditioning: usize,
    /// Targets with zeros at padded and missing steps.
    pub target: Vec<f64>,
    pub mask: Vec<StepMask>,
    /// One row per step.
    pub covariates: Matrix,
    pub scale: f64,
    pub category: u32,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// `ν = 1 + (Σ z) / n` over the conditioning range, missing and padded
/// steps contributing zero to the sum but counting in `n`.
pub fn compute_scale(conditioning: &[Option<f64>]) -> f64 {
    if conditioning.is_empty() {
        return 1.0;
    }
    1.0 + conditioning.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / conditioning.len() as f64
}

/// Slice `len` steps of `series` from `start_offset`, padding before the
/// start. Steps past the end are marked missing.
pub fn slice_target(series: &TimeSeries, start_offset: i64, len: usize) -> (Vec<f64>, Vec<StepMask>) {
    let mut target = Vec::with_capacity(len);
    let mut mask = Vec::with_capacity(len);
    for k in 0..len as i64 {
        let t = start_offset + k;
        if t < 0 {
            target.push(0.0);
            mask.push(StepMask::Padded);
        } else {
            match series.target.get(t as usize).copied().flatten() {
                Some(v) => {
                    target.push(v);
                    mask.push(StepMask::Observed);
                }
                None => {
                    target.push(0.0);
                    mask.push(StepMask::Missing);
                }
            }
        }
    }
    (target, mask)
}

/// Assemble the window of `total` steps at `start_offset` whose first
/// `conditioning` steps determine the scale. With `scaled == false` the
/// scale is fixed at 1.
pub fn build_window(
    series: &TimeSeries,
    series_index: usize,
    start_offset: i64,
    conditioning: usize,
    total: usize,
    standardizer: &Standardizer,
    scaled: bool,
) -> Result<TrainingWindow> {
    let (target, mask) = slice_target(series, start_offset, total);
    let scale = if scaled {
        let cond: Vec<Option<f64>> = target[..conditioning]
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| (m == StepMask::Observed).then_some(v))
            .collect();
        compute_scale(&cond)
    } else {
        1.0
    };
    Ok(TrainingWindow {
        series_index,
        start_offset,
        conditioning,
        target,
        mask,
        covariates: build_covariates(series, start_offset, total, standardizer)?,
        scale,
        category: series.category,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub series_index: usize,
    pub start_offset: i64,
}

#[derive(Debug, Clone)]
struct SeriesSlots {
    series_index: usize,
    first_offset: i64,
    train_count: usize,
    valid_count: usize,
}

/// Draws window placements: a series with probability proportional to its
/// whole-series scale (or uniformly), then a training placement uniformly
/// within it. The latest tenth of each series' placements is held out for
/// validation.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    spec: WindowSpec,
    slots: Vec<SeriesSlots>,
    /// Running sum of selection weights over `slots`.
    cumulative: Vec<f64>,
    skipped: Vec<usize>,
}

impl WindowSampler {
    pub fn new(panel: &Panel, spec: WindowSpec, uniform: bool) -> Result<Self> {
        let mut slots = Vec::new();
        let mut cumulative = Vec::new();
        let mut skipped = Vec::new();
        let mut total = 0.0;
        for (i, s) in panel.series().iter().enumerate() {
            if s.len() < spec.prediction {
                log::warn!(
                    "series `{}` has {} steps, fewer than the prediction length {}; skipped",
                    s.id,
                    s.len(),
                    spec.prediction
                );
                skipped.push(i);
                continue;
            }
            let count = s.len() - spec.prediction + 1;
            let valid_count = count / 10;
            let weight = if uniform { 1.0 } else { 1.0 + s.mean_with_missing_as_zero() };
            total += weight;
            slots.push(SeriesSlots {
                series_index: i,
                first_offset: -(spec.conditioning as i64),
                train_count: count - valid_count,
                valid_count,
            });
            cumulative.push(total);
        }
        if slots.is_empty() {
            return Err(Error::Data(format!(
                "no series has at least {} steps for a prediction range",
                spec.prediction
            )));
        }
        Ok(Self {
            spec,
            slots,
            cumulative,
            skipped,
        })
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    /// Indices of series with no valid placement.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    /// Selection probability of each usable series, keyed by series index.
    pub fn selection_probabilities(&self) -> Vec<(usize, f64)> {
        let total = *self.cumulative.last().unwrap();
        let mut prev = 0.0;
        self.slots
            .iter()
            .zip(&self.cumulative)
            .map(|(s, &c)| {
                let p = (c - prev) / total;
                prev = c;
                (s.series_index, p)
            })
            .collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Placement {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.slots.len() - 1);
        let slot = &self.slots[k];
        let j = rng.random_range(0..slot.train_count);
        Placement {
            series_index: slot.series_index,
            start_offset: slot.first_offset + j as i64,
        }
    }

    /// All training placements in series/offset order.
    pub fn training_placements(&self) -> Vec<Placement> {
        self.placements(|s| (0, s.train_count))
    }

    /// All held-out placements in series/offset order.
    pub fn validation_placements(&self) -> Vec<Placement> {
        self.placements(|s| (s.train_count, s.train_count + s.valid_count))
    }

    fn placements(&self, range: impl Fn(&SeriesSlots) -> (usize, usize)) -> Vec<Placement> {
        let mut out = Vec::new();
        for s in &self.slots {
            let (lo, hi) = range(s);
            for j in lo..hi {
                out.push(Placement {
                    series_index: s.series_index,
                    start_offset: s.first_offset + j as i64,
                });
            }
        }
        out
    }

    pub fn window(
        &self,
        panel: &Panel,
        placement: Placement,
        standardizer: &Standardizer,
        scaled: bool,
    ) -> Result<TrainingWindow> {
        build_window(
            &panel.series()[placement.series_index],
            placement.series_index,
            placement.start_offset,
            self.spec.conditioning,
            self.spec.total(),
            standardizer,
            scaled,
        )
    }

    /// Draw a placement and build its window.
    pub fn draw_window<R: Rng + ?Sized>(
        &self,
        panel: &Panel,
        standardizer: &Standardizer,
        scaled: bool,
        rng: &mut R,
    ) -> Result<TrainingWindow> {
        let p = self.draw(rng);
        self.window(panel, p, standardizer, scaled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use crate::series::Granularity;
    use alloc::string::ToString;
    use alloc::vec;
    use chrono::NaiveDate;

    fn series(id: &str, target: Vec<Option<f64>>) -> TimeSeries {
        TimeSeries {
            id: id.to_string(),
            start: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            granularity: Granularity::Daily,
            target,
            category: 0,
        }
    }

    fn constant(id: &str, v: f64, n: usize) -> TimeSeries {
        series(id, vec![Some(v); n])
    }

    #[test]
    fn scale_examples() {
        assert_eq!(compute_scale(&[Some(2.0), Some(4.0), Some(6.0)]), 5.0);
        assert_eq!(compute_scale(&[Some(0.0); 4]), 1.0);
        assert_eq!(compute_scale(&[Some(10.0), None, Some(2.0)]), 5.0);
    }

    #[test]
    fn spec_rejects_zero_lengths() {
        assert!(WindowSpec::new(0, 3).is_err());
        assert!(WindowSpec::new(3, 0).is_err());
        assert_eq!(WindowSpec::new(4, 2).unwrap().total(), 6);
    }

    #[test]
    fn weighted_selection_frequencies() {
        // whole-series scales 1 and 3
        let panel = Panel::new(vec![constant("a", 0.0, 20), constant("b", 2.0, 20)]).unwrap();
        let sampler = WindowSampler::new(&panel, WindowSpec::new(4, 2).unwrap(), false).unwrap();
        let mut rng = substream(1, Stream::Sampling, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| sampler.draw(&mut rng).series_index == 1).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.75).abs() < 0.01, "{f}");
        let uniform = WindowSampler::new(&panel, WindowSpec::new(4, 2).unwrap(), true).unwrap();
        let hits = (0..n).filter(|_| uniform.draw(&mut rng).series_index == 1).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn prediction_length_equal_to_series_length() {
        let panel = Panel::new(vec![series("a", vec![Some(1.0), Some(2.0), Some(3.0)])]).unwrap();
        let spec = WindowSpec::new(2, 3).unwrap();
        let sampler = WindowSampler::new(&panel, spec, false).unwrap();
        assert_eq!(
            sampler.training_placements(),
            vec![Placement {
                series_index: 0,
                start_offset: -2
            }]
        );
        let mut rng = substream(0, Stream::Sampling, 0);
        let st = Standardizer::identity(2);
        for _ in 0..10 {
            let w = sampler.draw_window(&panel, &st, true, &mut rng).unwrap();
            assert_eq!(w.target, vec![0.0, 0.0, 1.0, 2.0, 3.0]);
            assert_eq!(&w.mask[..2], &[StepMask::Padded, StepMask::Padded]);
            assert_eq!(w.scale, 1.0);
        }
    }

    #[test]
    fn short_series_are_skipped() {
        let panel = Panel::new(vec![constant("short", 1.0, 1), constant("ok", 1.0, 5)]).unwrap();
        let sampler = WindowSampler::new(&panel, WindowSpec::new(2, 2).unwrap(), false).unwrap();
        assert_eq!(sampler.skipped(), &[0]);
        let only_short = Panel::new(vec![constant("short", 1.0, 1)]).unwrap();
        assert!(WindowSampler::new(&only_short, WindowSpec::new(2, 2).unwrap(), false).is_err());
    }

    #[test]
    fn fixed_seed_gives_identical_windows() {
        let panel = Panel::new(vec![constant("a", 1.0, 30), constant("b", 4.0, 50)]).unwrap();
        let sampler = WindowSampler::new(&panel, WindowSpec::new(5, 3).unwrap(), false).unwrap();
        let draw = |seed| {
            let mut rng = substream(seed, Stream::Sampling, 0);
            (0..100).map(|_| sampler.draw(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn validation_is_the_latest_tenth() {
        let panel = Panel::new(vec![constant("a", 1.0, 40)]).unwrap();
        let spec = WindowSpec::new(5, 3).unwrap();
        let sampler = WindowSampler::new(&panel, spec, false).unwrap();
        let train = sampler.training_placements();
        let valid = sampler.validation_placements();
        // 40 - 3 + 1 = 38 placements, 3 held out
        assert_eq!(train.len(), 35);
        assert_eq!(valid.len(), 3);
        assert!(train.iter().all(|t| valid.iter().all(|v| t.start_offset < v.start_offset)));
        assert_eq!(valid.last().unwrap().start_offset, 40 - 8);
    }

    proptest::proptest! {
        #[test]
        fn windows_are_well_formed(
            len in 1usize..60,
            cond in 1usize..12,
            pred in 1usize..8,
            seed in 0u64..1000,
            missing_every in 2usize..9,
        ) {
            let target: Vec<Option<f64>> = (0..len)
                .map(|t| if t % missing_every == 1 { None } else { Some(t as f64) })
                .collect();
            let mut s = series("p", target);
            if s.observed_count() == 0 {
                s.target[0] = Some(1.0);
            }
            let panel = Panel::new(vec![s.clone()]).unwrap();
            let spec = WindowSpec::new(cond, pred).unwrap();
            let sampler = match WindowSampler::new(&panel, spec, false) {
                Ok(x) => x,
                Err(_) => {
                    proptest::prop_assert!(len < pred);
                    return Ok(());
                }
            };
            let mut rng = substream(seed, Stream::Sampling, 0);
            let st = Standardizer::identity(2);
            for _ in 0..20 {
                let w = sampler.draw_window(&panel, &st, true, &mut rng).unwrap();
                proptest::prop_assert_eq!(w.len(), spec.total());
                proptest::prop_assert_eq!(w.mask.len(), spec.total());
                proptest::prop_assert!(w.scale >= 1.0);
                // prediction range inside the series
                proptest::prop_assert!(w.start_offset + cond as i64 >= 0);
                proptest::prop_assert!(w.start_offset + spec.total() as i64 <= len as i64);
                // padding only as a prefix
                let first_unpadded = w.mask.iter().position(|m| *m != StepMask::Padded).unwrap_or(w.len());
                proptest::prop_assert!(w.mask[first_unpadded..].iter().all(|m| *m != StepMask::Padded));
                proptest::prop_assert!(w.mask[cond..].iter().all(|m| *m != StepMask::Padded));
            }
        }
    }
}
