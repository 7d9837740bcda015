//! Dataset statistics.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::series::Panel;

/// One non-empty histogram bucket: `[lower, lower + width)` in
/// `log10(1 + mean)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub lower: f64,
    pub count: usize,
}

/// Histogram of per-series velocities (observed mean) on a log scale.
/// Only non-empty buckets are returned, in increasing order.
pub fn velocity_histogram(panel: &Panel, bucket_width: f64) -> Result<Vec<Bucket>> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    if !(bucket_width > 0.0) {
        return Err(Error::Config(alloc::format!("bucket width {bucket_width} must be positive")));
    }
    let mut indices: Vec<i64> = panel
        .series()
        .iter()
        .map(|s| ((1.0 + s.observed_mean()).log10() / bucket_width + 1e-9).floor() as i64)
        .collect();
    indices.sort_unstable();
    let mut out: Vec<Bucket> = Vec::new();
    for idx in indices {
        let lower = idx as f64 * bucket_width;
        match out.last_mut() {
            Some(b) if b.lower == lower => b.count += 1,
            _ => out.push(Bucket { lower, count: 1 }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{Granularity, TimeSeries};
    use alloc::vec;
    use chrono::NaiveDate;

    fn constant(id: &str, v: f64) -> TimeSeries {
        TimeSeries {
            id: id.into(),
            start: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            granularity: Granularity::Weekly,
            target: vec![Some(v); 4],
            category: 0,
        }
    }

    #[test]
    fn identical_series_share_a_bucket() {
        let panel = Panel::new(vec![constant("a", 5.0), constant("b", 5.0), constant("c", 5.0)]).unwrap();
        let h = velocity_histogram(&panel, 0.25).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 3);
    }

    #[test]
    fn decades_land_on_their_edges() {
        let panel = Panel::new(vec![constant("a", 0.0), constant("b", 99.0)]).unwrap();
        let h = velocity_histogram(&panel, 0.5).unwrap();
        assert_eq!(
            h,
            vec![Bucket { lower: 0.0, count: 1 }, Bucket { lower: 2.0, count: 1 }]
        );
    }

    #[test]
    fn counts_sum_to_series_count() {
        let series: Vec<_> = (0..50).map(|i| constant("s", (i * i) as f64)).collect();
        let panel = Panel::new(series).unwrap();
        let h = velocity_histogram(&panel, 0.25).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 50);
        assert!(h.windows(2).all(|w| w[0].lower < w[1].lower));
    }
}
