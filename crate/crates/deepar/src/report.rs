//! Plain-text and JSON renderings of metric reports, training logs and
//! histograms.

use std::fmt::Write;

use deepar_core::metrics::{BacktestReport, MetricReport};
use deepar_core::stats::Bucket;
use deepar_core::TrainLog;
use serde_json::{json, Value};

fn num(x: f64) -> Value {
    // JSON has no inf/nan
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn metric_json(r: &MetricReport) -> Value {
    json!({
        "num_items": r.num_items,
        "nd": num(r.nd),
        "rmse": num(r.rmse),
        "risks": r.risks.iter().map(|s| json!({
            "lead": s.span.lead,
            "length": s.span.length,
            "level": num(s.level),
            "risk": num(s.risk),
        })).collect::<Vec<_>>(),
        "all_k": r.all_k.iter().map(|a| json!({
            "k": a.k,
            "level": num(a.level),
            "risk": num(a.risk),
        })).collect::<Vec<_>>(),
        "coverage": r.coverage.iter().map(|c| json!({
            "lead": c.span.lead,
            "length": c.span.length,
            "calibration_error": num(c.calibration_error()),
            "points": c.points.iter().map(|&(p, v)| json!([num(p), num(v)])).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

pub fn backtest_json(r: &BacktestReport) -> Value {
    json!({
        "windows": r.windows.iter().map(metric_json).collect::<Vec<_>>(),
        "pooled": metric_json(&r.pooled),
    })
}

pub fn metric_text(r: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "items  {}", r.num_items);
    let _ = writeln!(out, "ND     {:.6}", r.nd);
    let _ = writeln!(out, "RMSE   {:.6}", r.rmse);
    if !r.risks.is_empty() {
        let _ = writeln!(out, "\n{:>6} {:>6} {:>6} {:>12}", "lead", "length", "rho", "risk");
        for s in &r.risks {
            let _ = writeln!(out, "{:>6} {:>6} {:>6} {:>12.6}", s.span.lead, s.span.length, s.level, s.risk);
        }
    }
    for a in &r.all_k {
        let _ = writeln!(out, "\nall({}) rho={} risk={:.6}", a.k, a.level, a.risk);
    }
    for c in &r.coverage {
        let _ = writeln!(
            out,
            "\ncoverage span {}:{} (mean |C(p) - p| = {:.4})",
            c.span.lead,
            c.span.length,
            c.calibration_error()
        );
        for &(p, v) in &c.points {
            let _ = writeln!(out, "  p={p:<4} {v:.4}");
        }
    }
    out
}

pub fn backtest_text(r: &BacktestReport) -> String {
    let mut out = String::new();
    for (w, m) in r.windows.iter().enumerate() {
        let _ = writeln!(out, "== window {w} ==");
        out.push_str(&metric_text(m));
        out.push('\n');
    }
    out.push_str("== pooled ==\n");
    out.push_str(&metric_text(&r.pooled));
    out
}

/// `lead length p coverage` rows, one block per span.
pub fn coverage_tsv(r: &MetricReport) -> String {
    let mut out = String::from("lead\tlength\tp\tcoverage\n");
    for c in &r.coverage {
        for &(p, v) in &c.points {
            let _ = writeln!(out, "{}\t{}\t{p}\t{v}", c.span.lead, c.span.length);
        }
    }
    out
}

pub fn train_log_tsv(log: &TrainLog) -> String {
    let mut out = String::from("epoch\tbatches\ttrain_nll\tvalidation_nll\telapsed\n");
    for r in &log.records {
        let train = r.train_nll.map_or_else(|| "-".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{train}\t{}\t{:.3}",
            r.epoch, r.batches, r.validation_nll, r.elapsed
        );
    }
    out
}

pub fn histogram_tsv(buckets: &[Bucket], width: f64) -> String {
    let mut out = String::from("log10_lower\tlog10_upper\tcount\n");
    for b in buckets {
        let _ = writeln!(out, "{}\t{}\t{}", b.lower, b.lower + width, b.count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use deepar_core::metrics::{CoverageCurve, Span, SpanRisk};

    fn report() -> MetricReport {
        MetricReport {
            num_items: 2,
            risks: vec![SpanRisk {
                span: Span { lead: 0, length: 1 },
                level: 0.5,
                risk: 0.25,
            }],
            all_k: vec![],
            nd: 0.1,
            rmse: f64::NAN,
            coverage: vec![CoverageCurve {
                span: Span { lead: 0, length: 1 },
                points: vec![(0.1, 0.0), (0.9, 1.0)],
            }],
        }
    }

    #[test]
    fn json_maps_nan_to_null() {
        let v = metric_json(&report());
        assert!(v["rmse"].is_null());
        assert_eq!(v["risks"][0]["risk"], 0.25);
    }

    #[test]
    fn coverage_tsv_has_one_row_per_point() {
        assert_eq!(coverage_tsv(&report()).lines().count(), 3);
    }

    #[test]
    fn histogram_rows_match_buckets() {
        let b = [Bucket { lower: 0.0, count: 3 }, Bucket { lower: 1.0, count: 1 }];
        let t = histogram_tsv(&b, 0.5);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("1\t1.5\t1"));
    }
}
