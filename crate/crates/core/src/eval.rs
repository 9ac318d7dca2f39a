//! Binarization, classification metrics, rank AUC, hit rate, the
//! persistence baseline and per-horizon reports.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{CLASS_NAMES, N_CLASSES};
use crate::io::write_atomic;
use crate::nn::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `1` iff `p > threshold`; a probability exactly at the threshold is "no
/// event".
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|p| u8::from(*p > threshold)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_pairs(preds: &[u8], targets: &[u8]) -> Self {
        assert_eq!(preds.len(), targets.len());
        let mut c = Confusion::default();
        for (p, t) in preds.iter().zip(targets) {
            c.add(*p != 0, *t != 0);
        }
        c
    }

    pub fn add(&mut self, pred: bool, target: bool) {
        match (pred, target) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let mut degenerate = false;
        let mut ratio = |num: u64, den: u64| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio(self.tp + self.tn, self.total());
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            accuracy,
            precision,
            recall,
            f1,
            degenerate,
        }
    }
}

/// Accuracy, precision, recall and F1. `degenerate` is set when any ratio
/// had a zero denominator and was reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

/// Pooled counts over every label slot.
pub fn micro_metrics(preds: &[u8], targets: &[u8]) -> Metrics {
    Confusion::from_pairs(preds, targets).metrics()
}

/// Per-class metrics averaged with weights proportional to class support.
pub fn weighted_metrics(per_class: &[Confusion]) -> Metrics {
    let support: u64 = per_class.iter().map(Confusion::support).sum();
    if support == 0 {
        return Metrics {
            degenerate: true,
            ..Metrics::default()
        };
    }
    let mut out = Metrics::default();
    for c in per_class {
        let w = c.support() as f64 / support as f64;
        let m = c.metrics();
        out.accuracy += w * m.accuracy;
        out.precision += w * m.precision;
        out.recall += w * m.recall;
        out.f1 += w * m.f1;
        out.degenerate |= m.degenerate && c.support() > 0;
    }
    out
}

/// Rank-based AUC (Mann-Whitney U with mid-ranks for ties). `None` when the
/// labels contain a single class.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|l| **l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pod {
    pub value: f64,
    /// No observed event in the block; `value` is then the correct-rejection
    /// rate.
    pub no_event: bool,
}

/// Hits over hits plus misses for one forecast block. Blocks without any
/// observed event report the share of correctly rejected slots instead.
pub fn pod(preds: &[u8], targets: &[u8]) -> Pod {
    let c = Confusion::from_pairs(preds, targets);
    if c.tp + c.fn_ > 0 {
        Pod {
            value: c.tp as f64 / (c.tp + c.fn_) as f64,
            no_event: false,
        }
    } else {
        let neg = c.tn + c.fp;
        Pod {
            value: if neg == 0 { 1.0 } else { c.tn as f64 / neg as f64 },
            no_event: true,
        }
    }
}

/// Repeats today's class vector for each of the next `horizon` days,
/// row-major `horizon x classes`.
pub fn persistence_forecast(today: &[u8; N_CLASSES], horizon: usize) -> Vec<u8> {
    today.iter().copied().cycle().take(horizon * N_CLASSES).collect()
}

/// Element-wise mean of several models' probabilities.
pub fn ensemble_average(sets: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Empty("ensemble of zero models".into()))?;
    let k = sets.len() as f64;
    let mut out = first.clone();
    for set in &sets[1..] {
        if set.len() != out.len() {
            return Err(Error::Shape("ensemble members disagree on sample count".into()));
        }
        for (acc, t) in out.iter_mut().zip(set) {
            if acc.shape() != t.shape() {
                return Err(Error::Shape("ensemble members disagree on output shape".into()));
            }
            acc.add_assign(t);
        }
    }
    for t in &mut out {
        t.scale(1.0 / k);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceMetrics {
    pub micro: Metrics,
    pub weighted: Metrics,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PodPoint {
    pub segment_id: String,
    pub anchor_date: NaiveDate,
    pub pod: Pod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Forecast days 1..=H.
    pub per_day: Vec<SliceMetrics>,
    /// Intensity classes, pooled over all forecast days.
    pub per_class: Vec<SliceMetrics>,
    pub pod_series: Vec<PodPoint>,
}

/// Labelled forecast for one window, `horizon x classes` row-major.
pub struct Scored<'a> {
    pub segment_id: &'a str,
    pub anchor_date: NaiveDate,
    pub scores: &'a [f64],
    pub targets: &'a [u8],
}

pub fn evaluate(items: &[Scored<'_>], horizon: usize, threshold: f64) -> EvalReport {
    let nc = N_CLASSES;
    let mut day_conf = vec![[Confusion::default(); N_CLASSES]; horizon];
    let mut day_scores = vec![(Vec::new(), Vec::new()); horizon];
    let mut class_scores = vec![(Vec::new(), Vec::new()); nc];
    let mut pod_series = Vec::with_capacity(items.len());
    for item in items {
        assert_eq!(item.scores.len(), horizon * nc);
        let preds = binarize(item.scores, threshold);
        for h in 0..horizon {
            for c in 0..nc {
                let k = h * nc + c;
                day_conf[h][c].add(preds[k] != 0, item.targets[k] != 0);
                day_scores[h].0.push(item.scores[k]);
                day_scores[h].1.push(item.targets[k]);
                class_scores[c].0.push(item.scores[k]);
                class_scores[c].1.push(item.targets[k]);
            }
        }
        pod_series.push(PodPoint {
            segment_id: item.segment_id.to_string(),
            anchor_date: item.anchor_date,
            pod: pod(&preds, item.targets),
        });
    }
    let per_day = (0..horizon)
        .map(|h| {
            let mut pooled = Confusion::default();
            day_conf[h].iter().for_each(|c| pooled.merge(c));
            SliceMetrics {
                micro: pooled.metrics(),
                weighted: weighted_metrics(&day_conf[h]),
                auc: auc(&day_scores[h].0, &day_scores[h].1),
            }
        })
        .collect();
    let per_class = (0..nc)
        .map(|c| {
            let mut conf = Confusion::default();
            day_conf.iter().for_each(|d| conf.merge(&d[c]));
            SliceMetrics {
                micro: conf.metrics(),
                weighted: conf.metrics(),
                auc: auc(&class_scores[c].0, &class_scores[c].1),
            }
        })
        .collect();
    EvalReport {
        per_day,
        per_class,
        pod_series,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn metric_cols(prefix: &str) -> String {
    ["accuracy", "precision", "recall", "f1"]
        .iter()
        .flat_map(|m| [format!("{prefix}_micro_{m}"), format!("{prefix}_weighted_{m}")])
        .chain([format!("{prefix}_auc")])
        .collect::<Vec<_>>()
        .join(",")
}

fn metric_values(s: &SliceMetrics) -> String {
    let (m, w) = (&s.micro, &s.weighted);
    [
        m.accuracy, w.accuracy, m.precision, w.precision, m.recall, w.recall, m.f1, w.f1,
    ]
    .iter()
    .map(|v| format!("{v:.6}"))
    .chain([fmt_opt(s.auc)])
    .collect::<Vec<_>>()
    .join(",")
}

/// `day,<model metrics>,<persistence metrics>` with one row per forecast day.
pub fn per_day_csv(model: &EvalReport, persistence: &EvalReport) -> String {
    let mut out = format!("day,{},{}\n", metric_cols("model"), metric_cols("persistence"));
    for (h, (m, p)) in model.per_day.iter().zip(&persistence.per_day).enumerate() {
        let _ = writeln!(out, "{},{},{}", h + 1, metric_values(m), metric_values(p));
    }
    out
}

pub fn per_class_csv(model: &EvalReport, persistence: &EvalReport) -> String {
    let cols = |p: &str| {
        ["accuracy", "precision", "recall", "f1", "auc"]
            .iter()
            .map(|m| format!("{p}_{m}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let vals = |s: &SliceMetrics| {
        let m = &s.micro;
        [m.accuracy, m.precision, m.recall, m.f1]
            .iter()
            .map(|v| format!("{v:.6}"))
            .chain([fmt_opt(s.auc)])
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = format!("class,{},{}\n", cols("model"), cols("persistence"));
    for (c, (m, p)) in model.per_class.iter().zip(&persistence.per_class).enumerate() {
        let _ = writeln!(out, "{},{},{}", CLASS_NAMES[c], vals(m), vals(p));
    }
    out
}

/// Hit-rate time series of one segment, sorted by anchor date.
pub fn pod_csv(model: &EvalReport, persistence: &EvalReport, segment: &str) -> String {
    let mut rows: Vec<(&PodPoint, &PodPoint)> = model
        .pod_series
        .iter()
        .zip(&persistence.pod_series)
        .filter(|(m, _)| m.segment_id == segment)
        .collect();
    rows.sort_by_key(|(m, _)| m.anchor_date);
    let mut out = String::from("anchor_date,no_event,model_pod,persistence_pod\n");
    for (m, p) in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            m.anchor_date.format("%Y-%m-%d"),
            u8::from(m.pod.no_event),
            m.pod.value,
            p.pod.value
        );
    }
    out
}

/// Line chart of micro-F1 per forecast day with short, medium and long
/// range bands shaded.
pub fn f1_horizon_svg(model: &EvalReport, persistence: &EvalReport) -> String {
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (56.0, 16.0, 24.0, 44.0);
    let days = model.per_day.len().max(1);
    let x_of = |day: f64| left + (day - 0.5) / days as f64 * (w - left - right);
    let y_of = |v: f64| top + (1.0 - v.clamp(0.0, 1.0)) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let bands: [(f64, f64, &str, &str); 3] = [(1.0, 4.0, "#e8f1fb", "short"), (5.0, 9.0, "#fdf3e1", "medium"), (10.0, 14.0, "#f7e6e6", "long")];
    for (a, b, color, label) in bands {
        if a > days as f64 {
            continue;
        }
        let b = b.min(days as f64);
        let (x0, x1) = (x_of(a - 0.5), x_of(b + 0.5));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{top}" width="{:.1}" height="{:.1}" fill="{color}"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            x1 - x0,
            h - top - bottom,
            (x0 + x1) / 2.0,
            top - 8.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom,
        h - bottom
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            y_of(v) + 4.0
        );
    }
    for day in 1..=days {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{day}</text>"#,
            x_of(day as f64),
            h - bottom + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">forecast day</text>"#,
        (left + w - right) / 2.0,
        h - 8.0
    );
    for (report, color, name, dy) in [(model, "#1f77b4", "model", 0.0), (persistence, "#d62728", "persistence", 14.0)] {
        let pts: Vec<String> = report
            .per_day
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{:.1},{:.1}", x_of(i as f64 + 1.0), y_of(m.micro.f1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/><text x="{:.1}" y="{:.1}" fill="{color}">{name} F1</text>"#,
            pts.join(" "),
            w - right - 90.0,
            top + 14.0 + dy
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `per_day.csv`, `per_class.csv`, `pod_<segment>.csv` and
/// `f1_horizon.svg` into `dir`.
pub fn write_report(dir: &Path, model: &EvalReport, persistence: &EvalReport) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        write_atomic(&dir.join(&name), body.as_bytes())?;
        written.push(name);
        Ok(())
    };
    put("per_day.csv".into(), per_day_csv(model, persistence))?;
    put("per_class.csv".into(), per_class_csv(model, persistence))?;
    let mut segments: Vec<&str> = model.pod_series.iter().map(|p| p.segment_id.as_str()).collect();
    segments.sort_unstable();
    segments.dedup();
    for seg in segments {
        put(format!("pod_{seg}.csv"), pod_csv(model, persistence, seg))?;
    }
    put("f1_horizon.svg".into(), f1_horizon_svg(model, persistence))?;
    Ok(written)
}
