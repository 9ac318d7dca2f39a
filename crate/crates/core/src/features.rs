//! Segment calibration and per-day feature extraction.
//!
//! A day is summarized by 19 features in a fixed order: five intensity-bin
//! pixel counts, ten temperature statistics (day then night; min, max, mean,
//! std, range) and four calendar encodings.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::raster::{Grid, RasterSeries, CI_MAX};

pub const N_CLASSES: usize = 5;
pub const N_FEATURES: usize = 19;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "b1",
    "b2",
    "b3",
    "b4",
    "b5",
    "day_min",
    "day_max",
    "day_mean",
    "day_std",
    "day_range",
    "night_min",
    "night_max",
    "night_mean",
    "night_std",
    "night_range",
    "doy_sin",
    "doy_cos",
    "month",
    "season",
];

pub const CLASS_NAMES: [&str; N_CLASSES] = ["low", "medium", "high", "very_high", "extreme"];

/// Value at 1-based rank `ceil(pct/100 * n)` of an ascending slice.
pub fn nearest_rank(sorted: &[f64], pct: u32) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (pct as usize * n).div_ceil(100).max(1);
    Some(sorted[rank - 1])
}

/// Equal-frequency cut points at the 20/40/60/80 nearest-rank quantiles of
/// the positive CI values. Ties can collapse quantiles onto the same value;
/// edges are then moved to neighbouring distinct values so that all five
/// bins stay non-empty.
pub fn fit_bins(values: &[f64]) -> Result<[f64; 4]> {
    let mut sorted: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| *v > 0.0 && *v <= CI_MAX)
        .collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < N_CLASSES {
        return Err(Error::Insufficient(format!(
            "equal-frequency binning needs at least 5 distinct positive values, got {}",
            distinct.len()
        )));
    }
    let mut edges = [0.0; 4];
    for (k, edge) in edges.iter_mut().enumerate() {
        *edge = nearest_rank(&sorted, 20 * (k as u32 + 1)).unwrap();
    }
    // Push duplicates upwards, then pull back so the top bin keeps a value.
    let pos = |v: f64| distinct.partition_point(|x| *x < v);
    let mut idx: Vec<usize> = edges.iter().map(|e| pos(*e)).collect();
    for k in 1..4 {
        idx[k] = idx[k].max(idx[k - 1] + 1);
    }
    let top = distinct.len() - 1;
    for k in (0..4).rev() {
        let cap = if k == 3 { top - 1 } else { idx[k + 1] - 1 };
        idx[k] = idx[k].min(cap);
    }
    for (edge, i) in edges.iter_mut().zip(idx) {
        *edge = distinct[i];
    }
    Ok(edges)
}

/// Bin index for a CI value: bin i covers (edge_{i-1}, edge_i] with an
/// implicit lower edge of 0 and upper edge of 253.
pub fn bin_of(value: f64, edges: &[f64; 4]) -> Option<usize> {
    if !(value > 0.0 && value <= CI_MAX) {
        return None;
    }
    Some(edges.iter().position(|e| value <= *e).unwrap_or(4))
}

/// Pixel counts per intensity bin over the non-missing pixels of `grid`.
pub fn bin_counts(grid: &Grid, edges: &[f64; 4]) -> [u32; N_CLASSES] {
    let mut counts = [0; N_CLASSES];
    for v in grid.valid_values() {
        if let Some(b) = bin_of(v, edges) {
            counts[b] += 1;
        }
    }
    counts
}

/// Activation thresholds from a history of daily bin counts: the nearest-rank
/// 50th percentile of nonzero counts for the two lowest bins, the 60th for
/// the middle bin, and a single pixel for the two highest.
pub fn calibrate_thresholds(history: &[[u32; N_CLASSES]]) -> Result<[u32; N_CLASSES]> {
    if history.is_empty() {
        return Err(Error::Empty("threshold calibration history".into()));
    }
    let pct = |bin: usize, p: u32| -> u32 {
        let mut nonzero: Vec<f64> = history
            .iter()
            .map(|c| c[bin] as f64)
            .filter(|c| *c > 0.0)
            .collect();
        nonzero.sort_by(f64::total_cmp);
        nearest_rank(&nonzero, p).map_or(1, |v| (v as u32).max(1))
    };
    Ok([pct(0, 50), pct(1, 50), pct(2, 60), 1, 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TempStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub range: f64,
}

impl TempStats {
    /// Statistics over the non-missing pixels; `None` when there are none.
    pub fn of_grid(grid: &Grid) -> Option<TempStats> {
        let values: Vec<f64> = grid.valid_values().collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(TempStats {
            min,
            max,
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            range: max - min,
        })
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.min, self.max, self.mean, self.std, self.range]
    }
}

/// Day and night statistics; `None` for a grid without valid pixels.
pub fn temp_stats(day: &Grid, night: &Grid) -> (Option<TempStats>, Option<TempStats>) {
    (TempStats::of_grid(day), TempStats::of_grid(night))
}

pub fn season_of(month: u32) -> u32 {
    match month {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }
}

/// `(sin, cos)` of the day of year over a 365.25-day cycle, month/12 and
/// season/3 with winter = 0.
pub fn temporal_features(date: NaiveDate) -> [f64; 4] {
    let angle = 2.0 * PI * date.ordinal() as f64 / 365.25;
    [
        angle.sin(),
        angle.cos(),
        date.month() as f64 / 12.0,
        season_of(date.month()) as f64 / 3.0,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub segment_id: String,
    pub bin_counts: [u32; N_CLASSES],
    pub temp_day: TempStats,
    pub temp_night: TempStats,
    pub temporal: [f64; 4],
    /// False when at least one half of the temperature statistics was carried
    /// forward from an earlier record.
    pub valid_temp: bool,
}

impl DailyRecord {
    pub fn features(&self) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for (o, c) in out.iter_mut().zip(self.bin_counts) {
            *o = c as f64;
        }
        out[5..10].copy_from_slice(&self.temp_day.as_array());
        out[10..15].copy_from_slice(&self.temp_night.as_array());
        out[15..19].copy_from_slice(&self.temporal);
        out
    }

    pub fn month(&self) -> u32 {
        self.date.month()
    }
}

/// Z-score statistics per feature, fitted on training records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl Default for FeatureNorm {
    fn default() -> Self {
        FeatureNorm {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        }
    }
}

impl FeatureNorm {
    pub fn fit(records: &[DailyRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("normalization needs training records".into()));
        }
        let n = records.len() as f64;
        let mut norm = FeatureNorm::default();
        for r in records {
            for (m, f) in norm.mean.iter_mut().zip(r.features()) {
                *m += f / n;
            }
        }
        let mut var = [0.0; N_FEATURES];
        for r in records {
            for (k, f) in r.features().iter().enumerate() {
                var[k] += (f - norm.mean[k]).powi(2) / n;
            }
        }
        for (s, v) in norm.std.iter_mut().zip(var) {
            let sd = v.sqrt();
            *s = if sd > 1e-9 { sd } else { 1.0 };
        }
        Ok(norm)
    }

    pub fn apply(&self, features: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            out[k] = (features[k] - self.mean[k]) / self.std[k];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCalibration {
    pub segment_id: String,
    pub bin_edges: [f64; 4],
    pub thresholds: [u32; N_CLASSES],
    pub peak_months: Vec<u32>,
    pub extended_months: Vec<u32>,
    pub norm: FeatureNorm,
}

/// Peak months plus the month preceding each of them, ascending.
pub fn extend_months(peak: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = peak
        .iter()
        .flat_map(|&m| [m, if m == 1 { 12 } else { m - 1 }])
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

impl SegmentCalibration {
    pub fn new(
        segment_id: impl Into<String>,
        bin_edges: [f64; 4],
        thresholds: [u32; N_CLASSES],
        peak_months: Vec<u32>,
        norm: FeatureNorm,
    ) -> Result<Self> {
        let calib = SegmentCalibration {
            segment_id: segment_id.into(),
            bin_edges,
            thresholds,
            extended_months: extend_months(&peak_months),
            peak_months,
            norm,
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.bin_edges;
        if !(e[0] > 0.0 && e.windows(2).all(|w| w[0] < w[1]) && e[3] <= CI_MAX) {
            return Err(Error::Config(format!(
                "bin edges {e:?} must be strictly increasing within (0, 253]"
            )));
        }
        let t = &self.thresholds;
        if t[3] != 1 || t[4] != 1 || t[..3].iter().any(|x| *x < 1) {
            return Err(Error::Config(format!("invalid thresholds {t:?}")));
        }
        if self.peak_months.iter().any(|m| !(1..=12).contains(m)) {
            return Err(Error::Config("peak months must be in 1..=12".into()));
        }
        Ok(())
    }

    pub fn is_peak_month(&self, month: u32) -> bool {
        self.peak_months.contains(&month)
    }

    pub fn is_extended_month(&self, month: u32) -> bool {
        self.extended_months.contains(&month)
    }

    /// Class activity for one day's bin counts.
    pub fn labels(&self, counts: &[u32; N_CLASSES]) -> [u8; N_CLASSES] {
        let mut out = [0; N_CLASSES];
        for i in 0..N_CLASSES {
            out[i] = u8::from(counts[i] >= self.thresholds[i]);
        }
        out
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("calibration", e.to_string()))
    }

    pub fn from_text(text: &str, context: &str) -> Result<Self> {
        let calib: SegmentCalibration =
            toml::from_str(text).map_err(|e| Error::format(context, e.to_string()))?;
        if calib.extended_months != extend_months(&calib.peak_months) {
            return Err(Error::format(context, "extended_months inconsistent with peak_months"));
        }
        calib.validate()?;
        Ok(calib)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?, &path.display().to_string())
    }
}

/// Builds one day's record. Temperature halves without valid pixels are
/// carried forward from `previous`.
pub fn assemble_daily_record(
    segment_id: &str,
    date: NaiveDate,
    ci_grid: &Grid,
    day_grid: Option<&Grid>,
    night_grid: Option<&Grid>,
    calibration: &SegmentCalibration,
    previous: Option<&DailyRecord>,
) -> Result<DailyRecord> {
    record_from_parts(
        segment_id,
        date,
        bin_counts(ci_grid, &calibration.bin_edges),
        day_grid.and_then(TempStats::of_grid),
        night_grid.and_then(TempStats::of_grid),
        previous,
    )
}

/// Record from already-reduced bin counts and temperature statistics, with
/// the same carry-forward rule as [`assemble_daily_record`].
pub fn record_from_parts(
    segment_id: &str,
    date: NaiveDate,
    bin_counts: [u32; N_CLASSES],
    day: Option<TempStats>,
    night: Option<TempStats>,
    previous: Option<&DailyRecord>,
) -> Result<DailyRecord> {
    let valid_temp = day.is_some() && night.is_some();
    let carry = |stats: Option<TempStats>, pick: fn(&DailyRecord) -> TempStats| {
        stats.or_else(|| previous.map(pick)).ok_or_else(|| {
            Error::Insufficient(format!(
                "{segment_id} {date}: no earlier valid temperature to carry forward"
            ))
        })
    };
    Ok(DailyRecord {
        date,
        segment_id: segment_id.to_string(),
        bin_counts,
        temp_day: carry(day, |r| r.temp_day)?,
        temp_night: carry(night, |r| r.temp_night)?,
        temporal: temporal_features(date),
        valid_temp,
    })
}

/// Records for every CI date. Leading days before the first usable
/// temperature reading are dropped and counted.
pub fn assemble_records(
    segment_id: &str,
    ci: &RasterSeries,
    temp_day: &RasterSeries,
    temp_night: &RasterSeries,
    calibration: &SegmentCalibration,
) -> Result<(Vec<DailyRecord>, usize)> {
    let mut records: Vec<DailyRecord> = Vec::with_capacity(ci.len());
    let mut dropped = 0;
    for (date, grid) in ci.iter() {
        let rec = assemble_daily_record(
            segment_id,
            date,
            grid,
            temp_day.grid_on(date),
            temp_night.grid_on(date),
            calibration,
            records.last(),
        );
        match rec {
            Ok(r) => records.push(r),
            Err(Error::Insufficient(_)) if records.is_empty() => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((records, dropped))
}

const CSV_HEADER_PREFIX: [&str; 2] = ["date", "segment"];

/// Writes records as CSV: date, segment, the 19 features, valid_temp.
pub fn write_records_csv(path: &Path, records: &[DailyRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CSV_HEADER_PREFIX.to_vec();
    header.extend(FEATURE_NAMES);
    header.push("valid_temp");
    let csv_err = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    wtr.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.date.format("%Y-%m-%d").to_string(), r.segment_id.clone()];
        row.extend(r.bin_counts.iter().map(|c| c.to_string()));
        row.extend(r.features()[5..].iter().map(|v| v.to_string()));
        row.push(u8::from(r.valid_temp).to_string());
        wtr.write_record(&row).map_err(csv_err)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<DailyRecord>> {
    let ctx = path.display().to_string();
    let text = read_to_string(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::format(&ctx, e.to_string()))?
        .clone();
    let expected: Vec<&str> = CSV_HEADER_PREFIX
        .iter()
        .copied()
        .chain(FEATURE_NAMES)
        .chain(["valid_temp"])
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format(&ctx, "unexpected record header"));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::format(&ctx, e.to_string()))?;
        let bad = |what: &str| Error::format(&ctx, format!("row {}: bad {what}", line + 2));
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|_| bad("date"))?;
        let mut counts = [0u32; N_CLASSES];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = row[2 + i].parse().map_err(|_| bad(FEATURE_NAMES[i]))?;
        }
        let mut vals = [0.0f64; 14];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = row[7 + i]
                .parse()
                .map_err(|_| bad(FEATURE_NAMES[5 + i]))?;
            if !v.is_finite() {
                return Err(bad(FEATURE_NAMES[5 + i]));
            }
        }
        let stats = |s: &[f64]| TempStats {
            min: s[0],
            max: s[1],
            mean: s[2],
            std: s[3],
            range: s[4],
        };
        out.push(DailyRecord {
            date,
            segment_id: row[1].to_string(),
            bin_counts: counts,
            temp_day: stats(&vals[0..5]),
            temp_night: stats(&vals[5..10]),
            temporal: [vals[10], vals[11], vals[12], vals[13]],
            valid_temp: &row[21] == "1",
        });
    }
    Ok(out)
}
