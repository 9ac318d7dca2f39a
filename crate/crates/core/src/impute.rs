//! Per-pixel temporal gap filling.
//!
//! Three passes run in a fixed order: last-observation-carried-forward, a
//! 3-2-1 weighted window over the previous three calendar days, and (for CI
//! only) restoration of short gaps inside active bloom periods. Every pixel
//! depends only on its own history, so the passes are order-independent
//! across pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{missing_fraction, Provenance, RasterSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeConfig {
    /// Weights for t-1, t-2, t-3.
    pub window_weights: [f64; 3],
    pub min_valid_in_window: usize,
    pub max_consecutive_imputed: u16,
    pub restore_gap_min: usize,
    pub restore_gap_max: usize,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            window_weights: [3.0, 2.0, 1.0],
            min_valid_in_window: 2,
            max_consecutive_imputed: 2,
            restore_gap_min: 3,
            restore_gap_max: 7,
        }
    }
}

impl ImputeConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.window_weights;
        if !w.iter().all(|x| x.is_finite() && *x > 0.0) || !(w[0] > w[1] && w[1] > w[2]) {
            return Err(Error::Config(format!(
                "window weights {w:?} must be positive and strictly decreasing"
            )));
        }
        if !(1..=3).contains(&self.min_valid_in_window) {
            return Err(Error::Config("min_valid_in_window must be in 1..=3".into()));
        }
        if self.restore_gap_min == 0 || self.restore_gap_min > self.restore_gap_max {
            return Err(Error::Config(
                "restore gap bounds must satisfy 1 <= min <= max".into(),
            ));
        }
        Ok(())
    }
}

/// Weighted mean of the present entries, weights renormalized over them.
fn weighted_mean(window: &[Option<f64>; 3], weights: &[f64; 3]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in window.iter().zip(weights) {
        if let Some(v) = v {
            num += w * v;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

fn window_at(series: &RasterSeries, t: usize, px: usize) -> [Option<f64>; 3] {
    let mut out = [None; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = series
            .index_days_before(t, k as i64 + 1)
            .and_then(|i| series.grids()[i].value(px));
    }
    out
}

/// Fills a missing pixel from the previous calendar day when that value is
/// an original observation. Values copied in this pass never seed further
/// copies.
pub fn locf_pass(series: &RasterSeries) -> RasterSeries {
    let mut out = series.clone();
    for t in 0..out.len() {
        let Some(prev) = out.index_days_before(t, 1) else {
            continue;
        };
        for px in 0..out.pixel_count() {
            let source = &out.grids()[prev];
            if out.grids()[t].provenance()[px] != Provenance::Missing
                || source.provenance()[px] != Provenance::Observed
            {
                continue;
            }
            let value = source.values()[px];
            out.grids_mut()[t].set(px, value, Provenance::Locf);
        }
    }
    out.refresh_counters();
    out
}

/// Fills a missing pixel with the 3-2-1 weighted mean of the previous three
/// days when enough of them are valid and the pixel has not already been
/// imputed on `max_consecutive_imputed` consecutive days.
pub fn weighted_window_pass(series: &RasterSeries, cfg: &ImputeConfig) -> RasterSeries {
    let mut out = series.clone();
    for t in 0..out.len() {
        let prev = out.index_days_before(t, 1);
        for px in 0..out.pixel_count() {
            if out.grids()[t].provenance()[px] != Provenance::Missing {
                continue;
            }
            let run = prev.map_or(0, |p| out.grids()[p].consec_imputed()[px]);
            if run >= cfg.max_consecutive_imputed {
                continue;
            }
            let window = window_at(&out, t, px);
            if window.iter().flatten().count() < cfg.min_valid_in_window {
                continue;
            }
            if let Some(v) = weighted_mean(&window, &cfg.window_weights) {
                let grid = &mut out.grids_mut()[t];
                grid.set(px, v, Provenance::Weighted);
                grid.set_consec(px, run + 1);
            }
        }
    }
    out.refresh_counters();
    out
}

/// Fills gaps of `restore_gap_min..=restore_gap_max` calendar days whose
/// flanking valid values are both positive. Filling proceeds day by day,
/// so restored values feed the window of later gap days.
pub fn restore_continuity(ci_series: &RasterSeries, cfg: &ImputeConfig) -> RasterSeries {
    let mut out = ci_series.clone();
    let (Some(&first), Some(&last)) = (out.dates().first(), out.dates().last()) else {
        return out;
    };
    let span = (last - first).num_days() as usize + 1;
    let mut calendar: Vec<Option<usize>> = vec![None; span];
    for (i, d) in out.dates().iter().enumerate() {
        calendar[(*d - first).num_days() as usize] = Some(i);
    }

    for px in 0..out.pixel_count() {
        let valid_at =
            |s: &RasterSeries, day: usize| calendar[day].and_then(|i| s.grids()[i].value(px));

        let mut gaps = Vec::new();
        let mut last_valid: Option<usize> = None;
        for day in 0..span {
            if valid_at(&out, day).is_none() {
                continue;
            }
            if let Some(lv) = last_valid {
                let len = day - lv - 1;
                if len >= cfg.restore_gap_min && len <= cfg.restore_gap_max {
                    let left = valid_at(&out, lv).unwrap_or(0.0);
                    let right = valid_at(&out, day).unwrap_or(0.0);
                    if left > 0.0 && right > 0.0 {
                        gaps.push(lv + 1..day);
                    }
                }
            }
            last_valid = Some(day);
        }

        for gap in gaps {
            for day in gap {
                let Some(idx) = calendar[day] else { continue };
                let mut window = [None; 3];
                for (k, slot) in window.iter_mut().enumerate() {
                    if let Some(d) = day.checked_sub(k + 1) {
                        *slot = valid_at(&out, d);
                    }
                }
                if let Some(v) = weighted_mean(&window, &cfg.window_weights) {
                    out.grids_mut()[idx].set(px, v, Provenance::Restored);
                }
            }
        }
    }
    out.refresh_counters();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub series: RasterSeries,
    /// Missing fraction before any pass and after each pass that ran.
    pub stages: Vec<StageReport>,
}

/// LOCF, then the weighted window, then (when `restore` is set, i.e. for CI
/// series) continuity restoration.
pub fn impute_pipeline(
    series: &RasterSeries,
    cfg: &ImputeConfig,
    restore: bool,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut stages = Vec::new();
    let mut record = |stage, s: &RasterSeries| -> Result<()> {
        if !s.is_empty() {
            stages.push(StageReport {
                stage,
                missing_fraction: missing_fraction(s)?,
            });
        }
        Ok(())
    };
    record("input", series)?;
    let after_locf = locf_pass(series);
    record("locf", &after_locf)?;
    let mut out = weighted_window_pass(&after_locf, cfg);
    record("weighted", &out)?;
    if restore {
        out = restore_continuity(&out, cfg);
        record("restored", &out)?;
    }
    Ok(PipelineOutput { series: out, stages })
}
