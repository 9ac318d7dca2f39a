//! Rolling-window samples, year splits, balancing, augmentation and the
//! synthetic series generator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    extend_months, record_from_parts, DailyRecord, SegmentCalibration, TempStats, N_CLASSES,
    N_FEATURES,
};
use crate::io::{read_bytes, write_atomic};
use crate::nn::checkpoint::{Reader, Writer};
use crate::nn::Tensor;
use crate::raster::{BathymetryGrid, Grid, RasterSeries, CI_MAX};

pub const SEQ_LEN: usize = 15;
pub const HORIZON: usize = 14;

/// Calibrations keyed by segment id.
pub type Calibrations = BTreeMap<String, SegmentCalibration>;

/// Independent stream seed derived from a base seed (SplitMix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_years: Vec<i32>,
    pub val_years: Vec<i32>,
    pub test_years: Vec<i32>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for y in self.train_years.iter().chain(&self.val_years).chain(&self.test_years) {
            if !seen.insert(*y) {
                return Err(Error::Config(format!("year {y} appears in more than one split")));
            }
        }
        if self.train_years.is_empty() {
            return Err(Error::Config("no training years".into()));
        }
        Ok(())
    }

    pub fn years(&self, split: Split) -> &[i32] {
        match split {
            Split::Train => &self.train_years,
            Split::Val => &self.val_years,
            Split::Test => &self.test_years,
        }
    }

    pub fn split_of(&self, date: NaiveDate) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|s| self.years(*s).contains(&date.year()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// `L x F` normalized features.
    pub x: Tensor,
    /// `H x classes` targets, row-major.
    pub y: Vec<u8>,
    /// Class vector of the anchor day itself, for the persistence baseline.
    pub y_anchor: [u8; N_CLASSES],
    pub segment_id: String,
    /// Date of the last input day.
    pub anchor_date: NaiveDate,
    pub augmented: bool,
    /// The `L + H` source records (inputs then targets). Empty for samples
    /// read back from disk.
    pub raw: Vec<DailyRecord>,
}

impl SequenceSample {
    pub fn seq_len(&self) -> usize {
        self.x.rows()
    }

    pub fn horizon(&self) -> usize {
        self.y.len() / N_CLASSES
    }

    pub fn first_input_date(&self) -> NaiveDate {
        self.anchor_date - Duration::days(self.seq_len() as i64 - 1)
    }

    pub fn last_target_date(&self) -> NaiveDate {
        self.anchor_date + Duration::days(self.horizon() as i64)
    }

    pub fn has_positive(&self) -> bool {
        self.y.iter().any(|v| *v != 0)
    }
}

fn normalized_rows(records: &[DailyRecord], calib: &SegmentCalibration) -> Tensor {
    let mut x = Tensor::zeros(records.len(), N_FEATURES);
    for (r, rec) in records.iter().enumerate() {
        x.row_mut(r).copy_from_slice(&calib.norm.apply(&rec.features()));
    }
    x
}

/// Targets for the records following the anchor, `records.len() x classes`.
pub fn targets_from_records(records: &[DailyRecord], calib: &SegmentCalibration) -> Vec<u8> {
    records.iter().flat_map(|r| calib.labels(&r.bin_counts)).collect()
}

/// One sample per start index whose `seq_len + horizon` days are present
/// without a calendar gap. Records must belong to one segment.
pub fn build_samples(
    records: &[DailyRecord],
    calib: &SegmentCalibration,
    seq_len: usize,
    horizon: usize,
) -> Result<Vec<SequenceSample>> {
    if seq_len == 0 || horizon == 0 {
        return Err(Error::Config("sequence length and horizon must be positive".into()));
    }
    if records.iter().any(|r| r.segment_id != calib.segment_id) {
        return Err(Error::Config(format!(
            "records mix segments; expected only `{}`",
            calib.segment_id
        )));
    }
    if records.windows(2).any(|w| w[0].date >= w[1].date) {
        return Err(Error::format("records", "dates must be strictly increasing"));
    }
    let span = seq_len + horizon;
    let mut out = Vec::new();
    for start in 0..records.len().saturating_sub(span - 1) {
        let window = &records[start..start + span];
        if (window[span - 1].date - window[0].date).num_days() != span as i64 - 1 {
            continue;
        }
        let anchor = &window[seq_len - 1];
        out.push(SequenceSample {
            x: normalized_rows(&window[..seq_len], calib),
            y: targets_from_records(&window[seq_len..], calib),
            y_anchor: calib.labels(&anchor.bin_counts),
            segment_id: calib.segment_id.clone(),
            anchor_date: anchor.date,
            augmented: false,
            raw: window.to_vec(),
        });
    }
    Ok(out)
}

/// Samples whose whole span, inputs and targets, lies in the split's years.
pub fn select_split(samples: Vec<SequenceSample>, spec: &SplitSpec, split: Split) -> Vec<SequenceSample> {
    let years = spec.years(split);
    samples
        .into_iter()
        .filter(|s| {
            years.contains(&s.first_input_date().year()) && years.contains(&s.last_target_date().year())
        })
        .collect()
}

/// Keeps every sample anchored in an extended peak month and adds all-zero
/// samples from the other months, chosen uniformly, until all-zero samples
/// no longer outnumber positive-bearing ones. Input order is preserved.
pub fn balance(samples: Vec<SequenceSample>, calibs: &Calibrations, seed: u64) -> Result<Vec<SequenceSample>> {
    let mut keep = vec![false; samples.len()];
    let mut candidates = Vec::new();
    let (mut positives, mut zeros) = (0usize, 0usize);
    for (i, s) in samples.iter().enumerate() {
        let calib = calibs
            .get(&s.segment_id)
            .ok_or_else(|| Error::Config(format!("no calibration for segment `{}`", s.segment_id)))?;
        if calib.is_extended_month(s.anchor_date.month()) {
            keep[i] = true;
            if s.has_positive() {
                positives += 1;
            } else {
                zeros += 1;
            }
        } else if !s.has_positive() {
            candidates.push(i);
        }
    }
    let budget = positives.saturating_sub(zeros).min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in sample_indices(&mut rng, candidates.len(), budget) {
        keep[candidates[k]] = true;
    }
    Ok(samples
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect())
}

/// Closed perturbation interval for one bin count, `None` when the count is
/// left untouched.
pub fn bin_rule(count: u32, tau: u32, peak_month: bool) -> Option<(i64, i64)> {
    if count < 3 {
        return None;
    }
    let (c, t) = (count as i64, tau as i64);
    Some(if peak_month {
        if c > t + 10 {
            (-8, 8)
        } else {
            (-3, 3)
        }
    } else if c > t + 3 {
        (-3, 3)
    } else {
        (0, 2)
    })
}

/// Perturbs each bin count of `record` independently according to
/// [`bin_rule`], clamping at zero.
pub fn augment_bins(record: &DailyRecord, calib: &SegmentCalibration, rng: &mut impl Rng) -> DailyRecord {
    let peak = calib.is_peak_month(record.month());
    let mut out = record.clone();
    for (i, count) in out.bin_counts.iter_mut().enumerate() {
        if let Some((lo, hi)) = bin_rule(*count, calib.thresholds[i], peak) {
            *count = (*count as i64 + rng.gen_range(lo..=hi)).max(0) as u32;
        }
    }
    out
}

pub const TEMP_DELTA_MIN: f64 = -0.1;
pub const TEMP_DELTA_MAX: f64 = 0.16;

fn perturb_stats(stats: &TempStats, rng: &mut impl Rng) -> TempStats {
    for _ in 0..=10 {
        let dmin = rng.gen_range(TEMP_DELTA_MIN..=TEMP_DELTA_MAX);
        let dmax = rng.gen_range(TEMP_DELTA_MIN..=TEMP_DELTA_MAX);
        let (min, max) = (stats.min + dmin, stats.max + dmax);
        if min > max {
            continue;
        }
        let range = max - min;
        let std = if stats.range > 0.0 {
            stats.std * range / stats.range
        } else {
            stats.std
        };
        return TempStats {
            min,
            max,
            mean: (stats.mean + (dmin + dmax) / 2.0).clamp(min, max),
            std,
            range,
        };
    }
    *stats
}

/// Shifts day and night minima and maxima by independent draws in
/// `[-0.1, 0.16]` and recomputes the dependent statistics.
pub fn augment_temperature(record: &DailyRecord, rng: &mut impl Rng) -> DailyRecord {
    let mut out = record.clone();
    out.temp_day = perturb_stats(&record.temp_day, rng);
    out.temp_night = perturb_stats(&record.temp_night, rng);
    out
}

/// Augments the input rows of a seeded half of the training samples and
/// re-normalizes them. Targets are left as built.
pub fn augment_pass(
    mut samples: Vec<SequenceSample>,
    split: Split,
    calibs: &Calibrations,
    seed: u64,
) -> Result<Vec<SequenceSample>> {
    if split != Split::Train {
        return Err(Error::Config("augmentation applies to the training split only".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample_indices(&mut rng, samples.len(), samples.len() / 2);
    for idx in chosen {
        let s = &mut samples[idx];
        let calib = calibs
            .get(&s.segment_id)
            .ok_or_else(|| Error::Config(format!("no calibration for segment `{}`", s.segment_id)))?;
        let l = s.seq_len();
        if s.raw.len() < l {
            return Err(Error::Insufficient("augmentation needs the source records".into()));
        }
        let mut srng = ChaCha8Rng::seed_from_u64(mix_seed(seed, idx as u64));
        for rec in &mut s.raw[..l] {
            let binned = augment_bins(rec, calib, &mut srng);
            *rec = augment_temperature(&binned, &mut srng);
        }
        s.x = normalized_rows(&s.raw[..l], calib);
        s.augmented = true;
    }
    Ok(samples)
}

const SAMPLE_MAGIC: &[u8; 4] = b"CYDS";
const SAMPLE_VERSION: u32 = 1;

/// Flat little-endian sample file:
///
/// ```text
/// "CYDS" | u32 version | u32 L | u32 F | u32 H | u32 count
/// per sample: f64 X[L*F] | u8 Y[H*classes] | i32 anchor (days from CE)
///             | str segment | u8 y_anchor[classes] | u8 augmented
/// ```
pub fn samples_to_bytes(samples: &[SequenceSample], seq_len: usize, horizon: usize) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(SAMPLE_MAGIC);
    w.u32(SAMPLE_VERSION);
    for v in [seq_len, N_FEATURES, horizon, samples.len()] {
        w.u32(v as u32);
    }
    for s in samples {
        if s.x.shape() != (seq_len, N_FEATURES) || s.y.len() != horizon * N_CLASSES {
            return Err(Error::Shape(format!(
                "sample {} {}: shape does not match the file header",
                s.segment_id, s.anchor_date
            )));
        }
        for v in s.x.data() {
            w.f64(*v);
        }
        w.0.extend_from_slice(&s.y);
        w.i32(s.anchor_date.num_days_from_ce());
        w.str(&s.segment_id);
        w.0.extend_from_slice(&s.y_anchor);
        w.0.push(u8::from(s.augmented));
    }
    Ok(w.0)
}

pub fn samples_from_bytes(bytes: &[u8], context: &str) -> Result<(Vec<SequenceSample>, usize, usize)> {
    let mut r = Reader { bytes, pos: 0, context };
    if r.take(4)? != SAMPLE_MAGIC {
        return Err(Error::format(context, "not a sample file"));
    }
    let version = r.u32()?;
    if version != SAMPLE_VERSION {
        return Err(Error::format(context, format!("unsupported version {version}")));
    }
    let l = r.u32()? as usize;
    let f = r.u32()? as usize;
    let h = r.u32()? as usize;
    let count = r.u32()? as usize;
    if f != N_FEATURES {
        return Err(Error::Shape(format!("{context}: {f} features, expected {N_FEATURES}")));
    }
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut x = Vec::with_capacity(l * f);
        for _ in 0..l * f {
            x.push(r.f64()?);
        }
        let y = r.take(h * N_CLASSES)?.to_vec();
        if y.iter().any(|v| *v > 1) {
            return Err(Error::format(context, "targets must be 0 or 1"));
        }
        let days = r.i32()?;
        let anchor_date = NaiveDate::from_num_days_from_ce_opt(days)
            .ok_or_else(|| Error::format(context, format!("invalid date ordinal {days}")))?;
        let segment_id = r.str()?;
        let y_anchor: [u8; N_CLASSES] = r.take(N_CLASSES)?.try_into().unwrap();
        let augmented = r.take(1)?[0] != 0;
        let x = Tensor::from_vec(l, f, x);
        if !x.is_finite() {
            return Err(Error::Numerical(format!("{context}: non-finite features")));
        }
        out.push(SequenceSample {
            x,
            y,
            y_anchor,
            segment_id,
            anchor_date,
            augmented,
            raw: Vec::new(),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(context, "trailing bytes"));
    }
    Ok((out, l, h))
}

pub fn save_samples(path: &Path, samples: &[SequenceSample], seq_len: usize, horizon: usize) -> Result<()> {
    write_atomic(path, &samples_to_bytes(samples, seq_len, horizon)?)
}

pub fn load_samples(path: &Path) -> Result<Vec<SequenceSample>> {
    Ok(samples_from_bytes(&read_bytes(path)?, &path.display().to_string())?.0)
}

/// Parameters of the synthetic lake segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub segment_id: String,
    pub start_year: i32,
    pub years: u32,
    pub peak_months: Vec<u32>,
    /// Expected lowest-class pixel count at the height of an active bloom.
    pub amplitude: f64,
    /// Mean number of days between redraws of the bloom regime.
    pub persistence_days: f64,
    /// Probability that a redraw inside the season turns the bloom on.
    pub active_prob: f64,
    /// Relative multiplicative noise on counts and CI values.
    pub noise: f64,
    /// Per-day probability that a temperature grid has no valid pixel.
    pub temp_missing: f64,
    /// Mean cloud-masked fraction of CI pixels.
    pub ci_missing: f64,
    /// Probability that a CI acquisition date is absent altogether.
    pub date_missing: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            segment_id: "bay".into(),
            start_year: 2016,
            years: 4,
            peak_months: vec![7, 8, 9],
            amplitude: 40.0,
            persistence_days: 3.0,
            active_prob: 0.6,
            noise: 0.15,
            temp_missing: 0.05,
            ci_missing: 0.25,
            date_missing: 0.02,
            width: 16,
            height: 12,
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("synth.{name} must be in [0, 1], got {v}")))
            }
        };
        prob("active_prob", self.active_prob)?;
        prob("temp_missing", self.temp_missing)?;
        prob("ci_missing", self.ci_missing)?;
        prob("date_missing", self.date_missing)?;
        if self.segment_id.is_empty() || self.segment_id.contains(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-')) {
            return Err(Error::Config(format!(
                "synth.segment_id `{}` must be non-empty [A-Za-z0-9_-]",
                self.segment_id
            )));
        }
        if self.years == 0 {
            return Err(Error::Config("synth.years must be positive".into()));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::Config("synth.amplitude must be finite and non-negative".into()));
        }
        if !(self.persistence_days >= 1.0 && self.persistence_days.is_finite()) {
            return Err(Error::Config("synth.persistence_days must be at least 1".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config("synth.noise must be non-negative".into()));
        }
        if self.peak_months.is_empty() || self.peak_months.iter().any(|m| !(1..=12).contains(m)) {
            return Err(Error::Config("synth.peak_months must be non-empty, in 1..=12".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("synth grid must be at least 1x1".into()));
        }
        Ok(())
    }

    fn dates(&self) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(self.start_year, 1, 1).expect("valid year");
        let end = NaiveDate::from_ymd_opt(self.start_year + self.years as i32, 1, 1).expect("valid year");
        start.iter_days().take_while(|d| *d < end).collect()
    }
}

/// Latent state of one synthetic day.
#[derive(Debug, Clone, Copy)]
struct Latent {
    date: NaiveDate,
    envelope: f64,
    active: bool,
    air_temp: f64,
}

/// Seasonal bloom envelope: zero outside the extended season, a half sine
/// wave across it.
fn envelope(date: NaiveDate, peak_months: &[u32]) -> f64 {
    let ext = extend_months(peak_months);
    let (first, last) = (ext[0], *peak_months.iter().max().expect("non-empty"));
    let year = date.year();
    let start = NaiveDate::from_ymd_opt(year, first, 1).expect("valid month");
    let end = if last == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, last + 1, 1)
    }
    .expect("valid month");
    if date < start || date >= end {
        return 0.0;
    }
    let span = (end - start).num_days() as f64;
    let pos = (date - start).num_days() as f64 + 0.5;
    (std::f64::consts::PI * pos / span).sin()
}

fn latent_days(profile: &SynthProfile, rng: &mut ChaCha8Rng) -> Vec<Latent> {
    let redraw = 1.0 / profile.persistence_days;
    let mut active = false;
    let mut weather = 0.0;
    profile
        .dates()
        .into_iter()
        .map(|date| {
            if rng.gen_bool(redraw) {
                active = rng.gen_bool(profile.active_prob);
            }
            let z: f64 = StandardNormal.sample(rng);
            weather = 0.8 * weather + 0.9 * z;
            let doy = date.ordinal() as f64;
            Latent {
                date,
                envelope: envelope(date, &profile.peak_months),
                active,
                air_temp: 12.0 + 12.0 * (2.0 * std::f64::consts::PI * (doy - 110.0) / 365.25).sin() + weather,
            }
        })
        .collect()
}

const CLASS_WEIGHTS: [f64; N_CLASSES] = [1.0, 0.75, 0.5, 0.3, 0.15];
const INACTIVE_LEVEL: f64 = 0.03;

fn noisy(rng: &mut ChaCha8Rng, mean: f64, rel: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (mean * (1.0 + rel * z)).max(0.0)
}

fn synth_temp(rng: &mut ChaCha8Rng, centre: f64) -> TempStats {
    let std = 0.6 + 0.2 * rng.gen::<f64>();
    let min = centre - 2.0 * std - 0.3 * rng.gen::<f64>();
    let max = centre + 2.0 * std + 0.3 * rng.gen::<f64>();
    TempStats {
        min,
        max,
        mean: centre,
        std,
        range: max - min,
    }
}

/// Record-level synthetic series for one segment. Leading days before the
/// first valid temperature reading are dropped, as when assembling records
/// from rasters.
pub fn synth_series(profile: &SynthProfile, seed: u64) -> Result<Vec<DailyRecord>> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = latent_days(profile, &mut rng);
    let mut out: Vec<DailyRecord> = Vec::with_capacity(latent.len());
    for day in latent {
        let level = if day.active { 1.0 } else { INACTIVE_LEVEL };
        let mut counts = [0u32; N_CLASSES];
        for (c, w) in counts.iter_mut().zip(CLASS_WEIGHTS) {
            *c = noisy(&mut rng, profile.amplitude * w * day.envelope * level, profile.noise).round() as u32;
        }
        let d = synth_temp(&mut rng, day.air_temp);
        let n = synth_temp(&mut rng, day.air_temp - 4.0);
        let d = (!rng.gen_bool(profile.temp_missing)).then_some(d);
        let n = (!rng.gen_bool(profile.temp_missing)).then_some(n);
        match record_from_parts(&profile.segment_id, day.date, counts, d, n, out.last()) {
            Ok(r) => out.push(r),
            Err(Error::Insufficient(_)) if out.is_empty() => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub const SYNTH_NODATA: f64 = -9999.0;
const TEMP_GRID: usize = 4;

/// Raw inputs for one synthetic segment.
#[derive(Debug, Clone)]
pub struct SynthRasters {
    pub ci: RasterSeries,
    pub temp_day: RasterSeries,
    pub temp_night: RasterSeries,
    pub bathymetry: BathymetryGrid,
}

/// Pixel-level synthetic rasters driven by the same latent process as
/// [`synth_series`]: cloud gaps, absent dates, a shallow shoreline column and
/// small temperature grids that are occasionally fully missing.
pub fn synth_rasters(profile: &SynthProfile, seed: u64) -> Result<SynthRasters> {
    profile.validate()?;
    let (w, h) = (profile.width, profile.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = latent_days(profile, &mut rng);
    let pattern: Vec<f64> = (0..w * h)
        .map(|p| {
            let (x, y) = ((p % w) as f64 / w as f64, (p / w) as f64 / h as f64);
            0.4 + 0.6 * x + 0.2 * (std::f64::consts::PI * y).sin()
        })
        .collect();
    let depth = (0..w * h)
        .map(|p| if p % w == 0 { 1.0 } else { 3.0 + 10.0 * (p % w) as f64 / w as f64 })
        .collect();
    let (mut ci, mut day, mut night) = (Vec::new(), Vec::new(), Vec::new());
    for l in &latent {
        let level = if l.active { 1.0 } else { 0.15 };
        let intensity = 200.0 * l.envelope * level;
        let cloud = (rng.gen::<f64>() * 2.0 * profile.ci_missing).min(1.0);
        let absent = rng.gen_bool(profile.date_missing);
        let values: Vec<f64> = pattern
            .iter()
            .map(|g| {
                let v = noisy(&mut rng, intensity * g, profile.noise).round();
                let v = if v < 5.0 { 0.0 } else { v.min(CI_MAX) };
                if rng.gen_bool(cloud) {
                    SYNTH_NODATA
                } else {
                    v
                }
            })
            .collect();
        if !absent {
            ci.push((l.date, Grid::new(w, h, SYNTH_NODATA, values)?));
        }
        for (series, centre) in [(&mut day, l.air_temp), (&mut night, l.air_temp - 4.0)] {
            let missing = rng.gen_bool(profile.temp_missing);
            let values = (0..TEMP_GRID * TEMP_GRID)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if missing || rng.gen_bool(0.2) {
                        SYNTH_NODATA
                    } else {
                        ((centre + 1.2 * z) * 100.0).round() / 100.0
                    }
                })
                .collect();
            series.push((l.date, Grid::new(TEMP_GRID, TEMP_GRID, SYNTH_NODATA, values)?));
        }
    }
    Ok(SynthRasters {
        ci: RasterSeries::new(ci)?,
        temp_day: RasterSeries::new(day)?,
        temp_night: RasterSeries::new(night)?,
        bathymetry: BathymetryGrid::new(w, h, depth)?,
    })
}
