//! File-backed pipeline stages driven by one run configuration.
//!
//! Layout below the configured directories, per segment `<s>`:
//!
//! ```text
//! raw/<s>/{ci,temp_day,temp_night}/YYYY-MM-DD.grd, raw/<s>/bathy.grd
//! imputed/<s>/{ci,temp_day,temp_night}/..., imputed/<s>/impute_log.jsonl
//! calibration/<s>.toml     records/<s>.csv
//! datasets/{train,val,test}.bin
//! checkpoints/model.ckpt, checkpoints/history.csv
//! reports/per_day.csv, per_class.csv, pod_<s>.csv, f1_horizon.svg
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{
    augment_pass, balance, build_samples, load_samples, mix_seed, save_samples, select_split,
    synth_rasters, Calibrations, SequenceSample, Split, SplitSpec, SynthProfile, SYNTH_NODATA,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, persistence_forecast, write_report, Scored, DEFAULT_THRESHOLD};
use crate::features::{
    assemble_records, calibrate_thresholds, fit_bins, read_records_csv, write_records_csv,
    DailyRecord, FeatureNorm, SegmentCalibration, N_CLASSES, N_FEATURES,
};
use crate::impute::{impute_pipeline, ImputeConfig};
use crate::io::{read_to_string, write_atomic};
use crate::nn::{predict, Checkpoint, Model, ModelConfig, Tensor};
use crate::raster::{
    apply_depth_mask, load_series, save_grid, save_series, BathymetryGrid, Grid,
};
use crate::train::{fit, predict_samples, write_history, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raw: PathBuf,
    pub imputed: PathBuf,
    pub calibration: PathBuf,
    pub records: PathBuf,
    pub datasets: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let p = |s: &str| PathBuf::from("run").join(s);
        Paths {
            raw: p("raw"),
            imputed: p("imputed"),
            calibration: p("calibration"),
            records: p("records"),
            datasets: p("datasets"),
            checkpoints: p("checkpoints"),
            reports: p("reports"),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.raw,
            &mut self.imputed,
            &mut self.calibration,
            &mut self.records,
            &mut self.datasets,
            &mut self.checkpoints,
            &mut self.reports,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoints.join("model.ckpt")
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        let name = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        self.datasets.join(format!("{name}.bin"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDef {
    pub name: String,
    pub peak_months: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    /// Pixels shallower than this many meters are masked before imputation.
    pub min_depth: f64,
    pub balance: bool,
    pub augment: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            min_depth: 2.0,
            balance: true,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    pub segments: Vec<SegmentDef>,
    pub split: SplitSpec,
    #[serde(default)]
    pub dataset: DatasetOptions,
    #[serde(default)]
    pub impute: ImputeConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Template for `synth`; the segment name and peak months come from each
    /// segment definition.
    #[serde(default)]
    pub synth: SynthProfile,
}

impl RunConfig {
    /// A complete configuration with every default spelled out.
    pub fn example() -> Self {
        RunConfig {
            seed: 42,
            paths: Paths::default(),
            segments: vec![SegmentDef {
                name: "bay".into(),
                peak_months: vec![7, 8, 9],
            }],
            split: SplitSpec {
                train_years: vec![2016, 2017],
                val_years: vec![2018],
                test_years: vec![2019],
            },
            dataset: DatasetOptions::default(),
            impute: ImputeConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            synth: SynthProfile::default(),
        }
    }

    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        cfg.paths.resolve(base);
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("at least one segment is required".into()));
        }
        let mut names: Vec<&str> = self.segments.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("segment names must be unique".into()));
        }
        for s in &self.segments {
            SynthProfile {
                segment_id: s.name.clone(),
                peak_months: s.peak_months.clone(),
                ..self.synth.clone()
            }
            .validate()?;
        }
        if !(self.dataset.min_depth.is_finite()) {
            return Err(Error::Config("dataset.min_depth must be finite".into()));
        }
        self.split.validate()?;
        self.impute.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        if self.model.features != N_FEATURES || self.model.classes != N_CLASSES {
            return Err(Error::Config(format!(
                "model.features must be {N_FEATURES} and model.classes {N_CLASSES}"
            )));
        }
        Ok(())
    }

    fn segment_profile(&self, seg: &SegmentDef) -> SynthProfile {
        SynthProfile {
            segment_id: seg.name.clone(),
            peak_months: seg.peak_months.clone(),
            ..self.synth.clone()
        }
    }
}

/// Streams of the run seed, one per pipeline step.
mod stream {
    pub const SYNTH: u64 = 1;
    pub const BALANCE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const INIT: u64 = 4;
}

const VARIABLES: [&str; 3] = ["ci", "temp_day", "temp_night"];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn synth(cfg: &RunConfig) -> Result<Value> {
    let mut segs = Vec::new();
    for (i, seg) in cfg.segments.iter().enumerate() {
        let profile = cfg.segment_profile(seg);
        let r = synth_rasters(&profile, mix_seed(cfg.seed, stream::SYNTH + 16 * i as u64))?;
        let dir = cfg.paths.raw.join(&seg.name);
        save_series(&dir.join("ci"), &r.ci)?;
        save_series(&dir.join("temp_day"), &r.temp_day)?;
        save_series(&dir.join("temp_night"), &r.temp_night)?;
        let bathy = Grid::new(r.bathymetry.width, r.bathymetry.height, SYNTH_NODATA, r.bathymetry.depth.clone())?;
        save_grid(&dir.join("bathy.grd"), &bathy, false)?;
        segs.push(json!({
            "segment": seg.name,
            "ci_days": r.ci.len(),
            "ci_missing_fraction": crate::raster::missing_fraction(&r.ci)?,
        }));
    }
    Ok(json!({ "stage": "synth", "segments": segs }))
}

/// Imputes one series directory; returns the per-stage missing fractions
/// as JSON values.
pub fn impute_dir(input: &Path, output: &Path, cfg: &ImputeConfig, restore: bool, mask: Option<(&BathymetryGrid, f64)>) -> Result<Vec<Value>> {
    let mut series = load_series(input)?;
    if series.is_empty() {
        return Err(Error::Empty(format!("no .grd files in {}", input.display())));
    }
    if let Some((bathy, min_depth)) = mask {
        series = apply_depth_mask(&series, bathy, min_depth)?;
    }
    let out = impute_pipeline(&series, cfg, restore)?;
    save_series(output, &out.series)?;
    Ok(out
        .stages
        .iter()
        .map(|s| json!({ "stage": s.stage, "missing_fraction": s.missing_fraction }))
        .collect())
}

fn jsonl(lines: &[Value]) -> String {
    lines.iter().map(|v| format!("{v}\n")).collect()
}

pub fn impute(cfg: &RunConfig) -> Result<Value> {
    let mut segs = Vec::new();
    for seg in &cfg.segments {
        let raw = cfg.paths.raw.join(&seg.name);
        let out = cfg.paths.imputed.join(&seg.name);
        let bathy = BathymetryGrid::load(&raw.join("bathy.grd"))?;
        let mut log = Vec::new();
        for var in VARIABLES {
            let is_ci = var == "ci";
            let mask = is_ci.then_some((&bathy, cfg.dataset.min_depth));
            for mut line in impute_dir(&raw.join(var), &out.join(var), &cfg.impute, is_ci, mask)? {
                line["segment"] = json!(seg.name);
                line["variable"] = json!(var);
                log.push(line);
            }
        }
        write_atomic(&out.join("impute_log.jsonl"), jsonl(&log).as_bytes())?;
        segs.push(json!({ "segment": seg.name, "stages": log }));
    }
    Ok(json!({ "stage": "impute", "segments": segs }))
}

fn in_years(date: chrono::NaiveDate, years: &[i32]) -> bool {
    use chrono::Datelike;
    years.contains(&date.year())
}

/// Fits bin edges, thresholds and feature normalization on training years
/// and writes per-segment calibrations and daily records.
pub fn calibrate(cfg: &RunConfig) -> Result<Value> {
    let mut segs = Vec::new();
    let train_years = &cfg.split.train_years;
    for seg in &cfg.segments {
        let dir = cfg.paths.imputed.join(&seg.name);
        let ci = load_series(&dir.join("ci"))?;
        let day = load_series(&dir.join("temp_day"))?;
        let night = load_series(&dir.join("temp_night"))?;
        let train_ci: Vec<f64> = ci
            .iter()
            .filter(|(d, _)| in_years(*d, train_years))
            .flat_map(|(_, g)| g.valid_values().collect::<Vec<_>>())
            .collect();
        let edges = fit_bins(&train_ci)?;
        let provisional = SegmentCalibration::new(&seg.name, edges, [1; N_CLASSES], seg.peak_months.clone(), FeatureNorm::default())?;
        let (records, dropped) = assemble_records(&seg.name, &ci, &day, &night, &provisional)?;
        let train: Vec<DailyRecord> = records.iter().filter(|r| in_years(r.date, train_years)).cloned().collect();
        let counts: Vec<[u32; N_CLASSES]> = train.iter().map(|r| r.bin_counts).collect();
        let thresholds = calibrate_thresholds(&counts)?;
        let norm = FeatureNorm::fit(&train)?;
        let calib = SegmentCalibration::new(&seg.name, edges, thresholds, seg.peak_months.clone(), norm)?;
        create_dir(&cfg.paths.calibration)?;
        calib.save(&cfg.paths.calibration.join(format!("{}.toml", seg.name)))?;
        create_dir(&cfg.paths.records)?;
        write_records_csv(&cfg.paths.records.join(format!("{}.csv", seg.name)), &records)?;
        segs.push(json!({
            "segment": seg.name,
            "bin_edges": edges,
            "thresholds": thresholds,
            "records": records.len(),
            "dropped_leading": dropped,
            "carried_temperature": records.iter().filter(|r| !r.valid_temp).count(),
        }));
    }
    Ok(json!({ "stage": "calibrate", "segments": segs }))
}

pub fn load_calibrations(cfg: &RunConfig) -> Result<Calibrations> {
    cfg.segments
        .iter()
        .map(|s| {
            let c = SegmentCalibration::load(&cfg.paths.calibration.join(format!("{}.toml", s.name)))?;
            Ok((s.name.clone(), c))
        })
        .collect()
}

/// Overrides for [`dataset`]; unset fields fall back to the run config.
#[derive(Debug, Clone, Default)]
pub struct DatasetArgs {
    pub records: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub augment: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn dataset(cfg: &RunConfig, split: Split, args: &DatasetArgs) -> Result<Value> {
    if split != Split::Train && args.augment == Some(true) {
        return Err(Error::Config("augmentation applies to the training split only".into()));
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let mut calibs = Calibrations::new();
    let mut samples = Vec::new();
    let segments: Vec<(String, PathBuf, PathBuf)> = match (&args.records, &args.calibration) {
        (Some(r), Some(c)) => {
            let calib = SegmentCalibration::load(c)?;
            vec![(calib.segment_id.clone(), r.clone(), c.clone())]
        }
        (None, None) => cfg
            .segments
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    cfg.paths.records.join(format!("{}.csv", s.name)),
                    cfg.paths.calibration.join(format!("{}.toml", s.name)),
                )
            })
            .collect(),
        _ => return Err(Error::Config("--records and --calib must be given together".into())),
    };
    for (name, records_path, calib_path) in segments {
        let calib = SegmentCalibration::load(&calib_path)?;
        let records = read_records_csv(&records_path)?;
        let built = build_samples(&records, &calib, cfg.model.seq_len, cfg.model.horizon)?;
        samples.extend(select_split(built, &cfg.split, split));
        calibs.insert(name, calib);
    }
    let built = samples.len();
    if split == Split::Train {
        if cfg.dataset.balance {
            samples = balance(samples, &calibs, mix_seed(seed, stream::BALANCE))?;
        }
        if args.augment.unwrap_or(cfg.dataset.augment) {
            samples = augment_pass(samples, split, &calibs, mix_seed(seed, stream::AUGMENT))?;
        }
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.dataset(split));
    save_samples(&out, &samples, cfg.model.seq_len, cfg.model.horizon)?;
    Ok(json!({
        "stage": "dataset",
        "split": split,
        "windows": built,
        "samples": samples.len(),
        "positive_samples": samples.iter().filter(|s| s.has_positive()).count(),
        "augmented": samples.iter().filter(|s| s.augmented).count(),
        "path": out.display().to_string(),
    }))
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub dataset: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<Value> {
    let train_path = args.dataset.clone().unwrap_or_else(|| cfg.paths.dataset(Split::Train));
    let val_path = args.val.clone().unwrap_or_else(|| cfg.paths.dataset(Split::Val));
    let train_set = load_samples(&train_path)?;
    let val_set = load_samples(&val_path)?;
    if train_set.is_empty() {
        return Err(Error::Empty(format!("{}: training split has no samples", train_path.display())));
    }
    let model = Model::new(cfg.model.clone(), mix_seed(cfg.seed, stream::INIT))?;
    let result = fit(&train_set, &val_set, model, &cfg.train)?;
    let norms = load_calibrations(cfg)?
        .into_iter()
        .map(|(name, c)| (name, c.norm))
        .collect();
    let ckpt = Checkpoint { model: result.model, norms };
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.checkpoint());
    if let Some(dir) = out.parent() {
        create_dir(dir)?;
    }
    ckpt.save(&out)?;
    let history_path = out.with_file_name("history.csv");
    write_history(&history_path, &result.history)?;
    let best = result.history.get(result.best_epoch.saturating_sub(1));
    Ok(json!({
        "stage": "train",
        "train_samples": train_set.len(),
        "val_samples": val_set.len(),
        "epochs_run": result.history.len(),
        "best_epoch": result.best_epoch,
        "best_val_f1": best.and_then(|b| b.val_f1),
        "final_loss": result.history.last().map(|h| h.loss),
        "checkpoint": out.display().to_string(),
        "history": history_path.display().to_string(),
    }))
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<Value> {
    let ckpt = Checkpoint::load(&args.model.clone().unwrap_or_else(|| cfg.paths.checkpoint()))?;
    let test_path = args.dataset.clone().unwrap_or_else(|| cfg.paths.dataset(Split::Test));
    let test = load_samples(&test_path)?;
    if test.is_empty() {
        return Err(Error::Empty(format!("{}: no test samples", test_path.display())));
    }
    let horizon = ckpt.model.config.horizon;
    let probs = predict_samples(&ckpt.model, &test)?;
    let persistence: Vec<Vec<f64>> = test
        .iter()
        .map(|s| persistence_forecast(&s.y_anchor, horizon).into_iter().map(f64::from).collect())
        .collect();
    let model_scores: Vec<&[f64]> = probs.iter().map(Tensor::data).collect();
    let base_scores: Vec<&[f64]> = persistence.iter().map(Vec::as_slice).collect();
    let model_report = evaluate(&scored(&test, &model_scores), horizon, DEFAULT_THRESHOLD);
    let base_report = evaluate(&scored(&test, &base_scores), horizon, DEFAULT_THRESHOLD);
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.reports.clone());
    create_dir(&out)?;
    let files = write_report(&out, &model_report, &base_report)?;
    let f1 = |r: &crate::eval::EvalReport| r.per_day.iter().map(|d| d.micro.f1).collect::<Vec<_>>();
    Ok(json!({
        "stage": "eval",
        "samples": test.len(),
        "model_f1_per_day": f1(&model_report),
        "persistence_f1_per_day": f1(&base_report),
        "model_auc_day_last": model_report.per_day.last().and_then(|d| d.auc),
        "files": files,
        "dir": out.display().to_string(),
    }))
}

fn scored<'a>(samples: &'a [SequenceSample], scores: &[&'a [f64]]) -> Vec<Scored<'a>> {
    samples
        .iter()
        .zip(scores)
        .map(|(s, sc)| Scored {
            segment_id: &s.segment_id,
            anchor_date: s.anchor_date,
            scores: sc,
            targets: &s.y,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Forecast {
    pub segment: String,
    pub anchor_date: chrono::NaiveDate,
    pub labels: Vec<[u8; N_CLASSES]>,
    pub probabilities: Vec<[f64; N_CLASSES]>,
}

/// Forecast from the latest `seq_len` contiguous records of one segment.
pub fn forecast_records(ckpt: &Checkpoint, records: &[DailyRecord], segment: &str) -> Result<Forecast> {
    let cfg = &ckpt.model.config;
    let norm = ckpt
        .norm_for(segment)
        .ok_or_else(|| Error::Config(format!("checkpoint has no normalization for `{segment}`")))?;
    if records.len() < cfg.seq_len {
        return Err(Error::Insufficient(format!(
            "{} records, forecast needs {}",
            records.len(),
            cfg.seq_len
        )));
    }
    let window = &records[records.len() - cfg.seq_len..];
    if (window[cfg.seq_len - 1].date - window[0].date).num_days() != cfg.seq_len as i64 - 1 {
        return Err(Error::Insufficient("latest input window has a calendar gap".into()));
    }
    let mut x = Tensor::zeros(cfg.seq_len, cfg.features);
    for (r, rec) in window.iter().enumerate() {
        x.row_mut(r).copy_from_slice(&norm.apply(&rec.features()));
    }
    let probs = predict(&ckpt.model, &[&x])?.remove(0);
    let mut labels = Vec::new();
    let mut probabilities = Vec::new();
    for h in 0..cfg.horizon {
        let row: [f64; N_CLASSES] = probs.row(h).try_into().map_err(|_| Error::Shape("model classes".into()))?;
        labels.push(row.map(|p| u8::from(p > DEFAULT_THRESHOLD)));
        probabilities.push(row);
    }
    Ok(Forecast {
        segment: segment.to_string(),
        anchor_date: window[cfg.seq_len - 1].date,
        labels,
        probabilities,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ForecastArgs {
    pub model: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub segment: Option<String>,
}

pub fn forecast(cfg: &RunConfig, args: &ForecastArgs) -> Result<Forecast> {
    let ckpt = Checkpoint::load(&args.model.clone().unwrap_or_else(|| cfg.paths.checkpoint()))?;
    let segment = args
        .segment
        .clone()
        .unwrap_or_else(|| cfg.segments[0].name.clone());
    let records_path = args
        .records
        .clone()
        .unwrap_or_else(|| cfg.paths.records.join(format!("{segment}.csv")));
    let records = read_records_csv(&records_path)?;
    forecast_records(&ckpt, &records, &segment)
}
