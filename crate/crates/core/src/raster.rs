//! Daily pixel grids, the GRD text format, depth masking and missingness
//! accounting.
//!
//! A [`RasterSeries`] is indexed by calendar date. Dates absent from the
//! series are treated as all-missing days by the imputation passes but are
//! never synthesized.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};

/// Largest valid cyanobacterial index value.
pub const CI_MAX: f64 = 253.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Observed,
    Locf,
    Weighted,
    Restored,
    Missing,
}

impl Provenance {
    pub fn code(self) -> char {
        match self {
            Provenance::Observed => 'O',
            Provenance::Locf => 'L',
            Provenance::Weighted => 'W',
            Provenance::Restored => 'R',
            Provenance::Missing => 'M',
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Some(match code {
            "O" => Provenance::Observed,
            "L" => Provenance::Locf,
            "W" => Provenance::Weighted,
            "R" => Provenance::Restored,
            "M" => Provenance::Missing,
            _ => return None,
        })
    }

    pub fn is_imputed(self) -> bool {
        matches!(
            self,
            Provenance::Locf | Provenance::Weighted | Provenance::Restored
        )
    }
}

/// One day of pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    nodata: f64,
    values: Vec<f64>,
    provenance: Vec<Provenance>,
    consec_imputed: Vec<u16>,
}

impl Grid {
    /// Builds a grid whose provenance is derived from the nodata sentinel.
    pub fn new(width: usize, height: usize, nodata: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        check_nodata(nodata)?;
        let provenance = values
            .iter()
            .map(|&v| {
                if v == nodata {
                    Provenance::Missing
                } else {
                    Provenance::Observed
                }
            })
            .collect();
        Ok(Grid {
            width,
            height,
            nodata,
            consec_imputed: vec![0; values.len()],
            values,
            provenance,
        })
    }

    /// Builds a grid with explicit provenance; `Missing` must coincide with
    /// the nodata sentinel.
    pub fn with_provenance(
        width: usize,
        height: usize,
        nodata: f64,
        values: Vec<f64>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let mut grid = Grid::new(width, height, nodata, values)?;
        if provenance.len() != grid.values.len() {
            return Err(Error::Shape(format!(
                "provenance has {} entries for {} pixels",
                provenance.len(),
                grid.values.len()
            )));
        }
        for (i, (&p, &v)) in provenance.iter().zip(&grid.values).enumerate() {
            if (p == Provenance::Missing) != (v == nodata) {
                return Err(Error::format(
                    "grid",
                    format!("pixel {i}: provenance {p:?} inconsistent with value {v}"),
                ));
            }
        }
        grid.provenance = provenance;
        Ok(grid)
    }

    /// A grid where every pixel is missing.
    pub fn missing(width: usize, height: usize, nodata: f64) -> Result<Self> {
        Grid::new(width, height, nodata, vec![nodata; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn consec_imputed(&self) -> &[u16] {
        &self.consec_imputed
    }

    pub fn value(&self, pixel: usize) -> Option<f64> {
        match self.provenance[pixel] {
            Provenance::Missing => None,
            _ => Some(self.values[pixel]),
        }
    }

    /// Values of all non-missing pixels.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.provenance)
            .filter(|(_, p)| **p != Provenance::Missing)
            .map(|(v, _)| *v)
    }

    pub fn missing_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| **p == Provenance::Missing)
            .count()
    }

    pub(crate) fn set(&mut self, pixel: usize, value: f64, provenance: Provenance) {
        debug_assert!(provenance != Provenance::Missing && value != self.nodata);
        self.values[pixel] = value;
        self.provenance[pixel] = provenance;
    }

    pub(crate) fn set_missing(&mut self, pixel: usize) {
        self.values[pixel] = self.nodata;
        self.provenance[pixel] = Provenance::Missing;
        self.consec_imputed[pixel] = 0;
    }

    pub(crate) fn set_consec(&mut self, pixel: usize, count: u16) {
        self.consec_imputed[pixel] = count;
    }

    fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Parses the GRD text format.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(context, "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "GRD1" {
            return Err(Error::format(context, format!("bad header `{header}`")));
        }
        let width: usize = parse_field(fields[1], "width", context)?;
        let height: usize = parse_field(fields[2], "height", context)?;
        let nodata: f64 = parse_field(fields[3], "nodata", context)?;

        let prov_line = lines
            .next()
            .ok_or_else(|| Error::format(context, "missing PROV line"))?;
        let with_prov = match prov_line.split_whitespace().collect::<Vec<_>>()[..] {
            ["PROV", "0"] => false,
            ["PROV", "1"] => true,
            _ => return Err(Error::format(context, format!("bad PROV line `{prov_line}`"))),
        };

        let n = width * height;
        let mut tokens = lines.flat_map(str::split_whitespace);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let tok = tokens
                .next()
                .ok_or_else(|| Error::format(context, format!("expected {n} values")))?;
            let v: f64 = parse_field(tok, "value", context)?;
            if !v.is_finite() {
                return Err(Error::format(context, format!("non-finite value `{tok}`")));
            }
            values.push(v);
        }
        let grid = if with_prov {
            let mut prov = Vec::with_capacity(n);
            for _ in 0..n {
                let tok = tokens.next().ok_or_else(|| {
                    Error::format(context, format!("expected {n} provenance codes"))
                })?;
                prov.push(Provenance::from_code(tok).ok_or_else(|| {
                    Error::format(context, format!("bad provenance code `{tok}`"))
                })?);
            }
            Grid::with_provenance(width, height, nodata, values, prov)
        } else {
            Grid::new(width, height, nodata, values)
        }
        .map_err(|e| match e {
            Error::Format { message, .. } => Error::format(context, message),
            other => other,
        })?;
        if tokens.next().is_some() {
            return Err(Error::format(context, "trailing tokens after payload"));
        }
        Ok(grid)
    }

    /// Serializes to the canonical GRD text form: one image row per line.
    pub fn to_grd(&self, with_provenance: bool) -> String {
        let mut out = String::with_capacity(self.values.len() * 6 + 32);
        let _ = writeln!(out, "GRD1 {} {} {}", self.width, self.height, self.nodata);
        let _ = writeln!(out, "PROV {}", u8::from(with_provenance));
        for row in self.values.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        if with_provenance {
            for row in self.provenance.chunks(self.width.max(1)) {
                let line: Vec<String> = row.iter().map(|p| p.code().to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

fn check_nodata(nodata: f64) -> Result<()> {
    if !nodata.is_finite() || (0.0..=CI_MAX).contains(&nodata) {
        return Err(Error::format(
            "grid",
            format!("nodata sentinel {nodata} must be finite and outside [0, 253]"),
        ));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(tok: &str, what: &str, context: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(context, format!("bad {what} `{tok}`")))
}

pub fn load_grid(path: &Path) -> Result<Grid> {
    let text = read_to_string(path)?;
    Grid::parse(&text, &path.display().to_string())
}

pub fn save_grid(path: &Path, grid: &Grid, with_provenance: bool) -> Result<()> {
    write_atomic(path, grid.to_grd(with_provenance).as_bytes())
}

/// Per-pixel water depth in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct BathymetryGrid {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl BathymetryGrid {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::Shape(format!(
                "bathymetry {width}x{height} needs {} depths, got {}",
                width * height,
                depth.len()
            )));
        }
        Ok(BathymetryGrid {
            width,
            height,
            depth,
        })
    }

    /// Loads `bathy.grd`; nodata depths become `NaN` and are always masked.
    pub fn load(path: &Path) -> Result<Self> {
        let grid = load_grid(path)?;
        let depth = grid
            .values()
            .iter()
            .zip(grid.provenance())
            .map(|(&v, &p)| if p == Provenance::Missing { f64::NAN } else { v })
            .collect();
        BathymetryGrid::new(grid.width(), grid.height(), depth)
    }
}

/// Grids ordered by strictly increasing date, all with the same dimensions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RasterSeries {
    dates: Vec<NaiveDate>,
    grids: Vec<Grid>,
}

impl RasterSeries {
    /// Builds a series from unordered `(date, grid)` pairs.
    pub fn new(mut entries: Vec<(NaiveDate, Grid)>) -> Result<Self> {
        entries.sort_by_key(|(d, _)| *d);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicateDate(pair[0].0));
            }
        }
        if let Some((_, first)) = entries.first() {
            for (date, grid) in &entries {
                if !first.same_shape(grid) {
                    return Err(Error::Shape(format!(
                        "grid for {date} is {}x{}, expected {}x{}",
                        grid.width, grid.height, first.width, first.height
                    )));
                }
            }
        }
        let (dates, grids) = entries.into_iter().unzip();
        let mut series = RasterSeries { dates, grids };
        series.refresh_counters();
        Ok(series)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, &Grid)> {
        self.dates.iter().copied().zip(&self.grids)
    }

    pub fn grid_on(&self, date: NaiveDate) -> Option<&Grid> {
        self.index_of(date).map(|i| &self.grids[i])
    }

    pub fn pixel_count(&self) -> usize {
        self.grids.first().map_or(0, Grid::len)
    }

    pub(crate) fn grids_mut(&mut self) -> &mut [Grid] {
        &mut self.grids
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Index of the grid `days` calendar days before entry `idx`, if present.
    pub fn index_days_before(&self, idx: usize, days: i64) -> Option<usize> {
        let target = self.dates[idx] - Duration::days(days);
        // Dates are strictly increasing, so the target can only sit within
        // the `days` entries preceding `idx`.
        let lo = idx.saturating_sub(days as usize);
        self.dates[lo..idx]
            .binary_search(&target)
            .ok()
            .map(|i| i + lo)
    }

    /// Recomputes each pixel's run of consecutive imputed calendar days from
    /// provenance alone.
    pub fn refresh_counters(&mut self) {
        for t in 0..self.grids.len() {
            let prev = self.index_days_before(t, 1);
            for px in 0..self.grids[t].len() {
                let count = if self.grids[t].provenance[px].is_imputed() {
                    let before = prev.map_or(0, |p| self.grids[p].consec_imputed[px]);
                    before.saturating_add(1)
                } else {
                    0
                };
                self.grids[t].consec_imputed[px] = count;
            }
        }
    }
}

fn parse_date_stem(path: &Path) -> Result<NaiveDate> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path.display().to_string(), "unreadable file name"))?;
    NaiveDate::parse_from_str(stem, "%Y-%m-%d").map_err(|_| {
        Error::format(
            path.display().to_string(),
            "file name is not a YYYY-MM-DD date",
        )
    })
}

/// Loads every `YYYY-MM-DD.grd` file in `dir`. Other files are ignored.
pub fn load_series(dir: &Path) -> Result<RasterSeries> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("grd") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let date = parse_date_stem(&path)?;
        out.push((date, load_grid(&path)?));
    }
    RasterSeries::new(out)
}

/// Writes one `YYYY-MM-DD.grd` per day, provenance included.
pub fn save_series(dir: &Path, series: &RasterSeries) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (date, grid) in series.iter() {
        let path = dir.join(format!("{}.grd", date.format("%Y-%m-%d")));
        save_grid(&path, grid, true)?;
    }
    Ok(())
}

/// Marks every pixel shallower than `min_depth` meters as missing on every
/// day. A depth exactly equal to `min_depth` is kept.
pub fn apply_depth_mask(
    series: &RasterSeries,
    bathy: &BathymetryGrid,
    min_depth: f64,
) -> Result<RasterSeries> {
    let mut out = series.clone();
    if let Some(first) = series.grids.first() {
        if first.width != bathy.width || first.height != bathy.height {
            return Err(Error::Shape(format!(
                "bathymetry {}x{} does not match series {}x{}",
                bathy.width, bathy.height, first.width, first.height
            )));
        }
    }
    let shallow: Vec<usize> = bathy
        .depth
        .iter()
        .enumerate()
        .filter(|(_, d)| !(**d >= min_depth))
        .map(|(i, _)| i)
        .collect();
    for grid in out.grids_mut() {
        for &px in &shallow {
            grid.set_missing(px);
        }
    }
    out.refresh_counters();
    Ok(out)
}

/// Share of missing pixels across every grid of the series.
pub fn missing_fraction(series: &RasterSeries) -> Result<f64> {
    let total: usize = series.grids.iter().map(Grid::len).sum();
    if total == 0 {
        return Err(Error::Empty("missing_fraction of an empty series".into()));
    }
    let missing: usize = series.grids.iter().map(Grid::missing_count).sum();
    Ok(missing as f64 / total as f64)
}
