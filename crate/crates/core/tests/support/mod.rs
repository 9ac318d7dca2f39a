//! Brute-force reference for the imputation passes, written against a dense
//! calendar-day cube rather than the library's sparse series.

#![allow(dead_code)]

use chrono::NaiveDate;
use cyanocast::raster::{Provenance, RasterSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    /// The whole day is not in the series.
    Absent,
    Missing,
    Obs(f64),
    Locf(f64),
    Wtd(f64),
    Rst(f64),
}

impl Cell {
    pub fn value(self) -> Option<f64> {
        match self {
            Cell::Obs(v) | Cell::Locf(v) | Cell::Wtd(v) | Cell::Rst(v) => Some(v),
            Cell::Absent | Cell::Missing => None,
        }
    }

    fn imputed(self) -> bool {
        matches!(self, Cell::Locf(_) | Cell::Wtd(_) | Cell::Rst(_))
    }
}

/// `cells[day][pixel]` over every calendar day from the first to the last
/// date.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub first: NaiveDate,
    pub cells: Vec<Vec<Cell>>,
}

impl Cube {
    pub fn from_series(s: &RasterSeries) -> Cube {
        let first = s.dates()[0];
        let days = (*s.dates().last().unwrap() - first).num_days() as usize + 1;
        let px = s.pixel_count();
        let mut cells = vec![vec![Cell::Absent; px]; days];
        for (date, grid) in s.iter() {
            let d = (date - first).num_days() as usize;
            for p in 0..px {
                let v = grid.values()[p];
                cells[d][p] = match grid.provenance()[p] {
                    Provenance::Missing => Cell::Missing,
                    Provenance::Observed => Cell::Obs(v),
                    Provenance::Locf => Cell::Locf(v),
                    Provenance::Weighted => Cell::Wtd(v),
                    Provenance::Restored => Cell::Rst(v),
                };
            }
        }
        Cube { first, cells }
    }

    fn get(&self, day: isize, p: usize) -> Cell {
        if day < 0 {
            Cell::Absent
        } else {
            self.cells[day as usize][p]
        }
    }

    /// Consecutive imputed days ending at `day`, walking back one calendar
    /// day at a time.
    fn streak(&self, day: isize, p: usize) -> u32 {
        let mut n = 0;
        let mut d = day;
        while self.get(d, p).imputed() {
            n += 1;
            d -= 1;
        }
        n
    }

    fn window_mean(&self, day: isize, p: usize, min_valid: usize) -> Option<f64> {
        let weights = [3.0, 2.0, 1.0];
        let mut num = 0.0;
        let mut den = 0.0;
        let mut valid = 0;
        for k in 0..3 {
            if let Some(v) = self.get(day - 1 - k as isize, p).value() {
                num += weights[k] * v;
                den += weights[k];
                valid += 1;
            }
        }
        (valid >= min_valid).then(|| num / den)
    }

    pub fn missing_fraction(&self) -> f64 {
        let present: Vec<&Cell> = self.cells.iter().flatten().filter(|c| **c != Cell::Absent).collect();
        present.iter().filter(|c| ***c == Cell::Missing).count() as f64 / present.len() as f64
    }
}

pub fn oracle_locf(input: &Cube) -> Cube {
    let mut out = input.clone();
    for d in 1..input.cells.len() {
        for p in 0..input.cells[d].len() {
            if let (Cell::Missing, Cell::Obs(v)) = (input.cells[d][p], input.cells[d - 1][p]) {
                out.cells[d][p] = Cell::Locf(v);
            }
        }
    }
    out
}

pub fn oracle_weighted(input: &Cube) -> Cube {
    let mut out = input.clone();
    for d in 0..out.cells.len() {
        for p in 0..out.cells[d].len() {
            if out.cells[d][p] != Cell::Missing || out.streak(d as isize - 1, p) >= 2 {
                continue;
            }
            if let Some(v) = out.window_mean(d as isize, p, 2) {
                out.cells[d][p] = Cell::Wtd(v);
            }
        }
    }
    out
}

pub fn oracle_restore(input: &Cube) -> Cube {
    let mut out = input.clone();
    let days = input.cells.len();
    for p in 0..input.cells.first().map_or(0, Vec::len) {
        let valid: Vec<usize> = (0..days).filter(|d| input.cells[*d][p].value().is_some()).collect();
        for pair in valid.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let gap = b - a - 1;
            let flanks = input.cells[a][p].value().unwrap() > 0.0 && input.cells[b][p].value().unwrap() > 0.0;
            if !(3..=7).contains(&gap) || !flanks {
                continue;
            }
            for d in a + 1..b {
                if out.cells[d][p] == Cell::Absent {
                    continue;
                }
                if let Some(v) = out.window_mean(d as isize, p, 1) {
                    out.cells[d][p] = Cell::Rst(v);
                }
            }
        }
    }
    out
}

/// The oracle's full pipeline: every stage, in order, including the input.
pub fn oracle_pipeline(input: &Cube) -> Vec<Cube> {
    let locf = oracle_locf(input);
    let weighted = oracle_weighted(&locf);
    let restored = oracle_restore(&weighted);
    vec![input.clone(), locf, weighted, restored]
}
