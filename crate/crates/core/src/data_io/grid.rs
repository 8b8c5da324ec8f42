use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub row: usize,
    pub col: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub stations: Vec<Station>,
    #[serde(default)]
    pub features: Vec<String>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidInput("grid dimensions must be positive".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.stations {
            if s.row >= self.rows || s.col >= self.cols {
                return Err(Error::InvalidInput(format!(
                    "station `{}` at ({}, {}) lies outside the {}x{} grid",
                    s.id, s.row, s.col, self.rows, self.cols
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate station id `{}`", s.id)));
            }
        }
        Ok(())
    }
}

/// Row-major grid with missing cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<f64>>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::mismatch("grid cells", rows * cols, cells.len()));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.cells[r * self.cols + c]
    }

    pub fn known(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Places station readings on the grid. Stations sharing a cell are averaged;
/// cells without a station stay missing.
pub fn grid_from_stations(spec: &GridSpec, readings: &BTreeMap<String, f64>) -> Result<Grid> {
    spec.validate()?;
    let mut sums = vec![(0.0, 0usize); spec.rows * spec.cols];
    for s in &spec.stations {
        if let Some(&v) = readings.get(&s.id) {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("station `{}` reading is not finite", s.id)));
            }
            let cell = &mut sums[s.row * spec.cols + s.col];
            cell.0 += v;
            cell.1 += 1;
        }
    }
    let cells = sums
        .into_iter()
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect();
    Grid::new(spec.rows, spec.cols, cells)
}

/// Fills each missing cell with the mean of its `k` nearest known cells by
/// Euclidean distance on grid indices, ties broken by (row, col).
pub fn knn_impute(grid: &Grid, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let known: Vec<(usize, usize, f64)> = (0..grid.rows)
        .flat_map(|r| (0..grid.cols).map(move |c| (r, c)))
        .filter_map(|(r, c)| grid.get(r, c).map(|v| (r, c, v)))
        .collect();
    if known.len() < k {
        return Err(Error::InvalidInput(format!(
            "grid has {} known cells, fewer than k = {k}",
            known.len()
        )));
    }
    let mut out = Matrix::zeros(grid.rows, grid.cols);
    let mut keyed: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(known.len());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            out[(r, c)] = match grid.get(r, c) {
                Some(v) => v,
                None => {
                    keyed.clear();
                    keyed.extend(known.iter().map(|&(kr, kc, v)| {
                        let (dr, dc) = (kr.abs_diff(r), kc.abs_diff(c));
                        (dr * dr + dc * dc, kr, kc, v)
                    }));
                    let key = |e: &(usize, usize, usize, f64)| (e.0, e.1, e.2);
                    if k < keyed.len() {
                        keyed.select_nth_unstable_by_key(k - 1, key);
                    }
                    let mut nearest = keyed[..k].to_vec();
                    // fixed summation order keeps the mean independent of selection internals
                    nearest.sort_unstable_by_key(key);
                    nearest.iter().map(|e| e.3).sum::<f64>() / k as f64
                }
            };
        }
    }
    Ok(out)
}

/// Hourly values from 6-hourly ticks by linear interpolation. A single tick
/// is returned as is.
pub fn interpolate_time(ticks: &[f64]) -> Result<Vec<f64>> {
    match ticks.len() {
        0 => Err(Error::InvalidInput("series has no ticks".into())),
        1 => {
            log::warn!("single tick: holding it constant");
            Ok(ticks.to_vec())
        }
        n => {
            let mut out = Vec::with_capacity(6 * (n - 1) + 1);
            for w in ticks.windows(2) {
                let (a, b) = (w[0], w[1]);
                for h in 0..6 {
                    let t = h as f64 / 6.0;
                    out.push((1.0 - t) * a + t * b);
                }
            }
            out.push(ticks[n - 1]);
            Ok(out)
        }
    }
}
