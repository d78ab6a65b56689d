//! Empirical measures: spatial binning, histogram mean fields and the L1
//! distance between finite-state distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points up to this far outside the grid are clamped onto its boundary.
pub const CLAMP_SLACK: f64 = 1e-9;

/// Axis-aligned box `[lo, hi]` split into `cells_per_dim` half-open cells per
/// axis. The upper boundary of the box belongs to the last cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
}

impl BinGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != cells.len() {
            return Err(Error::Config(format!(
                "grid bounds/cells disagree in dimension ({}, {}, {})",
                lo.len(),
                hi.len(),
                cells.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("grid requires lo < hi in every dimension".into()));
        }
        if cells.iter().any(|&c| c == 0) {
            return Err(Error::Config("grid requires at least one cell per dimension".into()));
        }
        Ok(Self { lo, hi, cells })
    }

    /// Same bounds and cell count on every axis.
    pub fn uniform(dims: usize, lo: f64, hi: f64, cells_per_dim: usize) -> Result<Self> {
        Self::new(vec![lo; dims], vec![hi; dims], vec![cells_per_dim; dims])
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    /// Total number of cells, M.
    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn cells_per_dim(&self) -> &[usize] {
        &self.cells
    }

    /// Row-major cell index; the first axis varies slowest.
    pub fn cell_of(&self, point: &[f64]) -> Result<usize> {
        if point.len() < self.dims() {
            return Err(Error::DimMismatch {
                expected: self.dims(),
                got: point.len(),
            });
        }
        let mut index = 0;
        for d in 0..self.dims() {
            let (lo, hi, c) = (self.lo[d], self.hi[d], self.cells[d]);
            let p = point[d];
            if !(p >= lo - CLAMP_SLACK && p <= hi + CLAMP_SLACK) {
                return Err(Error::PointOutOfDomain {
                    point: point[..self.dims()].to_vec(),
                });
            }
            let frac = (p.clamp(lo, hi) - lo) / (hi - lo);
            let k = ((frac * c as f64).floor() as usize).min(c - 1);
            index = index * c + k;
        }
        Ok(index)
    }

    /// Center of cell `index`.
    pub fn center(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        let mut out = vec![0.0; self.dims()];
        for d in (0..self.dims()).rev() {
            let c = self.cells[d];
            let k = rest % c;
            rest /= c;
            let w = (self.hi[d] - self.lo[d]) / c as f64;
            out[d] = self.lo[d] + (k as f64 + 0.5) * w;
        }
        out
    }
}

/// Binned empirical distribution of minor-agent positions.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldHist {
    pub grid: BinGrid,
    pub weights: Vec<f64>,
}

impl MeanFieldHist {
    pub fn uniform(grid: BinGrid) -> Self {
        let m = grid.len();
        Self {
            grid,
            weights: vec![1.0 / m as f64; m],
        }
    }

    pub fn from_counts(grid: BinGrid, counts: &[usize]) -> Result<Self> {
        if counts.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: counts.len(),
            });
        }
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptyPointSet);
        }
        let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(Self { grid, weights })
    }

    pub fn to_finite(&self) -> FiniteMF {
        FiniteMF {
            probs: self.weights.clone(),
        }
    }
}

/// Histogram of `points` on `grid`; each point contributes `1/N`.
pub fn histogram<'a, I>(points: I, grid: &BinGrid) -> Result<MeanFieldHist>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut counts = vec![0usize; grid.len()];
    for p in points {
        counts[grid.cell_of(p)?] += 1;
    }
    MeanFieldHist::from_counts(grid.clone(), &counts)
}

/// Per-cell arithmetic mean of `values`; empty cells read 0.
pub fn mean_per_bin<'a, I>(points: I, values: &[f64], grid: &BinGrid) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sums = vec![0.0; grid.len()];
    let mut counts = vec![0usize; grid.len()];
    let mut n = 0;
    for p in points {
        let k = grid.cell_of(p)?;
        let v = *values.get(n).ok_or(Error::LengthMismatch {
            expected: n + 1,
            got: values.len(),
        })?;
        sums[k] += v;
        counts[k] += 1;
        n += 1;
    }
    if n != values.len() {
        return Err(Error::LengthMismatch {
            expected: n,
            got: values.len(),
        });
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect())
}

/// Probability vector over the states `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMF {
    pub probs: Vec<f64>,
}

impl FiniteMF {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::RowNotNormalized { row: 0, sum });
        }
        Ok(Self { probs })
    }

    pub fn dirac(len: usize, state: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[state] = 1.0;
        Self { probs }
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptyPointSet);
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `Σₓ |a(x) − b(x)|`, in `[0, 2]`.
pub fn l1_distance(a: &FiniteMF, b: &FiniteMF) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SupportMismatch(a.len(), b.len()));
    }
    Ok(a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).sum())
}
