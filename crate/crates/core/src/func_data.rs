//! Core functional-data representations: grids, sparse curves, grid
//! alignment, binning, and spline interpolation of binned rows.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::natural_cubic_interpolate;

/// An ordered set of evaluation times in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// Build a grid from strictly increasing points.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("grid needs at least two points"));
        }
        for w in points.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("grid points must be strictly increasing"));
            }
        }
        Ok(Grid { points })
    }

    /// `m` equally spaced points on `[0, 1]` inclusive.
    pub fn equally_spaced(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!("grid size must be >= 2, got {m}")));
        }
        let pts = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        Ok(Grid { points: pts })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Index of the grid point equal to `t` within `tol`, if any.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        let i = self.nearest_index(t);
        if (self.points[i] - t).abs() <= tol {
            Some(i)
        } else {
            None
        }
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self
            .points
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.points.len() => self.points.len() - 1,
            Err(i) => {
                if (t - self.points[i - 1]) <= (self.points[i] - t) {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}

/// `make_grid` per the simulation protocol: `m` equally spaced points.
pub fn make_grid(m: usize) -> Result<Grid> {
    Grid::equally_spaced(m)
}

/// One sparsely observed curve: `(time, value)` pairs with strictly
/// increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCurve {
    obs: Vec<(f64, f64)>,
}

impl SparseCurve {
    pub fn new(obs: Vec<(f64, f64)>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::invalid("a curve needs at least one observation"));
        }
        for w in obs.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(
                    "observation times must be strictly increasing within a curve",
                ));
            }
        }
        Ok(SparseCurve { obs })
    }

    pub fn observations(&self) -> &[(f64, f64)] {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.obs.iter().map(|&(t, _)| t)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.obs.iter().map(|&(_, x)| x)
    }
}

/// A collection of sparse curves with an optional scalar response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseFunctionalDataset {
    pub curves: Vec<SparseCurve>,
    pub response: Option<Vec<f64>>,
    pub grid: Option<Grid>,
}

impl SparseFunctionalDataset {
    pub fn new(
        curves: Vec<SparseCurve>,
        response: Option<Vec<f64>>,
        grid: Option<Grid>,
    ) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::invalid("dataset needs at least one curve"));
        }
        if let Some(r) = &response {
            if r.len() != curves.len() {
                return Err(Error::invalid(format!(
                    "response length {} != number of curves {}",
                    r.len(),
                    curves.len()
                )));
            }
        }
        Ok(SparseFunctionalDataset {
            curves,
            response,
            grid,
        })
    }

    pub fn n_curves(&self) -> usize {
        self.curves.len()
    }

    /// Total number of pooled observations.
    pub fn n_observations(&self) -> usize {
        self.curves.iter().map(|c| c.len()).sum()
    }
}

/// A grid-aligned value matrix with an explicit missingness mask.
///
/// Masked-out entries hold `f64::NAN` as a sentinel and are never read as
/// data; the mask is authoritative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncompleteMatrix {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
    pub grid: Grid,
}

impl IncompleteMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// Number of observed entries in column `j`.
    pub fn observed_in_col(&self, j: usize) -> usize {
        (0..self.n_rows()).filter(|&i| self.mask[[i, j]]).count()
    }

    /// Number of missing entries overall.
    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// View as a sparse dataset (observed entries only).
    pub fn to_dataset(&self, response: Option<Vec<f64>>) -> Result<SparseFunctionalDataset> {
        let pts = self.grid.points();
        let mut curves = Vec::with_capacity(self.n_rows());
        for i in 0..self.n_rows() {
            let obs: Vec<(f64, f64)> = (0..self.n_cols())
                .filter(|&j| self.mask[[i, j]])
                .map(|j| (pts[j], self.values[[i, j]]))
                .collect();
            curves.push(SparseCurve::new(obs)?);
        }
        SparseFunctionalDataset::new(curves, response, Some(self.grid.clone()))
    }
}

/// Aligns a sparse dataset onto a grid. Every observation time must match
/// a grid point within `1e-9` unless `snap` is set, in which case times
/// snap to the nearest grid point. Duplicate observations landing in one
/// cell are averaged.
pub fn align_to_grid(ds: &SparseFunctionalDataset, grid: &Grid) -> Result<IncompleteMatrix> {
    align_to_grid_with(ds, grid, false)
}

pub fn align_to_grid_with(
    ds: &SparseFunctionalDataset,
    grid: &Grid,
    snap: bool,
) -> Result<IncompleteMatrix> {
    let n = ds.n_curves();
    let m = grid.len();
    let mut values = Array2::from_elem((n, m), f64::NAN);
    let mut mask = Array2::from_elem((n, m), false);
    let mut counts = vec![0usize; m];
    for (i, curve) in ds.curves.iter().enumerate() {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut sums = vec![0.0; m];
        for &(t, x) in curve.observations() {
            if t < grid.min() - 1e-9 || t > grid.max() + 1e-9 {
                return Err(Error::invalid(format!(
                    "observation time {t} outside grid range [{}, {}]",
                    grid.min(),
                    grid.max()
                )));
            }
            let j = if snap {
                grid.nearest_index(t)
            } else {
                grid.index_of(t, 1e-9).ok_or_else(|| {
                    Error::invalid(format!(
                        "observation time {t} does not match any grid point (enable snapping for irregular times)"
                    ))
                })?
            };
            sums[j] += x;
            counts[j] += 1;
        }
        for j in 0..m {
            if counts[j] > 0 {
                if counts[j] > 1 {
                    log::warn!(
                        "curve {i}: {} observations merged into grid cell {j} by averaging",
                        counts[j]
                    );
                }
                values[[i, j]] = sums[j] / counts[j] as f64;
                mask[[i, j]] = true;
            }
        }
    }
    Ok(IncompleteMatrix {
        values,
        mask,
        grid: grid.clone(),
    })
}

/// Partition of a grid into `k` bins: singleton bins at both endpoints and
/// `k - 2` equal-width interior intervals.
///
/// The interior region runs from half a grid spacing above the first point
/// to half a spacing below the last, so that `k = m` on an equally spaced
/// grid puts every grid point at a bin center and the binning round-trips
/// exactly. Interior intervals are half-open `[left, right)` with the last
/// one closed on the right; the endpoint bins claim exactly the first/last
/// grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub k: usize,
    /// `k + 1` boundaries.
    pub bin_edges: Vec<f64>,
    /// Representative time per bin: the grid endpoints for the end bins,
    /// interval midpoints for the interior bins.
    pub bin_centers: Vec<f64>,
    grid_min: f64,
    grid_max: f64,
    mid_lo: f64,
    mid_width: f64,
}

impl BinSpec {
    /// Bin index for a grid time, or `None` when `k == 2` leaves the
    /// interior uncovered.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        if (t - self.grid_min).abs() <= 1e-12 {
            return Some(0);
        }
        if (t - self.grid_max).abs() <= 1e-12 {
            return Some(self.k - 1);
        }
        if self.k == 2 {
            return None;
        }
        let raw = ((t - self.mid_lo) / self.mid_width).floor() as isize;
        let idx = raw.clamp(0, (self.k - 3) as isize) as usize;
        Some(idx + 1)
    }

    /// Centers as a grid for the binned matrix.
    pub fn center_grid(&self) -> Result<Grid> {
        Grid::new(self.bin_centers.clone())
    }
}

/// Build a [`BinSpec`] for `grid` with `k` bins.
pub fn make_bins(grid: &Grid, k: usize) -> Result<BinSpec> {
    let m = grid.len();
    if k < 2 || k > m {
        return Err(Error::invalid(format!(
            "bin count must satisfy 2 <= k <= m = {m}, got {k}"
        )));
    }
    let lo = grid.min();
    let hi = grid.max();
    let pts = grid.points();
    let mid_lo = lo + 0.5 * (pts[1] - pts[0]);
    let mid_hi = hi - 0.5 * (pts[m - 1] - pts[m - 2]);
    let mut edges = Vec::with_capacity(k + 1);
    let mut centers = Vec::with_capacity(k);
    let mut mid_width = mid_hi - mid_lo;
    edges.push(lo);
    centers.push(lo);
    if k > 2 {
        mid_width = (mid_hi - mid_lo) / (k - 2) as f64;
        for i in 0..=k - 2 {
            let e = if i == k - 2 { mid_hi } else { mid_lo + i as f64 * mid_width };
            edges.push(e);
        }
        for i in 0..k - 2 {
            centers.push(mid_lo + (i as f64 + 0.5) * mid_width);
        }
    } else {
        edges.push(0.5 * (lo + hi));
    }
    edges.push(hi);
    centers.push(hi);
    debug_assert_eq!(edges.len(), k + 1);
    debug_assert_eq!(centers.len(), k);
    Ok(BinSpec {
        k,
        bin_edges: edges,
        bin_centers: centers,
        grid_min: lo,
        grid_max: hi,
        mid_lo,
        mid_width,
    })
}

/// Replace grid columns by per-bin means. A cell is missing when the bin
/// holds no observed value for that row.
pub fn bin_matrix(x: &IncompleteMatrix, bins: &BinSpec) -> Result<IncompleteMatrix> {
    let n = x.n_rows();
    let m = x.n_cols();
    let k = bins.k;
    let pts = x.grid.points();
    // precompute assignment of grid columns to bins
    let mut assign: Vec<Option<usize>> = Vec::with_capacity(m);
    for j in 0..m {
        assign.push(bins.bin_of(pts[j]));
    }
    let mut values = Array2::from_elem((n, k), f64::NAN);
    let mut mask = Array2::from_elem((n, k), false);
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..m {
            if x.mask[[i, j]] {
                if let Some(b) = assign[j] {
                    sums[b] += x.values[[i, j]];
                    counts[b] += 1;
                }
            }
        }
        for b in 0..k {
            if counts[b] > 0 {
                values[[i, b]] = sums[b] / counts[b] as f64;
                mask[[i, b]] = true;
            }
        }
    }
    Ok(IncompleteMatrix {
        values,
        mask,
        grid: bins.center_grid()?,
    })
}

/// Interpolate a completed row of bin values back to the full grid with a
/// natural cubic spline through the `(bin_center, value)` pairs (polynomial
/// interpolation for `k < 4`).
pub fn interpolate_row(bin_values: &[f64], bins: &BinSpec, grid: &Grid) -> Result<Vec<f64>> {
    if bin_values.len() != bins.k {
        return Err(Error::invalid(format!(
            "expected {} bin values, got {}",
            bins.k,
            bin_values.len()
        )));
    }
    if bin_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "interpolate_row requires a fully completed row (finite values)",
        ));
    }
    natural_cubic_interpolate(&bins.bin_centers, bin_values, grid.points())
}
