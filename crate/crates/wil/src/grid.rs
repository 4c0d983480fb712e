//! Uniform grids and piecewise-constant mass vectors used by the Monte
//! Carlo histograms, the transfer-operator discretization and the PDE
//! stepper. Distances are L1 between the piecewise-constant densities,
//! which for matching grids is just the sum of absolute mass differences.

use crate::error::{Error, Result};

/// Uniform partition of [lo, hi] into n cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Grid1D> {
        if !(hi > lo) || n == 0 {
            return Err(Error::validation(format!("bad grid [{lo}, {hi}] with {n} cells")));
        }
        Ok(Grid1D { lo, hi, n })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn left(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.width()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    /// Cell index of `x`, or None outside [lo, hi).
    pub fn index(&self, x: f64) -> Option<usize> {
        if x < self.lo || x >= self.hi {
            return None;
        }
        let i = ((x - self.lo) / self.width()) as usize;
        Some(i.min(self.n - 1))
    }
}

/// Mass per cell on a 1D grid (a histogram or a cell-integrated density).
#[derive(Clone, Debug)]
pub struct DensityGrid1D {
    pub grid: Grid1D,
    pub mass: Vec<f64>,
    /// Mass that fell outside the grid.
    pub overflow: f64,
}

impl DensityGrid1D {
    pub fn zeros(grid: Grid1D) -> DensityGrid1D {
        DensityGrid1D { grid, mass: vec![0.0; grid.n], overflow: 0.0 }
    }

    /// Convert integer counts to a probability mass vector. Counts are
    /// summed in u64 first so the result is independent of accumulation
    /// order.
    pub fn from_counts(grid: Grid1D, counts: &[u64], outside: u64) -> DensityGrid1D {
        debug_assert_eq!(counts.len(), grid.n);
        let total: u64 = counts.iter().sum::<u64>() + outside;
        let t = total.max(1) as f64;
        DensityGrid1D {
            grid,
            mass: counts.iter().map(|&c| c as f64 / t).collect(),
            overflow: outside as f64 / t,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.overflow
    }

    pub fn normalize(&mut self) {
        let t = self.total_mass();
        if t > 0.0 {
            for m in &mut self.mass {
                *m /= t;
            }
            self.overflow /= t;
        }
    }

    /// Density value (mass / width) at the cell containing `x`.
    pub fn density_at(&self, x: f64) -> f64 {
        self.grid.index(x).map(|i| self.mass[i] / self.grid.width()).unwrap_or(0.0)
    }
}

/// L1 distance between two piecewise-constant densities on the same grid,
/// counting out-of-grid mass as disjoint.
pub fn l1_distance(a: &DensityGrid1D, b: &DensityGrid1D) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::validation("l1_distance: mismatched grids"));
    }
    let cells: f64 = a.mass.iter().zip(&b.mass).map(|(x, y)| (x - y).abs()).sum();
    Ok(cells + (a.overflow - b.overflow).abs())
}

/// Redistribute cell masses onto a destination grid proportionally to
/// interval overlap. Mass outside the destination grid goes to overflow.
pub fn rebin(src: &DensityGrid1D, dst_grid: Grid1D) -> DensityGrid1D {
    let mut out = DensityGrid1D::zeros(dst_grid);
    out.overflow = src.overflow;
    let w = src.grid.width();
    for (i, &m) in src.mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let lo = src.grid.left(i);
        let hi = lo + w;
        spread(&mut out, lo, hi, m);
    }
    out
}

/// Deposit `m` spread uniformly over [lo, hi] onto the grid of `out`.
pub fn spread(out: &mut DensityGrid1D, lo: f64, hi: f64, m: f64) {
    let g = out.grid;
    let w = g.width();
    if hi <= lo {
        // point mass
        match g.index(lo) {
            Some(i) => out.mass[i] += m,
            None => out.overflow += m,
        }
        return;
    }
    let span = hi - lo;
    let below = (g.lo - lo).max(0.0).min(span);
    let above = (hi - g.hi).max(0.0).min(span);
    out.overflow += m * (below + above) / span;
    let clo = lo.max(g.lo);
    let chi = hi.min(g.hi);
    if chi <= clo {
        return;
    }
    let i0 = g.index(clo).unwrap_or(0);
    let i1 = g.index(chi).unwrap_or(g.n - 1).min(g.n - 1);
    for i in i0..=i1 {
        let cl = g.left(i).max(clo);
        let ch = (g.left(i) + w).min(chi);
        if ch > cl {
            out.mass[i] += m * (ch - cl) / span;
        }
    }
}

/// Mass per cell on a product grid (status x age), row-major in status.
#[derive(Clone, Debug)]
pub struct DensityGrid2D {
    pub x: Grid1D,
    pub a: Grid1D,
    pub mass: Vec<f64>,
    pub overflow: f64,
}

impl DensityGrid2D {
    pub fn zeros(x: Grid1D, a: Grid1D) -> DensityGrid2D {
        DensityGrid2D { x, a, mass: vec![0.0; x.n * a.n], overflow: 0.0 }
    }

    pub fn idx(&self, ix: usize, ia: usize) -> usize {
        ix * self.a.n + ia
    }

    pub fn from_counts_2d(x: Grid1D, a: Grid1D, counts: &[u64], outside: u64) -> DensityGrid2D {
        debug_assert_eq!(counts.len(), x.n * a.n);
        let total: u64 = counts.iter().sum::<u64>() + outside;
        let t = total.max(1) as f64;
        DensityGrid2D {
            x,
            a,
            mass: counts.iter().map(|&c| c as f64 / t).collect(),
            overflow: outside as f64 / t,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.overflow
    }

    pub fn normalize(&mut self) {
        let t = self.total_mass();
        if t > 0.0 {
            for m in &mut self.mass {
                *m /= t;
            }
            self.overflow /= t;
        }
    }

    /// Marginal over age: mass per status cell.
    pub fn marginal_x(&self) -> DensityGrid1D {
        let mut out = DensityGrid1D::zeros(self.x);
        out.overflow = self.overflow;
        for ix in 0..self.x.n {
            out.mass[ix] = (0..self.a.n).map(|ia| self.mass[self.idx(ix, ia)]).sum();
        }
        out
    }
}

pub fn l1_distance_2d(p: &DensityGrid2D, q: &DensityGrid2D) -> Result<f64> {
    if p.x != q.x || p.a != q.a {
        return Err(Error::validation("l1_distance_2d: mismatched grids"));
    }
    let cells: f64 = p.mass.iter().zip(&q.mass).map(|(x, y)| (x - y).abs()).sum();
    Ok(cells + (p.overflow - q.overflow).abs())
}
