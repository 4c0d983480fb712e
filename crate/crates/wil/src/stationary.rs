//! Stationary analysis: Ulam discretization of the boundary transfer
//! operator (the post-jump status chain), its fixed density, the joint
//! stationary density over (post-jump status, age), the change of
//! variables to (current status, age), and numeric drift / sweeping
//! criteria.
//!
//! The assembly decomposes, for each source status, the age axis into
//! pieces on which the jump image G(flow(x, a)) stays inside one target
//! cell; the piece mass is a survival-function difference. The same piece
//! lists drive both the transfer matrix and the transport stepper in
//! [`crate::evolve`], so the stepper's fixed point coincides with the
//! matrix fixed point exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{self, DensityGrid1D, DensityGrid2D, Grid1D};
use crate::model::{FlowKind, ModelSpec};
use crate::quad;

/// One constant-target piece of the age axis for a single source status.
/// `target == grid.n` denotes the overflow column (image above the cap).
#[derive(Clone, Copy, Debug)]
pub struct Piece {
    pub a_lo: f64,
    /// May be `f64::INFINITY` for the final piece.
    pub a_hi: f64,
    pub target: usize,
}

/// Piece lists for the Gauss-Legendre representatives of one source cell.
pub struct SourceRow {
    /// (representative status, quadrature weight summing to 1, pieces)
    pub points: Vec<(f64, f64, Vec<Piece>)>,
}

const PHI_TAIL: f64 = 1e-12;

/// Age beyond which the survival function at `x` is below `PHI_TAIL`.
fn survival_horizon(model: &ModelSpec, phi: &crate::model::SurvivalCurve, x: f64) -> f64 {
    let d0 = model.support_start(x);
    let mut hi = (d0 + 1.0).max(1.0);
    while phi.eval(hi) > PHI_TAIL {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    quad::bisect(&|a| phi.eval(a) - PHI_TAIL, d0, hi, 1e-12)
}

fn target_of(g: Grid1D, v: f64) -> usize {
    match g.index(v) {
        Some(i) => i,
        None => {
            if v >= g.hi {
                g.n // overflow column
            } else {
                0 // fold stray below-grid mass into the lowest cell
            }
        }
    }
}

/// Is G nondecreasing on [0, hi]? (dense sample probe)
fn boost_monotone(model: &ModelSpec, hi: f64) -> bool {
    let n = 1024;
    let mut prev = model.boost(0.0);
    for i in 1..=n {
        let v = model.boost(hi * i as f64 / n as f64);
        if v < prev - 1e-12 * (1.0 + prev.abs()) {
            return false;
        }
        prev = v;
    }
    true
}

/// Build the age-piece decomposition for every source cell of `grid`.
pub fn assemble_rows(model: &ModelSpec, grid: Grid1D) -> Result<Vec<SourceRow>> {
    let g0 = model.boost(model.domain_floor());
    if grid.lo > g0 + 1e-9 {
        return Err(Error::validation(format!(
            "grid floor {} does not cover the reachable minimum {}",
            grid.lo, g0
        )));
    }
    let monotone = boost_monotone(model, grid.hi);
    let exp_flow = matches!(model.flow_kind(), FlowKind::ClosedFormExponential { .. });

    // preimages of the grid edges under G, shared by every row (fast path)
    let edge_preimage: Option<Vec<Option<f64>>> = if monotone && exp_flow {
        Some(
            (0..=grid.n)
                .map(|i| {
                    let e = grid.lo + i as f64 * grid.width();
                    if model.boost(model.domain_floor()) >= e {
                        None // G never drops below e along any orbit
                    } else if model.boost(grid.hi) < e {
                        None // e above every image from this grid
                    } else {
                        Some(quad::bisect(
                            &|z| model.boost(z) - e,
                            model.domain_floor(),
                            grid.hi,
                            1e-14,
                        ))
                    }
                })
                .collect(),
        )
    } else {
        None
    };

    let rows: Vec<Result<SourceRow>> = (0..grid.n)
        .into_par_iter()
        .map(|i| {
            let w = grid.width();
            let lo = grid.left(i);
            let mut points = Vec::with_capacity(8);
            for (gx, gw) in quad::GL8_X.iter().zip(quad::GL8_W.iter()) {
                let x = lo + 0.5 * w * (1.0 + gx);
                let pieces = row_pieces(model, grid, x, edge_preimage.as_deref())?;
                points.push((x, 0.5 * gw, pieces));
            }
            Ok(SourceRow { points })
        })
        .collect();
    rows.into_iter().collect()
}

/// Age pieces for one source status `x`.
fn row_pieces(
    model: &ModelSpec,
    grid: Grid1D,
    x: f64,
    edge_preimage: Option<&[Option<f64>]>,
) -> Result<Vec<Piece>> {
    let phi = model.survival(x);
    let a_max = survival_horizon(model, &phi, x);
    let y0 = model.boost(x);

    if let (Some(pre), FlowKind::ClosedFormExponential { c }) = (edge_preimage, model.flow_kind()) {
        // crossing time of edge e: flow(x, a) = z_e with z_e = G^{-1}(e)
        let mut crossings: Vec<(f64, f64)> = Vec::new(); // (age, edge value)
        for (j, z) in pre.iter().enumerate() {
            if let Some(z) = z {
                if *z > 0.0 && *z < x {
                    let e = grid.lo + j as f64 * grid.width();
                    if e < y0 {
                        crossings.push(((x / z).ln() / c, e));
                    }
                }
            }
        }
        crossings.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut pieces = Vec::with_capacity(crossings.len() + 1);
        let mut a_prev = 0.0;
        let mut v_prev = y0;
        for (a, e) in crossings {
            if a > a_prev {
                pieces.push(Piece {
                    a_lo: a_prev,
                    a_hi: a,
                    target: target_of(grid, 0.5 * (v_prev + e)),
                });
            }
            a_prev = a;
            v_prev = e;
        }
        let v_end = model.boost(model.flow(x, a_max.max(a_prev))?);
        pieces.push(Piece {
            a_lo: a_prev,
            a_hi: f64::INFINITY,
            target: target_of(grid, 0.5 * (v_prev + v_end)),
        });
        return Ok(pieces);
    }

    // generic path: recursive subdivision of [0, a_max]
    let mut pieces: Vec<Piece> = Vec::new();
    let y = |a: f64| -> Result<f64> { Ok(model.boost(model.flow(x, a)?)) };
    let min_step = a_max / 4096.0;
    let mut stack = vec![(0.0, a_max, y(0.0)?, y(a_max)?)];
    let mut flat: Vec<Piece> = Vec::new();
    while let Some((a0, a1, v0, v1)) = stack.pop() {
        let t0 = target_of(grid, v0);
        let t1 = target_of(grid, v1);
        if (t0 == t1 && a1 - a0 <= min_step * 8.0) || a1 - a0 <= 1e-9 * (1.0 + a_max) {
            flat.push(Piece { a_lo: a0, a_hi: a1, target: t0 });
        } else if t0 == t1 && a1 - a0 <= min_step * 64.0 {
            // check the midpoint for a dip through another cell
            let am = 0.5 * (a0 + a1);
            let vm = y(am)?;
            if target_of(grid, vm) == t0 {
                flat.push(Piece { a_lo: a0, a_hi: a1, target: t0 });
            } else {
                stack.push((am, a1, vm, v1));
                stack.push((a0, am, v0, vm));
            }
        } else {
            let am = 0.5 * (a0 + a1);
            let vm = y(am)?;
            stack.push((am, a1, vm, v1));
            stack.push((a0, am, v0, vm));
        }
    }
    flat.sort_by(|p, q| p.a_lo.partial_cmp(&q.a_lo).unwrap());
    // merge contiguous pieces with the same target
    for p in flat {
        match pieces.last_mut() {
            Some(last) if last.target == p.target && (last.a_hi - p.a_lo).abs() < 1e-12 => {
                last.a_hi = p.a_hi;
            }
            _ => pieces.push(p),
        }
    }
    if let Some(last) = pieces.last_mut() {
        last.a_hi = f64::INFINITY;
    }
    Ok(pieces)
}

/// Row-stochastic matrix over the status grid. Row = source cell; the
/// extra final column collects mass mapped above the grid cap.
pub struct TransferMatrix {
    pub grid: Grid1D,
    /// Row-major, n rows of n+1 entries each.
    pub rows: Vec<f64>,
}

impl TransferMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i * (self.grid.n + 1) + j]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let n = self.grid.n;
        self.rows[i * (n + 1)..(i + 1) * (n + 1)].iter().sum()
    }
}

/// Accumulate the survival-mass of each piece into target columns.
pub fn row_masses(model: &ModelSpec, row: &SourceRow, n_cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_cols + 1];
    for (x, w, pieces) in &row.points {
        let phi = model.survival(*x);
        for p in pieces {
            let hi = if p.a_hi.is_finite() { phi.eval(p.a_hi) } else { 0.0 };
            out[p.target] += w * (phi.eval(p.a_lo) - hi);
        }
    }
    out
}

/// Ulam discretization of the boundary transfer operator on `grid`.
pub fn discretize_transfer(model: &ModelSpec, grid: Grid1D) -> Result<TransferMatrix> {
    let rows = assemble_rows(model, grid)?;
    let data: Vec<Vec<f64>> =
        rows.par_iter().map(|r| row_masses(model, r, grid.n)).collect();
    let mut flat = Vec::with_capacity(grid.n * (grid.n + 1));
    for r in data {
        flat.extend_from_slice(&r);
    }
    Ok(TransferMatrix { grid, rows: flat })
}

pub struct FixedPoint {
    pub h: DensityGrid1D,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest interior cell mass (positivity check).
    pub min_interior: f64,
    /// Per-step probability of jumping above the grid cap under h.
    pub overflow_rate: f64,
}

fn matvec(t: &TransferMatrix, h: &[f64]) -> (Vec<f64>, f64) {
    let n = t.grid.n;
    let mut out = vec![0.0; n];
    let mut overflow = 0.0;
    for (i, &hi) in h.iter().enumerate() {
        if hi == 0.0 {
            continue;
        }
        let row = &t.rows[i * (n + 1)..(i + 1) * (n + 1)];
        for j in 0..n {
            out[j] += hi * row[j];
        }
        overflow += hi * row[n];
    }
    (out, overflow)
}

/// Power iteration for the fixed density of the transfer matrix, with
/// damping switched on if the residual stalls (near-periodic chains).
pub fn power_iterate(t: &TransferMatrix, tol: f64, max_iter: usize) -> FixedPoint {
    let n = t.grid.n;
    let mut h = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut damped = false;
    let mut last_check = f64::INFINITY;
    let mut overflow_rate = 0.0;
    while iterations < max_iter {
        iterations += 1;
        let (mut next, ov) = matvec(t, &h);
        let total: f64 = next.iter().sum();
        if total > 0.0 {
            for v in &mut next {
                *v /= total;
            }
        }
        if damped {
            for (a, b) in next.iter_mut().zip(&h) {
                *a = 0.5 * (*a + b);
            }
        }
        residual = h.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        overflow_rate = ov;
        h = next;
        if residual <= tol {
            break;
        }
        if iterations % 64 == 0 {
            if residual > 0.5 * last_check {
                damped = true;
            }
            last_check = residual;
        }
    }
    let min_interior =
        h[1..n.saturating_sub(1)].iter().cloned().fold(f64::INFINITY, f64::min);
    FixedPoint {
        h: DensityGrid1D { grid: t.grid, mass: h, overflow: 0.0 },
        residual,
        iterations,
        converged: residual <= tol,
        min_interior,
        overflow_rate,
    }
}

/// Joint stationary density over (post-jump status, age): mass(i, j)
/// proportional to h(i) times the integral of the survival function over
/// age cell j. Ages beyond the grid accumulate in overflow.
pub fn build_joint_stationary(
    model: &ModelSpec,
    h: &DensityGrid1D,
    age_grid: Grid1D,
) -> Result<DensityGrid2D> {
    let mut out = DensityGrid2D::zeros(h.grid, age_grid);
    let masses: Vec<(Vec<f64>, f64)> = (0..h.grid.n)
        .into_par_iter()
        .map(|i| {
            let x = h.grid.center(i);
            let phi = model.survival(x);
            let d0 = model.support_start(x);
            let mut col = vec![0.0; age_grid.n];
            if h.mass[i] > 0.0 {
                for j in 0..age_grid.n {
                    let lo = age_grid.left(j);
                    let hi = lo + age_grid.width();
                    col[j] = h.mass[i]
                        * quad::integrate(&|a| phi.eval(a), lo, hi, 1e-10, &[d0]);
                }
            }
            let tail = if h.mass[i] > 0.0 {
                h.mass[i] * quad::integrate_to_inf(&|a| phi.eval(a), age_grid.hi, 1e-9, &[])
            } else {
                0.0
            };
            (col, tail)
        })
        .collect();
    for (i, (col, tail)) in masses.into_iter().enumerate() {
        for (j, m) in col.into_iter().enumerate() {
            let idx = out.idx(i, j);
            out.mass[idx] = m;
        }
        out.overflow += tail;
    }
    out.overflow += h.overflow;
    out.normalize();
    Ok(out)
}

/// Change of variables from (post-jump status, age) to (current status,
/// age): each status cell in age row j is transported by the decay flow
/// over the row's representative age and deposited by interval overlap.
pub fn to_state_coordinates_on(
    model: &ModelSpec,
    f: &DensityGrid2D,
    x_out: Grid1D,
) -> Result<DensityGrid2D> {
    let mut out = DensityGrid2D::zeros(x_out, f.a);
    out.overflow = f.overflow;
    for j in 0..f.a.n {
        let a = f.a.center(j);
        let mut row = DensityGrid1D::zeros(x_out);
        for i in 0..f.x.n {
            let m = f.mass[f.idx(i, j)];
            if m == 0.0 {
                continue;
            }
            let l = f.x.left(i);
            let r = l + f.x.width();
            let yl = model.flow(l, a)?;
            let yr = model.flow(r, a)?;
            grid::spread(&mut row, yl.min(yr), yl.max(yr), m);
        }
        for i in 0..x_out.n {
            let idx = out.idx(i, j);
            out.mass[idx] = row.mass[i];
        }
        out.overflow += row.overflow;
    }
    Ok(out)
}

/// As [`to_state_coordinates_on`] with the output grid extended down to
/// the domain floor at (roughly) the input cell width.
pub fn to_state_coordinates(model: &ModelSpec, f: &DensityGrid2D) -> Result<DensityGrid2D> {
    let w = f.x.width();
    let lo = model.domain_floor();
    let n = ((f.x.hi - lo) / w).round().max(1.0) as usize;
    to_state_coordinates_on(model, f, Grid1D::new(lo, f.x.hi, n)?)
}

/// Age marginal: status density obtained by summing over the age axis.
pub fn marginal_status(g: &DensityGrid2D) -> DensityGrid1D {
    g.marginal_x()
}

#[derive(Clone, Debug)]
pub struct DriftBranch {
    /// Boost increment bound L from (C2).
    pub l: f64,
    /// Smallest probe R with T*V(x) <= x - 2L for all probes >= R.
    pub r: f64,
    pub found: bool,
    /// max over probes >= R of T*V(x) - (x - 2L); negative margin = pass.
    pub max_excess_above_r: f64,
    /// max over all probes of T*V(x) - (x + L); global slack bound.
    pub global_max_excess: f64,
}

#[derive(Clone, Debug)]
pub struct SweepBranch {
    pub b: f64,
    pub c: f64,
    pub gamma: f64,
    /// sup over probes of int q(x, a) b^{-gamma} e^{c gamma a} da.
    pub l_sweep: f64,
    pub sweeping: bool,
}

#[derive(Debug)]
pub struct DriftReport {
    /// None when (C2) fails on the probes.
    pub drift: Option<DriftBranch>,
    /// None when the (b, c) bounds fail on the probes.
    pub sweeping: Option<SweepBranch>,
}

#[derive(Clone, Copy, Debug)]
pub struct SweepParams {
    /// Lower bound G(x) >= b x.
    pub b: f64,
    /// Upper decay bound F(x) >= -c x.
    pub c: f64,
    /// Exponent; defaults to 1/c - 1/log b.
    pub gamma: Option<f64>,
}

/// Mean post-jump status from source status x: T*V(x) for V(x) = x.
pub fn mean_next_status(model: &ModelSpec, x: f64) -> Result<f64> {
    let phi = model.survival(x);
    let d0 = model.support_start(x);
    // horizon with negligible survival; G(flow) is bounded by x + sup(G - id)
    let a_max = survival_horizon(model, &phi, x);
    let v = quad::integrate(
        &|a| model.interjump_density(x, a) * model.boost(model.flow(x, a).unwrap_or(0.0)),
        0.0,
        a_max,
        1e-10,
        &[d0],
    ) + phi.eval(a_max) * model.boost(0.0);
    Ok(v)
}

/// Evaluate the Foster-Lyapunov drift condition and/or the sweeping
/// criterion on a probe grid of statuses.
pub fn drift_report(
    model: &ModelSpec,
    probes: &[f64],
    sweep: Option<SweepParams>,
) -> Result<DriftReport> {
    let report = crate::model::validate_assumptions(model, probes);
    let mut sorted: Vec<f64> = probes.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let drift = if let Some(l) = report.l_c2.filter(|_| report.passed("C2")) {
        let tv: Vec<f64> = sorted
            .par_iter()
            .map(|&x| mean_next_status(model, x))
            .collect::<Result<Vec<_>>>()?;
        let global_max_excess = sorted
            .iter()
            .zip(&tv)
            .map(|(&x, &v)| v - (x + l))
            .fold(f64::MIN, f64::max);
        // smallest probe R such that every probe above it satisfies the
        // -2L drift
        let ok_from: Vec<bool> = {
            let mut acc = vec![false; sorted.len()];
            let mut all_ok = true;
            for i in (0..sorted.len()).rev() {
                all_ok &= tv[i] <= sorted[i] - 2.0 * l;
                acc[i] = all_ok;
            }
            acc
        };
        let r_idx = ok_from.iter().position(|&b| b);
        let (r, found) = match r_idx {
            Some(i) => (sorted[i], true),
            None => (f64::INFINITY, false),
        };
        let max_excess_above_r = sorted
            .iter()
            .zip(&tv)
            .filter(|(&x, _)| x >= r)
            .map(|(&x, &v)| v - (x - 2.0 * l))
            .fold(f64::MIN, f64::max);
        Some(DriftBranch { l, r, found, max_excess_above_r, global_max_excess })
    } else {
        None
    };

    let sweeping = sweep.and_then(|p| {
        // hypotheses: F(x) >= -c x and G(x) >= b x on the probes
        let hyp_ok = sorted.iter().all(|&x| {
            model.decay_rate(x) >= -p.c * x - 1e-12 * (1.0 + x)
                && model.boost(x) >= p.b * x - 1e-12 * (1.0 + x)
        });
        if !hyp_ok || p.b <= 1.0 {
            return None;
        }
        let gamma = p.gamma.unwrap_or(1.0 / p.c - 1.0 / p.b.ln());
        if gamma <= 0.0 || p.c * gamma >= 1.0 {
            return None;
        }
        let l_sweep = sorted
            .iter()
            .map(|&x| {
                let d0 = model.support_start(x);
                quad::integrate_to_inf(
                    &|a| {
                        model.interjump_density(x, a)
                            * p.b.powf(-gamma)
                            * (p.c * gamma * a).exp()
                    },
                    0.0,
                    1e-10,
                    &[d0],
                )
            })
            .fold(f64::MIN, f64::max);
        Some(SweepBranch { b: p.b, c: p.c, gamma, l_sweep, sweeping: l_sweep < 1.0 })
    });

    Ok(DriftReport { drift, sweeping })
}
