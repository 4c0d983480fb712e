//! Event-driven Monte Carlo for the jump-flow process and its
//! age-augmented companions: the post-jump pair (x_b at the last jump,
//! time since it) and the full pair (current status, time since the last
//! jump).
//!
//! Ensembles are embarrassingly parallel. Every trajectory owns a
//! dedicated RNG stream derived from (seed, index) and all aggregation
//! happens in exact u64 counts, so results are bit-identical regardless
//! of the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid1D, DensityGrid2D, Grid1D};
use crate::model::{FlowKind, ModelSpec};
use crate::quad;

#[derive(Clone, Copy, Debug)]
pub struct JumpEvent {
    pub t: f64,
    /// Status just before the jump.
    pub pre: f64,
    /// Status just after: G(pre).
    pub post: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub x0: f64,
    pub horizon: f64,
    pub events: Vec<JumpEvent>,
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Simulate one trajectory from `x0`, logging every jump up to the
/// horizon. Deterministic for a fixed seed.
pub fn simulate_trajectory(
    model: &ModelSpec,
    x0: f64,
    horizon: f64,
    seed: u64,
) -> Result<TrajectoryLog> {
    if !(horizon > 0.0) {
        return Err(Error::validation(format!("simulate_trajectory: horizon {horizon} must be > 0")));
    }
    let mut rng = trajectory_rng(seed, 0);
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut x_b = x0;
    loop {
        let tau = model.sample_interjump(x_b, &mut rng).map_err(|e| {
            Error::numeric(format!("trajectory seed={seed} t={t} x_b={x_b}: {e}"))
        })?;
        let t_next = t + tau;
        if t_next > horizon {
            break;
        }
        let pre = model.flow(x_b, tau)?;
        let post = model.boost(pre);
        events.push(JumpEvent { t: t_next, pre, post });
        t = t_next;
        x_b = post;
    }
    Ok(TrajectoryLog { seed, x0, horizon, events })
}

/// State of a logged trajectory at time `s`: (current status, age since
/// the last jump, status at the last jump).
pub fn state_at(model: &ModelSpec, log: &TrajectoryLog, s: f64) -> Result<(f64, f64, f64)> {
    if s < 0.0 || s > log.horizon {
        return Err(Error::validation(format!("state_at: time {s} outside [0, {}]", log.horizon)));
    }
    let (t_last, x_b) = log
        .events
        .iter()
        .rev()
        .find(|e| e.t <= s)
        .map(|e| (e.t, e.post))
        .unwrap_or((0.0, log.x0));
    let age = s - t_last;
    Ok((model.flow(x_b, age)?, age, x_b))
}

/// Walk one trajectory, invoking `record(stamp_index, status, age,
/// last_post_jump_status)` at every requested stamp. Stamps must be
/// sorted ascending. Returns the number of jumps.
fn walk<R: Rng, F: FnMut(usize, f64, f64, f64)>(
    model: &ModelSpec,
    x0: f64,
    horizon: f64,
    stamps: &[f64],
    rng: &mut R,
    mut record: F,
) -> Result<usize> {
    let mut t_last = 0.0;
    let mut x_b = x0;
    let mut si = 0;
    let mut jumps = 0usize;
    loop {
        let tau = model.sample_interjump(x_b, rng)?;
        let t_next = t_last + tau;
        while si < stamps.len() && stamps[si] < t_next && stamps[si] <= horizon {
            let age = stamps[si] - t_last;
            record(si, model.flow(x_b, age)?, age, x_b);
            si += 1;
        }
        if t_next > horizon {
            break;
        }
        let pre = model.flow(x_b, tau)?;
        x_b = model.boost(pre);
        t_last = t_next;
        jumps += 1;
    }
    Ok(jumps)
}

#[derive(Clone, Debug)]
pub enum StartCondition {
    Point(f64),
    /// Sampled by inverse CDF on the grid, uniform within a cell.
    Density(DensityGrid1D),
}

impl StartCondition {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            StartCondition::Point(x) => *x,
            StartCondition::Density(d) => {
                let in_grid: f64 = d.mass.iter().sum();
                let mut u: f64 = rng.gen::<f64>() * in_grid;
                for (i, &m) in d.mass.iter().enumerate() {
                    if u < m || i == d.mass.len() - 1 {
                        let frac = if m > 0.0 { u / m } else { 0.5 };
                        return d.grid.left(i) + frac.clamp(0.0, 1.0) * d.grid.width();
                    }
                    u -= m;
                }
                d.grid.lo
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub horizon: f64,
    pub n: usize,
    pub stamps: Vec<f64>,
    pub seed: u64,
    pub x_grid: Grid1D,
    pub age_grid: Grid1D,
}

pub struct EnsembleSummary {
    pub n: usize,
    pub stamps: Vec<f64>,
    /// Per-stamp histogram of the current status.
    pub xi: Vec<DensityGrid1D>,
    /// Per-stamp histogram of (status at the last jump, age).
    pub eta: Vec<DensityGrid2D>,
    /// Per-stamp histogram of (current status, age).
    pub zeta: Vec<DensityGrid2D>,
}

#[derive(Clone)]
struct Counts {
    xi: Vec<u64>,
    xi_out: Vec<u64>,
    eta: Vec<u64>,
    eta_out: Vec<u64>,
    zeta: Vec<u64>,
    zeta_out: Vec<u64>,
}

impl Counts {
    fn zeros(s: usize, nx: usize, na: usize) -> Counts {
        Counts {
            xi: vec![0; s * nx],
            xi_out: vec![0; s],
            eta: vec![0; s * nx * na],
            eta_out: vec![0; s],
            zeta: vec![0; s * nx * na],
            zeta_out: vec![0; s],
        }
    }

    fn merge(mut self, other: Counts) -> Counts {
        for (a, b) in self.xi.iter_mut().zip(&other.xi) {
            *a += b;
        }
        for (a, b) in self.xi_out.iter_mut().zip(&other.xi_out) {
            *a += b;
        }
        for (a, b) in self.eta.iter_mut().zip(&other.eta) {
            *a += b;
        }
        for (a, b) in self.eta_out.iter_mut().zip(&other.eta_out) {
            *a += b;
        }
        for (a, b) in self.zeta.iter_mut().zip(&other.zeta) {
            *a += b;
        }
        for (a, b) in self.zeta_out.iter_mut().zip(&other.zeta_out) {
            *a += b;
        }
        self
    }
}

const CHUNK: usize = 256;

/// Parallel ensemble simulation with per-stamp snapshots of all three
/// processes.
pub fn simulate_ensemble(
    model: &ModelSpec,
    start: &StartCondition,
    cfg: &EnsembleConfig,
) -> Result<EnsembleSummary> {
    if cfg.n == 0 {
        return Err(Error::validation("simulate_ensemble: n must be >= 1"));
    }
    let mut stamps = cfg.stamps.clone();
    stamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if stamps.iter().any(|&s| s < 0.0 || s > cfg.horizon) {
        return Err(Error::validation("simulate_ensemble: stamps outside [0, horizon]"));
    }
    let (nx, na) = (cfg.x_grid.n, cfg.age_grid.n);
    let s = stamps.len();
    let n_chunks = (cfg.n + CHUNK - 1) / CHUNK;

    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| -> Result<Counts> {
            let mut c = Counts::zeros(s, nx, na);
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(cfg.n);
            for i in lo..hi {
                let mut rng = trajectory_rng(cfg.seed, i as u64);
                let x0 = start.draw(&mut rng);
                walk(model, x0, cfg.horizon, &stamps, &mut rng, |si, x, age, x_b| {
                    match cfg.x_grid.index(x) {
                        Some(ix) => c.xi[si * nx + ix] += 1,
                        None => c.xi_out[si] += 1,
                    }
                    match (cfg.x_grid.index(x_b), cfg.age_grid.index(age)) {
                        (Some(ix), Some(ia)) => c.eta[(si * nx + ix) * na + ia] += 1,
                        _ => c.eta_out[si] += 1,
                    }
                    match (cfg.x_grid.index(x), cfg.age_grid.index(age)) {
                        (Some(ix), Some(ia)) => c.zeta[(si * nx + ix) * na + ia] += 1,
                        _ => c.zeta_out[si] += 1,
                    }
                })?;
            }
            Ok(c)
        })
        .try_reduce(|| Counts::zeros(s, nx, na), |a, b| Ok(a.merge(b)))?;

    let mut xi = Vec::with_capacity(s);
    let mut eta = Vec::with_capacity(s);
    let mut zeta = Vec::with_capacity(s);
    for si in 0..s {
        xi.push(DensityGrid1D::from_counts(
            cfg.x_grid,
            &counts.xi[si * nx..(si + 1) * nx],
            counts.xi_out[si],
        ));
        eta.push(DensityGrid2D::from_counts_2d(
            cfg.x_grid,
            cfg.age_grid,
            &counts.eta[si * nx * na..(si + 1) * nx * na],
            counts.eta_out[si],
        ));
        zeta.push(DensityGrid2D::from_counts_2d(
            cfg.x_grid,
            cfg.age_grid,
            &counts.zeta[si * nx * na..(si + 1) * nx * na],
            counts.zeta_out[si],
        ));
    }
    Ok(EnsembleSummary { n: cfg.n, stamps, xi, eta, zeta })
}

/// Add the sojourn times of one decay segment (start status `x_s`,
/// duration `tau`) to a status histogram of time masses.
fn add_sojourn(model: &ModelSpec, out: &mut DensityGrid1D, x_s: f64, tau: f64) -> Result<()> {
    if tau <= 0.0 {
        return Ok(());
    }
    let g = out.grid;
    match model.flow_kind() {
        FlowKind::ClosedFormExponential { c } => {
            let x_e = x_s * (-c * tau).exp();
            if x_s <= 0.0 || x_e >= x_s - 1e-300 {
                // resting at the floor or a numerically frozen segment
                match g.index(x_s) {
                    Some(i) => out.mass[i] += tau,
                    None => out.overflow += tau,
                }
                return Ok(());
            }
            // time spent in the status band [l, r): ln(top/bot)/c
            let band = |l: f64, r: f64| {
                let top = r.min(x_s);
                let bot = l.max(x_e);
                if top <= bot {
                    0.0
                } else {
                    (top / bot).ln() / c
                }
            };
            let mut inside = 0.0;
            let i0 = if x_e <= g.lo { 0 } else { g.index(x_e).unwrap_or(g.n - 1) };
            let i1 = if x_s >= g.hi { g.n - 1 } else { g.index(x_s).unwrap_or(0) };
            for i in i0..=i1 {
                let l = g.left(i);
                let d = band(l, l + g.width());
                out.mass[i] += d;
                inside += d;
            }
            out.overflow += (tau - inside).max(0.0);
        }
        FlowKind::NumericOde => {
            let x_e = model.flow(x_s, tau)?;
            // crossing times of every grid edge between x_e and x_s
            let mut edges: Vec<f64> = (0..=g.n)
                .map(|i| g.lo + i as f64 * g.width())
                .filter(|&e| e > x_e && e < x_s)
                .collect();
            edges.push(g.hi);
            edges.push(g.lo);
            edges.retain(|&e| e > x_e && e < x_s);
            edges.sort_by(|a, b| b.partial_cmp(a).unwrap()); // descending
            let mut t_prev = 0.0;
            let mut x_prev = x_s;
            for &e in &edges {
                let t_cross = quad::bisect(&|t| model.flow(x_s, t).unwrap() - e, t_prev, tau, 1e-11);
                deposit_band(out, 0.5 * (x_prev + e), t_cross - t_prev);
                t_prev = t_cross;
                x_prev = e;
            }
            deposit_band(out, 0.5 * (x_prev + x_e), tau - t_prev);
        }
    }
    Ok(())
}

fn deposit_band(out: &mut DensityGrid1D, x_mid: f64, dur: f64) {
    if dur <= 0.0 {
        return;
    }
    match out.grid.index(x_mid) {
        Some(i) => out.mass[i] += dur,
        None => out.overflow += dur,
    }
}

/// Time-average occupation of the status axis along one trajectory,
/// computed from exact cell-crossing times of the decay flow.
pub fn occupation_histogram(
    model: &ModelSpec,
    log: &TrajectoryLog,
    grid: Grid1D,
) -> Result<DensityGrid1D> {
    let mut out = DensityGrid1D::zeros(grid);
    let mut t = 0.0;
    let mut x_b = log.x0;
    for e in &log.events {
        add_sojourn(model, &mut out, x_b, e.t - t)?;
        t = e.t;
        x_b = e.post;
    }
    add_sojourn(model, &mut out, x_b, log.horizon - t)?;
    for m in &mut out.mass {
        *m /= log.horizon;
    }
    out.overflow /= log.horizon;
    Ok(out)
}

/// Fraction of trajectories with status <= R at each stamp.
pub fn region_mass_series(
    model: &ModelSpec,
    start: &StartCondition,
    r: f64,
    cfg: &EnsembleConfig,
) -> Result<Vec<f64>> {
    let mut stamps = cfg.stamps.clone();
    stamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let s = stamps.len();
    let n_chunks = (cfg.n + CHUNK - 1) / CHUNK;
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| -> Result<Vec<u64>> {
            let mut c = vec![0u64; s];
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(cfg.n);
            for i in lo..hi {
                let mut rng = trajectory_rng(cfg.seed, i as u64);
                let x0 = start.draw(&mut rng);
                walk(model, x0, cfg.horizon, &stamps, &mut rng, |si, x, _, _| {
                    if x <= r {
                        c[si] += 1;
                    }
                })?;
            }
            Ok(c)
        })
        .try_reduce(
            || vec![0u64; s],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    Ok(counts.iter().map(|&c| c as f64 / cfg.n as f64).collect())
}
