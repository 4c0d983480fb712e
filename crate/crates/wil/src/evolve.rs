//! Characteristic-aligned time stepping of the transport system for the
//! density over (post-jump status, age). With the time step equal to the
//! age-cell width, the interior update is an exact shift with survival
//! factors; the jumped mass is routed through the same age-piece
//! decomposition as the transfer matrix, so the scheme's stationary state
//! is the exact fixed point of its own discrete operator.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{self, DensityGrid2D, Grid1D};
use crate::model::ModelSpec;
use crate::stationary::{assemble_rows, power_iterate, TransferMatrix};

const STEP_DEFECT_CAP: f64 = 1e-10;

/// Precomputed stepping context for one (status grid, age grid) pair.
pub struct Evolver {
    pub x: Grid1D,
    pub a: Grid1D,
    pub dt: f64,
    /// Survival of cohort i to age edge j, row-major n x (na + 1).
    s: Vec<f64>,
    /// Jump targets per (source cell, age bin): (target cell, mass).
    /// Mass above the status cap is folded into the top cell here and
    /// tracked separately in `w_over`.
    w: Vec<Vec<(u32, f64)>>,
    w_over: Vec<f64>,
    /// Largest cohort survival at the age cap (cap adequacy check).
    pub tail_survival_max: f64,
}

impl Evolver {
    pub fn new(model: &ModelSpec, x: Grid1D, a: Grid1D) -> Result<Evolver> {
        if a.lo != 0.0 {
            return Err(Error::validation("evolver: age grid must start at 0"));
        }
        let rows = assemble_rows(model, x)?;
        let (n, na) = (x.n, a.n);
        let dt = a.width();

        struct CellData {
            s: Vec<f64>,
            w: Vec<Vec<(u32, f64)>>,
            w_over: Vec<f64>,
        }
        let cells: Vec<CellData> = rows
            .par_iter()
            .map(|row| {
                let mut s = vec![0.0; na + 1];
                let mut acc: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); na];
                let mut w_over = vec![0.0; na];
                for (xp, wt, pieces) in &row.points {
                    let phi = model.survival(*xp);
                    for j in 0..=na {
                        s[j] += wt * phi.eval(j as f64 * dt);
                    }
                    for p in pieces {
                        // windows are [j dt, (j+1) dt), the last extending
                        // to infinity (mass past the cap jumps immediately)
                        let j0 = ((p.a_lo / dt) as usize).min(na - 1);
                        let j1 = if p.a_hi.is_finite() {
                            ((p.a_hi / dt) as usize).min(na - 1)
                        } else {
                            na - 1
                        };
                        for j in j0..=j1 {
                            let lo = p.a_lo.max(j as f64 * dt);
                            let hi = if j == na - 1 {
                                p.a_hi
                            } else {
                                p.a_hi.min((j + 1) as f64 * dt)
                            };
                            if !(hi > lo) {
                                continue;
                            }
                            let phi_hi = if hi.is_finite() { phi.eval(hi) } else { 0.0 };
                            let mass = wt * (phi.eval(lo) - phi_hi);
                            if mass == 0.0 {
                                continue;
                            }
                            let folded = p.target.min(n - 1) as u32;
                            *acc[j].entry(folded).or_insert(0.0) += mass;
                            if p.target >= n {
                                w_over[j] += mass;
                            }
                        }
                    }
                }
                CellData {
                    s,
                    w: acc.into_iter().map(|m| m.into_iter().collect()).collect(),
                    w_over,
                }
            })
            .collect();

        let mut s = Vec::with_capacity(n * (na + 1));
        let mut w = Vec::with_capacity(n * na);
        let mut w_over = Vec::with_capacity(n * na);
        let mut tail_survival_max = 0.0f64;
        for c in cells {
            tail_survival_max = tail_survival_max.max(c.s[na]);
            s.extend_from_slice(&c.s);
            w.extend(c.w);
            w_over.extend(c.w_over);
        }
        if tail_survival_max > 1e-9 {
            return Err(Error::validation(format!(
                "evolver: age cap too small, survival at cap up to {tail_survival_max}"
            )));
        }
        Ok(Evolver { x, a, dt, s, w, w_over, tail_survival_max })
    }

    fn s_at(&self, i: usize, j: usize) -> f64 {
        self.s[i * (self.a.n + 1) + j]
    }

    /// Fold of the transfer matrix implied by the stepper's own weights.
    fn folded_transfer(&self) -> TransferMatrix {
        let (n, na) = (self.x.n, self.a.n);
        let mut rows = vec![0.0; n * (n + 1)];
        for i in 0..n {
            for j in 0..na {
                for &(t, m) in &self.w[i * na + j] {
                    rows[i * (n + 1) + t as usize] += m;
                }
            }
        }
        TransferMatrix { grid: self.x, rows }
    }

    /// The exact stationary state of this stepper: the fixed density of
    /// its folded transfer matrix spread along the age axis with the
    /// cohort survival profile.
    pub fn stationary_reference(&self) -> Result<DensityGrid2D> {
        let t = self.folded_transfer();
        let fp = power_iterate(&t, 1e-13, 200_000);
        if !fp.converged {
            return Err(Error::numeric(format!(
                "stationary reference did not converge (residual {})",
                fp.residual
            )));
        }
        let mut out = DensityGrid2D::zeros(self.x, self.a);
        for i in 0..self.x.n {
            for j in 0..self.a.n {
                let idx = out.idx(i, j);
                out.mass[idx] = fp.h.mass[i] * self.s_at(i, j);
            }
        }
        out.normalize();
        Ok(out)
    }
}

#[derive(Clone)]
pub struct EvolutionState {
    pub t: f64,
    pub u: DensityGrid2D,
    pub dt: f64,
    /// Accumulated pre-guard mass defect.
    pub defect: f64,
    /// Accumulated mass jumped above the status cap (folded into the top
    /// cell, never dropped).
    pub overflow_jumped: f64,
}

impl EvolutionState {
    /// Point mass at (x0, age 0).
    pub fn point(ev: &Evolver, x0: f64) -> Result<EvolutionState> {
        let i = ev
            .x
            .index(x0)
            .ok_or_else(|| Error::validation(format!("initial status {x0} outside grid")))?;
        let mut u = DensityGrid2D::zeros(ev.x, ev.a);
        let idx = u.idx(i, 0);
        u.mass[idx] = 1.0;
        Ok(EvolutionState { t: 0.0, u, dt: ev.dt, defect: 0.0, overflow_jumped: 0.0 })
    }

    pub fn from_density(ev: &Evolver, u: DensityGrid2D) -> Result<EvolutionState> {
        if u.x != ev.x || u.a != ev.a {
            return Err(Error::validation("initial density grid mismatch"));
        }
        if (u.total_mass() - 1.0).abs() > 1e-8 {
            return Err(Error::validation("initial density not normalized"));
        }
        Ok(EvolutionState { t: 0.0, u, dt: ev.dt, defect: 0.0, overflow_jumped: 0.0 })
    }
}

/// One characteristic-aligned step of length dt = age-cell width.
pub fn step_evolve(ev: &Evolver, st: &EvolutionState) -> Result<EvolutionState> {
    if st.u.x != ev.x || st.u.a != ev.a || (st.dt - ev.dt).abs() > 1e-15 {
        return Err(Error::validation("step_evolve: state grid or step misaligned"));
    }
    let (n, na) = (ev.x.n, ev.a.n);
    let mut next = vec![0.0; n * na];
    let mut born = vec![0.0; n];
    let mut over_step = 0.0;
    for i in 0..n {
        for j in 0..na {
            let m = st.u.mass[i * na + j];
            if m == 0.0 {
                continue;
            }
            let sj = ev.s_at(i, j);
            if sj <= 0.0 {
                continue;
            }
            let inv = m / sj;
            if j + 1 < na {
                next[i * na + j + 1] = m * ev.s_at(i, j + 1) / sj;
            }
            for &(t, wm) in &ev.w[i * na + j] {
                born[t as usize] += inv * wm;
            }
            over_step += inv * ev.w_over[i * na + j];
        }
    }
    for (t, b) in born.into_iter().enumerate() {
        next[t * na] += b;
    }
    let prev_total: f64 = st.u.mass.iter().sum();
    let new_total: f64 = next.iter().sum();
    let defect = prev_total - new_total;
    if defect.abs() > STEP_DEFECT_CAP {
        return Err(Error::numeric(format!("step_evolve: mass defect {defect} exceeds guard")));
    }
    if new_total > 0.0 {
        let scale = prev_total / new_total;
        for v in &mut next {
            *v *= scale;
        }
    }
    let mut u = DensityGrid2D::zeros(ev.x, ev.a);
    u.mass = next;
    u.overflow = st.u.overflow;
    Ok(EvolutionState {
        t: st.t + ev.dt,
        u,
        dt: ev.dt,
        defect: st.defect + defect.abs(),
        overflow_jumped: st.overflow_jumped + over_step,
    })
}

/// Step until `t_end`, keeping snapshots at the requested stamps (each
/// rounded to the nearest whole step).
pub fn evolve_until(
    ev: &Evolver,
    u0: EvolutionState,
    t_end: f64,
    stamps: &[f64],
) -> Result<Vec<EvolutionState>> {
    let n_steps = (t_end / ev.dt).ceil() as usize;
    let mut stamp_steps: Vec<usize> =
        stamps.iter().map(|&s| (s / ev.dt).round() as usize).collect();
    stamp_steps.sort_unstable();
    stamp_steps.dedup();
    let mut out = Vec::with_capacity(stamp_steps.len());
    let mut st = u0;
    if stamp_steps.first() == Some(&0) {
        out.push(st.clone());
    }
    for k in 1..=n_steps {
        st = step_evolve(ev, &st)?;
        if stamp_steps.binary_search(&k).is_ok() {
            out.push(st.clone());
        }
    }
    Ok(out)
}

pub struct ConvergenceTable {
    pub rows: Vec<(f64, f64)>,
    pub final_distance: f64,
    /// First stamp at which the distance drops below 0.1 / 0.05 / 0.01.
    pub crossing: [Option<f64>; 3],
}

/// L1 distance of each snapshot to a reference density.
pub fn convergence_check(
    series: &[EvolutionState],
    reference: &DensityGrid2D,
) -> Result<ConvergenceTable> {
    let mut rows = Vec::with_capacity(series.len());
    for st in series {
        rows.push((st.t, grid::l1_distance_2d(&st.u, reference)?));
    }
    let final_distance = rows.last().map(|r| r.1).unwrap_or(f64::NAN);
    let thresholds = [0.1, 0.05, 0.01];
    let mut crossing = [None; 3];
    for (k, &th) in thresholds.iter().enumerate() {
        crossing[k] = rows.iter().find(|(_, d)| *d < th).map(|(t, _)| *t);
    }
    Ok(ConvergenceTable { rows, final_distance, crossing })
}
