//! Model core: the deterministic decay flow, the boost map, the
//! inter-jump waiting-time density and the hazard/survival calculus built
//! on top of them.
//!
//! A [`ModelSpec`] bundles the decay rate `F` (status decreases between
//! jumps as x' = F(x)), the boost map `G` (status jumps to `G(x)` at an
//! infection) and the waiting-time density `q(x_b, a)` of the time to the
//! next jump given post-boost status `x_b`. Everything else — survival
//! function, hazard rate, inter-jump sampling, the reachable-status
//! interval — is derived from those three ingredients.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::quad;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StateAgeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// How the decay flow is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowKind {
    /// F(x) = -c x; the flow is x0 * exp(-c t) exactly.
    ClosedFormExponential { c: f64 },
    /// Generic F; the flow is integrated adaptively.
    NumericOde,
}

/// Immutable model bundle. Construct with [`ModelBuilder`] or one of the
/// preset constructors in [`crate::preset`].
pub struct ModelSpec {
    pub(crate) flow_kind: FlowKind,
    pub(crate) decay: RealFn,
    pub(crate) boost: RealFn,
    pub(crate) interjump: StateAgeFn,
    pub(crate) survival_cf: Option<StateAgeFn>,
    pub(crate) inv_survival_cf: Option<StateAgeFn>,
    pub(crate) support_start: RealFn,
    pub(crate) domain_floor: f64,
    pub(crate) q_kind: String,
}

pub struct ModelBuilder {
    flow_kind: FlowKind,
    decay: RealFn,
    boost: RealFn,
    interjump: StateAgeFn,
    survival_cf: Option<StateAgeFn>,
    inv_survival_cf: Option<StateAgeFn>,
    support_start: Option<RealFn>,
    domain_floor: f64,
    q_kind: String,
}

impl ModelBuilder {
    /// Model with exponential decay F(x) = -c x.
    pub fn exponential_decay(c: f64, boost: RealFn, interjump: StateAgeFn) -> Self {
        ModelBuilder {
            flow_kind: FlowKind::ClosedFormExponential { c },
            decay: Arc::new(move |x| -c * x),
            boost,
            interjump,
            survival_cf: None,
            inv_survival_cf: None,
            support_start: None,
            domain_floor: 0.0,
            q_kind: "generic".into(),
        }
    }

    /// Model with a general decay rate, integrated numerically.
    pub fn numeric_decay(decay: RealFn, boost: RealFn, interjump: StateAgeFn) -> Self {
        ModelBuilder {
            flow_kind: FlowKind::NumericOde,
            decay,
            boost,
            interjump,
            survival_cf: None,
            inv_survival_cf: None,
            support_start: None,
            domain_floor: 0.0,
            q_kind: "generic".into(),
        }
    }

    pub fn survival_closed_form(mut self, phi: StateAgeFn) -> Self {
        self.survival_cf = Some(phi);
        self
    }

    /// Closed-form inverse of the survival function: (x_b, u) -> a with
    /// Phi(x_b, a) = u.
    pub fn inverse_survival(mut self, inv: StateAgeFn) -> Self {
        self.inv_survival_cf = Some(inv);
        self
    }

    /// Start of the waiting-time support, the age below which q vanishes.
    pub fn support_start(mut self, d: RealFn) -> Self {
        self.support_start = Some(d);
        self
    }

    pub fn q_kind(mut self, tag: &str) -> Self {
        self.q_kind = tag.into();
        self
    }

    pub fn build(self) -> ModelSpec {
        ModelSpec {
            flow_kind: self.flow_kind,
            decay: self.decay,
            boost: self.boost,
            interjump: self.interjump,
            survival_cf: self.survival_cf,
            inv_survival_cf: self.inv_survival_cf,
            support_start: self.support_start.unwrap_or_else(|| Arc::new(|_| 0.0)),
            domain_floor: self.domain_floor,
            q_kind: self.q_kind,
        }
    }
}

/// Survival function a -> Phi(x_b, a) for one post-boost status.
pub struct SurvivalCurve {
    pub x_b: f64,
    pub closed_form: Option<String>,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl SurvivalCurve {
    pub fn eval(&self, a: f64) -> f64 {
        if a <= 0.0 {
            1.0
        } else {
            (self.eval)(a)
        }
    }
}

/// Hazard rate a -> p(x_b, a) for one post-boost status.
pub struct HazardCurve {
    pub x_b: f64,
    /// The age below which q (hence p) vanishes.
    pub support_start: f64,
    /// True when the waiting-time support is unbounded above (always the
    /// case for the models handled here).
    pub unbounded_support: bool,
    /// Set when the hazard had to be capped because the survival function
    /// underflowed.
    pub capped: std::sync::atomic::AtomicBool,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl HazardCurve {
    pub fn eval(&self, a: f64) -> f64 {
        let v = (self.eval)(a);
        if v.is_infinite() {
            self.capped.store(true, std::sync::atomic::Ordering::Relaxed);
        }
        v
    }
}

const Q_NORM_TOL: f64 = 1e-6;
const SURVIVAL_TAIL_EPS: f64 = 1e-12;
pub(crate) const QUAD_RTOL: f64 = 1e-11;

impl ModelSpec {
    pub fn flow_kind(&self) -> FlowKind {
        self.flow_kind
    }

    pub fn domain_floor(&self) -> f64 {
        self.domain_floor
    }

    pub fn q_kind(&self) -> &str {
        &self.q_kind
    }

    pub fn decay_rate(&self, x: f64) -> f64 {
        (self.decay)(x)
    }

    pub fn boost(&self, x: f64) -> f64 {
        (self.boost)(x)
    }

    pub fn interjump_density(&self, x_b: f64, a: f64) -> f64 {
        (self.interjump)(x_b, a)
    }

    pub fn support_start(&self, x_b: f64) -> f64 {
        (self.support_start)(x_b)
    }

    /// Forward flow: the solution of x' = F(x) at time `t` from `x0`.
    pub fn flow(&self, x0: f64, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::validation(format!("flow: negative time {t}")));
        }
        if x0 < self.domain_floor {
            return Err(Error::validation(format!(
                "flow: status {x0} below domain floor {}",
                self.domain_floor
            )));
        }
        match self.flow_kind {
            FlowKind::ClosedFormExponential { c } => Ok(x0 * (-c * t).exp()),
            FlowKind::NumericOde => {
                let decay = &self.decay;
                let r = quad::integrate_ode(&|x| decay(x), x0, t, 1e-10, 1e12);
                if r.escaped {
                    Err(Error::numeric(format!(
                        "flow integration failed from x0={x0} over t={t}"
                    )))
                } else {
                    Ok(r.x.max(self.domain_floor))
                }
            }
        }
    }

    /// Backward flow: the status `y` with `flow(y, a) = x`, or `None` when
    /// the backward orbit leaves the admissible domain before time `a`.
    pub fn inverse_flow(&self, x: f64, a: f64) -> Result<Option<f64>> {
        if a < 0.0 {
            return Err(Error::validation(format!("inverse_flow: negative age {a}")));
        }
        match self.flow_kind {
            FlowKind::ClosedFormExponential { c } => {
                let y = x * (c * a).exp();
                Ok(if y.is_finite() { Some(y) } else { None })
            }
            FlowKind::NumericOde => {
                let decay = &self.decay;
                // integrate y' = -F(y) forward over [0, a]
                let r = quad::integrate_ode(&|y| -decay(y), x, a, 1e-10, 1e12);
                Ok(if r.escaped { None } else { Some(r.x) })
            }
        }
    }

    /// Survival function Phi(x_b, a) = probability the waiting time
    /// exceeds `a`. Uses the closed form when the model carries one and
    /// tail quadrature of `q` otherwise. The generic path normalizes `q`,
    /// so a density scaled by a constant yields the same curve.
    pub fn survival(&self, x_b: f64) -> SurvivalCurve {
        if let Some(phi) = &self.survival_cf {
            let phi = phi.clone();
            return SurvivalCurve {
                x_b,
                closed_form: Some(self.q_kind.clone()),
                eval: Arc::new(move |a| phi(x_b, a)),
            };
        }
        let q = self.interjump.clone();
        let d0 = self.support_start(x_b);
        let total = quad::integrate_to_inf(&|a| q(x_b, a), d0, QUAD_RTOL, &[]);
        // horizon beyond which the tail is negligible relative to the mass
        let mut a_max = (2.0 * (d0 + 1.0)).max(1.0);
        for _ in 0..60 {
            let b1 = quad::integrate(&|a| q(x_b, a), a_max, 2.0 * a_max, QUAD_RTOL, &[]);
            let b2 = quad::integrate(&|a| q(x_b, a), 2.0 * a_max, 4.0 * a_max, QUAD_RTOL, &[]);
            if b1 + b2 <= 0.25 * SURVIVAL_TAIL_EPS * total {
                break;
            }
            a_max *= 2.0;
        }
        SurvivalCurve {
            x_b,
            closed_form: None,
            eval: Arc::new(move |a| {
                if a <= d0 {
                    1.0
                } else if a >= a_max {
                    quad::integrate_to_inf(&|r| q(x_b, r), a, QUAD_RTOL, &[]) / total
                } else {
                    quad::integrate(&|r| q(x_b, r), a, a_max, QUAD_RTOL, &[]) / total
                }
            }),
        }
    }

    /// Hazard rate p(x_b, a) = q(x_b, a) / Phi(x_b, a). Rejects a `q`
    /// that does not integrate to 1 at `x_b` (generic path only; models
    /// with a closed-form survival are normalized by construction).
    pub fn hazard_from_density(&self, x_b: f64) -> Result<HazardCurve> {
        if self.survival_cf.is_none() {
            let d0 = self.support_start(x_b);
            let q = &self.interjump;
            let total = quad::integrate_to_inf(&|a| q(x_b, a), d0, QUAD_RTOL, &[]);
            if (total - 1.0).abs() > Q_NORM_TOL {
                return Err(Error::validation(format!(
                    "hazard_from_density: q(x_b={x_b}, .) integrates to {total}, not 1"
                )));
            }
        }
        let phi = self.survival(x_b);
        let q = self.interjump.clone();
        let d0 = self.support_start(x_b);
        Ok(HazardCurve {
            x_b,
            support_start: d0,
            unbounded_support: true,
            capped: std::sync::atomic::AtomicBool::new(false),
            eval: Arc::new(move |a| {
                if a < d0 {
                    return 0.0;
                }
                let s = phi.eval(a);
                if s < 1e-300 {
                    f64::INFINITY
                } else {
                    q(x_b, a) / s
                }
            }),
        })
    }

    /// Derived mean waiting time at `x_b`: the integral of the survival
    /// function over all ages.
    pub fn mean_interjump(&self, x_b: f64) -> Result<f64> {
        let phi = self.survival(x_b);
        let v = quad::integrate_to_inf(&|a| phi.eval(a), 0.0, 1e-10, &[phi_split(self, x_b)]);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric(format!("divergent mean waiting time at x_b={x_b}")))
        }
    }

    /// Draw a waiting time from q(x_b, .) by inverting the survival
    /// function at a uniform variate. Deterministic given the RNG state.
    pub fn sample_interjump<R: Rng>(&self, x_b: f64, rng: &mut R) -> Result<f64> {
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        if let Some(inv) = &self.inv_survival_cf {
            return Ok(inv(x_b, u));
        }
        let phi = self.survival(x_b);
        let lo = self.support_start(x_b);
        let mut span = 1.0;
        while phi.eval(lo + span) > u {
            span *= 2.0;
            if span > 2f64.powi(50) {
                return Err(Error::numeric(format!(
                    "sample_interjump: bracket exceeded hard cap at x_b={x_b}"
                )));
            }
        }
        Ok(quad::bisect(&|a| phi.eval(a) - u, lo, lo + span, 1e-12))
    }
}

fn phi_split(model: &ModelSpec, x_b: f64) -> f64 {
    model.support_start(x_b)
}

/// Waiting-time density reconstructed from a hazard curve via
/// q = p * exp(-int_0^a p).
pub fn density_from_hazard(p: &HazardCurve) -> Result<Arc<dyn Fn(f64) -> f64 + Send + Sync>> {
    let d0 = p.support_start;
    let eval = p.eval.clone();
    // probe local integrability just above the support start
    let probe = quad::integrate(&|a| eval(a), d0, d0 + 1e-3, 1e-8, &[]);
    if !probe.is_finite() {
        return Err(Error::validation(
            "density_from_hazard: hazard not integrable near its support start",
        ));
    }
    Ok(Arc::new(move |a| {
        if a < d0 {
            return 0.0;
        }
        let cum = quad::integrate(&|r| eval(r), d0, a, QUAD_RTOL, &[]);
        eval(a) * (-cum).exp()
    }))
}

/// Per-assumption probe outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub status: CheckStatus,
    /// Positive margins mean the inequality held with room to spare.
    pub margin: f64,
    pub probe: String,
}

/// Validation outcome over a probe grid. Failures are data, not errors.
#[derive(Debug)]
pub struct AssumptionReport {
    pub entries: Vec<AssumptionCheck>,
    pub epsilon_a5: Option<f64>,
    pub m1_bound: Option<f64>,
    pub l_c2: Option<f64>,
}

impl AssumptionReport {
    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn passed(&self, id: &str) -> bool {
        self.get(id).map(|e| e.status == CheckStatus::Pass).unwrap_or(false)
    }

    /// All structural assumptions (A1-A5, B1-B2) hold.
    pub fn core_ok(&self) -> bool {
        ["A1", "A2", "A3", "A4", "A5", "B1", "B2"].iter().all(|id| self.passed(id))
    }
}

/// Probe every model assumption on a grid of post-boost statuses.
pub fn validate_assumptions(model: &ModelSpec, probes: &[f64]) -> AssumptionReport {
    assert!(!probes.is_empty(), "validate_assumptions: empty probe grid");
    let mut entries = Vec::new();
    let floor = model.domain_floor;
    let x_hi = probes.iter().cloned().fold(f64::MIN, f64::max).max(1.0);

    // A1: F < 0 above the floor, F(floor) = 0.
    {
        let mut margin = f64::INFINITY;
        let mut witness = String::new();
        let mut ok = true;
        for &x in probes.iter().filter(|&&x| x > floor) {
            let v = -model.decay_rate(x);
            if v <= 0.0 && ok {
                ok = false;
                witness = format!("F({x}) = {} >= 0", -v);
            }
            margin = margin.min(v);
        }
        let f0 = model.decay_rate(floor).abs();
        if floor == 0.0 && f0 > 1e-9 {
            ok = false;
            witness = format!("F(0) = {f0} != 0");
        }
        entries.push(AssumptionCheck {
            id: "A1",
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            margin,
            probe: if ok { format!("min -F over {} probes", probes.len()) } else { witness },
        });
    }

    // A2: G(x) > x.
    {
        let mut margin = f64::INFINITY;
        let mut witness = String::new();
        for &x in probes {
            let d = model.boost(x) - x;
            if d <= 0.0 && witness.is_empty() {
                witness = format!("G({x}) - {x} = {d}");
            }
            margin = margin.min(d);
        }
        entries.push(AssumptionCheck {
            id: "A2",
            status: if margin > 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
            margin,
            probe: if margin > 0.0 { "min G(x)-x over probes".into() } else { witness },
        });
    }

    // A3: piecewise monotone G, probed by dense finite differences. Point
    // probes cannot certify the branch structure; this only flags a G
    // that is flat on a sizeable set.
    {
        let n = 1024;
        let h = (x_hi - floor) / n as f64;
        let mut flat = 0usize;
        let mut min_slope = f64::INFINITY;
        let mut prev = model.boost(floor);
        for i in 1..=n {
            let v = model.boost(floor + i as f64 * h);
            let slope = (v - prev).abs() / h;
            if slope < 1e-10 {
                flat += 1;
            }
            min_slope = min_slope.min(slope);
            prev = v;
        }
        let frac = flat as f64 / n as f64;
        entries.push(AssumptionCheck {
            id: "A3",
            status: if frac < 0.05 { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: min_slope,
            probe: format!("{:.1}% of {} sample intervals flat", 100.0 * frac, n),
        });
    }

    // A4: q(x_b, .) integrates to 1.
    {
        let mut worst = 0.0f64;
        let mut witness = String::new();
        for &x in probes {
            let d0 = model.support_start(x);
            let total = quad::integrate_to_inf(&|a| model.interjump_density(x, a), d0, 1e-10, &[]);
            let dev = (total - 1.0).abs();
            if dev > worst {
                worst = dev;
                witness = format!("int q(x_b={x}) = {total}");
            }
        }
        entries.push(AssumptionCheck {
            id: "A4",
            status: if worst < Q_NORM_TOL { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: Q_NORM_TOL - worst,
            probe: witness,
        });
    }

    // A5: some eps with int_0^eps q < 1 - eps uniformly. Searched over
    // eps = 2^-j, j = 1..20, keeping the best uniform margin.
    let mut epsilon_a5 = None;
    {
        let mut best = f64::NEG_INFINITY;
        let mut best_eps = 0.0;
        for j in 1..=20 {
            let eps = 2f64.powi(-j);
            let mut m = f64::INFINITY;
            for &x in probes {
                let head = quad::integrate(&|a| model.interjump_density(x, a), 0.0, eps, 1e-9, &[model.support_start(x)]);
                m = m.min((1.0 - eps) - head);
            }
            if m > best {
                best = m;
                best_eps = eps;
            }
        }
        if best > 0.0 {
            epsilon_a5 = Some(best_eps);
        }
        entries.push(AssumptionCheck {
            id: "A5",
            status: if best > 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: best,
            probe: format!("best eps = {best_eps}"),
        });
    }

    // B1: q vanishes below the support start and is positive above it.
    {
        let mut ok = true;
        let mut margin = f64::INFINITY;
        let mut witness = String::new();
        for &x in probes {
            let d0 = model.support_start(x);
            if d0 > 0.0 {
                for frac in [0.25, 0.5, 0.9] {
                    let v = model.interjump_density(x, frac * d0);
                    if v != 0.0 && ok {
                        ok = false;
                        witness = format!("q({x}, {}) = {v} below support start", frac * d0);
                    }
                }
            }
            for da in [0.05, 0.5, 1.0, 2.0, 5.0] {
                let v = model.interjump_density(x, d0 + da);
                if v <= 0.0 && ok {
                    ok = false;
                    witness = format!("q({x}, {}) = {v} above support start", d0 + da);
                }
                margin = margin.min(v);
            }
        }
        entries.push(AssumptionCheck {
            id: "B1",
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            margin,
            probe: if ok { "support probes".into() } else { witness },
        });
    }

    // B2: uniformly bounded mean waiting time.
    let mut m1_bound = None;
    {
        let mut m1 = 0.0f64;
        let mut ok = true;
        for &x in probes {
            let d0 = model.support_start(x);
            let m = quad::integrate_to_inf(&|a| a * model.interjump_density(x, a), d0, 1e-9, &[]);
            if !m.is_finite() {
                ok = false;
            }
            m1 = m1.max(m);
        }
        if ok {
            m1_bound = Some(m1);
        }
        entries.push(AssumptionCheck {
            id: "B2",
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: m1,
            probe: "max of int a q da over probes".into(),
        });
    }

    // C1: F unbounded below, probed by the growth ratio F(4X)/F(X) at
    // large X. A bounded F gives ratio -> 1; any power growth passes.
    {
        let x1 = 16.0 * x_hi;
        let f1 = model.decay_rate(x1);
        let f3 = model.decay_rate(4.0 * x1);
        let ratio = if f1 < 0.0 { f3 / f1 } else { 0.0 };
        let ok = f1 < 0.0 && ratio >= 1.5;
        entries.push(AssumptionCheck {
            id: "C1",
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: ratio - 1.5,
            probe: format!("F({x1}) = {f1}, growth ratio {ratio:.3}"),
        });
    }

    // C2: bounded boost increment G(x) - x <= L.
    let mut l_c2 = None;
    {
        let mut sorted: Vec<f64> = probes.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let diffs: Vec<f64> = sorted.iter().map(|&x| model.boost(x) - x).collect();
        let l = diffs.iter().cloned().fold(f64::MIN, f64::max);
        let half = diffs.len() / 2;
        let head_max = diffs[..half.max(1)].iter().cloned().fold(f64::MIN, f64::max);
        let tail_last = *diffs.last().unwrap();
        // growing increments at the top of the probe range mean no finite L
        let growing = tail_last > 1.1 * head_max && tail_last >= l - 1e-12;
        if !growing {
            l_c2 = Some(l);
        }
        entries.push(AssumptionCheck {
            id: "C2",
            status: if growing { CheckStatus::Fail } else { CheckStatus::Pass },
            margin: if growing { head_max - tail_last } else { l },
            probe: format!("max G(x)-x = {l:.6} over probes"),
        });
    }

    AssumptionReport { entries, epsilon_a5, m1_bound, l_c2 }
}

/// Numeric closure of the reachable-status interval.
#[derive(Clone, Copy, Debug)]
pub struct StatusInterval {
    pub x_min: f64,
    /// `f64::INFINITY` when unbounded growth was detected.
    pub x_max: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

impl StatusInterval {
    pub fn unbounded(&self) -> bool {
        self.x_max.is_infinite()
    }
}

const UNBOUNDED_CAP: f64 = 1e8;

/// Iterate the interval map I_{n+1} = { G(pi_a x) : x in I_n, q(x, a) > 0 }
/// from I_1 (reachable after one jump from the floor) until the endpoints
/// settle.
pub fn support_interval(model: &ModelSpec, max_iter: usize, tol: f64) -> Result<StatusInterval> {
    let g0 = model.boost(model.domain_floor);
    // endpoint sampling density: endpoints suffice for a monotone G,
    // dense sampling otherwise
    let g_monotone = {
        let n = 256;
        let h = (4.0 * g0.max(1.0)) / n as f64;
        let mut inc = true;
        let mut dec = true;
        let mut prev = model.boost(0.0);
        for i in 1..=n {
            let v = model.boost(i as f64 * h);
            if v < prev {
                inc = false;
            }
            if v > prev {
                dec = false;
            }
            prev = v;
        }
        inc || dec
    };
    let n_x = if g_monotone { 2 } else { 1024 };

    let image = |lo: f64, hi: f64| -> Result<(f64, f64)> {
        let mut y_lo = f64::INFINITY;
        let mut y_hi = f64::NEG_INFINITY;
        for i in 0..n_x {
            let x = if n_x == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n_x - 1) as f64
            };
            let d0 = model.support_start(x);
            // age samples: just above the support start, a geometric ladder,
            // and a deep-decay sample standing in for a -> infinity
            let mut ages = vec![d0 + 1e-9, d0 + 0.01, d0 + 0.1];
            let mut a = d0 + 0.5;
            for _ in 0..14 {
                ages.push(a);
                a *= 2.0;
            }
            for a in ages {
                let y = model.boost(model.flow(x, a)?);
                y_lo = y_lo.min(y);
                y_hi = y_hi.max(y);
            }
            let deep = model.boost(model.flow(x, d0 + 8192.0)?);
            y_lo = y_lo.min(deep);
            y_hi = y_hi.max(deep);
        }
        Ok((y_lo, y_hi))
    };

    let (mut lo, mut hi) = image(g0, g0)?;
    let mut run_lo = lo;
    let mut run_hi = hi;
    let mut iterations = 1;
    let mut converged = false;
    let mut increments: Vec<f64> = Vec::new();
    for n in 1..max_iter {
        iterations = n + 1;
        let (nlo, nhi) = image(lo, hi)?;
        let moved = (nlo - lo).abs().max(if nhi.is_finite() && hi.is_finite() {
            (nhi - hi).abs()
        } else {
            f64::INFINITY
        });
        run_lo = run_lo.min(nlo);
        if nhi > UNBOUNDED_CAP && nhi > hi {
            return Ok(StatusInterval {
                x_min: run_lo,
                x_max: f64::INFINITY,
                iterations_used: iterations,
                converged: true,
            });
        }
        increments.push(nhi - hi);
        run_hi = run_hi.max(nhi);
        lo = nlo;
        hi = nhi;
        if moved < tol {
            converged = true;
            break;
        }
    }
    // A still-growing upper endpoint at exit means unbounded growth even
    // below the cap when the increments are not shrinking: a contracting
    // fixed point would show geometrically decaying steps.
    if !converged && increments.len() >= 8 {
        let tail = &increments[increments.len() - 8..];
        let first = tail[0];
        if tail.iter().all(|&d| d > tol) && tail[7] >= 0.5 * first {
            return Ok(StatusInterval {
                x_min: run_lo,
                x_max: f64::INFINITY,
                iterations_used: iterations,
                converged: true,
            });
        }
    }
    Ok(StatusInterval {
        x_min: run_lo,
        x_max: run_hi,
        iterations_used: iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp_benchmark() -> ModelSpec {
        // F = -x, G = x + 1, q = e^{-a}
        crate::preset::build_preset(&crate::preset::PresetParams {
            kind: crate::preset::PresetKind::ConstantBoost,
            c: 1.0,
            k_boost: 1.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn flow_closed_form_halving() {
        let m = exp_benchmark();
        let v = m.flow(2.0, std::f64::consts::LN_2).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        assert_eq!(m.flow(5.0, 0.0).unwrap(), 5.0);
    }

    #[test]
    fn flow_rejects_negative_time() {
        let m = exp_benchmark();
        assert!(m.flow(1.0, -0.5).is_err());
    }

    #[test]
    fn numeric_flow_matches_implicit_solution() {
        // x' = -x/(1+x) has implicit solution ln x + x = ln x0 + x0 - t;
        // solve it by bisection as an independent oracle.
        let m = ModelBuilder::numeric_decay(
            Arc::new(|x: f64| -x / (1.0 + x)),
            Arc::new(|x: f64| x + 1.0),
            Arc::new(|_, a: f64| (-a as f64).exp()),
        )
        .build();
        let got = m.flow(1.0, 1.0).unwrap();
        let rhs = 1.0f64.ln() + 1.0 - 1.0;
        let oracle = quad::bisect(&|x: f64| x.ln() + x - rhs, 1e-6, 1.0, 1e-14);
        assert!((got - oracle).abs() < 1e-9, "got {got}, oracle {oracle}");
    }

    #[test]
    fn inverse_flow_closed_form() {
        let m = exp_benchmark();
        let v = m.inverse_flow(1.0, std::f64::consts::LN_2).unwrap().unwrap();
        assert!((v - 2.0).abs() < 1e-14);
        assert_eq!(m.inverse_flow(3.0, 0.0).unwrap().unwrap(), 3.0);
    }

    #[test]
    fn inverse_flow_numeric_round_trip() {
        let m = ModelBuilder::numeric_decay(
            Arc::new(|x: f64| -x / (1.0 + x)),
            Arc::new(|x: f64| x + 1.0),
            Arc::new(|_, a: f64| (-a as f64).exp()),
        )
        .build();
        let y = m.inverse_flow(0.5, 2.0).unwrap().unwrap();
        let back = m.flow(y, 2.0).unwrap();
        assert!((back - 0.5).abs() < 1e-8);
    }

    #[test]
    fn memoryless_hazard_is_one() {
        let m = exp_benchmark();
        let p = m.hazard_from_density(2.0).unwrap();
        for a in [0.1, 1.0, 3.0, 7.0] {
            assert!((p.eval(a) - 1.0).abs() < 1e-9, "p({a}) = {}", p.eval(a));
        }
    }

    #[test]
    fn density_from_piecewise_hazard() {
        // p = 0 on [0,1), 2 on [1,inf) gives q(a) = 2 e^{-2(a-1)} above 1
        let p = HazardCurve {
            x_b: 1.0,
            support_start: 1.0,
            unbounded_support: true,
            capped: std::sync::atomic::AtomicBool::new(false),
            eval: Arc::new(|a| if a < 1.0 { 0.0 } else { 2.0 }),
        };
        let q = density_from_hazard(&p).unwrap();
        assert_eq!(q(0.5), 0.0);
        for a in [1.0f64, 1.5, 2.0, 4.0] {
            let expect = 2.0 * (-2.0 * (a - 1.0)).exp();
            assert!((q(a) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_hazard_round_trip() {
        let p = HazardCurve {
            x_b: 1.0,
            support_start: 0.0,
            unbounded_support: true,
            capped: std::sync::atomic::AtomicBool::new(false),
            eval: Arc::new(|_| 0.7),
        };
        let q = density_from_hazard(&p).unwrap();
        for a in [0.0, 0.5, 2.0] {
            assert!((q(a) - 0.7 * (-0.7 * a).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn generic_survival_normalizes_scaled_density() {
        // q = 2 e^{-a} (unnormalized); the survival curve must still be e^{-a}
        let m = ModelBuilder::exponential_decay(
            1.0,
            Arc::new(|x: f64| x + 1.0),
            Arc::new(|_, a: f64| 2.0 * (-a as f64).exp()),
        )
        .build();
        let phi = m.survival(1.0);
        for a in [0.5, 1.0, 4.0] {
            assert!((phi.eval(a) - (-a as f64).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_inverts_exponential() {
        let m = exp_benchmark();
        // closed-form inverse: u = e^{-2} must give a = 2; emulate by
        // checking the survival inverse directly
        let phi = m.survival(1.5);
        let u = (-2.0f64).exp();
        let a = quad::bisect(&|a| phi.eval(a) - u, 0.0, 50.0, 1e-13);
        assert!((a - 2.0).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = exp_benchmark();
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..32 {
            let a = m.sample_interjump(1.0, &mut r1).unwrap();
            let b = m.sample_interjump(1.0, &mut r2).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn benchmark_assumptions_pass() {
        let m = exp_benchmark();
        let probes: Vec<f64> = (1..=40).map(|i| 0.5 * i as f64).collect();
        let rep = validate_assumptions(&m, &probes);
        assert!(rep.core_ok(), "{:?}", rep.entries);
        assert!(rep.passed("C1"));
        assert!(rep.passed("C2"));
        assert!((rep.l_c2.unwrap() - 1.0).abs() < 1e-9);
        assert!(rep.epsilon_a5.unwrap() > 0.0);
        // for q = e^{-a}: int_0^eps = 1 - e^{-eps} < 1 - eps for eps < 1
        let eps = rep.epsilon_a5.unwrap();
        assert!(1.0 - (-eps).exp() < 1.0 - eps);
    }

    #[test]
    fn multiplicative_boost_fails_c2() {
        let m = ModelBuilder::exponential_decay(
            1.0,
            Arc::new(|x: f64| 2.0 * x + 0.1),
            Arc::new(|_, a: f64| (-a as f64).exp()),
        )
        .build();
        let probes: Vec<f64> = (1..=40).map(|i| 0.5 * i as f64).collect();
        let rep = validate_assumptions(&m, &probes);
        assert!(!rep.passed("C2"));
        assert!(rep.l_c2.is_none());
    }

    #[test]
    fn support_interval_benchmark_unbounded() {
        // F = -cx, G = x + K, q = e^{-a}: interval is [K, inf)
        let m = exp_benchmark();
        let iv = support_interval(&m, 200, 1e-9).unwrap();
        assert!(iv.unbounded());
        assert!((iv.x_min - 1.0).abs() < 1e-6, "x_min = {}", iv.x_min);
    }

    #[test]
    fn support_interval_bounded_boost() {
        // G = min(x + K, B) keeps the interval below B
        let m = ModelBuilder::exponential_decay(
            1.0,
            Arc::new(|x: f64| (x + 1.0).min(3.0)),
            Arc::new(|_, a: f64| (-a as f64).exp()),
        )
        .build();
        let iv = support_interval(&m, 400, 1e-10).unwrap();
        assert!(iv.converged);
        assert!(iv.x_max <= 3.0 + 1e-9, "x_max = {}", iv.x_max);
        assert!(iv.x_min >= 1.0 - 1e-9);
    }

    #[test]
    fn support_interval_first_iteration_matches_definition() {
        // one unrolled step from x = G(0): endpoints of {G(pi_a G(0))}
        let m = exp_benchmark();
        let g0 = m.boost(0.0);
        // q = e^{-a} has full support, so the image endpoints are
        // G(g0 e^{-a}) for a -> 0 (sup) and a -> inf (inf)
        let iv = support_interval(&m, 1, 1e-9).unwrap();
        assert!(iv.x_min >= m.boost(0.0) - 1e-6);
        assert!(iv.x_min <= m.boost(0.0) + 0.05);
        assert!(iv.x_max <= m.boost(g0) + 1e-9);
    }
}
