//! Built-in example models: exponential decay with exponential waiting
//! times, constant boost, threshold-triggered reinfection, power-law
//! hazard, seasonal forcing and a gamma waiting-time variant. Also the
//! closed-form quantities these examples define: the threshold time
//! `a_th`, the exponential integral `E1` and the mean reinfection time.

use std::sync::Arc;

use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{ModelBuilder, ModelSpec, RealFn};
use crate::quad;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetKind {
    ExpDecayExpQ,
    ConstantBoost,
    Threshold,
    PowerLaw,
    Seasonal,
    GammaQ,
}

impl PresetKind {
    pub fn from_name(s: &str) -> Option<PresetKind> {
        Some(match s {
            "exp_decay_exp_q" => PresetKind::ExpDecayExpQ,
            "constant_boost" => PresetKind::ConstantBoost,
            "threshold" => PresetKind::Threshold,
            "power_law" => PresetKind::PowerLaw,
            "seasonal" => PresetKind::Seasonal,
            "gamma_q" => PresetKind::GammaQ,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PresetKind::ExpDecayExpQ => "exp_decay_exp_q",
            PresetKind::ConstantBoost => "constant_boost",
            PresetKind::Threshold => "threshold",
            PresetKind::PowerLaw => "power_law",
            PresetKind::Seasonal => "seasonal",
            PresetKind::GammaQ => "gamma_q",
        }
    }

    pub fn all() -> [PresetKind; 6] {
        [
            PresetKind::ExpDecayExpQ,
            PresetKind::ConstantBoost,
            PresetKind::Threshold,
            PresetKind::PowerLaw,
            PresetKind::Seasonal,
            PresetKind::GammaQ,
        ]
    }
}

/// Parameter bundle shared by all presets; each kind reads the fields it
/// needs. The boost constant (`k_boost`) is distinct from the E1 argument
/// K = kappa x_b^{-k}/(ck) used by the power-law closed forms.
#[derive(Clone)]
pub struct PresetParams {
    pub kind: PresetKind,
    /// Decay rate c in F(x) = -c x.
    pub c: f64,
    /// Boost constant K in G(x) = x + K.
    pub k_boost: f64,
    /// Rate of the exponential waiting time (exp_decay_exp_q).
    pub lambda: f64,
    /// Threshold status (threshold preset).
    pub x_th: f64,
    /// Mean of the exponential residual delay after crossing the threshold.
    pub m_theta: f64,
    /// Hazard scale kappa (power_law, seasonal).
    pub kappa: f64,
    /// Hazard exponent k (power_law, seasonal).
    pub k: f64,
    /// Season length (seasonal).
    pub t_season: f64,
    /// Geometric decay of successive seasonal peaks (seasonal).
    pub season_decay: f64,
    /// Infected-count profile n(a); `None` selects the built-in decaying
    /// multimodal default.
    pub n_profile: Option<RealFn>,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        PresetParams {
            kind: PresetKind::ExpDecayExpQ,
            c: 1.0,
            k_boost: 1.0,
            lambda: 1.0,
            x_th: 0.5,
            m_theta: 1.0,
            kappa: 1.0,
            k: 1.0,
            t_season: 1.0,
            season_decay: 0.7,
            n_profile: None,
            gamma_shape: 2.0,
            gamma_scale: 0.5,
        }
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("preset invariant violated: {name} = {v} must be > 0")))
    }
}

/// Build a validated model for the requested preset.
pub fn build_preset(p: &PresetParams) -> Result<ModelSpec> {
    require_positive("c", p.c)?;
    require_positive("k_boost", p.k_boost)?;
    let c = p.c;
    let k_b = p.k_boost;
    let boost: RealFn = Arc::new(move |x| x + k_b);

    match p.kind {
        PresetKind::ExpDecayExpQ => {
            require_positive("lambda", p.lambda)?;
            let l = p.lambda;
            Ok(ModelBuilder::exponential_decay(
                c,
                boost,
                Arc::new(move |_, a| if a < 0.0 { 0.0 } else { l * (-l * a).exp() }),
            )
            .survival_closed_form(Arc::new(move |_, a| (-l * a.max(0.0)).exp()))
            .inverse_survival(Arc::new(move |_, u| -u.ln() / l))
            .q_kind("exp_decay_exp_q")
            .build())
        }
        PresetKind::ConstantBoost => Ok(ModelBuilder::exponential_decay(
            c,
            boost,
            Arc::new(|_, a| if a < 0.0 { 0.0 } else { (-a).exp() }),
        )
        .survival_closed_form(Arc::new(|_, a: f64| (-a.max(0.0)).exp()))
        .inverse_survival(Arc::new(|_, u: f64| -u.ln()))
        .q_kind("constant_boost")
        .build()),
        PresetKind::Threshold => {
            require_positive("x_th", p.x_th)?;
            require_positive("m_theta", p.m_theta)?;
            if p.x_th > p.k_boost {
                return Err(Error::validation(format!(
                    "preset invariant violated: x_th = {} exceeds min G = {}",
                    p.x_th, p.k_boost
                )));
            }
            let x_th = p.x_th;
            let m = p.m_theta;
            let a_th = move |x_b: f64| if x_b <= x_th { 0.0 } else { (x_b / x_th).ln() / c };
            Ok(ModelBuilder::exponential_decay(
                c,
                boost,
                Arc::new(move |x_b, a| {
                    let d = a - a_th(x_b);
                    if d < 0.0 {
                        0.0
                    } else {
                        (-d / m).exp() / m
                    }
                }),
            )
            .survival_closed_form(Arc::new(move |x_b, a| {
                let d = a - a_th(x_b);
                if d <= 0.0 {
                    1.0
                } else {
                    (-d / m).exp()
                }
            }))
            .inverse_survival(Arc::new(move |x_b, u| a_th(x_b) - m * u.ln()))
            .support_start(Arc::new(a_th))
            .q_kind("threshold")
            .build())
        }
        PresetKind::PowerLaw => {
            require_positive("kappa", p.kappa)?;
            require_positive("k", p.k)?;
            let (kappa, k) = (p.kappa, p.k);
            let ck = c * k;
            Ok(ModelBuilder::exponential_decay(
                c,
                boost,
                Arc::new(move |x_b, a| {
                    if a < 0.0 {
                        return 0.0;
                    }
                    let kx = kappa * x_b.powf(-k);
                    kx * (ck * a).exp() * (kx * (1.0 - (ck * a).exp()) / ck).exp()
                }),
            )
            .survival_closed_form(Arc::new(move |x_b, a| {
                let kx = kappa * x_b.powf(-k);
                (kx * (1.0 - (ck * a.max(0.0)).exp()) / ck).exp()
            }))
            .inverse_survival(Arc::new(move |x_b, u| {
                let big_k = kappa * x_b.powf(-k) / ck;
                (1.0 - u.ln() / big_k).ln() / ck
            }))
            .q_kind("power_law")
            .build())
        }
        PresetKind::Seasonal => {
            require_positive("kappa", p.kappa)?;
            require_positive("k", p.k)?;
            require_positive("t_season", p.t_season)?;
            require_positive("season_decay", p.season_decay)?;
            let (kappa, k, ck) = (p.kappa, p.k, c * p.k);
            let t = p.t_season;
            if (ck * t).exp() * p.season_decay <= 1.0 {
                return Err(Error::validation(
                    "preset invariant violated: seasonal hazard must grow (e^{ckT} season_decay > 1)",
                ));
            }
            let n: RealFn = p.n_profile.clone().unwrap_or_else(|| {
                let rho = p.season_decay;
                let sigma = t / 8.0;
                Arc::new(move |a: f64| {
                    // only peaks within a few sigma contribute
                    let m0 = ((a / t).floor() as i64 - 4).max(1);
                    let mut s = 0.0;
                    for m in m0..m0 + 9 {
                        let z = (a - m as f64 * t) / sigma;
                        s += rho.powi(m as i32 - 1) * (-0.5 * z * z).exp();
                    }
                    s
                })
            });
            let cum = {
                let n = n.clone();
                move |x_b: f64, a: f64| {
                    let kx = kappa * x_b.powf(-k);
                    let splits: Vec<f64> =
                        (1..=(a / t) as usize).map(|m| m as f64 * t).collect();
                    kx * quad::integrate(&|r| (ck * r).exp() * n(r), 0.0, a, 1e-13, &splits)
                }
            };
            let cum2 = cum.clone();
            let n2 = n.clone();
            Ok(ModelBuilder::exponential_decay(
                c,
                boost,
                Arc::new(move |x_b, a| {
                    if a < 0.0 {
                        return 0.0;
                    }
                    let haz = kappa * x_b.powf(-k) * (ck * a).exp() * n2(a);
                    haz * (-cum(x_b, a)).exp()
                }),
            )
            .survival_closed_form(Arc::new(move |x_b, a| (-cum2(x_b, a.max(0.0))).exp()))
            .q_kind("seasonal")
            .build())
        }
        PresetKind::GammaQ => {
            require_positive("gamma_shape", p.gamma_shape)?;
            require_positive("gamma_scale", p.gamma_scale)?;
            let (shape, scale) = (p.gamma_shape, p.gamma_scale);
            let log_norm = ln_gamma(shape) + shape * scale.ln();
            Ok(ModelBuilder::exponential_decay(
                c,
                boost,
                Arc::new(move |_, a| {
                    if a <= 0.0 {
                        0.0
                    } else {
                        ((shape - 1.0) * a.ln() - a / scale - log_norm).exp()
                    }
                }),
            )
            .survival_closed_form(Arc::new(move |_, a| {
                if a <= 0.0 {
                    1.0
                } else {
                    gamma_ur(shape, a / scale)
                }
            }))
            .q_kind("gamma_q")
            .build())
        }
    }
}

/// Time for the flow to fall from `x_b` to the threshold `x_th` under
/// F(x) = -c x.
pub fn threshold_time(c: f64, x_th: f64, x_b: f64) -> Result<f64> {
    if x_b < x_th {
        return Err(Error::validation(format!(
            "threshold_time: x_b = {x_b} below threshold {x_th}"
        )));
    }
    Ok((x_b / x_th).ln() / c)
}

/// Threshold time for a general decay rate: the integral of 1/(-F) along
/// the orbit from x_th up to x_b.
pub fn threshold_time_general(decay: &RealFn, x_th: f64, x_b: f64) -> Result<f64> {
    if x_b < x_th {
        return Err(Error::validation(format!(
            "threshold_time: x_b = {x_b} below threshold {x_th}"
        )));
    }
    let v = quad::integrate(&|x| -1.0 / decay(x), x_th, x_b, 1e-12, &[]);
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::numeric(format!("threshold_time integral failed on [{x_th}, {x_b}]")))
    }
}

const EULER_GAMMA: f64 = 0.577215664901532860606512090082;

/// Exponential integral E1(x) = int_x^inf e^{-y}/y dy. Power series up to
/// the x = 1 crossover, modified Lentz continued fraction beyond it.
pub fn exp_integral_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::validation(format!("exp_integral_e1: x = {x} must be > 0")));
    }
    if x <= 1.0 {
        // E1 = -gamma - ln x - sum (-x)^n / (n n!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for n in 1..=60 {
            term *= -x / n as f64;
            let add = term / n as f64;
            sum += add;
            if add.abs() < 1e-18 * (1.0 + sum.abs()) {
                break;
            }
        }
        Ok(-EULER_GAMMA - x.ln() - sum)
    } else {
        // continued fraction e^{-x} / (x + 1 - 1/(x + 3 - 4/(x + 5 - ...)))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let a = -(i as f64) * (i as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        Ok(h * (-x).exp())
    }
}

/// Mean time to the next infection from post-boost status `x_b`: the
/// integral of the survival function. Presets with closed-form survival
/// use it directly; anything else goes through tail quadrature of q.
pub fn mean_reinfection_time(model: &ModelSpec, x_b: f64) -> Result<f64> {
    model.mean_interjump(x_b)
}

/// Closed-form mean for the power-law hazard: e^K E1(K)/(ck) with
/// K = kappa x_b^{-k}/(ck).
pub fn power_law_mean(c: f64, k: f64, kappa: f64, x_b: f64) -> Result<f64> {
    let big_k = kappa * x_b.powf(-k) / (c * k);
    Ok(big_k.exp() * exp_integral_e1(big_k)? / (c * k))
}

/// The model family from the sweeping worked example: q = e^{-a},
/// F = -c x and a multiplicative boost G(x) = b x + b0 with b = e^{2c}.
/// The small additive offset keeps G(0) > 0; it only enlarges G, so the
/// bound G(x) >= b x used by the sweeping criterion is intact.
pub struct SweepingExample {
    pub model: ModelSpec,
    pub b: f64,
    pub b0: f64,
    /// Exponent gamma = 1/c - 1/log b = 1/(2c).
    pub gamma: f64,
    /// Closed-form criterion value 2/e.
    pub l_sweep_closed_form: f64,
}

pub fn sweeping_example(c: f64) -> Result<SweepingExample> {
    require_positive("c", c)?;
    let b = (2.0 * c).exp();
    let b0 = 0.1;
    let model = ModelBuilder::exponential_decay(
        c,
        Arc::new(move |x| b * x + b0),
        Arc::new(|_, a| if a < 0.0 { 0.0 } else { (-a).exp() }),
    )
    .survival_closed_form(Arc::new(|_, a: f64| (-a.max(0.0)).exp()))
    .inverse_survival(Arc::new(|_, u: f64| -u.ln()))
    .q_kind("sweeping_example")
    .build();
    Ok(SweepingExample {
        model,
        b,
        b0,
        gamma: 1.0 / (2.0 * c),
        l_sweep_closed_form: 2.0 / std::f64::consts::E,
    })
}
