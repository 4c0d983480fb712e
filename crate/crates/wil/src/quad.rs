//! Shared numerics: adaptive Gauss-Kronrod quadrature, Gauss-Legendre
//! nodes, bracketed root finding and an adaptive Runge-Kutta step for the
//! general decay flow.
//!
//! The adaptive routines make all refinement decisions on *relative*
//! quantities, so scaling an integrand by a power of two scales every
//! intermediate value exactly and leaves the subdivision pattern unchanged.

/// 15-point Kronrod abscissae on [-1, 1] (symmetric, only the
/// non-negative half is stored).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// 7-point Gauss weights embedded in the Kronrod rule (odd abscissae).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// Single Gauss-Kronrod 15(7) panel; returns (integral, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut result_k = 0.0;
    let mut result_g = 0.0;
    for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (flo, fhi) = if x == 0.0 {
            let v = f(mid);
            (v, 0.0)
        } else {
            (f(mid - half * x), f(mid + half * x))
        };
        let sum = if x == 0.0 { flo } else { flo + fhi };
        result_k += w * sum;
        if i % 2 == 1 {
            result_g += WG[i / 2] * sum;
        }
    }
    let integral = result_k * half;
    let err = ((result_k - result_g) * half).abs();
    (integral, err)
}

/// Adaptive quadrature of `f` over `[a, b]` to relative tolerance
/// `rel_tol`. `splits` lists interior points where the integrand is known
/// to be non-smooth (hazard support starts, threshold times).
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64, splits: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut points: Vec<f64> = vec![a];
    for &s in splits {
        if s > a && s < b {
            points.push(s);
        }
    }
    points.push(b);
    points.sort_by(|p, q| p.partial_cmp(q).unwrap());

    // Stack of (lo, hi, integral, err), refined until the total error is
    // below rel_tol * |total integral|.
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    for w in points.windows(2) {
        let (i, e) = gk15(f, w[0], w[1]);
        panels.push((w[0], w[1], i, e));
    }
    for _ in 0..60 {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        let scale = total.abs().max(f64::MIN_POSITIVE);
        if err <= rel_tol * scale {
            break;
        }
        // Split every panel whose error exceeds its share of the budget.
        let budget = rel_tol * scale / panels.len() as f64;
        let mut next = Vec::with_capacity(panels.len() * 2);
        for (lo, hi, int, e) in panels {
            if e > budget && hi - lo > 1e-300 {
                let mid = 0.5 * (lo + hi);
                let (i1, e1) = gk15(f, lo, mid);
                let (i2, e2) = gk15(f, mid, hi);
                next.push((lo, mid, i1, e1));
                next.push((mid, hi, i2, e2));
            } else {
                next.push((lo, hi, int, e));
            }
        }
        panels = next;
    }
    panels.iter().map(|p| p.2).sum()
}

/// Integral of `f` over `[a, +inf)`: expand the upper limit geometrically
/// until the last block contributes less than `rel_tol` of the total.
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: &F, a: f64, rel_tol: f64, splits: &[f64]) -> f64 {
    let mut hi = if a.abs() < 1.0 { 1.0 } else { a.abs() * 2.0 };
    let mut total = integrate(f, a, hi, rel_tol, splits);
    for _ in 0..80 {
        let block = integrate(f, hi, 2.0 * hi, rel_tol, splits);
        total += block;
        hi *= 2.0;
        if block.abs() <= rel_tol * total.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    total
}

/// 8-point Gauss-Legendre abscissae on [-1, 1].
pub const GL8_X: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.5255324099163290,
    -0.1834346424956498,
    0.1834346424956498,
    0.5255324099163290,
    0.7966664774136267,
    0.9602898564975363,
];

/// Matching Gauss-Legendre weights (sum to 2).
pub const GL8_W: [f64; 8] = [
    0.1012285362903763,
    0.2223810344533745,
    0.3137066458778873,
    0.3626837833783620,
    0.3626837833783620,
    0.3137066458778873,
    0.2223810344533745,
    0.1012285362903763,
];

/// Bisection on a bracketing interval. `f(lo)` and `f(hi)` must have
/// opposite signs (or one of them may be zero).
pub fn bisect<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    let fhi = f(hi);
    if fhi == 0.0 {
        return hi;
    }
    debug_assert!(flo * fhi < 0.0, "bisect: no sign change on [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= rel_tol * (1.0 + mid.abs()) {
            return mid;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm * flo < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

/// Outcome of the adaptive ODE solve for x' = F(x).
pub struct OdeResult {
    pub x: f64,
    /// True when the step size collapsed or the state left [0, cap]
    /// before the requested time (backward blow-up).
    pub escaped: bool,
}

/// Dormand-Prince 5(4) integration of x'(t) = rhs(x) from `x0` over `[0, t]`.
/// `cap` bounds the admissible state; exceeding it stops the solve with
/// `escaped = true`.
pub fn integrate_ode<F: Fn(f64) -> f64>(rhs: &F, x0: f64, t: f64, rel_tol: f64, cap: f64) -> OdeResult {
    // Butcher tableau of Dormand-Prince 5(4).
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    // Embedded 4th-order weights.
    const E1: f64 = 5179.0 / 57600.0;
    const E3: f64 = 7571.0 / 16695.0;
    const E4: f64 = 393.0 / 640.0;
    const E5: f64 = -92097.0 / 339200.0;
    const E6: f64 = 187.0 / 2100.0;
    const E7: f64 = 1.0 / 40.0;

    if t == 0.0 {
        return OdeResult { x: x0, escaped: false };
    }
    let mut x = x0;
    let mut s = 0.0;
    let mut h = (t / 16.0).max(1e-12);
    let atol = 1e-14;
    let mut k1 = rhs(x);
    while t - s > f64::EPSILON * t {
        if h > t - s {
            h = t - s;
        }
        let k2 = rhs(x + h * A21 * k1);
        let k3 = rhs(x + h * (A31 * k1 + A32 * k2));
        let k4 = rhs(x + h * (A41 * k1 + A42 * k2 + A43 * k3));
        let k5 = rhs(x + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
        let k6 = rhs(x + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
        let x5 = x + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        let k7 = rhs(x5);
        let x4 = x + h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
        let err = (x5 - x4).abs();
        let tol = atol + rel_tol * x5.abs().max(x.abs());
        if err <= tol {
            s += h;
            x = x5;
            k1 = k7;
            if !x.is_finite() || x.abs() > cap {
                return OdeResult { x, escaped: true };
            }
        }
        let factor = if err > 0.0 {
            (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
        // step underflow only matters when the solver is still rejecting
        if err > tol && h < 1e-15 * (1.0 + s) {
            return OdeResult { x, escaped: true };
        }
    }
    OdeResult { x, escaped: false }
}
