//! Cross-module properties: flow algebra, hazard-calculus round trips,
//! sampling distributions, metric axioms, and the pushforward identity
//! of the discretized transfer operator.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wil::grid::{l1_distance, DensityGrid1D, Grid1D};
use wil::model::{support_interval, ModelBuilder, ModelSpec};
use wil::preset::{build_preset, PresetKind, PresetParams};
use wil::stationary::discretize_transfer;

fn benchmark() -> ModelSpec {
    build_preset(&PresetParams { kind: PresetKind::ConstantBoost, ..Default::default() })
        .unwrap()
}

/// F(x) = -x/(1+x): no closed form, exercises the numeric flow path.
fn saturating_model() -> ModelSpec {
    ModelBuilder::numeric_decay(
        Arc::new(|x: f64| -x / (1.0 + x)),
        Arc::new(|x: f64| x + 1.0),
        Arc::new(|_, a: f64| if a < 0.0 { 0.0 } else { (-a).exp() }),
    )
    .build()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_semigroup_closed_form(x in 0.01f64..50.0, s in 0.0f64..4.0, t in 0.0f64..4.0) {
        let m = benchmark();
        let split = m.flow(m.flow(x, s).unwrap(), t).unwrap();
        let joint = m.flow(x, s + t).unwrap();
        prop_assert!(
            (split - joint).abs() <= 1e-9 * (1.0 + joint.abs()),
            "split {split} vs joint {joint}"
        );
    }

    #[test]
    fn flow_semigroup_numeric(x in 0.01f64..20.0, s in 0.0f64..3.0, t in 0.0f64..3.0) {
        let m = saturating_model();
        let split = m.flow(m.flow(x, s).unwrap(), t).unwrap();
        let joint = m.flow(x, s + t).unwrap();
        prop_assert!(
            (split - joint).abs() <= 1e-9 * (1.0 + joint.abs()),
            "split {split} vs joint {joint}"
        );
    }

    #[test]
    fn inverse_flow_inverts_flow(x in 0.05f64..30.0, a in 0.0f64..4.0) {
        for m in [benchmark(), saturating_model()] {
            let y = m.flow(x, a).unwrap();
            let z = m.inverse_flow(y, a).unwrap().expect("backward orbit exists");
            prop_assert!((z - x).abs() <= 1e-8 * (1.0 + x), "{z} vs {x}");
        }
    }

    #[test]
    fn hazard_and_survival_reproduce_density(
        kind_idx in 0usize..6,
        x_b in 1.2f64..6.0,
        a in 0.05f64..8.0,
    ) {
        let kind = PresetKind::all()[kind_idx];
        let m = build_preset(&PresetParams { kind, ..Default::default() }).unwrap();
        let p = m.hazard_from_density(x_b).unwrap();
        let phi = m.survival(x_b);
        let f = phi.eval(a);
        if f > 1e-12 {
            let q = m.interjump_density(x_b, a);
            let back = p.eval(a) * f;
            if q > 1e-12 {
                prop_assert!((back - q).abs() <= 1e-8 * q, "{}: {back} vs {q}", kind.name());
            } else {
                prop_assert!(back.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn l1_distance_metric_axioms(
        v in proptest::collection::vec(0.0f64..1.0, 8),
        w in proptest::collection::vec(0.0f64..1.0, 8),
        z in proptest::collection::vec(0.0f64..1.0, 8),
    ) {
        let grid = Grid1D::new(0.0, 1.0, 8).unwrap();
        let mk = |m: &[f64]| {
            let mut d = DensityGrid1D { grid, mass: m.to_vec(), overflow: 0.0 };
            prop_assume!(d.total_mass() > 0.0);
            d.normalize();
            Ok(d)
        };
        let (a, b, c) = (mk(&v)?, mk(&w)?, mk(&z)?);
        let dab = l1_distance(&a, &b).unwrap();
        let dba = l1_distance(&b, &a).unwrap();
        let dac = l1_distance(&a, &c).unwrap();
        let dcb = l1_distance(&c, &b).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&dab));
        prop_assert!((dab - dba).abs() < 1e-14);
        prop_assert!(dab <= dac + dcb + 1e-12, "triangle: {dab} > {dac} + {dcb}");
        prop_assert!(l1_distance(&a, &a).unwrap() < 1e-14);
    }
}

#[test]
fn sampled_interjump_matches_quadrature_cdf() {
    // power-law preset with a closed-form survival: Kolmogorov-Smirnov
    // distance of the empirical CDF below the distribution-free 3/sqrt(N)
    let m = build_preset(&PresetParams { kind: PresetKind::PowerLaw, ..Default::default() })
        .unwrap();
    let x_b = 10.0; // kappa x_b^{-k} = 0.1
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut samples: Vec<f64> =
        (0..n).map(|_| m.sample_interjump(x_b, &mut rng).unwrap()).collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf = |a: f64| 1.0 - (0.1 * (1.0 - a.exp())).exp();
    let mut ks = 0.0f64;
    for (i, &a) in samples.iter().enumerate() {
        let f = cdf(a);
        ks = ks.max((f - i as f64 / n as f64).abs());
        ks = ks.max((f - (i + 1) as f64 / n as f64).abs());
    }
    let bound = 3.0 / (n as f64).sqrt();
    assert!(ks < bound, "KS distance {ks} exceeds {bound}");
}

#[test]
fn gamma_preset_sampled_mean_and_mode() {
    let m = build_preset(&PresetParams { kind: PresetKind::GammaQ, ..Default::default() })
        .unwrap();
    // shape 2, scale 0.5: mean = 1, mode = 0.5
    let n = 1_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = Grid1D::new(0.0, 3.0, 60).unwrap();
    let mut counts = vec![0u64; grid.n];
    let mut sum = 0.0;
    for _ in 0..n {
        let a = m.sample_interjump(1.0, &mut rng).unwrap();
        sum += a;
        if let Some(i) = grid.index(a) {
            counts[i] += 1;
        }
    }
    let mean = sum / n as f64;
    assert!((mean - 1.0).abs() < 0.005, "sampled mean {mean}");
    let arg = counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap().0;
    let mode = grid.center(arg);
    assert!((mode - 0.5).abs() < 0.08, "sampled mode {mode}");
}

#[test]
fn support_interval_iterates_are_nested() {
    // bounded boost keeps everything finite so nesting is observable
    let m = ModelBuilder::exponential_decay(
        1.0,
        Arc::new(|x: f64| (x + 1.0).min(3.0)),
        Arc::new(|_, a: f64| if a < 0.0 { 0.0 } else { (-a).exp() }),
    )
    .build();
    let mut prev: Option<(f64, f64)> = None;
    for k in [1usize, 2, 4, 8, 16] {
        let iv = support_interval(&m, k, 1e-12).unwrap();
        if let Some((lo, hi)) = prev {
            assert!(iv.x_min <= lo + 1e-12, "x_min grew: {} > {lo}", iv.x_min);
            assert!(iv.x_max >= hi - 1e-12, "x_max shrank: {} < {hi}", iv.x_max);
        }
        prev = Some((iv.x_min, iv.x_max));
    }
}

#[test]
fn transfer_pushforward_matches_interval_quadrature() {
    // mass carried into a cell-aligned interval A equals the direct
    // quadrature of q over { a : G(pi_a x) in A }, up to the in-cell
    // representative error of the discretization
    let m = benchmark();
    let grid = Grid1D::new(1.0, 9.0, 80).unwrap();
    let t = discretize_transfer(&m, grid).unwrap();
    let (lo_a, hi_a) = (2.0, 4.0);
    let j0 = grid.index(lo_a).unwrap();
    let j1 = grid.index(hi_a - 1e-12).unwrap();
    let h = 1.0 / grid.n as f64;
    let mut matrix_mass = 0.0;
    let mut direct_mass = 0.0;
    for i in 0..grid.n {
        for j in j0..=j1 {
            matrix_mass += h * t.entry(i, j);
        }
        // G(pi_a x) = x e^{-a} + 1 in [2, 4) iff x e^{-a} in [1, 3):
        // survival-difference of the crossing times, exact for q = e^{-a}
        let x = grid.center(i);
        direct_mass += h * ((3.0 / x).min(1.0) - (1.0 / x).min(1.0));
    }
    assert!(
        (matrix_mass - direct_mass).abs() < 2e-3,
        "pushforward mass {matrix_mass} vs quadrature {direct_mass}"
    );
}
