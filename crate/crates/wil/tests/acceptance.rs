//! Acceptance gate: ten numbered criteria, each printing one pass line
//! (a failed assertion marks the criterion failed). The criteria carry
//! runtime budgets, so they are serialized behind a mutex to keep the
//! timings meaningful under the parallel test harness.

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wil::evolve::{convergence_check, evolve_until, EvolutionState, Evolver};
use wil::grid::{l1_distance, l1_distance_2d, DensityGrid2D, Grid1D};
use wil::model::ModelSpec;
use wil::preset::{
    build_preset, mean_reinfection_time, power_law_mean, sweeping_example, PresetKind,
    PresetParams,
};
use wil::quad;
use wil::sim::{
    occupation_histogram, region_mass_series, simulate_ensemble, simulate_trajectory,
    EnsembleConfig, StartCondition,
};
use wil::stationary::{
    build_joint_stationary, discretize_transfer, drift_report, marginal_status, power_iterate,
    to_state_coordinates_on, SweepParams,
};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

const EULER_GAMMA: f64 = 0.577215664901532860606512090082;

/// F = -x, G(x) = x + 1, q = e^{-a}.
fn benchmark() -> ModelSpec {
    build_preset(&PresetParams { kind: PresetKind::ConstantBoost, ..Default::default() })
        .unwrap()
}

fn budget(criterion: u32, t0: Instant, limit: f64, what: &str) {
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < limit, "criterion {criterion} runtime {dt:.1}s exceeds {limit}s");
    println!("criterion {criterion}: pass ({what}, {dt:.2}s)");
}

#[test]
fn criterion_01_hazard_round_trip_all_presets() {
    let _g = gate();
    let t0 = Instant::now();
    for kind in PresetKind::all() {
        let m = build_preset(&PresetParams { kind, ..Default::default() }).unwrap();
        for i in 0..20 {
            let x_b = 1.05 + 8.0 * i as f64 / 19.0;
            let p = m.hazard_from_density(x_b).unwrap();
            let phi = m.survival(x_b);
            for j in 0..20 {
                let a = 0.05 + 11.0 * j as f64 / 19.0;
                let f = phi.eval(a);
                if f <= 1e-12 {
                    continue;
                }
                let q = m.interjump_density(x_b, a);
                let back = p.eval(a) * f;
                if q > 1e-12 {
                    assert!(
                        (back - q).abs() <= 1e-8 * q,
                        "{} x_b={x_b} a={a}: p*phi = {back} vs q = {q}",
                        kind.name()
                    );
                } else {
                    assert!(back.abs() <= 1e-12, "{} x_b={x_b} a={a}", kind.name());
                }
            }
        }
    }
    budget(1, t0, 5.0, "hazard round-trip, 6 presets, 20x20 probes");
}

#[test]
fn criterion_02_power_law_closed_forms() {
    let _g = gate();
    let t0 = Instant::now();
    let m = build_preset(&PresetParams { kind: PresetKind::PowerLaw, ..Default::default() })
        .unwrap();
    // with c = k = kappa = 1 the E1 argument is K = 1/x_b
    for big_k in [1e-3, 1e-2, 0.1, 1.0] {
        let x_b = 1.0 / big_k;
        let total = quad::integrate_to_inf(&|a| m.interjump_density(x_b, a), 0.0, 1e-12, &[]);
        assert!((total - 1.0).abs() < 1e-8, "K={big_k}: int q = {total}");
        let quadrature = mean_reinfection_time(&m, x_b).unwrap();
        let closed = power_law_mean(1.0, 1.0, 1.0, x_b).unwrap();
        assert!(
            (quadrature - closed).abs() <= 1e-8 * closed,
            "K={big_k}: M quadrature {quadrature} vs closed {closed}"
        );
        if big_k <= 1e-3 {
            let approx = x_b.ln() - EULER_GAMMA;
            assert!(
                (closed - approx).abs() <= 0.05 * closed,
                "K={big_k}: log approximation {approx} vs {closed}"
            );
        }
    }
    budget(2, t0, 5.0, "power-law normalization, M(x_b) vs e^K E1(K)/(ck)");
}

#[test]
fn criterion_03_density_peak_location() {
    let _g = gate();
    let t0 = Instant::now();
    // ck = 1 and x_b^k = 100 kappa: q(a) = 0.01 e^a exp(0.01 (1 - e^a))
    let m = build_preset(&PresetParams { kind: PresetKind::PowerLaw, ..Default::default() })
        .unwrap();
    let x_b = 100.0;
    let q = |a: f64| m.interjump_density(x_b, a);
    // golden-section maximization on a bracket around the peak
    let (mut lo, mut hi) = (3.0f64, 6.0f64);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-10 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if q(m1) < q(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let a_star = 0.5 * (lo + hi);
    let peak = q(a_star);
    assert!((a_star - 100.0f64.ln()).abs() < 1e-6, "argmax {a_star} vs ln 100");
    assert!((peak - (-0.99f64).exp()).abs() < 1e-6, "peak {peak} vs e^-0.99");
    budget(3, t0, 1.0, "power-law density peak at ln 100 with value e^-0.99");
}

#[test]
fn criterion_04_stationary_fixed_point() {
    let _g = gate();
    let t0 = Instant::now();
    let m = benchmark();
    let grid = Grid1D::new(1.0, 21.0, 2000).unwrap();
    let t = discretize_transfer(&m, grid).unwrap();
    let fp = power_iterate(&t, 1e-10, 100_000);
    assert!(fp.converged, "residual {} after {} iterations", fp.residual, fp.iterations);
    assert!(fp.residual < 1e-10, "residual {}", fp.residual);
    assert!(fp.min_interior > 0.0, "interior cell at zero");
    assert!(fp.overflow_rate < 1e-6, "overflow mass {}", fp.overflow_rate);
    budget(4, t0, 120.0, "2000-cell fixed point, positive interior");
}

#[test]
fn criterion_05_monte_carlo_vs_solver() {
    let _g = gate();
    let t0 = Instant::now();
    let m = benchmark();
    // solver side: g~* marginal on the comparison grid
    let solve_grid = Grid1D::new(1.0, 21.0, 2000).unwrap();
    let fp = power_iterate(&discretize_transfer(&m, solve_grid).unwrap(), 1e-10, 100_000);
    assert!(fp.converged);
    let joint = build_joint_stationary(&m, &fp.h, Grid1D::new(0.0, 24.0, 200).unwrap()).unwrap();
    let cmp_grid = Grid1D::new(0.0, 10.0, 200).unwrap();
    let g_state = to_state_coordinates_on(&m, &joint, cmp_grid).unwrap();
    let g_tilde = marginal_status(&g_state);

    // ensemble side: 1e5 trajectories at t = 200
    let ecfg = EnsembleConfig {
        horizon: 200.0,
        n: 100_000,
        stamps: vec![200.0],
        seed: 11,
        x_grid: cmp_grid,
        age_grid: Grid1D::new(0.0, 12.0, 24).unwrap(),
    };
    let summary = simulate_ensemble(&m, &StartCondition::Point(1.0), &ecfg).unwrap();
    let d_ens = l1_distance(&summary.xi[0], &g_tilde).unwrap();
    assert!(d_ens < 0.05, "ensemble vs solver L1 = {d_ens}");

    // ergodic side: one trajectory with at least 1e6 jumps
    let log = simulate_trajectory(&m, 1.0, 1.05e6, 17).unwrap();
    assert!(log.events.len() >= 1_000_000, "only {} jumps", log.events.len());
    let occ = occupation_histogram(&m, &log, cmp_grid).unwrap();
    let d_occ = l1_distance(&occ, &g_tilde).unwrap();
    assert!(d_occ < 0.05, "occupation vs solver L1 = {d_occ}");
    budget(5, t0, 180.0, "MC snapshot and occupation vs solver g~*");
}

#[test]
fn criterion_06_pde_convergence() {
    let _g = gate();
    let t0 = Instant::now();
    let m = benchmark();
    let x = Grid1D::new(1.0, 11.0, 400).unwrap();
    let a = Grid1D::new(0.0, 24.0, 400).unwrap();
    let ev = Evolver::new(&m, x, a).unwrap();
    let reference = ev.stationary_reference().unwrap();

    // point-like start: monotone decay through 0.05
    let u0 = EvolutionState::point(&ev, 1.0).unwrap();
    let stamps: Vec<f64> = (0..=16).map(|k| 2.5 * k as f64).collect();
    let series = evolve_until(&ev, u0, 40.0, &stamps).unwrap();
    let table = convergence_check(&series, &reference).unwrap();
    for w in table.rows.windows(2) {
        assert!(
            w[1].1 <= w[0].1 + 1e-6,
            "distance increased: {:?} -> {:?}",
            w[0],
            w[1]
        );
    }
    assert!(table.final_distance < 0.05, "final distance {}", table.final_distance);
    assert!(table.crossing[1].is_some(), "never crossed 0.05");

    // stationary start: distance stays inside the discretization error
    let s0 = EvolutionState::from_density(&ev, reference.clone()).unwrap();
    let series = evolve_until(&ev, s0, 6.0, &[0.0, 2.0, 4.0, 6.0]).unwrap();
    let table = convergence_check(&series, &reference).unwrap();
    for (t, d) in &table.rows {
        assert!(*d < 1e-6, "drift from the fixed point: {d} at t={t}");
    }
    budget(6, t0, 300.0, "400x400 evolution converges monotonically to f_*");
}

#[test]
fn criterion_07_sweeping_criterion() {
    let _g = gate();
    let t0 = Instant::now();
    let c = 1.0;
    let ex = sweeping_example(c).unwrap();
    let probes: Vec<f64> = (1..=30).map(|i| i as f64).collect();
    let report = drift_report(
        &ex.model,
        &probes,
        Some(SweepParams { b: ex.b, c, gamma: None }),
    )
    .unwrap();
    let sweep = report.sweeping.expect("sweeping branch applicable");
    assert!(
        (sweep.l_sweep - ex.l_sweep_closed_form).abs() < 1e-6,
        "L_sweep {} vs closed form {}",
        sweep.l_sweep,
        ex.l_sweep_closed_form
    );
    assert!(sweep.sweeping, "verdict should be sweeping");

    // the simulated strip mass under the status bound R empties out
    let r = 50.0;
    let stamps: Vec<f64> = (0..=12).map(|k| 5.0 * k as f64).collect();
    let ecfg = EnsembleConfig {
        horizon: 60.0,
        n: 10_000,
        stamps,
        seed: 5,
        x_grid: Grid1D::new(0.0, r, 10).unwrap(),
        age_grid: Grid1D::new(0.0, 10.0, 10).unwrap(),
    };
    let series =
        region_mass_series(&ex.model, &StartCondition::Point(ex.b0), r, &ecfg).unwrap();
    let last = *series.last().unwrap();
    assert!(last < 0.01, "final region mass {last}");
    budget(7, t0, 120.0, "L_sweep = 2/e and region mass empties");
}

#[test]
fn criterion_08_drift_criterion() {
    let _g = gate();
    let t0 = Instant::now();
    let m = benchmark();
    let probes: Vec<f64> = (1..=40).map(|i| i as f64).collect();
    let report = drift_report(&m, &probes, None).unwrap();
    let drift = report.drift.expect("drift branch applicable: (C2) holds with L = 1");
    assert!(drift.found, "no finite R found");
    assert!(drift.r.is_finite(), "R = {}", drift.r);
    assert!(
        drift.max_excess_above_r <= 1e-9,
        "T*V(x) > x - 2L above R: excess {}",
        drift.max_excess_above_r
    );
    assert!(
        drift.global_max_excess <= 1e-9,
        "T*V(x) > x + L somewhere: excess {}",
        drift.global_max_excess
    );
    budget(8, t0, 30.0, "finite R with T*V <= x - 2L beyond it");
}

/// Sum groups of `factor` age bins into a coarser age grid.
fn aggregate_age(d: &DensityGrid2D, factor: usize) -> DensityGrid2D {
    let na = d.a.n / factor;
    let coarse = Grid1D::new(d.a.lo, d.a.hi, na).unwrap();
    let mut out = DensityGrid2D::zeros(d.x, coarse);
    for i in 0..d.x.n {
        for j in 0..d.a.n {
            let idx = out.idx(i, j / factor);
            out.mass[idx] += d.mass[d.idx(i, j)];
        }
    }
    out.overflow = d.overflow;
    out
}

#[test]
fn criterion_09_coordinate_duality() {
    let _g = gate();
    let t0 = Instant::now();
    let m = benchmark();
    let x_grid = Grid1D::new(0.0, 10.0, 100).unwrap();
    // collect on a 16x finer age axis, push eta through the coordinate
    // change, then aggregate both sides to the 100-bin age grid
    let fine_age = Grid1D::new(0.0, 10.0, 1600).unwrap();
    let ecfg = EnsembleConfig {
        horizon: 30.0,
        n: 100_000,
        stamps: vec![30.0],
        seed: 23,
        x_grid,
        age_grid: fine_age,
    };
    let summary = simulate_ensemble(&m, &StartCondition::Point(1.0), &ecfg).unwrap();
    let pushed = to_state_coordinates_on(&m, &summary.eta[0], x_grid).unwrap();
    let lhs = aggregate_age(&pushed, 16);
    let rhs = aggregate_age(&summary.zeta[0], 16);
    let d = l1_distance_2d(&lhs, &rhs).unwrap();
    assert!(d < 0.08, "eta-pushforward vs zeta L1 = {d}");
    budget(9, t0, 180.0, "coordinate-change duality on a 100x100 grid at n = 1e5");
}

#[test]
fn criterion_10_thread_count_determinism() {
    let _g = gate();
    let t0 = Instant::now();
    let dir = std::env::temp_dir().join(format!("wil-acc10-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.conf");
    std::fs::write(
        &cfg,
        "grid.x_n = 300\n\
         grid.x_hi = 17\n\
         grid.a_hi = 24\n\
         grid.a_n = 100\n\
         sim.n = 2000\n\
         sim.horizon = 50\n\
         sim.stamps = 25, 50\n\
         evolve.t_end = 10\n\
         sweep.n = 2000\n\
         sweep.horizon = 30\n",
    )
    .unwrap();
    let subs = ["simulate", "stationary", "evolve", "sweep-check"];
    for threads in ["1", "4"] {
        for sub in subs {
            let out_dir = dir.join(format!("t{threads}-{sub}"));
            let out = std::process::Command::new(env!("CARGO_BIN_EXE_wil"))
                .args([
                    sub,
                    "--config",
                    cfg.to_str().unwrap(),
                    "--out",
                    out_dir.to_str().unwrap(),
                    "--seed",
                    "7",
                    "--threads",
                    threads,
                ])
                .output()
                .unwrap();
            assert_eq!(
                out.status.code(),
                Some(0),
                "{sub} --threads {threads}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }
    let mut compared = 0;
    for sub in subs {
        let a_dir = dir.join(format!("t1-{sub}"));
        let b_dir = dir.join(format!("t4-{sub}"));
        let mut names: Vec<String> = std::fs::read_dir(&a_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "run.manifest")
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = std::fs::read(a_dir.join(&name)).unwrap();
            let b = std::fs::read(b_dir.join(&name)).unwrap();
            assert_eq!(a, b, "{sub}/{name} differs between thread counts");
            compared += 1;
        }
    }
    assert!(compared >= 12, "only {compared} artifacts compared");
    std::fs::remove_dir_all(&dir).ok();
    budget(10, t0, 300.0, "byte-identical artifacts across thread counts");
}

#[test]
fn interjump_sampler_stays_deterministic_per_seed() {
    // shared guard for the acceptance run: the criteria above rely on
    // seeded reproducibility, so pin the sampler byte-for-byte here
    let m = benchmark();
    let mut r1 = ChaCha8Rng::seed_from_u64(123);
    let mut r2 = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..100 {
        let a = m.sample_interjump(2.0, &mut r1).unwrap();
        let b = m.sample_interjump(2.0, &mut r2).unwrap();
        assert!(a.to_bits() == b.to_bits());
    }
}
