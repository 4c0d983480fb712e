//! Batch front door: `validate`, `simulate`, `stationary`, `evolve`,
//! `sweep-check`, `hazard-table` and `compare` subcommands driven by a
//! flat key=value config. Exit codes: 0 success, 1 validation failure,
//! 2 numeric failure, 64 usage error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::{self, DensityGrid1D, DensityGrid2D, Grid1D};
use crate::model::{self, ModelSpec};
use crate::preset::{self, PresetKind, PresetParams};
use crate::{evolve, sim, stationary};

const USAGE: &str = "usage: wil <subcommand> [--config <path>] [--out <dir>] [--seed <u64>] [--threads <n>]
subcommands:
  validate      check model assumptions for the configured preset
  simulate      Monte Carlo ensemble snapshots (xi / eta / zeta histograms)
  stationary    transfer-operator fixed point and stationary densities
  evolve        transport-equation evolution and convergence table
  sweep-check   sweeping criterion and region-mass decay
  hazard-table  q / p / survival table for the configured preset
  compare <a.csv> <b.csv>  L1 distance between two density files
env: WIL_OUT is the output directory fallback";

pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wil: {e}");
            match e {
                Error::Validation(_) => 1,
                Error::Numeric(_) => 2,
                Error::Io(_) => 2,
                Error::Usage(_) => {
                    eprintln!("{USAGE}");
                    64
                }
            }
        }
    }
}

struct Cli {
    sub: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    positional: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<Cli> {
    let mut it = args.iter();
    let sub = it.next().ok_or_else(|| Error::usage("missing subcommand"))?.clone();
    let mut cli =
        Cli { sub, config: None, out: None, seed: None, positional: Vec::new() };
    while let Some(a) = it.next() {
        match a.as_str() {
            "--config" => {
                cli.config = Some(PathBuf::from(
                    it.next().ok_or_else(|| Error::usage("--config needs a path"))?,
                ))
            }
            "--out" => {
                cli.out = Some(PathBuf::from(
                    it.next().ok_or_else(|| Error::usage("--out needs a directory"))?,
                ))
            }
            "--seed" => {
                let v = it.next().ok_or_else(|| Error::usage("--seed needs a value"))?;
                cli.seed = Some(
                    v.parse().map_err(|_| Error::usage(format!("bad seed {v:?}")))?,
                );
            }
            "--threads" => {
                let v = it.next().ok_or_else(|| Error::usage("--threads needs a value"))?;
                let n: usize =
                    v.parse().map_err(|_| Error::usage(format!("bad thread count {v:?}")))?;
                // ignore the error if a global pool already exists
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            flag if flag.starts_with("--") => {
                return Err(Error::usage(format!("unknown flag {flag}")));
            }
            other => cli.positional.push(other.to_string()),
        }
    }
    Ok(cli)
}

fn dispatch(args: &[String]) -> Result<()> {
    let cli = parse_args(args)?;
    if cli.sub == "compare" {
        return cmd_compare(&cli);
    }
    let cfg = match &cli.config {
        Some(p) => Config::from_file(p)?,
        None => Config::parse_str("")?,
    };
    let out = output_dir(&cli, &cfg)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => cfg.get_u64("sim.seed", 1)?,
    };
    let result = match cli.sub.as_str() {
        "validate" => cmd_validate(&cfg, &out),
        "simulate" => cmd_simulate(&cfg, &out, seed),
        "stationary" => cmd_stationary(&cfg, &out),
        "evolve" => cmd_evolve(&cfg, &out),
        "sweep-check" => cmd_sweep_check(&cfg, &out, seed),
        "hazard-table" => cmd_hazard_table(&cfg, &out),
        other => Err(Error::usage(format!("unknown subcommand {other:?}"))),
    };
    result?;
    touch_all_known(&cfg);
    let unknown = cfg.unknown_keys();
    if !unknown.is_empty() {
        return Err(Error::usage(format!("unknown config keys: {}", unknown.join(", "))));
    }
    write_manifest(&out, &cli.sub, seed, &cfg)?;
    Ok(())
}

fn output_dir(cli: &Cli, cfg: &Config) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| std::env::var("WIL_OUT").ok().map(PathBuf::from))
        .or_else(|| cfg.get("out.dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Mark every schema key as read so `unknown_keys` only reports typos,
/// not keys meant for other subcommands.
fn touch_all_known(cfg: &Config) {
    for key in [
        "preset.kind", "preset.c", "preset.k_boost", "preset.lambda", "preset.x_th",
        "preset.m_theta", "preset.kappa", "preset.k", "preset.t_season",
        "preset.season_decay", "preset.gamma_shape", "preset.gamma_scale",
        "grid.x_lo", "grid.x_hi", "grid.x_n", "grid.a_hi", "grid.a_n",
        "sim.n", "sim.horizon", "sim.stamps", "sim.seed", "sim.x0",
        "solver.tol", "solver.max_iter",
        "evolve.t_end", "evolve.stamps",
        "sweep.c", "sweep.r", "sweep.n", "sweep.horizon", "sweep.stamps",
        "validate.probes", "hazard.x_b", "hazard.a_max", "hazard.rows",
        "out.dir",
    ] {
        let _ = cfg.get(key);
    }
}

fn preset_params(cfg: &Config) -> Result<PresetParams> {
    let d = PresetParams::default();
    let kind_name = cfg.get("preset.kind").unwrap_or("constant_boost");
    let kind = PresetKind::from_name(kind_name)
        .ok_or_else(|| Error::usage(format!("unknown preset.kind {kind_name:?}")))?;
    Ok(PresetParams {
        kind,
        c: cfg.get_f64("preset.c", d.c)?,
        k_boost: cfg.get_f64("preset.k_boost", d.k_boost)?,
        lambda: cfg.get_f64("preset.lambda", d.lambda)?,
        x_th: cfg.get_f64("preset.x_th", d.x_th)?,
        m_theta: cfg.get_f64("preset.m_theta", d.m_theta)?,
        kappa: cfg.get_f64("preset.kappa", d.kappa)?,
        k: cfg.get_f64("preset.k", d.k)?,
        t_season: cfg.get_f64("preset.t_season", d.t_season)?,
        season_decay: cfg.get_f64("preset.season_decay", d.season_decay)?,
        n_profile: None,
        gamma_shape: cfg.get_f64("preset.gamma_shape", d.gamma_shape)?,
        gamma_scale: cfg.get_f64("preset.gamma_scale", d.gamma_scale)?,
    })
}

fn build_model(cfg: &Config) -> Result<ModelSpec> {
    preset::build_preset(&preset_params(cfg)?)
}

fn status_grid(cfg: &Config, model: &ModelSpec, default_n: usize) -> Result<Grid1D> {
    let lo = cfg.get_f64("grid.x_lo", model.boost(model.domain_floor()))?;
    let hi = cfg.get_f64("grid.x_hi", lo + 16.0)?;
    let n = cfg.get_usize("grid.x_n", default_n)?;
    Grid1D::new(lo, hi, n)
}

fn age_grid(cfg: &Config, default_hi: f64, default_n: usize) -> Result<Grid1D> {
    Grid1D::new(0.0, cfg.get_f64("grid.a_hi", default_hi)?, cfg.get_usize("grid.a_n", default_n)?)
}

fn probe_grid(cfg: &Config, model: &ModelSpec) -> Result<Vec<f64>> {
    let g0 = model.boost(model.domain_floor());
    let default: Vec<f64> = (0..40).map(|i| g0 + 0.4 * i as f64).collect();
    cfg.get_f64_list("validate.probes", &default)
}

fn cmd_validate(cfg: &Config, out: &Path) -> Result<()> {
    let model = build_model(cfg)?;
    let probes = probe_grid(cfg, &model)?;
    let report = model::validate_assumptions(&model, &probes);
    let mut text = String::new();
    for e in &report.entries {
        let status = match e.status {
            model::CheckStatus::Pass => "pass",
            model::CheckStatus::Fail => "FAIL",
            model::CheckStatus::NotApplicable => "n/a",
        };
        writeln!(text, "{} {} margin={} probe={}", e.id, status, e.margin, e.probe).unwrap();
    }
    if let Some(eps) = report.epsilon_a5 {
        writeln!(text, "epsilon_a5 = {eps}").unwrap();
    }
    if let Some(m1) = report.m1_bound {
        writeln!(text, "m1_bound = {m1}").unwrap();
    }
    if let Some(l) = report.l_c2 {
        writeln!(text, "boost_increment_bound = {l}").unwrap();
    }
    print!("{text}");
    std::fs::write(out.join("assumptions.txt"), &text)?;
    if !report.core_ok() {
        return Err(Error::validation("model assumptions failed; see assumptions.txt"));
    }
    Ok(())
}

fn cmd_simulate(cfg: &Config, out: &Path, seed: u64) -> Result<()> {
    let model = build_model(cfg)?;
    let horizon = cfg.get_f64("sim.horizon", 200.0)?;
    let stamps = cfg.get_f64_list("sim.stamps", &[horizon])?;
    let ecfg = sim::EnsembleConfig {
        horizon,
        n: cfg.get_usize("sim.n", 10_000)?,
        stamps,
        seed,
        x_grid: status_grid(cfg, &model, 200)?,
        age_grid: age_grid(cfg, 12.0, 100)?,
    };
    let x0 = cfg.get_f64("sim.x0", model.boost(model.domain_floor()))?;
    let summary = sim::simulate_ensemble(&model, &sim::StartCondition::Point(x0), &ecfg)?;
    for (k, stamp) in summary.stamps.iter().enumerate() {
        write_density_1d(&out.join(format!("xi_{k}.csv")), &summary.xi[k], *stamp)?;
        write_density_2d(&out.join(format!("eta_{k}.csv")), &summary.eta[k], *stamp)?;
        write_density_2d(&out.join(format!("zeta_{k}.csv")), &summary.zeta[k], *stamp)?;
    }
    Ok(())
}

fn cmd_stationary(cfg: &Config, out: &Path) -> Result<()> {
    let model = build_model(cfg)?;
    let grid = status_grid(cfg, &model, 2000)?;
    let tol = cfg.get_f64("solver.tol", 1e-10)?;
    let max_iter = cfg.get_usize("solver.max_iter", 100_000)?;
    let t = stationary::discretize_transfer(&model, grid)?;
    let fp = stationary::power_iterate(&t, tol, max_iter);
    if !fp.converged {
        return Err(Error::numeric(format!(
            "fixed point not reached: residual {} after {} iterations",
            fp.residual, fp.iterations
        )));
    }
    let age = age_grid(cfg, 24.0, 200)?;
    let joint = stationary::build_joint_stationary(&model, &fp.h, age)?;
    let state = stationary::to_state_coordinates(&model, &joint)?;
    let marginal = stationary::marginal_status(&state);
    write_density_1d(&out.join("h_star.csv"), &fp.h, 0.0)?;
    write_density_2d(&out.join("f_star.csv"), &joint, 0.0)?;
    write_density_2d(&out.join("g_star.csv"), &state, 0.0)?;
    write_density_1d(&out.join("g_tilde_star.csv"), &marginal, 0.0)?;

    let probes: Vec<f64> = (0..40).map(|i| grid.lo + (grid.hi - grid.lo) * i as f64 / 40.0).collect();
    let report = stationary::drift_report(&model, &probes, None)?;
    let mut text = String::new();
    writeln!(text, "residual = {}", fp.residual).unwrap();
    writeln!(text, "iterations = {}", fp.iterations).unwrap();
    writeln!(text, "min_interior = {}", fp.min_interior).unwrap();
    writeln!(text, "overflow_rate = {}", fp.overflow_rate).unwrap();
    match report.drift {
        Some(d) => {
            writeln!(text, "drift.applicable = true").unwrap();
            writeln!(text, "drift.L = {}", d.l).unwrap();
            writeln!(text, "drift.R = {}", d.r).unwrap();
            writeln!(text, "drift.found = {}", d.found).unwrap();
            writeln!(text, "drift.max_excess_above_R = {}", d.max_excess_above_r).unwrap();
            writeln!(text, "drift.global_max_excess = {}", d.global_max_excess).unwrap();
        }
        None => writeln!(text, "drift.applicable = false").unwrap(),
    }
    std::fs::write(out.join("drift.txt"), text)?;
    Ok(())
}

fn cmd_evolve(cfg: &Config, out: &Path) -> Result<()> {
    let model = build_model(cfg)?;
    let grid = status_grid(cfg, &model, 400)?;
    let age = age_grid(cfg, 24.0, 400)?;
    let ev = evolve::Evolver::new(&model, grid, age)?;
    let reference = ev.stationary_reference()?;
    let t_end = cfg.get_f64("evolve.t_end", 30.0)?;
    let default_stamps: Vec<f64> = (0..=15).map(|k| t_end * k as f64 / 15.0).collect();
    let stamps = cfg.get_f64_list("evolve.stamps", &default_stamps)?;
    let x0 = cfg.get_f64("sim.x0", model.boost(model.domain_floor()))?;
    let u0 = evolve::EvolutionState::point(&ev, x0)?;
    let series = evolve::evolve_until(&ev, u0, t_end, &stamps)?;
    let table = evolve::convergence_check(&series, &reference)?;
    let mut text = String::from("t,l1_to_stationary\n");
    for (t, d) in &table.rows {
        writeln!(text, "{t},{d}").unwrap();
    }
    std::fs::write(out.join("convergence.csv"), text)?;
    let mut info = String::new();
    writeln!(info, "final_distance = {}", table.final_distance).unwrap();
    for (k, th) in [0.1, 0.05, 0.01].iter().enumerate() {
        match table.crossing[k] {
            Some(t) => writeln!(info, "crossing_{th} = {t}").unwrap(),
            None => writeln!(info, "crossing_{th} = none").unwrap(),
        }
    }
    let last = series.last().unwrap();
    writeln!(info, "mass_defect = {}", last.defect).unwrap();
    writeln!(info, "overflow_jumped = {}", last.overflow_jumped).unwrap();
    std::fs::write(out.join("evolve.txt"), info)?;
    if let Some(st) = series.last() {
        write_density_2d(&out.join("u_final.csv"), &st.u, st.t)?;
    }
    write_density_2d(&out.join("u_stationary.csv"), &reference, 0.0)?;
    Ok(())
}

fn cmd_sweep_check(cfg: &Config, out: &Path, seed: u64) -> Result<()> {
    let c = cfg.get_f64("sweep.c", 1.0)?;
    let ex = preset::sweeping_example(c)?;
    let probes: Vec<f64> = (1..=30).map(|i| i as f64).collect();
    let report = stationary::drift_report(
        &ex.model,
        &probes,
        Some(stationary::SweepParams { b: ex.b, c, gamma: None }),
    )?;
    let sweep = report
        .sweeping
        .ok_or_else(|| Error::numeric("sweeping branch unexpectedly not applicable"))?;

    let horizon = cfg.get_f64("sweep.horizon", 60.0)?;
    let default_stamps: Vec<f64> = (0..=12).map(|k| horizon * k as f64 / 12.0).collect();
    let stamps = cfg.get_f64_list("sweep.stamps", &default_stamps)?;
    let r = cfg.get_f64("sweep.r", 50.0)?;
    let ecfg = sim::EnsembleConfig {
        horizon,
        n: cfg.get_usize("sweep.n", 10_000)?,
        stamps: stamps.clone(),
        seed,
        x_grid: Grid1D::new(0.0, r, 10)?,
        age_grid: Grid1D::new(0.0, 10.0, 10)?,
    };
    let series =
        sim::region_mass_series(&ex.model, &sim::StartCondition::Point(ex.b0), r, &ecfg)?;
    let mut csv = String::from("t,mass_below_r\n");
    for (t, m) in stamps.iter().zip(&series) {
        writeln!(csv, "{t},{m}").unwrap();
    }
    std::fs::write(out.join("region_mass.csv"), csv)?;
    let mut text = String::new();
    writeln!(text, "b = {}", sweep.b).unwrap();
    writeln!(text, "c = {}", sweep.c).unwrap();
    writeln!(text, "gamma = {}", sweep.gamma).unwrap();
    writeln!(text, "l_sweep = {}", sweep.l_sweep).unwrap();
    writeln!(text, "l_sweep_closed_form = {}", ex.l_sweep_closed_form).unwrap();
    writeln!(text, "verdict = {}", if sweep.sweeping { "sweeping" } else { "not-sweeping" })
        .unwrap();
    writeln!(text, "final_region_mass = {}", series.last().copied().unwrap_or(f64::NAN))
        .unwrap();
    print!("{text}");
    std::fs::write(out.join("sweep.txt"), text)?;
    Ok(())
}

fn cmd_hazard_table(cfg: &Config, out: &Path) -> Result<()> {
    let model = build_model(cfg)?;
    let x_b = cfg.get_f64("hazard.x_b", model.boost(model.domain_floor()) + 1.0)?;
    let a_max = cfg.get_f64("hazard.a_max", 10.0)?;
    let rows = cfg.get_usize("hazard.rows", 100)?;
    let p = model.hazard_from_density(x_b)?;
    let phi = model.survival(x_b);
    let mut csv = String::from("x_b,a,q,p,phi\n");
    for i in 0..rows {
        let a = a_max * (i as f64 + 0.5) / rows as f64;
        writeln!(csv, "{},{},{},{},{}", x_b, a, model.interjump_density(x_b, a), p.eval(a), phi.eval(a))
            .unwrap();
    }
    std::fs::write(out.join("hazard_table.csv"), csv)?;
    Ok(())
}

fn cmd_compare(cli: &Cli) -> Result<()> {
    if cli.positional.len() != 2 {
        return Err(Error::usage("compare needs exactly two CSV paths"));
    }
    let a = read_density(Path::new(&cli.positional[0]))?;
    let b = read_density(Path::new(&cli.positional[1]))?;
    let d = match (a, b) {
        (Density::D1(x), Density::D1(y)) => grid::l1_distance(&x, &y)?,
        (Density::D2(x), Density::D2(y)) => grid::l1_distance_2d(&x, &y)?,
        _ => return Err(Error::validation("compare: mixed 1d/2d density files")),
    };
    println!("l1 = {d}");
    Ok(())
}

// --- CSV formats -----------------------------------------------------

fn write_density_1d(path: &Path, d: &DensityGrid1D, stamp: f64) -> Result<()> {
    let mut s = format!(
        "# wil density v1 kind=1d lo={} hi={} n={} overflow={} t={}\n",
        d.grid.lo, d.grid.hi, d.grid.n, d.overflow, stamp
    );
    s.push_str("bin_lo,bin_hi,mass\n");
    for i in 0..d.grid.n {
        let lo = d.grid.left(i);
        writeln!(s, "{},{},{}", lo, lo + d.grid.width(), d.mass[i]).unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn write_density_2d(path: &Path, d: &DensityGrid2D, stamp: f64) -> Result<()> {
    let mut s = format!(
        "# wil density v1 kind=2d x_lo={} x_hi={} x_n={} a_lo={} a_hi={} a_n={} overflow={} t={}\n",
        d.x.lo, d.x.hi, d.x.n, d.a.lo, d.a.hi, d.a.n, d.overflow, stamp
    );
    s.push_str("x_lo,x_hi,a_lo,a_hi,mass\n");
    for i in 0..d.x.n {
        for j in 0..d.a.n {
            let xl = d.x.left(i);
            let al = d.a.left(j);
            writeln!(
                s,
                "{},{},{},{},{}",
                xl,
                xl + d.x.width(),
                al,
                al + d.a.width(),
                d.mass[d.idx(i, j)]
            )
            .unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

enum Density {
    D1(DensityGrid1D),
    D2(DensityGrid2D),
}

fn header_attr(header: &str, key: &str) -> Result<f64> {
    header
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::validation(format!("density header missing {key}")))
}

fn read_density(path: &Path) -> Result<Density> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("# wil density v1") {
        return Err(Error::validation(format!("{}: not a wil density file", path.display())));
    }
    let masses: Vec<f64> = lines
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::validation(format!("{}: bad row {l:?}", path.display())))
        })
        .collect::<Result<_>>()?;
    if header.contains("kind=1d") {
        let g = Grid1D::new(
            header_attr(header, "lo")?,
            header_attr(header, "hi")?,
            header_attr(header, "n")? as usize,
        )?;
        if masses.len() != g.n {
            return Err(Error::validation(format!("{}: row count mismatch", path.display())));
        }
        Ok(Density::D1(DensityGrid1D {
            grid: g,
            mass: masses,
            overflow: header_attr(header, "overflow")?,
        }))
    } else {
        let x = Grid1D::new(
            header_attr(header, "x_lo")?,
            header_attr(header, "x_hi")?,
            header_attr(header, "x_n")? as usize,
        )?;
        let a = Grid1D::new(
            header_attr(header, "a_lo")?,
            header_attr(header, "a_hi")?,
            header_attr(header, "a_n")? as usize,
        )?;
        if masses.len() != x.n * a.n {
            return Err(Error::validation(format!("{}: row count mismatch", path.display())));
        }
        Ok(Density::D2(DensityGrid2D {
            x,
            a,
            mass: masses,
            overflow: header_attr(header, "overflow")?,
        }))
    }
}

fn write_manifest(out: &Path, sub: &str, seed: u64, cfg: &Config) -> Result<()> {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let body = format!(
        "timestamp = {ts}\nversion = {}\nsubcommand = {sub}\nseed = {seed}\nconfig_hash = {:016x}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.content_hash()
    );
    std::fs::write(out.join("run.manifest"), body)?;
    Ok(())
}
