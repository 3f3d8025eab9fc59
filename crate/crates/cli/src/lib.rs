//! Run pipeline behind the `capstop` binary: solve, price, and write the
//! boundary, time, price and diagnostic files.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use capstop_core::analytic::discounted_hit_before;
use capstop_core::oracle::{lattice_batch, mc_hitting_expectations, LatticeConfig, McConfig};
use capstop_core::twolevel::{self, TwoLevelSolution};
use capstop_core::{Boundary, CaseLabel, Exec, Level};

pub use config::RunConfig;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Solver(e) | Failure::Io(e) => e,
        }
    }
}

pub const BOUNDARY_FILE: &str = "boundaries.csv";
pub const TIMES_FILE: &str = "times.txt";
pub const PRICES_FILE: &str = "prices.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

pub fn load_config(path: &Path) -> std::result::Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Io)?;
    config::parse(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::Config)
}

pub fn solve(cfg: &RunConfig) -> std::result::Result<TwoLevelSolution, Failure> {
    twolevel::solve(&cfg.market, &cfg.cap, &cfg.solver)
        .context("solver")
        .map_err(Failure::Solver)
}

/// Times with 9 decimals.
fn time(t: f64) -> String {
    format!("{t:.9}")
}

fn level(l: Level) -> String {
    match l {
        Level::Finite(x) => format!("{x}"),
        Level::Infinite => "inf".into(),
    }
}

/// Node value when `t` is one of the boundary's nodes up to rounding, so
/// rows shared by several grids echo each boundary exactly.
fn level_on(b: &Boundary, t: f64) -> Level {
    let g = &b.grid;
    let i = ((t - g.t_start) / g.step()).round();
    if i >= 0.0 && (i as usize) <= g.n_steps && (g.node(i as usize) - t).abs() <= 1e-9 {
        return b.values[i as usize];
    }
    b.at(t)
}

fn in_domain(b: &Boundary, t: f64) -> bool {
    t >= b.grid.t_start - 1e-12 && t <= b.grid.t_end + 1e-12
}

/// Upper boundary column: the solved curve on its grid, then L1 on [T0, t¹].
fn bl1_cell(sol: &TwoLevelSolution, t: f64) -> String {
    let rep = &sol.report;
    if let Some(b) = &rep.bl1 {
        if in_domain(b, t) {
            return level(level_on(b, t));
        }
    }
    let end = match rep.case {
        CaseLabel::CaseI => rep.t1.unwrap_or(0.0),
        CaseLabel::CaseII => sol.cap.t1,
        _ => return String::new(),
    };
    if t >= rep.big_t0 && (t <= end && t < sol.cap.t1) {
        return level(Level::Finite(sol.cap.l1));
    }
    String::new()
}

/// `t,B,B_L2,B_L1` on the union of all boundary grids.
pub fn boundary_csv(sol: &TwoLevelSolution) -> String {
    let rep = &sol.report;
    let mut times: Vec<f64> = rep.uncapped.grid.nodes();
    times.extend(rep.bl2.grid.nodes());
    if let Some(b) = &rep.bl1 {
        times.extend(b.grid.nodes());
    }
    if let Some(t1) = rep.t1 {
        times.push(t1);
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| time(*a) == time(*b));
    let mut out = String::from("t,B,B_L2,B_L1\n");
    for t in times {
        let b = level(level_on(&rep.uncapped, t));
        let bl2 = if in_domain(&rep.bl2, t) {
            level(level_on(&rep.bl2, t))
        } else {
            String::new()
        };
        let _ = writeln!(out, "{},{b},{bl2},{}", time(t), bl1_cell(sol, t));
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| format!("{v}"))
}

pub fn times_summary(sol: &TwoLevelSolution) -> String {
    let r = &sol.report;
    let mut out = String::new();
    let _ = writeln!(out, "case = {}", r.case);
    let _ = writeln!(out, "t0 = {}", opt(r.t0));
    let _ = writeln!(out, "T0 = {}", r.big_t0);
    let _ = writeln!(out, "t1 = {}", opt(r.t1));
    let _ = writeln!(out, "t_star = {}", r.t_star);
    let _ = writeln!(out, "t_star1 = {}", opt(r.t_star1));
    let _ = writeln!(out, "bl1_at_T1 = {}", opt(r.bl1_at_t1));
    let _ = writeln!(out, "B_at_T1 = {}", level(r.uncapped.at(sol.cap.t1)));
    if r.case == CaseLabel::Degenerate {
        let _ = writeln!(out, "note = Degenerate: equal caps, solved as a single cap");
    }
    out
}

pub fn prices_csv(sol: &TwoLevelSolution, points: &[(f64, f64)]) -> String {
    let prices = sol.prices(points);
    let mut out = String::from("S,t,price,exercise_value,region\n");
    for (&(s, t), v) in points.iter().zip(prices) {
        let ex = sol.exercise_value(s, t);
        let region = if v <= ex + 1e-9 * sol.params.strike {
            "exercise"
        } else {
            "continue"
        };
        let _ = writeln!(out, "{s},{},{v},{ex},{region}", time(t));
    }
    out
}

pub fn diagnostics(sol: &TwoLevelSolution, cfg: &RunConfig, oracle: bool) -> Result<String> {
    let d = &sol.report.diagnostics;
    let mut out = String::new();
    let _ = writeln!(out, "max_residual = {:e}", d.max_residual());
    let _ = writeln!(out, "flagged_nodes = {:?}", d.flagged);
    let _ = writeln!(out, "jump_nodes = {:?}", d.jumps);
    let slope = d.boundary_slope.iter().map(|x| x.1).fold(0.0, f64::max);
    let _ = writeln!(out, "max_boundary_slope = {slope:e}");
    let derr = sol.sc2.derivative_error.iter().copied().fold(0.0, f64::max);
    let _ = writeln!(out, "cap_derivative_error = {derr:e}");
    let _ = writeln!(
        out,
        "bl2_equation_residual = {:e}",
        sol.sc2.verify_bl2_integral_equation(sol.cap.t1)
    );
    for (i, note) in d.notes.iter().enumerate() {
        let _ = writeln!(out, "note.{i} = {note}");
    }
    if oracle {
        out.push_str(&oracle_section(sol, cfg)?);
    }
    Ok(out)
}

/// Lattice deltas at the query points and a Monte Carlo check of the
/// first-passage expectation at L1.
fn oracle_section(sol: &TwoLevelSolution, cfg: &RunConfig) -> Result<String> {
    let mut out = String::new();
    let lc = LatticeConfig::with_steps(cfg.oracle.lattice_steps);
    let queries = cfg.queries();
    let mut by_time: Vec<(f64, Vec<f64>)> = Vec::new();
    for &(s, t) in queries.iter().filter(|q| q.1 < cfg.cap.t2) {
        match by_time.iter_mut().find(|e| e.0 == t) {
            Some(e) => e.1.push(s),
            None => by_time.push((t, vec![s])),
        }
    }
    let runs = lattice_batch(Exec::Parallel, &by_time, &cfg.market, &cfg.cap, &lc)?;
    let mut worst: f64 = 0.0;
    for ((t, spots), run) in by_time.iter().zip(&runs) {
        for (&s, &lat) in spots.iter().zip(run) {
            let delta = sol.price(s, *t) - lat;
            worst = worst.max(delta.abs());
            let _ = writeln!(out, "oracle.lattice S={s} t={} delta = {delta:e}", time(*t));
        }
    }
    let _ = writeln!(out, "oracle.lattice.max_abs_delta = {worst:e}");
    let (s, l1, t1) = (0.9 * cfg.cap.l1, cfg.cap.l1, cfg.cap.t1);
    let mc = McConfig {
        n_paths: cfg.oracle.mc_paths,
        seed: cfg.seed,
        ..McConfig::default()
    };
    let est = mc_hitting_expectations(s, l1, 0.0, t1, &cfg.market, |_| 0.0, &mc);
    let exact = discounted_hit_before(s, l1, 0.0, t1, &cfg.market);
    let _ = writeln!(
        out,
        "oracle.mc.hit S={s} L={l1} T={t1}: closed_form = {exact}, mc = {} +- {}",
        est.hit.mean, est.hit.std_err
    );
    Ok(out)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Full pipeline: solve, then write all four files into `cfg.out`.
pub fn run(cfg: &RunConfig, oracle: bool) -> std::result::Result<Vec<PathBuf>, Failure> {
    let sol = solve(cfg)?;
    let diag = diagnostics(&sol, cfg, oracle)
        .context("oracle")
        .map_err(Failure::Solver)?;
    let io = |r: Result<PathBuf>| r.map_err(Failure::Io);
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating {}", cfg.out.display()))
        .map_err(Failure::Io)?;
    Ok(vec![
        io(write(&cfg.out, BOUNDARY_FILE, &boundary_csv(&sol)))?,
        io(write(&cfg.out, TIMES_FILE, &times_summary(&sol)))?,
        io(write(
            &cfg.out,
            PRICES_FILE,
            &prices_csv(&sol, &cfg.queries()),
        ))?,
        io(write(&cfg.out, DIAGNOSTICS_FILE, &diag))?,
    ])
}

/// `v` with 10 significant digits in positional notation.
pub fn ten_digits(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.9}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (9 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}
