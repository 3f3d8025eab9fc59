//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use capstop_cli::{config, run};
use capstop_core::analytic::{discounted_hit_before, killed_expectation};
use capstop_core::model::t_zero;
use capstop_core::oracle::{lattice_batch, mc_hitting_expectations, LatticeConfig, McConfig};
use capstop_core::twolevel::{self, SolverConfig};
use capstop_core::uncapped::solve_uncapped_boundary;
use capstop_core::{
    CapContinuity, Exec, Level, MarketParams, SingleCapSolution, TimeGrid, TwoLevelCap,
    TwoLevelSolution,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn near(x: f64, want: f64, tol: f64) -> bool {
    (x - want).abs() <= tol
}

fn rising() -> (MarketParams, TwoLevelCap) {
    (
        MarketParams::new(0.1, 0.1, 0.3, 1.0).unwrap(),
        TwoLevelCap::new(1.3, 1.39, 3.0, 4.0),
    )
}

fn volatile() -> (MarketParams, TwoLevelCap) {
    (
        MarketParams::new(0.05, 0.05, 0.5, 1.0).unwrap(),
        TwoLevelCap::new(1.28, 1.3, 1.0, 2.0),
    )
}

fn low_boundary() -> (MarketParams, TwoLevelCap) {
    (
        MarketParams::new(0.03, 0.05, 0.25, 1.0).unwrap(),
        TwoLevelCap::new(1.46, 1.5, 3.0, 4.0),
    )
}

fn falling() -> (MarketParams, TwoLevelCap) {
    (
        MarketParams::new(0.03, 0.05, 0.25, 1.0).unwrap(),
        TwoLevelCap::new(1.45, 1.3, 1.0, 2.0).with_continuity(CapContinuity::LeftContinuous),
    )
}

fn solve((p, cap): (MarketParams, TwoLevelCap)) -> TwoLevelSolution {
    twolevel::solve(&p, &cap, &SolverConfig::default()).expect("solver")
}

struct Solved {
    rising: TwoLevelSolution,
    rising_secs: f64,
    volatile: TwoLevelSolution,
    low_boundary: TwoLevelSolution,
    falling: TwoLevelSolution,
}

fn rising_regression(s: &Solved) -> Outcome {
    let r = &s.rising.report;
    let t1 = r.t1.unwrap_or(f64::NAN);
    let t0 = r.t0.unwrap_or(f64::NAN);
    let detail = format!(
        "T0={:.4} (1.78+-0.02), t1={t1:.4} (2.93+-0.02), t*={:.4} (3.66+-0.02), t0={t0:.6} (closed form +-1e-6), {:.1}s (<=60s)",
        r.big_t0, r.t_star, s.rising_secs
    );
    let exact_t0 = 3.0 - (0.39f64 / 0.3).ln() / 0.1;
    check(
        near(r.big_t0, 1.78, 0.02)
            && near(t1, 2.93, 0.02)
            && near(r.t_star, 3.66, 0.02)
            && near(t0, exact_t0, 1e-9)
            && near(t0, 0.3764, 1e-4)
            && s.rising_secs <= 60.0,
        detail,
    )
}

fn volatile_regression(s: &Solved) -> Outcome {
    let r = &s.volatile.report;
    let t1 = r.t1.unwrap_or(f64::NAN);
    let finite: Vec<f64> = r
        .bl1
        .iter()
        .flat_map(|b| b.values.iter().filter_map(|v| v.finite()))
        .collect();
    let rises = finite.windows(2).filter(|w| w[1] > w[0]).count();
    let max_step = finite
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "T0={:.4} (0.386+-0.01), t1={t1:.4} (0.988+-0.01), increasing pairs={rises} (>=1), largest step={max_step:.2e}",
        r.big_t0
    );
    check(
        near(r.big_t0, 0.386, 0.01) && near(t1, 0.988, 0.01) && rises >= 1,
        detail,
    )
}

fn low_boundary_regression(s: &Solved) -> Outcome {
    let r = &s.low_boundary.report;
    let t0 = r.t0.unwrap_or(f64::NAN);
    check(
        near(t0, 0.22, 0.01) && near(r.big_t0, 1.79, 0.02),
        format!("t0={t0:.4} (0.22+-0.01), T0={:.4} (1.79+-0.02)", r.big_t0),
    )
}

fn falling_regression(s: &Solved) -> Outcome {
    let sol = &s.falling;
    let r = &sol.report;
    let ts1 = r.t_star1.unwrap_or(f64::NAN);
    let vals: Vec<f64> = r
        .bl1
        .iter()
        .flat_map(|b| b.values.iter().map(|v| v.value()))
        .collect();
    let monotone = vals.windows(2).all(|w| w[1] <= w[0]);
    let p = sol.params;
    let b_t1 = sol.uncapped.at(sol.cap.t1).value();
    let left = p.dividend_threshold().max(sol.cap.l2.min(b_t1));
    let got_left = r.bl1_at_t1.unwrap_or(f64::NAN);
    check(
        near(ts1, 0.75, 0.02) && near(r.t_star, 1.63, 0.02) && monotone && near(got_left, left, 1e-9),
        format!(
            "t*1={ts1:.4} (0.75+-0.02), t*={:.4} (1.63+-0.02), non-increasing={monotone}, left limit={got_left} (want {left})",
            r.t_star
        ),
    )
}

/// Three spots around the caps at five times, two of them on [T1, T2).
fn oracle_points(cap: &TwoLevelCap) -> Vec<(f64, Vec<f64>)> {
    let lo = cap.l1.min(cap.l2);
    let hi = cap.l1.max(cap.l2);
    let spots = vec![0.9 * lo, 0.99 * lo, 1.2 * hi];
    let w = cap.t2 - cap.t1;
    [
        0.0,
        0.5 * cap.t1,
        0.9 * cap.t1,
        cap.t1 + 0.25 * w,
        cap.t1 + 0.75 * w,
    ]
    .into_iter()
    .map(|t| (t, spots.clone()))
    .collect()
}

fn oracle_agreement(s: &Solved) -> Outcome {
    let cfg = LatticeConfig::with_steps(20_000);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, sol) in [
        ("rising", &s.rising),
        ("volatile", &s.volatile),
        ("low-boundary", &s.low_boundary),
        ("falling", &s.falling),
    ] {
        let q = oracle_points(&sol.cap);
        let lat = lattice_batch(Exec::Parallel, &q, &sol.params, &sol.cap, &cfg)
            .map_err(|e| e.to_string())?;
        let mut set_worst: f64 = 0.0;
        for ((t, spots), row) in q.iter().zip(&lat) {
            for (&x, &l) in spots.iter().zip(row) {
                set_worst = set_worst.max((sol.price(x, *t) - l).abs());
            }
        }
        worst = worst.max(set_worst);
        parts.push(format!("{name} {set_worst:.1e}"));
    }
    check(
        worst <= 2e-3,
        format!(
            "max |EEP - lattice| over 4x15 points: {} (<=2e-3)",
            parts.join(", ")
        ),
    )
}

fn method_agreement() -> Outcome {
    let p = MarketParams::new(0.1, 0.1, 0.3, 1.0).unwrap();
    let (l2, t1, t2) = (1.39, 3.0, 4.0);
    let u = solve_uncapped_boundary(&p, TimeGrid::new(0.0, t2, 400).unwrap())
        .map_err(|e| e.to_string())?;
    let sc = SingleCapSolution::new(&u, l2, t1, Exec::Parallel).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..40 {
        let x = 0.5 + (1.2 * l2 - 0.5) * i as f64 / 39.0;
        for j in 0..20 {
            let t = t1 + (t2 - t1) * j as f64 / 20.0;
            worst = worst.max((sc.price_via_hitting(x, t) - sc.price_via_local_time(x, t)).abs());
        }
    }
    let res = sc.verify_bl2_integral_equation(t1);
    check(
        worst <= 2e-3 && res <= 1e-6,
        format!("max |hitting - local time| = {worst:.2e} (<=2e-3), boundary residual = {res:.2e} (<=1e-6)"),
    )
}

fn mc_validation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for draw in 0..5u64 {
        let r = rng.random_range(0.01..0.1);
        let delta = rng.random_range(0.0..0.1);
        let sigma = rng.random_range(0.15..0.5);
        let horizon = rng.random_range(0.25..2.0);
        let level = rng.random_range(1.1..1.6);
        let strike_frac = rng.random_range(0.6..0.9);
        for ratio in [0.7, 0.9, 1.1, 1.4] {
            let s = ratio * level;
            let (strike, top) = (strike_frac * level, 2.0 * level);
            let p = MarketParams::new(r, delta, sigma, strike).map_err(|e| e.to_string())?;
            let (g, kink): (Box<dyn Fn(f64) -> f64 + Sync + Send>, f64) = if ratio < 1.0 {
                (Box::new(move |x: f64| (x - strike).max(0.0)), strike)
            } else {
                (Box::new(move |x: f64| x.min(top)), top)
            };
            let hit = discounted_hit_before(s, level, 0.0, horizon, &p);
            let killed = killed_expectation(s, level, 0.0, horizon, &p, &g, &[kink])
                .map_err(|e| e.to_string())?;
            let cfg = McConfig {
                n_paths: 1_000_000,
                seed: 1000 + draw,
                ..McConfig::default()
            };
            let est = mc_hitting_expectations(s, level, 0.0, horizon, &p, &g, &cfg);
            for (exact, e) in [(hit, est.hit), (killed, est.killed)] {
                let z = if e.std_err > 0.0 {
                    (exact - e.mean).abs() / e.std_err
                } else if exact == e.mean {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
                n += 1;
            }
        }
    }
    check(
        worst <= 3.0,
        format!("{n} comparisons, largest |closed form - MC| = {worst:.2} s.e. (<=3)"),
    )
}

fn degeneration() -> Outcome {
    let p = MarketParams::new(0.1, 0.1, 0.3, 1.0).unwrap();
    let l = 1.39;
    let cap = TwoLevelCap::new(l, l, 3.0, 4.0);
    let sol = twolevel::solve(&p, &cap, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let u = solve_uncapped_boundary(&p, TimeGrid::new(0.0, 4.0, 400).unwrap())
        .map_err(|e| e.to_string())?;
    let single = SingleCapSolution::new(&u, l, 0.0, Exec::Parallel).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let x = 0.5 + (1.2 * l - 0.5) * i as f64 / 19.0;
        for j in 0..10 {
            let t = 4.0 * j as f64 / 10.0;
            worst = worst.max((sol.price(x, t) - single.price(x, t)).abs());
        }
    }
    // Zero dividend: no uncapped boundary, exercise at L2 on [T1, T2].
    let p0 = MarketParams::new(0.05, 0.0, 0.3, 1.0).unwrap();
    let cap0 = TwoLevelCap::new(1.3, 1.39, 1.0, 2.0);
    let z = twolevel::solve(&p0, &cap0, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let infinite = z
        .uncapped
        .boundary
        .values
        .iter()
        .all(|v| *v == Level::Infinite);
    let at_l2 = z
        .report
        .bl2
        .values
        .iter()
        .all(|v| *v == Level::Finite(1.39));
    let region = [1.0, 1.25, 1.5, 1.9].iter().all(|&t| {
        let below = z.price(1.385, t) > z.exercise_value(1.385, t) + 1e-9;
        let above = z.price(1.39, t) == 1.39 - 1.0 && z.price(1.6, t) == 1.39 - 1.0;
        below && above
    });
    check(
        worst <= 1e-6 && infinite && at_l2 && region,
        format!(
            "equal caps max diff {worst:.1e} (<=1e-6); zero dividend: B infinite={infinite}, boundary at L2={at_l2}, region check={region}"
        ),
    )
}

fn structure(s: &Solved) -> Outcome {
    let sol = &s.rising;
    let r = &sol.report;
    let (l1, t1_cap) = (sol.cap.l1, sol.cap.t1);
    let t1 = r.t1.ok_or("no t1")?;
    let spots: Vec<f64> = (0..30).map(|i| 0.6 + 0.07 * i as f64).collect();
    let a = [t1 + 0.02, 0.5 * (t1 + t1_cap), t1_cap - 0.02]
        .iter()
        .all(|&t| {
            spots
                .iter()
                .all(|&x| sol.price(x, t) > (x.min(l1) - 1.0).max(0.0) + 1e-9)
        });
    let b_dev = [r.big_t0 + 0.05, 0.5 * (r.big_t0 + t1), t1 - 0.05]
        .iter()
        .map(|&t| (sol.price(l1, t) - (l1 - 1.0)).abs())
        .fold(0.0, f64::max);
    let t0 = t_zero(&sol.params, &sol.cap).ok_or("no t0")?;
    let c = [l1, 1.5 * l1, 3.0 * l1]
        .iter()
        .all(|&x| sol.price(x, 0.5 * t0) == l1 - 1.0);
    check(
        a && b_dev <= 1e-6 && c,
        format!("(a) continuation after t1={a}, (b) max |C(L1,t)-(L1-K)|={b_dev:.1e} (<=1e-6), (c) exercise at t0/2={c}"),
    )
}

fn determinism() -> Outcome {
    let base = std::env::temp_dir().join(format!("capstop-acceptance-{}", std::process::id()));
    let text = "market.r = 0.03\nmarket.delta = 0.05\nmarket.sigma = 0.25\nmarket.strike = 1\n\
        cap.l1 = 1.45\ncap.l2 = 1.3\ncap.t1 = 1\ncap.t2 = 2\n\
        query.points = 1.2@0.5; 1.35@0.9; 1.25@1.5\nquery.mesh.s = 0.9, 1.6, 5\nquery.mesh.t = 0, 1.8, 4\n\
        oracle.lattice_steps = 2000\noracle.mc_paths = 20000\noracle.seed = 9\n";
    let mut outputs: Vec<Vec<(PathBuf, Vec<u8>)>> = Vec::new();
    for k in 0..2 {
        let mut cfg = config::parse(text).map_err(|e| e.to_string())?;
        cfg.out = base.join(format!("run{k}"));
        let files = run(&cfg, true).map_err(|e| e.error().to_string())?;
        outputs.push(
            files
                .into_iter()
                .map(|f| {
                    let bytes = fs::read(&f).unwrap_or_default();
                    (PathBuf::from(f.file_name().unwrap()), bytes)
                })
                .collect(),
        );
    }
    let _ = fs::remove_dir_all(&base);
    let same = outputs[0] == outputs[1];
    check(
        same && outputs[0].len() == 4,
        format!("{} files per run, byte-identical={same}", outputs[0].len()),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let rising = solve(rising());
    let rising_secs = start.elapsed().as_secs_f64();
    let solved = Solved {
        rising,
        rising_secs,
        volatile: solve(volatile()),
        low_boundary: solve(low_boundary()),
        falling: solve(falling()),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("rising-cap regression", rising_regression(&solved)),
        (
            "volatile rising-cap regression",
            volatile_regression(&solved),
        ),
        (
            "boundary-below-cap regression",
            low_boundary_regression(&solved),
        ),
        ("falling-cap regression", falling_regression(&solved)),
        ("lattice agreement", oracle_agreement(&solved)),
        ("single-cap method agreement", method_agreement()),
        ("first-passage Monte Carlo", mc_validation()),
        ("degenerate inputs", degeneration()),
        ("rising-cap region structure", structure(&solved)),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(d) => println!("PASS criterion {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {d}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
