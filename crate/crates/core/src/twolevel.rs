//! Two-level caps: the waiting value, the structural times and the
//! recursive integral equations for the exercise boundary before T1.

use crate::analytic::{
    discounted_hit_before, dividend_band, european_capped_call, european_expectation,
    expected_local_time_weight, killed_integral, prob_above, prob_between,
};
use crate::error::{Error, Result};
use crate::model::{
    classify_case, t_zero, Boundary, CapContinuity, CaseLabel, Diagnostics, Level, MarketParams,
    SolveReport, TimeGrid, TwoLevelCap,
};
use crate::par::{self, Exec};
use crate::quad::{self, TimeRule};
use crate::singlecap::{compute_t_star, SingleCapSolution, CAP_EPS_REL};
use crate::table::Table;
use crate::uncapped::{solve_uncapped_boundary, UncappedSolution, TIME_GRADING, TIME_ORDER};

/// Relative step for slopes just above the boundary (times K).
pub const BOUNDARY_EPS_REL: f64 = 1e-4;
const ROOT_TOL_REL: f64 = 1e-10;
const TIME_TOL: f64 = 1e-9;
const SCAN_POINTS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Steps of the uncapped grid on [0, T2].
    pub n_uncapped: usize,
    /// Steps per T1 of the grids before the switch date.
    pub n_two_level: usize,
    /// Drop the local-time term at the upper boundary (cases I and II).
    pub assume_smooth_fit: bool,
    /// Nodes per segment of the tabulated terminal values.
    pub table_points: usize,
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_uncapped: 400,
            n_two_level: 300,
            assume_smooth_fit: false,
            table_points: 600,
            exec: Exec::Parallel,
        }
    }
}

fn price_window(level: f64, p: &MarketParams, horizon: f64) -> (f64, f64) {
    let spread = 12.0 * p.sigma * horizon.max(1e-6).sqrt() + p.log_drift().abs() * horizon;
    (level * (-spread).exp(), level * spread.exp())
}

/// Bisection for the sign change of `f` on `[a, b]`, `f(a) <= 0 < f(b)` or
/// the reverse; returns the midpoint of the final bracket.
fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let fa_pos = f(a) > 0.0;
    while (b - a).abs() > tol {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == fa_pos {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Scans `times` (increasing) from the right for the first value with
/// `g <= 0`, assuming `g(end) > 0`, and refines the crossing by bisection.
fn last_crossing<F>(exec: Exec, times: &[f64], end: f64, g: F) -> Option<f64>
where
    F: Fn(f64) -> f64 + Sync + Send,
{
    let vals = par::map_slice(exec, times, |&t| g(t));
    let mut right = end;
    for j in (0..times.len()).rev() {
        if vals[j] <= 0.0 {
            return Some(bisect(&g, times[j], right, TIME_TOL));
        }
        right = times[j];
    }
    None
}

/// The waiting value C^w: hold until T1, then follow the L2-capped policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Waiting {
    pub sc2: SingleCapSolution,
    pub t1: f64,
}

impl Waiting {
    pub fn value(&self, s: f64, t: f64) -> f64 {
        let sc = &self.sc2;
        if t >= self.t1 {
            return sc.local_time_formula(s, t);
        }
        european_capped_call(s, t, sc.cap, sc.maturity(), sc.params())
            + sc.premium_from(s, t, self.t1)
    }

    /// Root in S of C^w(S, t) = level; Infinite when the waiting value never
    /// reaches it.
    pub fn level_crossing(&self, level: f64, t: f64) -> Level {
        let p = self.sc2.params();
        let asymptote = (-p.r * (self.t1 - t).max(0.0)).exp() * (self.sc2.cap - p.strike);
        if asymptote <= level {
            return Level::Infinite;
        }
        let g = |s: f64| self.value(s, t) - level;
        let mut lo = self.sc2.cap.min(p.strike + level);
        while g(lo) >= 0.0 {
            lo *= 0.8;
            if lo < 1e-6 * p.strike {
                return Level::Finite(lo);
            }
        }
        let mut hi = lo * 1.25;
        while g(hi) < 0.0 {
            hi *= 1.5;
            if hi > 1e4 * self.sc2.cap {
                return Level::Infinite;
            }
        }
        Level::Finite(bisect(g, lo, hi, 1e-8 * p.strike))
    }
}

/// Slope of the price just below L1 used by the local-time term at L1.
#[derive(Debug, Clone, PartialEq)]
enum LowerSlope {
    /// Node values on the equation grid.
    Nodes(Vec<f64>),
    /// From a constant-cap solution with cap L1.
    Single(Box<SingleCapSolution>),
}

/// Upper boundary on [0, T0] above L1 for cases I and II.
#[derive(Debug, Clone, PartialEq)]
struct UpperProblem {
    p: MarketParams,
    l1: f64,
    t_end: f64,
    t0: Option<f64>,
    grid: TimeGrid,
    /// C^{A,L}(·, T0).
    terminal: Table,
    lower: LowerSlope,
    /// Case II: dividend band between the uncapped boundary and L1.
    band: Option<UncappedSolution>,
    bound: Vec<Level>,
    slope: Vec<f64>,
    smooth_fit: bool,
}

impl UpperProblem {
    fn lower_slope(&self, v: f64) -> f64 {
        match &self.lower {
            LowerSlope::Single(sc) => sc.derivative_at(v),
            LowerSlope::Nodes(d) => interp(&self.grid, d, v),
        }
    }

    fn bound_at(&self, v: f64) -> Level {
        Boundary {
            grid: self.grid,
            values: self.bound.clone(),
        }
        .at(v)
    }

    fn euro(&self, s: f64, t: f64) -> f64 {
        european_expectation(
            s,
            t,
            self.t_end,
            &self.p,
            |x| self.terminal.eval(x),
            &[self.l1],
        )
    }

    fn density(&self, s: f64, t: f64, v: f64, b_v: Level, d_b: f64) -> f64 {
        let p = &self.p;
        let tau = v - t;
        let disc = (-p.r * tau).exp();
        let l1 = self.l1;
        let mut out =
            p.r * (l1 - p.strike) * disc * prob_between(s, Level::Finite(l1), b_v, tau, p);
        if let Level::Finite(b) = b_v {
            if !self.smooth_fit && d_b != 0.0 {
                out -= 0.5 * disc * d_b * expected_local_time_weight(s, b, t, v, p);
            }
        }
        out += 0.5 * disc * self.lower_slope(v) * expected_local_time_weight(s, l1, t, v, p);
        if let Some(u) = &self.band {
            out += dividend_band(s, u.at(v), Level::Finite(l1), tau, p);
        }
        out
    }

    fn rule(&self, t: f64) -> TimeRule {
        quad::time_rule(
            t,
            t,
            self.t_end,
            &self.grid.nodes(),
            TIME_ORDER,
            TIME_GRADING,
        )
    }

    /// Premium formula at (s, t) with the stored boundary and slopes.
    fn eep(&self, s: f64, t: f64) -> f64 {
        let b = Boundary {
            grid: self.grid,
            values: self.bound.clone(),
        };
        let rule = self.rule(t);
        let pi = rule.apply(|v| self.density(s, t, v, b.at(v), interp(&self.grid, &self.slope, v)));
        self.euro(s, t) + pi
    }

    /// Premium formula at node `i` for spot `s` when the node value is `b`.
    fn node_formula(&self, s: f64, i: usize, b: f64, d_first: f64, rule: &TimeRule) -> f64 {
        let g = &self.grid;
        let t = g.node(i);
        let t_next = g.node(i + 1);
        let h = t_next - t;
        let next = self.bound[i + 1];
        let pi = rule.apply(|v| {
            let (b_v, d_b) = if v < t_next {
                let th = (v - t) / h;
                let bv = match next {
                    Level::Finite(n) => Level::Finite(b + th * (n - b)),
                    Level::Infinite => Level::Infinite,
                };
                (bv, d_first)
            } else {
                (self.bound_at(v), interp(g, &self.slope, v))
            };
            self.density(s, t, v, b_v, d_b)
        });
        self.euro(s, t) + pi
    }

    /// Backward induction from T0.
    fn solve(&mut self, bw: Option<&Boundary>, exec: Exec, diag: &mut Diagnostics) -> Result<()> {
        let n = self.grid.n_steps;
        let k = self.p.strike;
        let target = self.l1 - k;
        let lo = self.l1 * (1.0 + 1e-12);
        let eps = BOUNDARY_EPS_REL * k;
        let tol = ROOT_TOL_REL * k;
        self.bound[n] = Level::Finite(self.l1);
        for i in (0..n).rev() {
            let t = self.grid.node(i);
            if self.t0.is_some_and(|t0| t <= t0) {
                self.bound[i] = Level::Infinite;
                self.slope[i] = 0.0;
                continue;
            }
            let rule = self.rule(t);
            let d_first = self.slope[i + 1];
            let f = |b: f64| self.node_formula(b, i, b, d_first, &rule) - target;
            let hi = bw
                .map(|w| w.at(t))
                .and_then(|l| l.finite())
                .filter(|&h| h > lo)
                .unwrap_or(f64::INFINITY);
            let hi = if hi.is_finite() { hi } else { 50.0 * self.l1 };
            // Candidate points, geometric in the distance from L1.
            let pts: Vec<f64> = (0..=SCAN_POINTS)
                .map(|j| {
                    lo + (hi - lo) * (2f64.powf(12.0 * j as f64 / SCAN_POINTS as f64) - 1.0)
                        / 4095.0
                })
                .collect();
            let vals = par::map_slice(exec, &pts, |&b| f(b));
            let prev = self.bound[i + 1].value();
            let mut best: Option<(f64, f64)> = None;
            for j in 0..SCAN_POINTS {
                if (vals[j] > 0.0) != (vals[j + 1] > 0.0) {
                    let root = bisect(f, pts[j], pts[j + 1], tol);
                    let dist = if prev.is_finite() {
                        (root - prev).abs()
                    } else {
                        -root
                    };
                    if best.is_none_or(|(_, d)| dist < d) {
                        best = Some((root, dist));
                    }
                }
            }
            let b = match best {
                Some((root, _)) => root,
                None if vals.iter().all(|&v| v < 0.0) => {
                    // Waiting never beats exercise on the bracket.
                    self.bound[i] = Level::Infinite;
                    self.slope[i] = 0.0;
                    diag.notes.push(format!(
                        "node {i} (t={t:.6}): no root below {hi:.6}, marked infinite"
                    ));
                    continue;
                }
                None => {
                    diag.notes.push(format!(
                        "node {i} (t={t:.6}): no sign change, boundary at L1"
                    ));
                    lo
                }
            };
            let c_b = f(b) + target;
            self.bound[i] = Level::Finite(b);
            let resid = c_b - target;
            diag.residuals.push((t, resid));
            if resid.abs() > 1e-6 * k {
                diag.flagged.push(i);
            }
            let d = if self.smooth_fit {
                0.0
            } else {
                // C_S(B+) as the slope jump of the formula across b: inside the
                // band the price is flat. The right slope alone feeds the
                // previous estimate back with unit gain, so its stencil bias
                // accumulates over the induction.
                let at = |s: f64| self.node_formula(s, i, b, d_first, &rule);
                let (u1, u2) = (at(b + eps), at(b + 2.0 * eps));
                let (m1, m2) = (at(b - eps), at(b - 2.0 * eps));
                let right = (4.0 * u1 - 3.0 * c_b - u2) / (2.0 * eps);
                let left = (3.0 * c_b - 4.0 * m1 + m2) / (2.0 * eps);
                (right - left).max(0.0)
            };
            self.slope[i] = d;
            diag.boundary_slope.push((t, d));
            if let Level::Finite(nb) = self.bound[i + 1] {
                if (b - nb).abs() > 10.0 * self.grid.step() * k {
                    diag.jumps.push(i);
                }
            }
        }
        diag.residuals.reverse();
        diag.boundary_slope.reverse();
        Ok(())
    }
}

fn interp(grid: &TimeGrid, vals: &[f64], v: f64) -> f64 {
    if v <= grid.t_start {
        return vals[0];
    }
    if v >= grid.t_end {
        return vals[grid.n_steps];
    }
    let i = grid.locate(v);
    let (a, b) = (grid.node(i), grid.node(i + 1));
    let w = (v - a) / (b - a);
    vals[i] + w * (vals[i + 1] - vals[i])
}

#[derive(Debug, Clone, PartialEq)]
enum Regime {
    Degenerate,
    One(Box<CaseOneState>),
    Two(Box<CaseTwoState>),
    Three(Box<CaseThreeState>),
}

#[derive(Debug, Clone, PartialEq)]
struct CaseOneState {
    l1: f64,
    waiting: Waiting,
    t0: Option<f64>,
    t1: f64,
    big_t0: f64,
    cw_t1: Table,
    upper: Option<UpperProblem>,
}

impl CaseOneState {
    /// Hit L1 before t¹ (exercise) or collect C^w(·, t¹); valid on both sides.
    fn c_zero(&self, s: f64, t: f64) -> f64 {
        let p = self.waiting.sc2.params();
        let l1 = self.l1;
        if s == l1 {
            return l1 - p.strike;
        }
        if t >= self.t1 {
            return self.waiting.value(s, t);
        }
        let hit = discounted_hit_before(s, l1, t, self.t1, p);
        let killed = killed_integral(s, l1, t, self.t1, p, |x| self.cw_t1.eval(x), &[]);
        (l1 - p.strike) * hit + killed.value
    }

    /// Below L1 before T0: hit L1 before T0 or collect C⁰(·, T0).
    fn below(&self, s: f64, t: f64) -> f64 {
        let up = self.upper.as_ref().expect("below() needs T0 > 0");
        let p = &up.p;
        let hit = discounted_hit_before(s, self.l1, t, self.big_t0, p);
        let killed = killed_integral(s, self.l1, t, self.big_t0, p, |x| up.terminal.eval(x), &[]);
        (self.l1 - p.strike) * hit + killed.value
    }

    fn price(&self, s: f64, t: f64) -> f64 {
        let p = self.waiting.sc2.params();
        let k = p.strike;
        let l1 = self.l1;
        if t >= self.t1 {
            return self.waiting.value(s, t);
        }
        if t >= self.big_t0 || self.upper.is_none() {
            return self.c_zero(s, t);
        }
        if s < l1 {
            return self.below(s, t);
        }
        if self.t0.is_some_and(|t0| t <= t0) {
            return l1 - k;
        }
        let up = self.upper.as_ref().expect("checked");
        match up.bound_at(t) {
            Level::Infinite => l1 - k,
            Level::Finite(b) if s <= b => l1 - k,
            Level::Finite(_) => up.eep(s, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CaseTwoState {
    l1: f64,
    t0: Option<f64>,
    big_t0: f64,
    sc1: SingleCapSolution,
    upper: Option<UpperProblem>,
    t1: f64,
    l2: f64,
}

impl CaseTwoState {
    /// Down-and-out call above L1 with rebate L1 − K, paying S∧L2 − K at T1.
    fn c_zero(&self, s: f64, t: f64) -> f64 {
        let p = self.sc1.params();
        let l1 = self.l1;
        if s <= l1 {
            return l1 - p.strike;
        }
        let l2 = self.l2;
        let k = p.strike;
        let hit = discounted_hit_before(s, l1, t, self.t1, p);
        let killed = killed_integral(s, l1, t, self.t1, p, |x| x.min(l2) - k, &[l2]);
        (l1 - k) * hit + killed.value
    }

    fn price(&self, s: f64, t: f64) -> f64 {
        let k = self.sc1.params().strike;
        let l1 = self.l1;
        if s <= l1 {
            return self.sc1.price(s, t);
        }
        if t >= self.big_t0 || self.upper.is_none() {
            return self.c_zero(s, t);
        }
        if self.t0.is_some_and(|t0| t <= t0) {
            return l1 - k;
        }
        let up = self.upper.as_ref().expect("checked");
        match up.bound_at(t) {
            Level::Infinite => l1 - k,
            Level::Finite(b) if s <= b => l1 - k,
            Level::Finite(_) => up.eep(s, t),
        }
    }
}

/// Case III: exercise above a non-increasing boundary capped by L1.
#[derive(Debug, Clone, PartialEq)]
struct CaseThreeState {
    p: MarketParams,
    l1: f64,
    t1: f64,
    grid: TimeGrid,
    bound: Vec<f64>,
    /// Slope just below L1 on the grid; 1 from t*₁ on.
    slope: Vec<f64>,
    t_star1: f64,
    /// G(·, T1).
    terminal: Table,
    sc2: SingleCapSolution,
    jump_level: f64,
}

impl CaseThreeState {
    fn terminal_value(&self, s: f64) -> f64 {
        let k = self.p.strike;
        if s >= self.jump_level {
            s.min(self.l1) - k
        } else {
            self.sc2.price(s, self.t1)
        }
    }

    fn euro(&self, s: f64, t: f64) -> f64 {
        european_expectation(
            s,
            t,
            self.t1,
            &self.p,
            |x| self.terminal.eval(x),
            &[self.jump_level, self.l1],
        )
    }

    fn slope_at(&self, u: f64) -> f64 {
        if u >= self.t_star1 {
            1.0
        } else {
            interp(&self.grid, &self.slope, u).min(1.0)
        }
    }

    fn density(&self, s: f64, t: f64, u: f64, b_u: f64, d: f64) -> f64 {
        let p = &self.p;
        let tau = u - t;
        let disc = (-p.r * tau).exp();
        let l1 = self.l1;
        dividend_band(s, Level::Finite(b_u), Level::Finite(l1), tau, p)
            + p.r * (l1 - p.strike) * disc * prob_above(s, l1, tau, p)
            + 0.5 * disc * d * expected_local_time_weight(s, l1, t, u, p)
    }

    fn rule(&self, t: f64) -> TimeRule {
        let mut br = self.grid.nodes();
        br.push(self.t_star1);
        quad::time_rule(t, t, self.t1, &br, TIME_ORDER, TIME_GRADING)
    }

    fn eep(&self, s: f64, t: f64) -> f64 {
        let rule = self.rule(t);
        let pi = rule.apply(|u| {
            self.density(
                s,
                t,
                u,
                interp(&self.grid, &self.bound, u),
                self.slope_at(u),
            )
        });
        self.euro(s, t) + pi
    }

    fn price(&self, s: f64, t: f64) -> f64 {
        let k = self.p.strike;
        if t >= self.t1 {
            return self.terminal_value(s);
        }
        let b = interp(&self.grid, &self.bound, t);
        if s >= b {
            return s.min(self.l1) - k;
        }
        self.eep(s, t)
    }
}

/// Full solution: boundaries, structural times and the pricing state.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelSolution {
    pub params: MarketParams,
    pub cap: TwoLevelCap,
    pub config: SolverConfig,
    pub report: SolveReport,
    pub uncapped: UncappedSolution,
    pub sc2: SingleCapSolution,
    regime: Regime,
}

/// Runs the full pipeline for a two-level cap.
pub fn solve(
    params: &MarketParams,
    cap: &TwoLevelCap,
    config: &SolverConfig,
) -> Result<TwoLevelSolution> {
    params.validate()?;
    cap.validate(params)?;
    let exec = config.exec;
    let ugrid = TimeGrid::new(0.0, cap.t2, config.n_uncapped)?;
    let uncapped =
        solve_uncapped_boundary(params, ugrid).map_err(|e| e.in_step("uncapped boundary"))?;
    let case = classify_case(params, cap, uncapped.at(cap.t1))?;
    let from = if case == CaseLabel::Degenerate {
        0.0
    } else {
        cap.t1
    };
    let sc2 = SingleCapSolution::new(&uncapped, cap.l2, from, exec)
        .map_err(|e| e.in_step("second cap"))?;
    let t_star = compute_t_star(&uncapped.boundary, cap);
    let mut diag = Diagnostics::default();
    let n2 = ((config.n_two_level as f64).max(1.0)) as usize;
    let h2 = cap.t1 / n2 as f64;
    let mut report = SolveReport {
        case,
        uncapped: uncapped.boundary.clone(),
        bl2: sc2.bl2.clone(),
        bl1: None,
        bw: None,
        t0: None,
        big_t0: 0.0,
        t1: None,
        t_star,
        t_star1: None,
        bl1_at_t1: None,
        diagnostics: Diagnostics::default(),
    };
    let regime = match case {
        CaseLabel::Degenerate => Regime::Degenerate,
        CaseLabel::CaseI | CaseLabel::CaseII => {
            let t0 = t_zero(params, cap);
            let waiting = Waiting {
                sc2: sc2.clone(),
                t1: cap.t1,
            };
            let wgrid = TimeGrid::new(0.0, cap.t1, n2)?;
            let bw_vals = par::map(exec, wgrid.len(), |i| {
                let t = wgrid.node(i);
                if t0.is_some_and(|z| t <= z) {
                    Level::Infinite
                } else {
                    waiting.level_crossing(cap.l1 - params.strike, t)
                }
            });
            let bw = Boundary::new(wgrid, bw_vals)?;
            report.bw = Some(bw.clone());
            report.t0 = t0;
            if case == CaseLabel::CaseI {
                let st = solve_case_one(params, cap, config, waiting, t0, &bw, h2, &mut diag)
                    .map_err(|e| e.in_step("upper boundary (case I)"))?;
                report.t1 = Some(st.t1);
                report.big_t0 = st.big_t0;
                report.bl1 = st.upper.as_ref().map(|u| Boundary {
                    grid: u.grid,
                    values: u.bound.clone(),
                });
                Regime::One(Box::new(st))
            } else {
                let st = solve_case_two(params, cap, config, &uncapped, t0, &bw, h2, &mut diag)
                    .map_err(|e| e.in_step("upper boundary (case II)"))?;
                report.big_t0 = st.big_t0;
                report.bl1 = st.upper.as_ref().map(|u| Boundary {
                    grid: u.grid,
                    values: u.bound.clone(),
                });
                Regime::Two(Box::new(st))
            }
        }
        CaseLabel::CaseIII => {
            let st = solve_case_three(params, cap, config, &uncapped, &sc2, n2, &mut diag)
                .map_err(|e| e.in_step("boundary (case III)"))?;
            report.t_star1 = Some(st.t_star1);
            report.bl1_at_t1 = Some(st.jump_level);
            report.bl1 = Some(Boundary::new(
                st.grid,
                st.bound.iter().map(|&b| Level::Finite(b)).collect(),
            )?);
            Regime::Three(Box::new(st))
        }
    };
    report.diagnostics = diag;
    Ok(TwoLevelSolution {
        params: *params,
        cap: *cap,
        config: *config,
        report,
        uncapped,
        sc2,
        regime,
    })
}

#[allow(clippy::too_many_arguments)]
fn solve_case_one(
    p: &MarketParams,
    cap: &TwoLevelCap,
    config: &SolverConfig,
    waiting: Waiting,
    t0: Option<f64>,
    bw: &Boundary,
    h2: f64,
    diag: &mut Diagnostics,
) -> Result<CaseOneState> {
    let exec = config.exec;
    let k = p.strike;
    let l1 = cap.l1;
    // t¹: last time the waiting value at L1 drops to L1 - K.
    let nodes = bw.grid.nodes();
    let inner: Vec<f64> = nodes[..nodes.len() - 1].to_vec();
    let t1 =
        last_crossing(exec, &inner, cap.t1, |t| waiting.value(l1, t) - (l1 - k)).unwrap_or(0.0);
    let (lo, hi) = price_window(l1, p, cap.t2);
    let cw_t1 = Table::build(exec, &[lo, l1, hi], config.table_points, |x| {
        waiting.value(x, t1)
    });
    let mut st = CaseOneState {
        l1,
        waiting,
        t0,
        t1,
        big_t0: 0.0,
        cw_t1,
        upper: None,
    };
    if t1 <= 0.0 {
        diag.notes.push("no exercise at L1 before T1".into());
        return Ok(st);
    }
    let eps = CAP_EPS_REL * l1;
    let times: Vec<f64> = nodes.iter().copied().filter(|&t| t < t1).collect();
    let big_t0 =
        last_crossing(exec, &times, t1, |t| st.c_zero(l1 + eps, t) - (l1 - k)).unwrap_or(0.0);
    st.big_t0 = big_t0;
    if big_t0 <= 0.0 {
        return Ok(st);
    }
    let n = ((big_t0 / h2).ceil() as usize).max(1);
    let grid = TimeGrid::new(0.0, big_t0, n)?;
    let terminal = Table::build(exec, &[lo, l1, hi], config.table_points, |x| {
        st.c_zero(x, big_t0)
    });
    // Slope just below L1 from the hit-or-wait value.
    let lower = par::map(exec, grid.len(), |i| {
        let v = grid.node(i);
        let c = |s: f64| {
            let hit = discounted_hit_before(s, l1, v, big_t0, p);
            let killed = killed_integral(s, l1, v, big_t0, p, |x| terminal.eval(x), &[]);
            (l1 - k) * hit + killed.value
        };
        ((l1 - k) - c(l1 - eps)) / eps
    });
    // Slope just above L1 at T0 starts the recursion.
    let d_end = ((st.c_zero(l1 + eps, big_t0) - (l1 - k)) / eps).max(0.0);
    let mut up = UpperProblem {
        p: *p,
        l1,
        t_end: big_t0,
        t0,
        grid,
        terminal,
        lower: LowerSlope::Nodes(lower),
        band: None,
        bound: vec![Level::Finite(l1); n + 1],
        slope: vec![0.0; n + 1],
        smooth_fit: config.assume_smooth_fit,
    };
    up.slope[n] = if config.assume_smooth_fit { 0.0 } else { d_end };
    up.solve(Some(bw), exec, diag)?;
    st.upper = Some(up);
    Ok(st)
}

#[allow(clippy::too_many_arguments)]
fn solve_case_two(
    p: &MarketParams,
    cap: &TwoLevelCap,
    config: &SolverConfig,
    uncapped: &UncappedSolution,
    t0: Option<f64>,
    bw: &Boundary,
    h2: f64,
    diag: &mut Diagnostics,
) -> Result<CaseTwoState> {
    let exec = config.exec;
    let k = p.strike;
    let l1 = cap.l1;
    let sc1 = SingleCapSolution::new(uncapped, l1, 0.0, exec)?;
    let mut st = CaseTwoState {
        l1,
        t0,
        big_t0: 0.0,
        sc1,
        upper: None,
        t1: cap.t1,
        l2: cap.l2,
    };
    let eps = CAP_EPS_REL * l1;
    let nodes = bw.grid.nodes();
    let inner: Vec<f64> = nodes[..nodes.len() - 1].to_vec();
    let big_t0 =
        last_crossing(exec, &inner, cap.t1, |t| st.c_zero(l1 + eps, t) - (l1 - k)).unwrap_or(0.0);
    st.big_t0 = big_t0;
    if big_t0 <= 0.0 {
        return Ok(st);
    }
    let (lo, hi) = price_window(l1, p, cap.t2);
    let terminal = Table::build(exec, &[lo, l1, hi], config.table_points, |x| {
        if x <= l1 {
            st.sc1.price(x, big_t0)
        } else {
            st.c_zero(x, big_t0)
        }
    });
    let n = ((big_t0 / h2).ceil() as usize).max(1);
    let grid = TimeGrid::new(0.0, big_t0, n)?;
    let d_end = ((st.c_zero(l1 + eps, big_t0) - (l1 - k)) / eps).max(0.0);
    let mut up = UpperProblem {
        p: *p,
        l1,
        t_end: big_t0,
        t0,
        grid,
        terminal,
        lower: LowerSlope::Single(Box::new(st.sc1.clone())),
        band: Some(uncapped.clone()),
        bound: vec![Level::Finite(l1); n + 1],
        slope: vec![0.0; n + 1],
        smooth_fit: config.assume_smooth_fit,
    };
    up.slope[n] = if config.assume_smooth_fit { 0.0 } else { d_end };
    up.solve(Some(bw), exec, diag)?;
    st.upper = Some(up);
    Ok(st)
}

fn solve_case_three(
    p: &MarketParams,
    cap: &TwoLevelCap,
    config: &SolverConfig,
    uncapped: &UncappedSolution,
    sc2: &SingleCapSolution,
    n: usize,
    diag: &mut Diagnostics,
) -> Result<CaseThreeState> {
    let exec = config.exec;
    let k = p.strike;
    let l1 = cap.l1;
    let jump_level = uncapped.at(cap.t1).min(cap.l2);
    let left_limit = p.dividend_threshold().max(jump_level).min(l1);
    let grid = TimeGrid::new(0.0, cap.t1, n)?;
    let (lo, hi) = price_window(l1, p, cap.t2);
    let mut knots = vec![lo, jump_level, l1, hi];
    knots.dedup();
    let mut st = CaseThreeState {
        p: *p,
        l1,
        t1: cap.t1,
        grid,
        bound: vec![left_limit; n + 1],
        slope: vec![1.0; n + 1],
        t_star1: 0.0,
        terminal: Table::build(exec, &[lo, hi], 4, |_| 0.0),
        sc2: sc2.clone(),
        jump_level,
    };
    st.terminal = Table::build(exec, &knots, config.table_points, |x| st.terminal_value(x));
    let tol = ROOT_TOL_REL * k;
    let mut reached: Option<usize> = None;
    for i in (0..n).rev() {
        let t = grid.node(i);
        let rule = st.rule(t);
        let next = st.bound[i + 1];
        let t_next = grid.node(i + 1);
        let h = t_next - t;
        let f = |b: f64| {
            let pi = rule.apply(|u| {
                let b_u = if u < t_next {
                    b + (u - t) / h * (next - b)
                } else {
                    interp(&grid, &st.bound, u)
                };
                st.density(b, t, u, b_u, 1.0)
            });
            st.euro(b, t) + pi - (b - k)
        };
        if next >= l1 {
            reached = Some(i);
            break;
        }
        let f_lo = f(next);
        if f_lo <= 0.0 {
            st.bound[i] = next;
            diag.residuals.push((t, f_lo));
            continue;
        }
        let f_hi = f(l1);
        if f_hi > 0.0 {
            reached = Some(i);
            break;
        }
        let b = bisect(f, next, l1, tol);
        let r = f(b);
        diag.residuals.push((t, r));
        if r.abs() > 1e-6 * k {
            diag.flagged.push(i);
        }
        if b < next - 1e-9 * k {
            return Err(Error::Monotonicity { node: i, time: t });
        }
        st.bound[i] = b;
    }
    diag.residuals.reverse();
    st.t_star1 = match reached {
        None => 0.0,
        Some(i) => {
            // Extrapolate the last two solved nodes to the cap.
            let t_next = grid.node(i + 1);
            let b1 = st.bound[i + 1];
            let est = if i + 2 <= n && b1 < l1 {
                let b2 = st.bound[i + 2];
                let slope = (b2 - b1) / (grid.node(i + 2) - t_next);
                if slope < 0.0 {
                    t_next + (l1 - b1) / slope
                } else {
                    t_next
                }
            } else {
                t_next
            };
            for j in 0..=i {
                st.bound[j] = l1;
            }
            est.clamp(grid.node(i), t_next)
        }
    };
    if st.t_star1 > 0.0 {
        // Slope below L1 before t*₁ from hitting L1 by t*₁.
        let ts = st.t_star1;
        let (lo_b, _) = price_window(l1, p, cap.t2);
        let g_table = Table::build(exec, &[lo_b, l1], config.table_points, |x| {
            if ts >= cap.t1 {
                st.terminal_value(x)
            } else {
                st.eep(x, ts)
            }
        });
        let eps = CAP_EPS_REL * l1;
        let slope = par::map(exec, grid.len(), |i| {
            let u = grid.node(i);
            if u >= ts {
                return 1.0;
            }
            let s = l1 - eps;
            let hit = discounted_hit_before(s, l1, u, ts, p);
            let killed = killed_integral(s, l1, u, ts, p, |x| g_table.eval(x), &[]);
            ((l1 - k) - ((l1 - k) * hit + killed.value)) / eps
        });
        st.slope = slope;
    }
    Ok(st)
}

impl TwoLevelSolution {
    pub fn case(&self) -> CaseLabel {
        self.report.case
    }

    /// Price at (S, t) for 0 <= t <= T2.
    pub fn price(&self, s: f64, t: f64) -> f64 {
        let cap = &self.cap;
        if t > cap.t1 || (t == cap.t1 && cap.continuity == CapContinuity::RightContinuous) {
            return self.sc2.price(s, t);
        }
        match &self.regime {
            Regime::Degenerate => self.sc2.price(s, t),
            Regime::One(st) => st.price(s, t),
            Regime::Two(st) => st.price(s, t),
            Regime::Three(st) => st.price(s, t),
        }
    }

    /// Immediate exercise payoff (S ∧ L(t) − K)⁺.
    pub fn exercise_value(&self, s: f64, t: f64) -> f64 {
        (s.min(self.cap.level_at(t)) - self.params.strike).max(0.0)
    }

    /// Prices a batch of points, in order.
    pub fn prices(&self, points: &[(f64, f64)]) -> Vec<f64> {
        par::map_slice(self.config.exec, points, |&(s, t)| self.price(s, t))
    }

    /// Waiting value C^w(S, t) (cases I and II).
    pub fn waiting_value(&self, s: f64, t: f64) -> f64 {
        Waiting {
            sc2: self.sc2.clone(),
            t1: self.cap.t1,
        }
        .value(s, t)
    }

    /// Upper boundary before T1: None where no upper exercise boundary exists.
    pub fn bl1_at(&self, t: f64) -> Option<Level> {
        let cap = &self.cap;
        if t >= cap.t1 {
            return None;
        }
        let rep = &self.report;
        match rep.case {
            CaseLabel::Degenerate => None,
            CaseLabel::CaseI => {
                let t1 = rep.t1.unwrap_or(0.0);
                if t > t1 {
                    None
                } else if t >= rep.big_t0 {
                    Some(Level::Finite(cap.l1))
                } else {
                    rep.bl1.as_ref().map(|b| b.at(t))
                }
            }
            CaseLabel::CaseII => {
                if t >= rep.big_t0 {
                    Some(Level::Finite(cap.l1))
                } else {
                    rep.bl1.as_ref().map(|b| b.at(t))
                }
            }
            CaseLabel::CaseIII => rep.bl1.as_ref().map(|b| b.at(t)),
        }
    }

    /// Slope just above the upper boundary per node (cases I and II).
    pub fn boundary_slopes(&self) -> Vec<(f64, f64)> {
        self.report.diagnostics.boundary_slope.clone()
    }
}

/// Free-function form of [`TwoLevelSolution::price`].
pub fn price_two_level(s: f64, t: f64, solution: &TwoLevelSolution) -> f64 {
    solution.price(s, t)
}
