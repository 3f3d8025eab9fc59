//! American call with a constant cap `L` and maturity T2.
//!
//! Exercise happens at min(B(t), L). Before the crossing time t* of B with
//! L the price follows from the first-passage formulas; the slope just below
//! the cap feeds the local-time term of the premium representation.

use crate::analytic::{
    discounted_hit_before, dividend_band, european_capped_call, expected_local_time_weight,
    killed_integral, prob_above,
};
use crate::error::Result;
use crate::model::{Boundary, Level, MarketParams, TimeGrid, TwoLevelCap};
use crate::par::{self, Exec};
use crate::quad::{self, TimeRule};
use crate::table::Table;
use crate::uncapped::{UncappedSolution, TIME_GRADING, TIME_ORDER};

/// Relative step for the one-sided slope at the cap.
pub const CAP_EPS_REL: f64 = 1e-4;
const TABLE_POINTS: usize = 600;

/// First time in [0, T2] at which the uncapped boundary is at or below
/// `level`; T2 when it never is.
pub fn crossing_time(uncapped: &Boundary, level: f64) -> f64 {
    let g = &uncapped.grid;
    let below = |t: f64| uncapped.at(t).value() <= level;
    if below(g.t_start) {
        return g.t_start;
    }
    if !below(g.t_end) {
        return g.t_end;
    }
    // First node at or below the level.
    let j = (0..g.len())
        .find(|&j| below(g.node(j)))
        .expect("end node is below");
    let (mut a, mut b) = (g.node(j - 1), g.node(j));
    while b - a > 1e-12 {
        let m = 0.5 * (a + b);
        if below(m) {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

/// Crossing time of the uncapped boundary with a two-level cap schedule.
pub fn compute_t_star(uncapped: &Boundary, cap: &TwoLevelCap) -> f64 {
    let b = |t: f64| uncapped.at(t).value();
    if b(cap.t2) > cap.l2 {
        return cap.t2;
    }
    if b(cap.t1) >= cap.l2 {
        // Crossing with L2 on [T1, T2].
        let c = crossing_time(uncapped, cap.l2);
        return c.max(cap.t1);
    }
    if b(cap.t1) > cap.l1 {
        return cap.t1;
    }
    crossing_time(uncapped, cap.l1).min(cap.t1)
}

#[derive(Debug, Clone, PartialEq)]
enum Terminal {
    /// t* = T2: the payoff itself.
    Payoff,
    /// C^A(·, t*) below the cap.
    Table(Table),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleCapSolution {
    pub cap: f64,
    /// min(B, L) on [t_from, T2].
    pub bl2: Boundary,
    pub t_star: f64,
    /// Slope of the price just below the cap at the uncapped grid nodes.
    pub cap_derivative: Vec<f64>,
    /// |D(ε) − D(ε/2)| at each node.
    pub derivative_error: Vec<f64>,
    pub uncapped: UncappedSolution,
    terminal: Terminal,
}

impl SingleCapSolution {
    /// Builds the constant-cap solution. `t_from` is the start of the
    /// reported boundary window (T1 for the second cap, 0 otherwise).
    pub fn new(uncapped: &UncappedSolution, cap: f64, t_from: f64, exec: Exec) -> Result<Self> {
        let p = uncapped.params;
        let g = *uncapped.grid();
        let t2 = g.t_end;
        let t_star = crossing_time(&uncapped.boundary, cap);
        let terminal = if t_star >= t2 {
            Terminal::Payoff
        } else {
            let lo = cap * (-(12.0 * p.sigma * t2.sqrt() + p.log_drift().abs() * t2)).exp();
            Terminal::Table(Table::build(exec, &[lo, cap], TABLE_POINTS, |x| {
                uncapped.price(x, t_star)
            }))
        };
        let n_win = (((t2 - t_from) / g.step()).round() as usize).max(1);
        let wgrid = TimeGrid::new(t_from, t2, n_win)?;
        let bl2 = Boundary::new(
            wgrid,
            wgrid
                .nodes()
                .iter()
                .map(|&t| Level::Finite(uncapped.at(t).min(cap)))
                .collect(),
        )?;
        let mut sol = Self {
            cap,
            bl2,
            t_star,
            cap_derivative: Vec::new(),
            derivative_error: Vec::new(),
            uncapped: uncapped.clone(),
            terminal,
        };
        let eps = CAP_EPS_REL * cap;
        let est = estimate_cap_derivative(&sol, eps, exec);
        sol.cap_derivative = est.iter().map(|e| e.0).collect();
        sol.derivative_error = est.iter().map(|e| e.1).collect();
        Ok(sol)
    }

    pub fn params(&self) -> &MarketParams {
        &self.uncapped.params
    }

    pub fn maturity(&self) -> f64 {
        self.uncapped.maturity()
    }

    fn terminal_value(&self, x: f64) -> f64 {
        match &self.terminal {
            Terminal::Payoff => (x - self.params().strike).max(0.0),
            Terminal::Table(t) => t.eval(x),
        }
    }

    /// Price by first passage to the cap before t*.
    pub fn price_via_hitting(&self, s: f64, t: f64) -> f64 {
        let p = self.params();
        let k = p.strike;
        if s >= self.cap {
            return self.cap - k;
        }
        if t >= self.t_star {
            return self.uncapped.price(s, t);
        }
        let hit = discounted_hit_before(s, self.cap, t, self.t_star, p);
        let breaks: &[f64] = match self.terminal {
            Terminal::Payoff => &[k],
            Terminal::Table(_) => &[],
        };
        let killed = killed_integral(
            s,
            self.cap,
            t,
            self.t_star,
            p,
            |x| self.terminal_value(x),
            breaks,
        );
        (self.cap - k) * hit + killed.value
    }

    /// Canonical price: the first-passage representation.
    pub fn price(&self, s: f64, t: f64) -> f64 {
        if t >= self.maturity() {
            return (s.min(self.cap) - self.params().strike).max(0.0);
        }
        self.price_via_hitting(s, t)
    }

    /// Slope below the cap at time `u`, linear between grid nodes.
    pub fn derivative_at(&self, u: f64) -> f64 {
        if u >= self.t_star {
            return 1.0;
        }
        let g = self.uncapped.grid();
        let i = g.locate(u);
        let (a, b) = (g.node(i), g.node(i + 1));
        let w = ((u - a) / (b - a)).clamp(0.0, 1.0);
        let hi = if b >= self.t_star {
            1.0
        } else {
            self.cap_derivative[i + 1]
        };
        self.cap_derivative[i] + w * (hi - self.cap_derivative[i])
    }

    pub(crate) fn rule(&self, t: f64, a: f64, b: f64) -> TimeRule {
        let mut breaks = self.uncapped.grid().nodes();
        breaks.push(self.t_star);
        quad::time_rule(t, a, b, &breaks, TIME_ORDER, TIME_GRADING)
    }

    /// Integrand of the local-time representation at time `u`.
    pub(crate) fn premium_density(&self, s: f64, t: f64, u: f64) -> f64 {
        let p = self.params();
        let tau = u - t;
        let cap = self.cap;
        let occ = p.r * (cap - p.strike) * (-p.r * tau).exp() * prob_above(s, cap, tau, p);
        let band = dividend_band(s, self.uncapped.at(u), Level::Finite(cap), tau, p);
        let lt = 0.5
            * (-p.r * tau).exp()
            * self.derivative_at(u)
            * expected_local_time_weight(s, cap, t, u, p);
        occ + band + lt
    }

    /// Local-time premium formula over [a, T2] for spot `s` at `t <= a`.
    pub(crate) fn premium_from(&self, s: f64, t: f64, a: f64) -> f64 {
        let rule = self.rule(t, a, self.maturity());
        rule.apply(|u| self.premium_density(s, t, u))
    }

    /// The local-time representation evaluated as a formula for any spot.
    pub fn local_time_formula(&self, s: f64, t: f64) -> f64 {
        let p = self.params();
        european_capped_call(s, t, self.cap, self.maturity(), p) + self.premium_from(s, t, t)
    }

    /// Local-time price, with the exercise region short-circuited.
    pub fn price_via_local_time(&self, s: f64, t: f64) -> f64 {
        let k = self.params().strike;
        if s >= self.cap {
            return self.cap - k;
        }
        if t >= self.maturity() {
            return (s - k).max(0.0);
        }
        if let Level::Finite(b) = self.uncapped.at(t) {
            if s >= b {
                return s - k;
            }
        }
        self.local_time_formula(s, t)
    }

    /// Largest residual of the uncapped equation on the nodes of
    /// [max(t*, T1), T2] where min(B, L) = B. Zero when B is infinite.
    pub fn verify_bl2_integral_equation(&self, t1: f64) -> f64 {
        let g = self.uncapped.grid();
        let from = self.t_star.max(t1);
        let mut worst: f64 = 0.0;
        for i in 0..g.n_steps {
            let t = g.node(i);
            if t < from - 1e-12 {
                continue;
            }
            if let Level::Finite(b) = self.uncapped.boundary.values[i] {
                if b <= self.cap {
                    worst = worst.max(self.uncapped.residual(i, b).abs());
                }
            }
        }
        worst
    }
}

/// Slope estimate (L − K − C(L − ε, t))/ε at every uncapped grid node,
/// with the Richardson-style error |D(ε) − D(ε/2)|. Equal to 1 from t* on.
pub fn estimate_cap_derivative(sol: &SingleCapSolution, eps: f64, exec: Exec) -> Vec<(f64, f64)> {
    let g = *sol.uncapped.grid();
    let k = sol.params().strike;
    let top = sol.cap - k;
    par::map(exec, g.len(), |i| {
        let t = g.node(i);
        if t >= sol.t_star {
            return (1.0, 0.0);
        }
        let d1 = (top - sol.price_via_hitting(sol.cap - eps, t)) / eps;
        let d2 = (top - sol.price_via_hitting(sol.cap - 0.5 * eps, t)) / (0.5 * eps);
        (d1, (d1 - d2).abs())
    })
}
