//! The ordinary American call: exercise boundary by backward induction on
//! its early-exercise-premium integral equation, and the premium price.

use crate::analytic::{dividend_band, european_call};
use crate::error::{Error, Result};
use crate::model::{Boundary, Level, MarketParams, TimeGrid};
use crate::quad::{self, TimeRule};

/// Gauss points per grid interval in the time integrals.
pub(crate) const TIME_ORDER: usize = 4;
/// Geometric refinements of the first time panel.
pub(crate) const TIME_GRADING: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct UncappedSolution {
    pub boundary: Boundary,
    pub params: MarketParams,
    /// Integral-equation residual at each node.
    pub residuals: Vec<f64>,
}

/// Trapezoid weights of `[t_i, T]` on the grid.
fn trapezoid(grid: &TimeGrid, i: usize) -> Vec<f64> {
    let n = grid.n_steps;
    let h = grid.step();
    let mut w = vec![h; n + 1 - i];
    if w.len() == 1 {
        w[0] = 0.0;
    } else {
        w[0] = 0.5 * h;
        let last = w.len() - 1;
        w[last] = 0.5 * h;
    }
    w
}

/// Discretised equation at node `i`: positive below the boundary.
fn equation(
    b: f64,
    i: usize,
    later: &[Level],
    grid: &TimeGrid,
    weights: &[f64],
    p: &MarketParams,
) -> f64 {
    let t = grid.node(i);
    let t2 = grid.t_end;
    let mut acc = weights[0] * dividend_band(b, Level::Finite(b), Level::Infinite, 0.0, p);
    for (k, &w) in weights.iter().enumerate().skip(1) {
        let j = i + k;
        acc += w * dividend_band(b, later[j], Level::Infinite, grid.node(j) - t, p);
    }
    european_call(b, t, p.strike, t2, p) + acc - (b - p.strike)
}

/// Solves the uncapped boundary on `grid` (which should span [0, T2]).
/// With δ = 0 the boundary is infinite everywhere.
pub fn solve_uncapped_boundary(params: &MarketParams, grid: TimeGrid) -> Result<UncappedSolution> {
    params.validate()?;
    let n = grid.n_steps;
    if params.delta == 0.0 {
        return Ok(UncappedSolution {
            boundary: Boundary::constant(grid, Level::Infinite),
            params: *params,
            residuals: vec![0.0; n + 1],
        });
    }
    let k = params.strike;
    let floor = k.max(params.dividend_threshold());
    let tol = 1e-10 * k;
    let mut values = vec![Level::Finite(floor); n + 1];
    let mut residuals = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let weights = trapezoid(&grid, i);
        let f = |b: f64| equation(b, i, &values, &grid, &weights, params);
        let lo = values[i + 1].value();
        let flo = f(lo);
        if flo <= 0.0 {
            values[i] = Level::Finite(lo);
            residuals[i] = flo;
            continue;
        }
        let mut hi = 10.0 * floor;
        let mut fhi = f(hi);
        while fhi > 0.0 {
            if hi > 1e6 * k {
                return Err(Error::RootNotFound {
                    node: i,
                    time: grid.node(i),
                    lo,
                    hi,
                });
            }
            hi *= 2.0;
            fhi = f(hi);
        }
        let (mut a, mut c) = (lo, hi);
        while c - a > tol {
            let m = 0.5 * (a + c);
            if f(m) > 0.0 {
                a = m;
            } else {
                c = m;
            }
        }
        let b = 0.5 * (a + c);
        residuals[i] = f(b);
        values[i] = Level::Finite(b);
    }
    Ok(UncappedSolution {
        boundary: Boundary::new(grid, values)?,
        params: *params,
        residuals,
    })
}

impl UncappedSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.boundary.grid
    }

    pub fn maturity(&self) -> f64 {
        self.boundary.grid.t_end
    }

    pub fn at(&self, t: f64) -> Level {
        self.boundary.at(t)
    }

    /// Residual of the discretised equation at node `i` for the value `b`.
    pub fn residual(&self, i: usize, b: f64) -> f64 {
        let g = self.grid();
        if i >= g.n_steps {
            return 0.0;
        }
        let weights = trapezoid(g, i);
        equation(b, i, &self.boundary.values, g, &weights, &self.params)
    }

    /// Time rule for premium integrals from `t` to maturity.
    pub(crate) fn rule(&self, t: f64, a: f64, b: f64) -> TimeRule {
        let nodes = self.grid().nodes();
        quad::time_rule(t, a, b, &nodes, TIME_ORDER, TIME_GRADING)
    }

    /// Premium density at time `u` for spot `s` observed at `t`.
    pub(crate) fn premium_density(&self, s: f64, t: f64, u: f64) -> f64 {
        dividend_band(s, self.at(u), Level::Infinite, u - t, &self.params)
    }

    /// American call price by the early exercise premium formula.
    pub fn price(&self, s: f64, t: f64) -> f64 {
        let p = &self.params;
        let t2 = self.maturity();
        if t >= t2 {
            return (s - p.strike).max(0.0);
        }
        if let Level::Finite(b) = self.at(t) {
            if s >= b {
                return s - p.strike;
            }
        }
        self.premium_formula(s, t)
    }

    /// The premium formula evaluated without the exercise-region shortcut.
    pub fn premium_formula(&self, s: f64, t: f64) -> f64 {
        let p = &self.params;
        let t2 = self.maturity();
        let euro = european_call(s, t, p.strike, t2, p);
        if p.delta == 0.0 {
            return euro;
        }
        let rule = self.rule(t, t, t2);
        euro + rule.apply(|u| self.premium_density(s, t, u))
    }
}

/// Free-function form of [`UncappedSolution::price`].
pub fn uncapped_price(s: f64, t: f64, solution: &UncappedSolution) -> f64 {
    solution.price(s, t)
}
