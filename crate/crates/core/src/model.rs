//! Domain types: market parameters, the cap schedule, time grids and
//! exercise boundaries.

use crate::error::{Error, Result};

/// Risk-neutral GBM parameters and the option strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub r: f64,
    pub delta: f64,
    pub sigma: f64,
    pub strike: f64,
}

impl MarketParams {
    pub fn new(r: f64, delta: f64, sigma: f64, strike: f64) -> Result<Self> {
        let p = Self {
            r,
            delta,
            sigma,
            strike,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.r, self.delta, self.sigma, self.strike]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite market parameter".into()));
        }
        if self.r <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "r must be > 0, got {}",
                self.r
            )));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidParams(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.strike <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "strike must be > 0, got {}",
                self.strike
            )));
        }
        Ok(())
    }

    /// Drift of log S under the pricing measure.
    pub fn log_drift(&self) -> f64 {
        self.r - self.delta - 0.5 * self.sigma * self.sigma
    }

    /// rK/δ, infinite when δ = 0.
    pub fn dividend_threshold(&self) -> f64 {
        if self.delta == 0.0 {
            f64::INFINITY
        } else {
            self.r * self.strike / self.delta
        }
    }
}

/// Which cap applies at exactly t = T1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CapContinuity {
    /// L(T1) = L2.
    RightContinuous,
    /// L(T1) = L1.
    LeftContinuous,
}

/// Cap equal to `l1` before `t1` and `l2` on `[t1, t2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelCap {
    pub l1: f64,
    pub l2: f64,
    pub t1: f64,
    pub t2: f64,
    pub continuity: CapContinuity,
}

impl TwoLevelCap {
    /// Builds a cap with the natural convention: right-continuous when the
    /// cap rises, left-continuous when it drops.
    pub fn new(l1: f64, l2: f64, t1: f64, t2: f64) -> Self {
        let continuity = if l1 > l2 {
            CapContinuity::LeftContinuous
        } else {
            CapContinuity::RightContinuous
        };
        Self {
            l1,
            l2,
            t1,
            t2,
            continuity,
        }
    }

    pub fn with_continuity(mut self, continuity: CapContinuity) -> Self {
        self.continuity = continuity;
        self
    }

    /// Shape checks that do not need the solver. Rejection of the
    /// right-continuous decreasing cap happens in [`classify_case`].
    pub fn validate(&self, params: &MarketParams) -> Result<()> {
        let k = params.strike;
        if !(self.l1.is_finite()
            && self.l2.is_finite()
            && self.t1.is_finite()
            && self.t2.is_finite())
        {
            return Err(Error::InvalidParams("non-finite cap parameter".into()));
        }
        if self.l1 <= k || self.l2 <= k {
            return Err(Error::InvalidParams(format!(
                "cap levels must exceed the strike {k}: L1={}, L2={}",
                self.l1, self.l2
            )));
        }
        if !(self.t1 > 0.0 && self.t1 < self.t2) {
            return Err(Error::InvalidParams(format!(
                "need 0 < T1 < T2, got T1={}, T2={}",
                self.t1, self.t2
            )));
        }
        Ok(())
    }

    /// Cap level in force at time `t`.
    pub fn level_at(&self, t: f64) -> f64 {
        if t < self.t1 {
            self.l1
        } else if t > self.t1 {
            self.l2
        } else {
            match self.continuity {
                CapContinuity::LeftContinuous => self.l1,
                CapContinuity::RightContinuous => self.l2,
            }
        }
    }
}

/// Structural regime of the exercise region before T1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    /// L1 < min(L2, B(T1)): two disconnected exercise regions.
    CaseI,
    /// B(T1) <= L1 < L2.
    CaseII,
    /// L1 > L2 with a left-continuous cap.
    CaseIII,
    /// L1 = L2: a single constant cap.
    Degenerate,
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CaseLabel::CaseI => "CaseI",
            CaseLabel::CaseII => "CaseII",
            CaseLabel::CaseIII => "CaseIII",
            CaseLabel::Degenerate => "Degenerate",
        };
        f.write_str(s)
    }
}

/// Classifies the contract. `b_at_t1` is the uncapped boundary at T1.
pub fn classify_case(
    params: &MarketParams,
    cap: &TwoLevelCap,
    b_at_t1: Level,
) -> Result<CaseLabel> {
    params.validate()?;
    cap.validate(params)?;
    if cap.l1 == cap.l2 {
        return Ok(CaseLabel::Degenerate);
    }
    if cap.l1 > cap.l2 {
        return match cap.continuity {
            CapContinuity::LeftContinuous => Ok(CaseLabel::CaseIII),
            CapContinuity::RightContinuous => Err(Error::Unsupported(
                "a decreasing cap must be left-continuous at T1".into(),
            )),
        };
    }
    let below = match b_at_t1 {
        Level::Infinite => true,
        Level::Finite(b) => cap.l1 < b,
    };
    Ok(if below {
        CaseLabel::CaseI
    } else {
        CaseLabel::CaseII
    })
}

/// T1 - ln((L2-K)/(L1-K))/r when non-negative.
pub fn t_zero(params: &MarketParams, cap: &TwoLevelCap) -> Option<f64> {
    let k = params.strike;
    let t0 = cap.t1 - ((cap.l2 - k) / (cap.l1 - k)).ln() / params.r;
    (t0 >= 0.0).then_some(t0)
}

/// Uniform grid on `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParams("grid needs at least one step".into()));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
            return Err(Error::InvalidParams(format!(
                "invalid grid interval [{t_start}, {t_end}]"
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Index `i` with `node(i) <= t < node(i+1)`, clamped to the grid.
    pub fn locate(&self, t: f64) -> usize {
        if t <= self.t_start {
            return 0;
        }
        let i = ((t - self.t_start) / self.step()).floor() as usize;
        let mut i = i.min(self.n_steps - 1);
        while i > 0 && self.node(i) > t {
            i -= 1;
        }
        while i + 1 < self.n_steps && self.node(i + 1) <= t {
            i += 1;
        }
        i
    }
}

/// A boundary value: a price level or +infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    Finite(f64),
    Infinite,
}

impl Level {
    pub fn is_finite(&self) -> bool {
        matches!(self, Level::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Level::Finite(x) => Some(x),
            Level::Infinite => None,
        }
    }

    /// The level as an `f64`, with +inf for `Infinite`.
    pub fn value(&self) -> f64 {
        match *self {
            Level::Finite(x) => x,
            Level::Infinite => f64::INFINITY,
        }
    }

    pub fn min(self, x: f64) -> f64 {
        self.value().min(x)
    }

    pub fn from_f64(x: f64) -> Self {
        if x.is_finite() {
            Level::Finite(x)
        } else {
            Level::Infinite
        }
    }
}

/// Exercise boundary sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub grid: TimeGrid,
    pub values: Vec<Level>,
}

impl Boundary {
    pub fn new(grid: TimeGrid, values: Vec<Level>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParams(format!(
                "boundary has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values
            .iter()
            .any(|v| matches!(v, Level::Finite(x) if !(*x > 0.0 && x.is_finite())))
        {
            return Err(Error::InvalidParams(
                "boundary values must be positive".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, level: Level) -> Self {
        Self {
            grid,
            values: vec![level; grid.len()],
        }
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.grid.t_start - 1e-12 && t <= self.grid.t_end + 1e-12
    }

    /// Boundary at time `t`. Exact at nodes; linear between finite nodes;
    /// infinite strictly between a node pair with an infinite member.
    /// Outside the grid the nearest end value is returned.
    pub fn at(&self, t: f64) -> Level {
        let g = &self.grid;
        if t <= g.t_start {
            return self.values[0];
        }
        if t >= g.t_end {
            return self.values[g.n_steps];
        }
        let i = g.locate(t);
        let t0 = g.node(i);
        if t == t0 {
            return self.values[i];
        }
        let t1 = g.node(i + 1);
        if t == t1 {
            return self.values[i + 1];
        }
        match (self.values[i], self.values[i + 1]) {
            (Level::Finite(a), Level::Finite(b)) => {
                let w = (t - t0) / (t1 - t0);
                Level::Finite(a + w * (b - a))
            }
            _ => Level::Infinite,
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.at(t).value()
    }
}

/// Per-node diagnostics of a boundary solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// (time, residual) of the integral equation at each solved node.
    pub residuals: Vec<(f64, f64)>,
    /// (time, estimated price slope just above the boundary).
    pub boundary_slope: Vec<(f64, f64)>,
    /// Nodes whose residual exceeded the tolerance.
    pub flagged: Vec<usize>,
    /// Adjacent-node jumps larger than 10·h·K.
    pub jumps: Vec<usize>,
    /// Free-form notes.
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.1.abs()).fold(0.0, f64::max)
    }
}

/// Solved boundaries and structural times.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub case: CaseLabel,
    /// Uncapped call boundary on [0, T2].
    pub uncapped: Boundary,
    /// min(B, L2) on [T1, T2].
    pub bl2: Boundary,
    /// Upper boundary on its equation grid: [0, T0] in cases I and II, [0, T1]
    /// in case III (the node at T1 holds the left limit). None when absent.
    pub bl1: Option<Boundary>,
    /// Waiting-policy boundary on [0, T1] (cases I and II).
    pub bw: Option<Boundary>,
    pub t0: Option<f64>,
    pub big_t0: f64,
    pub t1: Option<f64>,
    pub t_star: f64,
    pub t_star1: Option<f64>,
    /// min(L2, B(T1)), the boundary value at T1 itself in case III.
    pub bl1_at_t1: Option<f64>,
    pub diagnostics: Diagnostics,
}
