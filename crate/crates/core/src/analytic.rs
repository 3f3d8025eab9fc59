//! Closed-form building blocks under GBM: the normal law, European calls,
//! first-hitting expectations for a constant barrier, the killed transition
//! density and the expected local time of the price at a level.

use crate::error::{Error, Result};
use crate::model::{Level, MarketParams};
use crate::quad;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934;

/// Relative tolerance of the spatial quadratures.
pub const SPACE_REL_TOL: f64 = 1e-10;
/// Absolute floor of the spatial quadratures.
pub const SPACE_ABS_TOL: f64 = 1e-13;
/// Truncation of the log-price range in standard deviations.
pub const TAIL_SD: f64 = 10.0;

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// P(S_{t+tau} > level | S_t = s). At tau = 0 the indicator, with 1/2 on the level.
pub fn prob_above(s: f64, level: f64, tau: f64, p: &MarketParams) -> f64 {
    if level.is_infinite() {
        return 0.0;
    }
    if level <= 0.0 {
        return 1.0;
    }
    if tau <= 0.0 {
        return step(s - level);
    }
    let v = p.sigma * tau.sqrt();
    norm_cdf(((s / level).ln() + p.log_drift() * tau) / v)
}

/// E[S_{t+tau} 1{S_{t+tau} > level} | S_t = s].
pub fn mean_above(s: f64, level: f64, tau: f64, p: &MarketParams) -> f64 {
    if level.is_infinite() {
        return 0.0;
    }
    if level <= 0.0 {
        return s * ((p.r - p.delta) * tau).exp();
    }
    if tau <= 0.0 {
        return s * step(s - level);
    }
    let v = p.sigma * tau.sqrt();
    let d1 = ((s / level).ln() + p.log_drift() * tau) / v + v;
    s * ((p.r - p.delta) * tau).exp() * norm_cdf(d1)
}

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// P(lo < S_{t+tau} < hi).
pub fn prob_between(s: f64, lo: Level, hi: Level, tau: f64, p: &MarketParams) -> f64 {
    let (lo, hi) = (lo.value(), hi.value());
    if !(hi > lo) {
        return 0.0;
    }
    (prob_above(s, lo, tau, p) - prob_above(s, hi, tau, p)).max(0.0)
}

/// e^{-r tau} E[(δS - rK) 1{lo < S < hi}] at horizon tau.
pub fn dividend_band(s: f64, lo: Level, hi: Level, tau: f64, p: &MarketParams) -> f64 {
    let (lo, hi) = (lo.value(), hi.value());
    if !(hi > lo) {
        return 0.0;
    }
    let m = mean_above(s, lo, tau, p) - mean_above(s, hi, tau, p);
    let q = prob_above(s, lo, tau, p) - prob_above(s, hi, tau, p);
    (-p.r * tau).exp() * (p.delta * m - p.r * p.strike * q)
}

/// Black–Scholes call with dividend yield.
pub fn european_call(s: f64, t: f64, strike: f64, maturity: f64, p: &MarketParams) -> f64 {
    let tau = maturity - t;
    if tau <= 0.0 {
        return (s - strike).max(0.0);
    }
    if strike <= 0.0 {
        return s * (-p.delta * tau).exp() - strike * (-p.r * tau).exp();
    }
    let v = p.sigma * tau.sqrt();
    let d2 = ((s / strike).ln() + p.log_drift() * tau) / v;
    let d1 = d2 + v;
    s * (-p.delta * tau).exp() * norm_cdf(d1) - strike * (-p.r * tau).exp() * norm_cdf(d2)
}

/// European call with payoff (S ∧ L - K)^+.
pub fn european_capped_call(s: f64, t: f64, cap: f64, maturity: f64, p: &MarketParams) -> f64 {
    european_call(s, t, p.strike, maturity, p) - european_call(s, t, cap, maturity, p)
}

/// Constants of the first-passage formulas for one spot/level pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingParams {
    pub lambda: f64,
    pub b: f64,
    pub f: f64,
    pub phi: f64,
    pub alpha: f64,
}

impl HittingParams {
    pub fn new(p: &MarketParams, s: f64, level: f64) -> Self {
        let b = -p.log_drift();
        let f = (b * b + 2.0 * p.r * p.sigma * p.sigma).sqrt();
        Self {
            lambda: s / level,
            b,
            f,
            phi: 0.5 * (b - f),
            alpha: 0.5 * (b + f),
        }
    }
}

/// E_t[e^{-r(τ_L - t)} 1{τ_L < T}] for the first time S reaches `level`.
pub fn discounted_hit_before(s: f64, level: f64, t: f64, maturity: f64, p: &MarketParams) -> f64 {
    if s == level {
        return 1.0;
    }
    let tau = maturity - t;
    if tau <= 0.0 {
        return 0.0;
    }
    let h = HittingParams::new(p, s, level);
    let s2 = p.sigma * p.sigma;
    let vt = p.sigma * tau.sqrt();
    let ln_l = h.lambda.ln();
    let d0 = (ln_l - h.f * tau) / vt;
    let shift = 2.0 * h.f * tau.sqrt() / p.sigma;
    let e_phi = 2.0 * h.phi / s2 * ln_l;
    let e_alpha = 2.0 * h.alpha / s2 * ln_l;
    let v = if s < level {
        term(e_phi, d0) + term(e_alpha, d0 + shift)
    } else {
        term(e_phi, -d0) + term(e_alpha, -d0 - shift)
    };
    v.clamp(0.0, 1.0)
}

// exp(e) * Phi(d), avoiding inf * 0.
fn term(e: f64, d: f64) -> f64 {
    let c = norm_cdf(d);
    if c == 0.0 {
        0.0
    } else {
        (e + c.ln()).exp()
    }
}

/// Density in x of S_T on the event that `level` was not reached on [t, T].
pub fn killed_density(x: f64, s: f64, level: f64, tau: f64, p: &MarketParams) -> f64 {
    if tau <= 0.0 || x <= 0.0 {
        return 0.0;
    }
    if (s < level) != (x < level) {
        return 0.0;
    }
    killed_density_log(x.ln(), s, level, tau, p) / x
}

// Density of ln S_T on the surviving event, as a function of y = ln x.
fn killed_density_log(y: f64, s: f64, level: f64, tau: f64, p: &MarketParams) -> f64 {
    let vt = p.sigma * tau.sqrt();
    let ln_lambda = (s / level).ln();
    let b = -p.log_drift();
    let lx = y - level.ln();
    let dm = (-ln_lambda + lx + b * tau) / vt;
    let dp = (ln_lambda + lx + b * tau) / vt;
    let expo = (1.0 - 2.0 * (p.r - p.delta) / (p.sigma * p.sigma)) * ln_lambda;
    let image = (expo - 0.5 * dp * dp).exp() * INV_SQRT_2PI;
    ((norm_pdf(dm) - image) / vt).max(0.0)
}

/// Integration window in y = ln x for the surviving mass of a path from `s`.
pub fn killed_window(s: f64, level: f64, tau: f64, p: &MarketParams) -> (f64, f64) {
    let vt = p.sigma * tau.sqrt();
    let centre = s.ln() + p.log_drift() * tau;
    let (lo, hi) = (centre - TAIL_SD * vt, centre + TAIL_SD * vt);
    let l = level.ln();
    if s < level {
        (lo.min(l), hi.min(l))
    } else {
        (lo.max(l), hi.max(l))
    }
}

/// E_t[e^{-r(T-t)} G(S_T) 1{τ_L >= T}] with its quadrature error estimate.
/// `breaks` are prices at which `g` has kinks.
pub fn killed_integral<G: Fn(f64) -> f64>(
    s: f64,
    level: f64,
    t: f64,
    maturity: f64,
    p: &MarketParams,
    g: G,
    breaks: &[f64],
) -> quad::Integral {
    let tau = maturity - t;
    if s == level || tau <= 0.0 {
        let v = if tau <= 0.0 && s != level { g(s) } else { 0.0 };
        return quad::Integral {
            value: v,
            abs_err: 0.0,
            converged: true,
        };
    }
    let (ya, yb) = killed_window(s, level, tau, p);
    let ybreaks: Vec<f64> = breaks
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x.ln())
        .collect();
    let disc = (-p.r * tau).exp();
    let mut r = quad::integrate(
        |y| g(y.exp()) * killed_density_log(y, s, level, tau, p),
        ya,
        yb,
        &ybreaks,
        SPACE_ABS_TOL,
        SPACE_REL_TOL,
    );
    r.value *= disc;
    r.abs_err *= disc;
    r
}

/// E_t[e^{-r(T-t)} G(S_T) 1{τ_L >= T}]. Integration over (0, L) when S < L
/// and over (L, ∞) when S > L; zero at S = L.
pub fn killed_expectation<G: Fn(f64) -> f64>(
    s: f64,
    level: f64,
    t: f64,
    maturity: f64,
    p: &MarketParams,
    g: G,
    breaks: &[f64],
) -> Result<f64> {
    let r = killed_integral(s, level, t, maturity, p, g, breaks);
    if r.converged {
        Ok(r.value)
    } else {
        Err(Error::Quadrature {
            achieved: r.abs_err,
            requested: SPACE_REL_TOL * r.value.abs(),
        })
    }
}

/// e^{-r(T-t)} E_t[G(S_T)] by quadrature in log-price.
pub fn european_expectation<G: Fn(f64) -> f64>(
    s: f64,
    t: f64,
    maturity: f64,
    p: &MarketParams,
    g: G,
    breaks: &[f64],
) -> f64 {
    let tau = maturity - t;
    if tau <= 0.0 {
        return g(s);
    }
    let vt = p.sigma * tau.sqrt();
    let centre = s.ln() + p.log_drift() * tau;
    let ybreaks: Vec<f64> = breaks
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x.ln())
        .collect();
    let r = quad::integrate(
        |y| {
            let z = (y - centre) / vt;
            g(y.exp()) * norm_pdf(z) / vt
        },
        centre - TAIL_SD * vt,
        centre + TAIL_SD * vt,
        &ybreaks,
        SPACE_ABS_TOL,
        SPACE_REL_TOL,
    );
    (-p.r * tau).exp() * r.value
}

/// d/du E_t[ℓ_u^level]: the expected local time density of S at `level`.
pub fn expected_local_time_weight(s: f64, level: f64, t: f64, u: f64, p: &MarketParams) -> f64 {
    let tau = u - t;
    if tau <= 0.0 || !level.is_finite() {
        return 0.0;
    }
    let st = tau.sqrt();
    let z = -((level / s).ln() - p.log_drift() * tau) / (p.sigma * st);
    let w = norm_pdf(z) * p.sigma * level / st;
    if w < 1e-300 {
        0.0
    } else {
        w
    }
}

/// Price of the capped call exercised automatically when S first reaches `cap`.
pub fn auto_exercise_price(s: f64, t: f64, cap: f64, maturity: f64, p: &MarketParams) -> f64 {
    let k = p.strike;
    if s >= cap {
        return cap - k;
    }
    if t >= maturity {
        return (s - k).max(0.0);
    }
    let hit = discounted_hit_before(s, cap, t, maturity, p);
    let killed = killed_integral(s, cap, t, maturity, p, |x| (x - k).max(0.0), &[k]).value;
    (cap - k) * hit + killed
}
