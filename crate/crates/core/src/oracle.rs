//! Independent validators: a trinomial lattice for the capped American call
//! (any cap schedule, both conventions at the switch date) and a Monte Carlo
//! estimator of the first-passage expectations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{MarketParams, TwoLevelCap};
use crate::par::{self, Exec};

/// Lattice settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeConfig {
    /// Time steps on [t, T2].
    pub n_steps: usize,
    /// Force a layer on T1. Always honoured; kept for explicitness.
    pub snap_t1: bool,
    /// Record exercise runs per layer.
    pub keep_frontier: bool,
    /// Exercise only allowed at layer times >= this value.
    pub exercise_from: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            n_steps: 20_000,
            snap_t1: true,
            keep_frontier: false,
            exercise_from: f64::NEG_INFINITY,
        }
    }
}

impl LatticeConfig {
    pub fn with_steps(n_steps: usize) -> Self {
        Self {
            n_steps,
            ..Self::default()
        }
    }
}

/// Exercise runs of one lattice layer, as price intervals. An upper end of
/// +inf means the run reaches the top of the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRuns {
    pub time: f64,
    pub runs: Vec<(f64, f64)>,
}

/// Per-layer summary of the lattice exercise region.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrontierEstimate {
    pub layers: Vec<LayerRuns>,
    /// Lowest node price in the lattice window; runs starting there are rays downward.
    pub floor: f64,
}

impl FrontierEstimate {
    /// Layers with time in `[a, b]`.
    pub fn between(&self, a: f64, b: f64) -> impl Iterator<Item = &LayerRuns> {
        self.layers
            .iter()
            .filter(move |l| l.time >= a && l.time <= b)
    }

    /// Lowest exercising price per layer (None when the layer has no exercise).
    pub fn lowest(&self) -> Vec<(f64, Option<f64>)> {
        self.layers
            .iter()
            .map(|l| (l.time, l.runs.first().map(|r| r.0)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeRun {
    pub prices: Vec<f64>,
    pub frontier: Option<FrontierEstimate>,
}

/// Cap schedule used by the lattice. Levels may be +inf (uncapped).
fn cap_at(cap: &TwoLevelCap, time: f64) -> f64 {
    cap.level_at(time)
}

/// Prices the capped American call at time `t` for every spot in `spots`.
pub fn lattice_prices(
    spots: &[f64],
    t: f64,
    params: &MarketParams,
    cap: &TwoLevelCap,
    config: &LatticeConfig,
) -> Result<LatticeRun> {
    params.validate()?;
    let t2 = cap.t2;
    if !(t < t2) {
        return Err(Error::Lattice(format!(
            "valuation time {t} not before maturity {t2}"
        )));
    }
    if spots.is_empty() || spots.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Lattice("spots must be positive".into()));
    }
    let n = config.n_steps.max(2);
    // Segment layout: a layer lands exactly on T1 when t < T1.
    let (n1, dt1, dt2) = if t < cap.t1 {
        let frac = (cap.t1 - t) / (t2 - t);
        let n1 = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
        (
            n1,
            (cap.t1 - t) / n1 as f64,
            (t2 - cap.t1) / (n - n1) as f64,
        )
    } else {
        (0, 0.0, (t2 - t) / n as f64)
    };
    let layer_time = |m: usize| -> f64 {
        if m == n {
            t2
        } else if m < n1 {
            t + m as f64 * dt1
        } else if m == n1 && n1 > 0 {
            cap.t1
        } else {
            cap.t1.max(t) + (m - n1) as f64 * dt2
        }
    };
    let dt_max = dt1.max(dt2);
    let sig = params.sigma;
    let nu = params.log_drift();
    let mut dx = sig * (3.0 * dt_max).sqrt();
    // Align the cap levels with nodes.
    let anchor = if cap.l1.is_finite() {
        cap.l1.ln()
    } else if cap.l2.is_finite() {
        cap.l2.ln()
    } else {
        params.strike.ln()
    };
    if cap.l1.is_finite() && cap.l2.is_finite() && cap.l1 != cap.l2 {
        let gap = (cap.l2 / cap.l1).ln().abs();
        let m = (gap / dx).round();
        // Only align both levels when the branch probabilities stay valid.
        if m >= 1.0 && (gap / m).powi(2) >= 1.05 * (sig * sig * dt_max + nu * nu * dt_max * dt_max)
        {
            dx = gap / m;
        }
    }
    let probs = |dt: f64| -> Result<(f64, f64, f64)> {
        let a = (sig * sig * dt + nu * nu * dt * dt) / (dx * dx);
        let b = nu * dt / dx;
        let pu = 0.5 * (a + b);
        let pd = 0.5 * (a - b);
        let pm = 1.0 - a;
        if pu < 0.0 || pd < 0.0 || pm < 0.0 {
            return Err(Error::Lattice(format!(
                "negative branch probability (pu={pu:.3e}, pm={pm:.3e}, pd={pd:.3e}); increase n_steps"
            )));
        }
        Ok((pu, pm, pd))
    };
    let (pu1, pm1, pd1) = if n1 > 0 { probs(dt1)? } else { (0.0, 0.0, 0.0) };
    let (pu2, pm2, pd2) = probs(dt2)?;
    let disc1 = (-params.r * dt1).exp();
    let disc2 = (-params.r * dt2).exp();

    // Node window: every query spot plus a 9 s.d. margin.
    let lo_q = spots.iter().fold(f64::INFINITY, |a, &s| a.min(s.ln()));
    let hi_q = spots.iter().fold(f64::NEG_INFINITY, |a, &s| a.max(s.ln()));
    let margin = 9.0 * sig * (t2 - t).sqrt() + nu.abs() * (t2 - t) + 3.0 * dx;
    let j_lo = ((lo_q - margin - anchor) / dx).floor() as i64;
    let j_hi = ((hi_q + margin - anchor) / dx).ceil() as i64;
    let width = (j_hi - j_lo + 1) as usize;
    let prices: Vec<f64> = (0..width)
        .map(|k| (anchor + (j_lo + k as i64) as f64 * dx).exp())
        .collect();

    let k_strike = params.strike;
    let payoff = |s: f64, level: f64| (s.min(level) - k_strike).max(0.0);
    let mut v: Vec<f64> = {
        let lv = cap_at(cap, t2);
        prices.iter().map(|&s| payoff(s, lv)).collect()
    };
    let mut next = vec![0.0; width];
    let mut flags = vec![false; width];
    let mut frontier = config.keep_frontier.then(|| FrontierEstimate {
        layers: Vec::with_capacity(n + 1),
        floor: prices[0],
    });
    let record = |fr: &mut Option<FrontierEstimate>, time: f64, flags: &[bool]| {
        if let Some(fr) = fr.as_mut() {
            let mut runs = Vec::new();
            let mut k = 0;
            while k < width {
                if flags[k] {
                    let start = k;
                    while k < width && flags[k] {
                        k += 1;
                    }
                    let hi = if k == width {
                        f64::INFINITY
                    } else {
                        prices[k - 1]
                    };
                    runs.push((prices[start], hi));
                } else {
                    k += 1;
                }
            }
            fr.layers.push(LayerRuns { time, runs });
        }
    };
    if frontier.is_some() {
        let lv = cap_at(cap, t2);
        for (f, &s) in flags.iter_mut().zip(&prices) {
            *f = payoff(s, lv) > 0.0;
        }
        record(&mut frontier, t2, &flags);
    }

    for m in (0..n).rev() {
        let (pu, pm, pd, disc) = if m < n1 {
            (pu1, pm1, pd1, disc1)
        } else {
            (pu2, pm2, pd2, disc2)
        };
        let time = layer_time(m);
        let lv = cap_at(cap, time);
        let can_exercise = time >= config.exercise_from;
        for k in 1..width - 1 {
            next[k] = disc * (pu * v[k + 1] + pm * v[k] + pd * v[k - 1]);
        }
        next[0] = 2.0 * next[1] - next[2];
        next[width - 1] = 2.0 * next[width - 2] - next[width - 3];
        for k in 0..width {
            let ex = if can_exercise {
                payoff(prices[k], lv)
            } else {
                0.0
            };
            let ex_now = can_exercise && ex > 0.0 && ex >= next[k];
            if ex_now {
                next[k] = ex;
            }
            flags[k] = ex_now;
        }
        std::mem::swap(&mut v, &mut next);
        record(&mut frontier, time, &flags);
    }
    if let Some(fr) = frontier.as_mut() {
        fr.layers.reverse();
    }

    let out = spots
        .iter()
        .map(|&s| {
            let x = (s.ln() - anchor) / dx - j_lo as f64;
            let k = (x.round() as usize).clamp(1, width - 2);
            let u = x - k as f64;
            // Quadratic through k-1, k, k+1.
            let (a, b, c) = (v[k - 1], v[k], v[k + 1]);
            b + 0.5 * u * (c - a) + 0.5 * u * u * (c - 2.0 * b + a)
        })
        .collect();
    Ok(LatticeRun {
        prices: out,
        frontier,
    })
}

/// Single-spot convenience wrapper.
pub fn lattice_price(
    s: f64,
    t: f64,
    params: &MarketParams,
    cap: &TwoLevelCap,
    config: &LatticeConfig,
) -> Result<f64> {
    Ok(lattice_prices(&[s], t, params, cap, config)?.prices[0])
}

/// Runs one lattice per query time; each entry is `(t, spots)`.
pub fn lattice_batch(
    exec: Exec,
    queries: &[(f64, Vec<f64>)],
    params: &MarketParams,
    cap: &TwoLevelCap,
    config: &LatticeConfig,
) -> Result<Vec<Vec<f64>>> {
    par::map_slice(exec, queries, |(t, spots)| {
        lattice_prices(spots, *t, params, cap, config).map(|r| r.prices)
    })
    .into_iter()
    .collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo settings for first-passage expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Exact GBM steps per path.
    pub coarse_steps: usize,
    /// Maximal Brownian-bridge bisection depth below a coarse step.
    pub max_depth: u32,
    pub exec: Exec,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 1_000_000,
            seed: 20_240_601,
            coarse_steps: 16,
            max_depth: 12,
            exec: Exec::Parallel,
        }
    }
}

/// Estimates of E[e^{-r(τ-t)} 1{τ<T}] and E[e^{-r(T-t)} G(S_T) 1{τ>=T}].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingEstimates {
    pub hit: McEstimate,
    pub killed: McEstimate,
}

struct Walker<'a> {
    rng: &'a mut ChaCha8Rng,
    a: f64,
    var_rate: f64,
    max_depth: u32,
}

impl Walker<'_> {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn straddles(&self, x0: f64, x1: f64) -> bool {
        (x0 - self.a) * (x1 - self.a) <= 0.0
    }

    fn cross_prob(&self, x0: f64, x1: f64, dt: f64) -> f64 {
        (-2.0 * (x0 - self.a) * (x1 - self.a) / (self.var_rate * dt)).exp()
    }

    fn midpoint(&mut self, x0: f64, x1: f64, dt: f64) -> f64 {
        0.5 * (x0 + x1) + (0.25 * self.var_rate * dt).sqrt() * self.normal()
    }

    /// First passage time in (t0, t0+dt] given endpoints on the same side.
    fn search(&mut self, x0: f64, x1: f64, t0: f64, dt: f64, depth: u32) -> Option<f64> {
        let p = self.cross_prob(x0, x1, dt);
        if p < 1e-14 {
            return None;
        }
        if depth >= self.max_depth {
            let u: f64 = self.rng.random();
            return (u < p).then_some(t0 + 0.5 * dt);
        }
        let xm = self.midpoint(x0, x1, dt);
        let h = 0.5 * dt;
        if self.straddles(x0, xm) {
            return Some(self.locate(x0, xm, t0, h, depth + 1));
        }
        if let Some(tau) = self.search(x0, xm, t0, h, depth + 1) {
            return Some(tau);
        }
        if self.straddles(xm, x1) {
            return Some(self.locate(xm, x1, t0 + h, h, depth + 1));
        }
        self.search(xm, x1, t0 + h, h, depth + 1)
    }

    /// First passage time given the endpoints straddle the barrier.
    fn locate(&mut self, x0: f64, x1: f64, t0: f64, dt: f64, depth: u32) -> f64 {
        if x0 == self.a {
            return t0;
        }
        if depth >= self.max_depth {
            return t0 + 0.5 * dt;
        }
        let xm = self.midpoint(x0, x1, dt);
        let h = 0.5 * dt;
        if self.straddles(x0, xm) {
            return self.locate(x0, xm, t0, h, depth + 1);
        }
        if let Some(tau) = self.search(x0, xm, t0, h, depth + 1) {
            return tau;
        }
        self.locate(xm, x1, t0 + h, h, depth + 1)
    }
}

/// Monte Carlo estimates of the two first-passage expectations for the
/// barrier `level`, with exact GBM steps and Brownian-bridge refinement.
#[allow(clippy::too_many_arguments)]
pub fn mc_hitting_expectations<G>(
    s: f64,
    level: f64,
    t: f64,
    maturity: f64,
    params: &MarketParams,
    g: G,
    config: &McConfig,
) -> HittingEstimates
where
    G: Fn(f64) -> f64 + Sync + Send,
{
    let tau = maturity - t;
    if s == level {
        return HittingEstimates {
            hit: McEstimate {
                mean: 1.0,
                std_err: 0.0,
            },
            killed: McEstimate {
                mean: 0.0,
                std_err: 0.0,
            },
        };
    }
    let a = level.ln();
    let x_start = s.ln();
    let steps = config.coarse_steps.max(1);
    let dt = tau / steps as f64;
    let mu = params.log_drift();
    let var_rate = params.sigma * params.sigma;
    let sd = params.sigma * dt.sqrt();
    let r = params.r;
    let disc_t = (-r * tau).exp();

    const BLOCK: usize = 4096;
    let n = config.n_paths;
    let blocks = n.div_ceil(BLOCK);
    let sums = par::map(config.exec, blocks, |bk| {
        let mut acc = [0.0f64; 4];
        let start = bk * BLOCK;
        let end = (start + BLOCK).min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for path in start..end {
            rng.set_stream(path as u64);
            rng.set_word_pos(0);
            let mut w = Walker {
                rng: &mut rng,
                a,
                var_rate,
                max_depth: config.max_depth,
            };
            let mut x = x_start;
            let mut hit_time = None;
            for k in 0..steps {
                let x1 = x + mu * dt + sd * w.normal();
                let t0 = k as f64 * dt;
                let found = if w.straddles(x, x1) {
                    Some(w.locate(x, x1, t0, dt, 0))
                } else {
                    w.search(x, x1, t0, dt, 0)
                };
                if found.is_some() {
                    hit_time = found;
                    break;
                }
                x = x1;
            }
            let (h, kv) = match hit_time {
                Some(tt) => ((-r * tt).exp(), 0.0),
                None => (0.0, disc_t * g(x.exp())),
            };
            acc[0] += h;
            acc[1] += h * h;
            acc[2] += kv;
            acc[3] += kv * kv;
        }
        acc
    });
    let mut tot = [0.0f64; 4];
    for b in &sums {
        for i in 0..4 {
            tot[i] += b[i];
        }
    }
    let nf = n as f64;
    let est = |s1: f64, s2: f64| {
        let mean = s1 / nf;
        let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
        McEstimate {
            mean,
            std_err: (var / nf).sqrt(),
        }
    };
    HittingEstimates {
        hit: est(tot[0], tot[1]),
        killed: est(tot[2], tot[3]),
    }
}
