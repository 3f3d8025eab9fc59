//! Piecewise cubic Hermite tables in log-price, used to cache expensive
//! value functions that serve as terminal payoffs.

use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    lo: f64,
    hi: f64,
    /// ln x at the nodes, uniform.
    z: Vec<f64>,
    y: Vec<f64>,
    /// dy/dz at the nodes.
    d: Vec<f64>,
}

impl Segment {
    fn eval(&self, x: f64) -> f64 {
        let z = x.ln();
        let n = self.z.len() - 1;
        let h = self.z[1] - self.z[0];
        let u = ((z - self.z[0]) / h).clamp(0.0, n as f64);
        let i = (u.floor() as usize).min(n - 1);
        let s = u - i as f64;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// A function of price tabulated on log-uniform nodes, one segment per
/// interval between consecutive knots so kinks sit on segment ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    segments: Vec<Segment>,
}

impl Table {
    /// Tabulates `f` on `[knots[0], knots[last]]`; knots must be positive and
    /// increasing. Each segment gets about `points` nodes.
    pub fn build<F>(exec: Exec, knots: &[f64], points: usize, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        assert!(knots.len() >= 2 && knots[0] > 0.0);
        let points = points.max(4);
        let mut jobs = Vec::new();
        for (k, w) in knots.windows(2).enumerate() {
            assert!(w[1] > w[0], "knots must increase");
            let (za, zb) = (w[0].ln(), w[1].ln());
            for i in 0..=points {
                let z = if i == points {
                    zb
                } else {
                    za + (zb - za) * i as f64 / points as f64
                };
                jobs.push((k, z));
            }
        }
        let ys = par::map(exec, jobs.len(), |j| {
            let (k, z) = jobs[j];
            // Hit the knots exactly so the ends carry the intended values.
            let x = if z == knots[k].ln() {
                knots[k]
            } else if z == knots[k + 1].ln() {
                knots[k + 1]
            } else {
                z.exp()
            };
            f(x)
        });
        let mut segments = Vec::with_capacity(knots.len() - 1);
        let m = points + 1;
        for (k, w) in knots.windows(2).enumerate() {
            let z: Vec<f64> = jobs[k * m..(k + 1) * m].iter().map(|j| j.1).collect();
            let y = ys[k * m..(k + 1) * m].to_vec();
            let d = slopes(&z, &y);
            segments.push(Segment {
                lo: w[0],
                hi: w[1],
                z,
                y,
                d,
            });
        }
        Self { segments }
    }

    pub fn lo(&self) -> f64 {
        self.segments[0].lo
    }

    pub fn hi(&self) -> f64 {
        self.segments[self.segments.len() - 1].hi
    }

    /// Knots including both ends.
    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.segments.iter().map(|s| s.lo).collect();
        k.push(self.hi());
        k
    }

    /// Value at `x`, held constant outside the tabulated range.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo(), self.hi());
        for s in &self.segments {
            if x < s.hi {
                return s.eval(x);
            }
        }
        let last = &self.segments[self.segments.len() - 1];
        *last.y.last().expect("non-empty")
    }
}

fn slopes(z: &[f64], y: &[f64]) -> Vec<f64> {
    let n = z.len();
    let h = z[1] - z[0];
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (y[i + 1] - y[i - 1]) / (2.0 * h);
    }
    if n >= 3 {
        d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
        d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
    } else {
        d[0] = (y[1] - y[0]) / h;
        d[n - 1] = d[0];
    }
    d
}
