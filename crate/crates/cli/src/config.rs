//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use capstop_core::{CapContinuity, MarketParams, SolverConfig, TwoLevelCap};

/// Evenly spaced (S, t) mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub s: (f64, f64, usize),
    pub t: (f64, f64, usize),
}

impl Mesh {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let axis = |(a, b, n): (f64, f64, usize)| -> Vec<f64> {
            if n <= 1 {
                return vec![a];
            }
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        };
        let ts = axis(self.t);
        axis(self.s)
            .into_iter()
            .flat_map(|s| ts.iter().map(move |&t| (s, t)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub lattice_steps: usize,
    pub mc_paths: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            lattice_steps: 20_000,
            mc_paths: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub market: MarketParams,
    pub cap: TwoLevelCap,
    pub solver: SolverConfig,
    pub points: Vec<(f64, f64)>,
    pub mesh: Option<Mesh>,
    pub oracle: OracleSettings,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Query points followed by the mesh, in file order.
    pub fn queries(&self) -> Vec<(f64, f64)> {
        let mut q = self.points.clone();
        if let Some(m) = &self.mesh {
            q.extend(m.points());
        }
        q
    }
}

const KEYS: &[&str] = &[
    "market.r",
    "market.delta",
    "market.sigma",
    "market.strike",
    "cap.l1",
    "cap.l2",
    "cap.t1",
    "cap.t2",
    "cap.continuity",
    "grid.uncapped",
    "grid.two_level",
    "grid.table_points",
    "solver.assume_smooth_fit",
    "query.points",
    "query.mesh.s",
    "query.mesh.t",
    "oracle.lattice_steps",
    "oracle.mc_paths",
    "oracle.seed",
    "output.dir",
];

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            bail!("line {}: unknown key `{k}`", n + 1);
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key `{k}`", n + 1);
        }
    }
    Ok(map)
}

fn num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| anyhow!("`{key}`: {e}")))
        .transpose()
}

fn required(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    num(map, key)?.ok_or_else(|| anyhow!("missing `{key}`"))
}

fn triple(v: &str, key: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("`{key}`: expected `min, max, count`");
    }
    let a = parts[0].parse().with_context(|| format!("`{key}`"))?;
    let b = parts[1].parse().with_context(|| format!("`{key}`"))?;
    let n = parts[2].parse().with_context(|| format!("`{key}`"))?;
    Ok((a, b, n))
}

/// `S@t` pairs separated by commas or semicolons.
fn points(v: &str) -> Result<Vec<(f64, f64)>> {
    v.split([',', ';'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (s, t) = p
                .split_once('@')
                .ok_or_else(|| anyhow!("`query.points`: expected S@t, got `{p}`"))?;
            Ok((s.trim().parse()?, t.trim().parse()?))
        })
        .collect()
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let map = parse_pairs(text)?;
    let market = MarketParams::new(
        required(&map, "market.r")?,
        required(&map, "market.delta")?,
        required(&map, "market.sigma")?,
        required(&map, "market.strike")?,
    )?;
    let mut cap = TwoLevelCap::new(
        required(&map, "cap.l1")?,
        required(&map, "cap.l2")?,
        required(&map, "cap.t1")?,
        required(&map, "cap.t2")?,
    );
    if let Some(c) = map.get("cap.continuity") {
        let c = match c.as_str() {
            "left" => CapContinuity::LeftContinuous,
            "right" => CapContinuity::RightContinuous,
            other => bail!("`cap.continuity`: expected left or right, got `{other}`"),
        };
        cap = cap.with_continuity(c);
    }
    cap.validate(&market)?;
    if cap.l1 > cap.l2 && cap.continuity == CapContinuity::RightContinuous {
        bail!("a decreasing cap must be left-continuous at T1");
    }
    let mut solver = SolverConfig::default();
    if let Some(n) = num(&map, "grid.uncapped")? {
        solver.n_uncapped = n;
    }
    if let Some(n) = num(&map, "grid.two_level")? {
        solver.n_two_level = n;
    }
    if let Some(n) = num(&map, "grid.table_points")? {
        solver.table_points = n;
    }
    if let Some(b) = num(&map, "solver.assume_smooth_fit")? {
        solver.assume_smooth_fit = b;
    }
    if solver.n_uncapped < 2 || solver.n_two_level < 2 || solver.table_points < 4 {
        bail!("grid sizes too small");
    }
    let pts = map
        .get("query.points")
        .map(|v| points(v))
        .transpose()?
        .unwrap_or_default();
    let mesh = match (map.get("query.mesh.s"), map.get("query.mesh.t")) {
        (Some(s), Some(t)) => Some(Mesh {
            s: triple(s, "query.mesh.s")?,
            t: triple(t, "query.mesh.t")?,
        }),
        (None, None) => None,
        _ => bail!("`query.mesh.s` and `query.mesh.t` go together"),
    };
    let cfg = RunConfig {
        market,
        cap,
        solver,
        points: pts,
        mesh,
        oracle: OracleSettings {
            lattice_steps: num(&map, "oracle.lattice_steps")?.unwrap_or(20_000),
            mc_paths: num(&map, "oracle.mc_paths")?.unwrap_or(200_000),
        },
        out: map
            .get("output.dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| "out".into()),
        seed: num(&map, "oracle.seed")?.unwrap_or(0),
    };
    for &(s, t) in &cfg.queries() {
        if s.is_nan() || s <= 0.0 || !(0.0..=cfg.cap.t2).contains(&t) {
            bail!("query point S={s}, t={t} outside (0, inf) x [0, T2]");
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG6: &str =
        "market.r = 0.1\nmarket.delta = 0.1\nmarket.sigma = 0.3\nmarket.strike = 1\n\
        cap.l1 = 1.3\ncap.l2 = 1.39\ncap.t1 = 3\ncap.t2 = 4\n";

    #[test]
    fn minimal() {
        let c = parse(FIG6).unwrap();
        assert_eq!(c.cap.l2, 1.39);
        assert_eq!(c.solver, SolverConfig::default());
        assert!(c.queries().is_empty());
    }

    #[test]
    fn queries_and_comments() {
        let text = format!(
            "{FIG6}# grid\nquery.points = 1.2@0; 1.3@1.5 # two\nquery.mesh.s = 1, 2, 3\nquery.mesh.t = 0, 1, 2\n"
        );
        let c = parse(&text).unwrap();
        let q = c.queries();
        assert_eq!(q.len(), 8);
        assert_eq!(q[1], (1.3, 1.5));
        assert_eq!(q[7], (2.0, 1.0));
    }

    #[test]
    fn rejects() {
        assert!(parse(&format!("{FIG6}market.rho = 1\n")).is_err());
        assert!(parse(&format!("{FIG6}cap.l1 = 2\n")).is_err());
        assert!(parse(&FIG6.replace("cap.l1 = 1.3", "cap.l1 = 0.9")).is_err());
        assert!(parse(&format!("{FIG6}query.points = 1.2@5\n")).is_err());
        let wrong = FIG6.replace("cap.l1 = 1.3", "cap.l1 = 1.5");
        assert!(parse(&format!("{wrong}cap.continuity = right\n")).is_err());
    }
}
