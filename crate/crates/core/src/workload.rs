//! Traffic generation: message-size CDFs, Poisson all-to-all arrivals and
//! incast events.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::endhost::FlowClass;
use crate::engine::{SimRng, SimTime};
use crate::error::{Error, Result};
use crate::net::Ip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CdfMode {
    /// Linear interpolation between points.
    #[default]
    Interpolate,
    /// Sizes are exactly the listed points.
    Step,
}

/// Empirical message-size distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeCdf {
    points: Vec<(u64, f64)>,
    mode: CdfMode,
}

impl SizeCdf {
    /// Parse `size cum_prob` rows. `#` starts a comment.
    pub fn parse(text: &str, origin: &Path, mode: CdfMode) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut points: Vec<(u64, f64)> = Vec::new();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            last_line = line;
            let mut it = body.split_whitespace();
            let (Some(s), Some(p), None) = (it.next(), it.next(), it.next()) else {
                return Err(err(line, format!("expected `size prob`, got `{body}`")));
            };
            let size: u64 = s
                .parse()
                .map_err(|_| err(line, format!("bad size `{s}`")))?;
            let prob: f64 = p
                .parse()
                .map_err(|_| err(line, format!("bad probability `{p}`")))?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(err(line, format!("probability {prob} outside [0, 1]")));
            }
            if let Some(&(ps, pp)) = points.last() {
                if size <= ps {
                    return Err(err(line, format!("size {size} not above previous {ps}")));
                }
                if prob <= pp {
                    return Err(err(line, format!("probability {prob} not above previous {pp}")));
                }
            }
            points.push((size, prob));
        }
        match points.last() {
            None => Err(err(1, "no data rows".into())),
            Some(&(_, p)) if (p - 1.0).abs() > 1e-9 => {
                Err(err(last_line, format!("last probability is {p}, expected 1.0")))
            }
            _ => Ok(Self { points, mode }),
        }
    }

    pub fn load(path: &Path, mode: CdfMode) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, mode)
    }

    /// One of the bundled distributions: `hadoop`, `rpc` or `websearch`.
    pub fn bundled(name: &str, mode: CdfMode) -> Option<Self> {
        let text = match name {
            "hadoop" => include_str!("../data/hadoop.cdf"),
            "rpc" => include_str!("../data/rpc.cdf"),
            "websearch" => include_str!("../data/websearch.cdf"),
            _ => return None,
        };
        Some(Self::parse(text, &PathBuf::from(format!("<{name}>")), mode).expect("bundled CDF"))
    }

    /// Single fixed size.
    pub fn constant(size: u64) -> Self {
        Self {
            points: vec![(size, 1.0)],
            mode: CdfMode::Step,
        }
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn mode(&self) -> CdfMode {
        self.mode
    }

    pub fn mean(&self) -> f64 {
        let mut mean = self.points[0].0 as f64 * self.points[0].1;
        for w in self.points.windows(2) {
            let ((s0, p0), (s1, p1)) = (w[0], w[1]);
            let size = match self.mode {
                CdfMode::Step => s1 as f64,
                CdfMode::Interpolate => (s0 + s1) as f64 / 2.0,
            };
            mean += (p1 - p0) * size;
        }
        mean
    }

    /// Inverse-transform sample for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> u64 {
        let i = self.points.partition_point(|&(_, p)| p < u);
        if i == 0 {
            return self.points[0].0;
        }
        let i = i.min(self.points.len() - 1);
        let (s1, p1) = self.points[i];
        match self.mode {
            CdfMode::Step => s1,
            CdfMode::Interpolate => {
                let (s0, p0) = self.points[i - 1];
                let f = ((u - p0) / (p1 - p0)).clamp(0.0, 1.0);
                (s0 as f64 + f * (s1 - s0) as f64).round() as u64
            }
        }
    }

    /// Model CDF at `size`, consistent with `quantile`.
    pub fn cdf(&self, size: f64) -> f64 {
        let pts = &self.points;
        if size < pts[0].0 as f64 {
            return 0.0;
        }
        let i = pts.partition_point(|&(s, _)| (s as f64) <= size);
        if i >= pts.len() {
            return 1.0;
        }
        let (s0, p0) = pts[i - 1];
        match self.mode {
            CdfMode::Step => p0,
            CdfMode::Interpolate => {
                let (s1, p1) = pts[i];
                p0 + (p1 - p0) * (size - s0 as f64) / (s1 - s0) as f64
            }
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> u64 {
        self.quantile(rng.gen::<f64>())
    }
}

/// A flow to be created at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub src: Ip,
    pub dst: Ip,
    pub size: u64,
    pub start: SimTime,
    pub class: FlowClass,
}

/// Per-host Poisson arrivals with uniform random destinations.
///
/// The rate is `load * host_bps / (8 * mean)` messages per second per host.
pub fn poisson_all_to_all(
    cdf: &SizeCdf,
    load: f64,
    hosts: &[Ip],
    host_bps: u64,
    t_start: SimTime,
    t_end: SimTime,
    rng: &mut SimRng,
) -> Vec<FlowSpec> {
    let mut out = Vec::new();
    if load <= 0.0 || hosts.len() < 2 {
        return out;
    }
    let lambda_per_ns = load * host_bps as f64 / (8.0 * cdf.mean()) / 1e9;
    let exp = Exp::new(lambda_per_ns).expect("positive rate");
    for &src in hosts {
        let mut t = t_start.as_nanos() as f64;
        loop {
            t += exp.sample(rng);
            if t >= t_end.as_nanos() as f64 {
                break;
            }
            let dst = loop {
                let d = hosts[rng.gen_range(0..hosts.len())];
                if d != src {
                    break d;
                }
            };
            out.push(FlowSpec {
                src,
                dst,
                size: cdf.sample(rng),
                start: SimTime(t as u64),
                class: FlowClass::Background,
            });
        }
    }
    out.sort_by_key(|f| (f.start, f.src));
    out
}

/// `degree` flows of `size` bytes to `victim`, each starting uniformly in
/// `[at, at + window)`. Senders are drawn without replacement from
/// `candidates` and reused round-robin if there are fewer than `degree`.
pub fn spawn_incast(
    victim: Ip,
    candidates: &[Ip],
    degree: u32,
    size: u64,
    at: SimTime,
    window: SimTime,
    rng: &mut SimRng,
) -> Vec<FlowSpec> {
    let mut pool: Vec<Ip> = candidates.iter().copied().filter(|&h| h != victim).collect();
    if pool.is_empty() {
        return Vec::new();
    }
    pool.shuffle(rng);
    (0..degree as usize)
        .map(|i| {
            let jitter = if window == SimTime::ZERO {
                0
            } else {
                rng.gen_range(0..window.as_nanos())
            };
            FlowSpec {
                src: pool[i % pool.len()],
                dst: victim,
                size,
                start: at + SimTime(jitter),
                class: FlowClass::Incast,
            }
        })
        .collect()
}

/// Time between incast events that yields `load` of the aggregate host
/// edge capacity.
pub fn incast_period(degree: u32, size: u64, load: f64, n_hosts: u32, host_bps: u64) -> SimTime {
    let bits = degree as f64 * size as f64 * 8.0;
    let capacity = load * n_hosts as f64 * host_bps as f64;
    SimTime((bits / capacity * 1e9).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng_from_seed;

    fn parse(text: &str, mode: CdfMode) -> Result<SizeCdf> {
        SizeCdf::parse(text, Path::new("t.cdf"), mode)
    }

    #[test]
    fn two_point_step_mean() {
        let c = parse("1000 0.5\n10000 1.0\n", CdfMode::Step).unwrap();
        assert_eq!(c.mean(), 5500.0);
        let c = parse("1000 0.5\n10000 1.0\n", CdfMode::Interpolate).unwrap();
        assert_eq!(c.mean(), 0.5 * 1000.0 + 0.5 * 5500.0);
    }

    #[test]
    fn single_point_is_constant() {
        let c = parse("# one size\n4000 1.0", CdfMode::Interpolate).unwrap();
        let mut rng = rng_from_seed(1);
        assert!((0..100).all(|_| c.sample(&mut rng) == 4000));
    }

    #[test]
    fn unsorted_rows_report_line() {
        let e = parse("# hdr\n1000 0.5\n500 1.0\n", CdfMode::Step).unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
        assert!(parse("1000 0.5\n2000 0.4\n", CdfMode::Step).is_err());
        assert!(parse("1000 0.5\n", CdfMode::Step).is_err());
        assert!(parse("", CdfMode::Step).is_err());
        assert!(parse("abc 1.0", CdfMode::Step).is_err());
    }

    #[test]
    fn bundled_cdfs_parse() {
        for n in ["hadoop", "rpc", "websearch"] {
            let c = SizeCdf::bundled(n, CdfMode::Interpolate).unwrap();
            assert!(c.mean() > 0.0);
        }
        assert!(SizeCdf::bundled("nope", CdfMode::Step).is_none());
    }

    #[test]
    fn poisson_rate_matches_formula() {
        let c = parse("1000 0.5\n10000 1.0\n", CdfMode::Step).unwrap();
        // 0.5 * 100e9 / (8 * 5500) = 1.136e6 msgs/s per host.
        let lambda: f64 = 0.5 * 100e9 / (8.0 * 5500.0);
        assert!((lambda - 1.136e6).abs() < 1e3);
        let hosts: Vec<Ip> = (0..4).collect();
        let mut rng = rng_from_seed(7);
        let t_end = SimTime::from_millis(20);
        let flows = poisson_all_to_all(&c, 0.5, &hosts, 100_000_000_000, SimTime::ZERO, t_end, &mut rng);
        let per_host = flows.len() as f64 / 4.0 / 0.020;
        assert!((per_host / lambda - 1.0).abs() < 0.02, "{per_host}");
        assert!(flows.iter().all(|f| f.src != f.dst));
    }

    #[test]
    fn poisson_zero_load_and_determinism() {
        let c = SizeCdf::constant(1000);
        let hosts: Vec<Ip> = (0..4).collect();
        let mut rng = rng_from_seed(7);
        let t = SimTime::from_millis(1);
        assert!(poisson_all_to_all(&c, 0.0, &hosts, 100_000_000_000, SimTime::ZERO, t, &mut rng).is_empty());
        let a = poisson_all_to_all(&c, 0.3, &hosts, 100_000_000_000, SimTime::ZERO, t, &mut rng_from_seed(3));
        let b = poisson_all_to_all(&c, 0.3, &hosts, 100_000_000_000, SimTime::ZERO, t, &mut rng_from_seed(3));
        assert_eq!(a, b);
    }

    #[test]
    fn incast_window() {
        let senders: Vec<Ip> = (0..64).collect();
        let mut rng = rng_from_seed(9);
        let at = SimTime::from_micros(100);
        let w = SimTime::from_micros(50);
        let f = spawn_incast(64, &senders, 63, 250_000, at, w, &mut rng);
        assert_eq!(f.len(), 63);
        assert!(f.iter().all(|x| x.start >= at && x.start < at + w));
        let mut srcs: Vec<Ip> = f.iter().map(|x| x.src).collect();
        srcs.sort();
        srcs.dedup();
        assert_eq!(srcs.len(), 63);
        let f = spawn_incast(64, &senders, 8, 1000, at, SimTime::ZERO, &mut rng);
        assert!(f.iter().all(|x| x.start == at));
        assert_eq!(spawn_incast(64, &senders, 1, 1000, at, w, &mut rng).len(), 1);
    }

    #[test]
    fn incast_period_normalizes_to_edge_capacity() {
        // 63 * 250KB at 8% of 64 x 100G.
        let p = incast_period(63, 250_000, 0.08, 64, 100_000_000_000);
        assert_eq!(p, SimTime(246_094));
    }
}
