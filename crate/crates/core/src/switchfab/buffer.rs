use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Exact non-negative rational used for the dynamic-threshold factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "ratio denominator must be positive");
        Self { num, den }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self * x)`
    pub fn mul_floor(self, x: u64) -> u64 {
        (x as u128 * self.num as u128 / self.den as u128) as u64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let parse = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad ratio {s:?}: {e}"));
        match s.split_once('/') {
            Some((n, d)) => {
                let d = parse(d)?;
                if d == 0 {
                    return Err(format!("bad ratio {s:?}: zero denominator"));
                }
                Ok(Ratio::new(parse(n)?, d))
            }
            None => Ok(Ratio::new(parse(s)?, 1)),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Ratio::new(n, 1)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Shared packet buffer with dynamic-threshold admission.
///
/// A queue may grow only while its depth, including the candidate packet,
/// stays within `alpha` times the free space left after admitting it. With a
/// single active queue this caps the queue at `alpha / (1 + alpha)` of the
/// capacity.
#[derive(Debug, Clone)]
pub struct SharedBuffer {
    /// `None` means unlimited.
    capacity: Option<u64>,
    alpha: Ratio,
    used: u64,
    per_queue: Vec<u64>,
    peak: u64,
}

impl SharedBuffer {
    pub fn new(capacity: Option<u64>, alpha: Ratio, n_queues: usize) -> Self {
        Self {
            capacity,
            alpha,
            used: 0,
            per_queue: vec![0; n_queues],
            peak: 0,
        }
    }

    pub fn capacity(&self) -> Option<u64> {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn queue(&self, q: usize) -> u64 {
        self.per_queue[q]
    }

    /// Largest `used` ever observed right after an admission.
    pub fn peak(&self) -> u64 {
        self.peak
    }

    /// Dynamic threshold for queue growth given the current occupancy.
    pub fn threshold(&self) -> Option<u64> {
        self.capacity
            .map(|c| self.alpha.mul_floor(c.saturating_sub(self.used)))
    }

    pub fn admits(&self, q: usize, size: u64) -> bool {
        let Some(cap) = self.capacity else {
            return true;
        };
        let new_used = self.used + size;
        if new_used > cap {
            return false;
        }
        let new_q = self.per_queue[q] + size;
        new_q as u128 * self.alpha.den as u128 <= (cap - new_used) as u128 * self.alpha.num as u128
    }

    /// Admission that only enforces total capacity (lossless mode).
    pub fn fits(&self, size: u64) -> bool {
        self.capacity.is_none_or(|c| self.used + size <= c)
    }

    pub fn add(&mut self, q: usize, size: u64) {
        self.per_queue[q] += size;
        self.used += size;
        self.peak = self.peak.max(self.used);
    }

    pub fn remove(&mut self, q: usize, size: u64) {
        debug_assert!(self.per_queue[q] >= size);
        self.per_queue[q] -= size;
        self.used -= size;
    }
}
