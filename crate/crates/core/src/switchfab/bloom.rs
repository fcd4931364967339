//! Periodically reset three-hash Bloom filter used to suppress repeated BTS
//! packets towards the same flow.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use crate::net::FiveTuple;

const HASHES: usize = 3;

#[derive(Debug, Clone)]
pub struct BloomFilter {
    /// One bit array per hash function.
    arrays: [Vec<u64>; HASHES],
    bits_per_array: usize,
    version: u64,
    inserted: u32,
    max_occupancy: u32,
}

impl BloomFilter {
    /// `bits_per_array` is rounded up to a multiple of 64.
    pub fn new(bits_per_array: usize) -> Self {
        let words = bits_per_array.div_ceil(64).max(1);
        Self {
            arrays: std::array::from_fn(|_| vec![0; words]),
            bits_per_array: words * 64,
            version: 0,
            inserted: 0,
            max_occupancy: 0,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Inserts since the last reset.
    pub fn occupancy(&self) -> u32 {
        self.inserted
    }

    pub fn max_occupancy(&self) -> u32 {
        self.max_occupancy
    }

    fn index(&self, i: usize, key: &FiveTuple) -> (usize, u64) {
        let mut h = DefaultHasher::new();
        i.hash(&mut h);
        self.version.hash(&mut h);
        key.hash(&mut h);
        let bit = (h.finish() % self.bits_per_array as u64) as usize;
        (bit / 64, 1u64 << (bit % 64))
    }

    pub fn contains(&self, key: &FiveTuple) -> bool {
        (0..HASHES).all(|i| {
            let (w, m) = self.index(i, key);
            self.arrays[i][w] & m != 0
        })
    }

    pub fn insert(&mut self, key: &FiveTuple) {
        for i in 0..HASHES {
            let (w, m) = self.index(i, key);
            self.arrays[i][w] |= m;
        }
        self.inserted += 1;
        self.max_occupancy = self.max_occupancy.max(self.inserted);
    }

    /// Change the hash input without clearing bits. Entries inserted under
    /// the previous version no longer match.
    pub fn advance_version(&mut self) {
        self.version = self.version.wrapping_add(1);
        self.inserted = 0;
    }

    /// Periodic reset: new version and cleared arrays.
    pub fn reset(&mut self) {
        self.advance_version();
        for a in &mut self.arrays {
            a.iter_mut().for_each(|w| *w = 0);
        }
    }

    /// Analytical false-positive probability after `n` inserts.
    pub fn expected_fp_rate(&self, n: u32) -> f64 {
        let p = 1.0 - (-(n as f64) / self.bits_per_array as f64).exp();
        p.powi(HASHES as i32)
    }
}

/// Bloom filter paired with an exact set of the current epoch's keys, used
/// to count false positives.
#[derive(Debug, Clone)]
pub struct AuditedBloom {
    pub filter: BloomFilter,
    truth: HashSet<FiveTuple>,
    pub queries_negative: u64,
    pub false_positives: u64,
}

impl AuditedBloom {
    pub fn new(bits_per_array: usize) -> Self {
        Self {
            filter: BloomFilter::new(bits_per_array),
            truth: HashSet::new(),
            queries_negative: 0,
            false_positives: 0,
        }
    }

    /// Returns `true` if `key` was already present (suppress), inserting it
    /// otherwise.
    pub fn test_and_insert(&mut self, key: &FiveTuple) -> bool {
        let hit = self.filter.contains(key);
        if !self.truth.contains(key) {
            self.queries_negative += 1;
            if hit {
                self.false_positives += 1;
            }
        }
        if !hit {
            self.filter.insert(key);
            self.truth.insert(*key);
        }
        hit
    }

    pub fn reset(&mut self) {
        self.filter.reset();
        self.truth.clear();
    }

    pub fn false_positive_rate(&self) -> f64 {
        if self.queries_negative == 0 {
            0.0
        } else {
            self.false_positives as f64 / self.queries_negative as f64
        }
    }
}
