use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::engine::SimTime;
use crate::net::Ip;

/// Congestion locator: the congested receiver's address and traffic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub ip: Ip,
    pub dscp: u8,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    key: Option<CacheKey>,
    pause_end: SimTime,
}

/// Hash-addressed register array mapping a receiver to a pause-end time.
///
/// A slot is only reused when empty, expired, or already holding the same
/// key. On a collision with a live entry the update is dropped.
#[derive(Debug, Clone)]
pub struct PauseCache {
    slots: Vec<Slot>,
    live: Vec<usize>,
    max_occupancy: usize,
    pub collisions: u64,
}

impl PauseCache {
    pub fn new(entries: usize) -> Self {
        Self {
            slots: vec![Slot::default(); entries.max(1)],
            live: Vec::new(),
            max_occupancy: 0,
            collisions: 0,
        }
    }

    fn index(&self, key: &CacheKey) -> usize {
        let mut h = DefaultHasher::new();
        key.hash(&mut h);
        (h.finish() % self.slots.len() as u64) as usize
    }

    /// `cache[key] = max(cache[key], pause_end)`. Returns `false` if the
    /// update was dropped because of a collision.
    pub fn update(&mut self, key: CacheKey, pause_end: SimTime, now: SimTime) -> bool {
        let i = self.index(&key);
        let slot = &mut self.slots[i];
        match slot.key {
            Some(k) if k == key => {
                slot.pause_end = slot.pause_end.max(pause_end);
            }
            Some(_) if slot.pause_end > now => {
                self.collisions += 1;
                return false;
            }
            _ => {
                *slot = Slot {
                    key: Some(key),
                    pause_end,
                };
                if !self.live.contains(&i) {
                    self.live.push(i);
                }
            }
        }
        self.live.retain(|&j| self.slots[j].pause_end > now);
        self.max_occupancy = self.max_occupancy.max(self.live.len());
        true
    }

    /// Stored pause end for exactly `key`; a slot holding any other key is
    /// a miss.
    pub fn lookup(&self, key: &CacheKey) -> Option<SimTime> {
        let s = &self.slots[self.index(key)];
        (s.key == Some(*key)).then_some(s.pause_end)
    }

    /// Remaining pause for `key` at `now`, zero on a miss or expiry.
    pub fn remaining(&self, key: &CacheKey, now: SimTime) -> SimTime {
        self.lookup(key)
            .map(|end| end.saturating_sub(now))
            .unwrap_or(SimTime::ZERO)
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }
}
