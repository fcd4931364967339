//! Deterministic discrete-event core.
//!
//! The clock is an integer nanosecond counter. Events are ordered by
//! `(time, sequence)` where the sequence number is assigned at scheduling
//! time, so two events at the same instant always dispatch in the order they
//! were scheduled regardless of heap internals.

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::collections::BinaryHeap;
use std::fmt;
use std::hash::Hasher;
use std::ops::{Add, AddAssign, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Simulated time in integer nanoseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Smallest whole number of microseconds not less than this duration.
    pub fn ceil_micros(self) -> u64 {
        self.0.div_ceil(1_000)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 1_000 == 0 {
            write!(f, "{}us", self.0 / 1_000)
        } else {
            write!(f, "{}ns", self.0)
        }
    }
}

/// Stable identity of an event kind for trace hashing.
pub trait TraceKey {
    /// Small discriminant naming the event kind.
    fn kind_tag(&self) -> u8;
    /// Entity the event is addressed to.
    fn target(&self) -> u64;
}

/// A scheduled occurrence.
#[derive(Debug, Clone)]
pub struct Event<E> {
    pub time: SimTime,
    pub sequence: u64,
    pub payload: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.sequence == other.sequence
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed so the std max-heap pops the earliest (time, sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Result of a bounded run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub events: u64,
    pub final_clock: SimTime,
    pub trace_digest: u64,
}

/// Single global event queue with a virtual clock.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Event<E>>,
    dispatched: u64,
    digest: DefaultHasher,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            dispatched: 0,
            digest: DefaultHasher::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Queue `payload` at absolute time `at`; returns the assigned sequence.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> Result<u64, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { now: self.now, at });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event {
            time: at,
            sequence,
            payload,
        });
        Ok(sequence)
    }

    /// Queue `payload` at `now + delay`. Never fails.
    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> u64 {
        let at = self.now + delay;
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event {
            time: at,
            sequence,
            payload,
        });
        sequence
    }

    /// Time of the earliest pending event.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }
}

impl<E: TraceKey> Scheduler<E> {
    /// Pop the next event at or before `t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<E>> {
        if self.heap.peek()?.time > t_end {
            return None;
        }
        let ev = self.heap.pop()?;
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        self.dispatched += 1;
        self.digest.write_u64(ev.time.0);
        self.digest.write_u64(ev.sequence);
        self.digest.write_u8(ev.payload.kind_tag());
        self.digest.write_u64(ev.payload.target());
        Some(ev)
    }

    /// Dispatch every event with `time <= t_end`, then park the clock at
    /// `t_end`. The handler sees the clock equal to the event's time.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<RunSummary, SimError>
    where
        F: FnMut(&mut Scheduler<E>, Event<E>) -> Result<(), SimError>,
    {
        let start = self.dispatched;
        while let Some(ev) = self.pop_until(t_end) {
            let time = ev.time;
            let target = ev.payload.target();
            handler(self, ev).map_err(|e| SimError::Handler {
                time,
                entity: target,
                source: Box::new(e),
            })?;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        Ok(RunSummary {
            events: self.dispatched - start,
            final_clock: self.now,
            trace_digest: self.digest.finish(),
        })
    }

    pub fn trace_digest(&self) -> u64 {
        self.digest.finish()
    }
}

/// Seeded generator used everywhere randomness is needed.
pub type SimRng = ChaCha12Rng;

/// Root generator for `seed`.
pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`. Streams with different
/// indices never share state, so adding a consumer does not perturb others.
pub fn derive_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix a base seed with an index, e.g. for sweep points.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_u64(seed);
    h.write_u64(index);
    // 63 bits, so the seed fits a TOML integer.
    h.finish() >> 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Tag(u64);

    impl TraceKey for Tag {
        fn kind_tag(&self) -> u8 {
            0
        }
        fn target(&self) -> u64 {
            self.0
        }
    }

    fn drain(s: &mut Scheduler<Tag>, t_end: SimTime) -> Vec<(SimTime, u64)> {
        let mut out = Vec::new();
        s.run_until(t_end, |sch, ev| {
            assert_eq!(sch.now(), ev.time);
            out.push((ev.time, ev.payload.0));
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn first_event_at_zero() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::ZERO, Tag(7)).unwrap();
        assert_eq!(drain(&mut s, SimTime::from_micros(1)), vec![(SimTime::ZERO, 7)]);
    }

    #[test]
    fn equal_time_dispatches_in_sequence_order() {
        let mut s = Scheduler::new();
        let t = SimTime::from_nanos(100);
        let a = s.schedule(t, Tag(5)).unwrap();
        let b = s.schedule(t, Tag(6)).unwrap();
        assert!(a < b);
        assert_eq!(drain(&mut s, t), vec![(t, 5), (t, 6)]);
    }

    #[test]
    fn out_of_order_insertion() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(10), Tag(10)).unwrap();
        s.schedule(SimTime(5), Tag(5)).unwrap();
        let got: Vec<u64> = drain(&mut s, SimTime(20)).into_iter().map(|x| x.1).collect();
        assert_eq!(got, vec![5, 10]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        s.run_until(SimTime(50), |_, _| Ok(())).unwrap();
        let err = s.schedule(SimTime(10), Tag(0)).unwrap_err();
        assert!(matches!(err, SimError::ScheduleInPast { .. }));
    }

    #[test]
    fn empty_run_parks_clock() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        let r = s.run_until(SimTime::from_millis(1), |_, _| Ok(())).unwrap();
        assert_eq!(r.events, 0);
        assert_eq!(r.final_clock, SimTime::from_millis(1));
    }

    #[test]
    fn counts_events_before_end() {
        let mut s = Scheduler::new();
        for t in [1, 2, 3, 2_000_000] {
            s.schedule(SimTime(t), Tag(t)).unwrap();
        }
        let r = s.run_until(SimTime::from_millis(1), |_, _| Ok(())).unwrap();
        assert_eq!(r.events, 3);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn handler_error_carries_context() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(42), Tag(9)).unwrap();
        let err = s
            .run_until(SimTime(100), |_, _| Err(SimError::Config("boom".into())))
            .unwrap_err();
        match err {
            SimError::Handler { time, entity, .. } => {
                assert_eq!(time, SimTime(42));
                assert_eq!(entity, 9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_gives_identical_summary() {
        fn once() -> RunSummary {
            let mut s = Scheduler::new();
            s.schedule(SimTime(0), Tag(0)).unwrap();
            s.run_until(SimTime(1_000), |sch, ev| {
                if ev.payload.0 < 50 {
                    sch.schedule_in(SimTime(ev.payload.0 % 7 + 1), Tag(ev.payload.0 + 1));
                    if ev.payload.0 % 10 == 0 {
                        sch.schedule_in(SimTime(3), Tag(ev.payload.0 + 2));
                    }
                }
                Ok(())
            })
            .unwrap()
        }
        assert_eq!(once(), once());
    }

    #[test]
    fn ceil_micros_rounds_up() {
        assert_eq!(SimTime(0).ceil_micros(), 0);
        assert_eq!(SimTime(1).ceil_micros(), 1);
        assert_eq!(SimTime(10_000).ceil_micros(), 10);
        assert_eq!(SimTime(10_001).ceil_micros(), 11);
    }
}
