//! Poisson pairwise-meeting process.
//!
//! Every unordered pair of nodes meets according to an independent Poisson
//! process of rate λ. The stream is produced by superposition: one global
//! exponential clock of rate `λ·n(n−1)/2`, each tick assigned to a uniformly
//! chosen pair.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A pairwise contact at `time`. Endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeetingEvent {
    pub time: f64,
    pub a: usize,
    pub b: usize,
}

impl MeetingEvent {
    pub fn new(time: f64, a: usize, b: usize) -> Self {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        MeetingEvent { time, a, b }
    }

    pub fn involves(&self, node: usize) -> bool {
        self.a == node || self.b == node
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.a, self.b)
    }
}

/// Pairwise meeting rate λ (meetings per unit time per node pair).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeetingRate<T = f64>(T);

impl<T: Scalar> MeetingRate<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if lambda.is_finite() && lambda > T::zero() {
            Ok(MeetingRate(lambda))
        } else {
            Err(Error::config(format!(
                "meeting rate must be positive and finite, got {lambda}"
            )))
        }
    }

    pub fn get(self) -> T {
        self.0
    }
}

fn pair_count(n: usize) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

/// Draw from `Exp(rate)`.
pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64> {
    let exp = Exp::new(rate)
        .ok()
        .filter(|_| rate > 0.0 && rate.is_finite())
        .ok_or_else(|| Error::config(format!("exponential rate must be positive, got {rate}")))?;
    Ok(exp.sample(rng))
}

/// Draw from `Erlang(k, rate)` as a sum of `k` exponentials.
pub fn sample_erlang<R: Rng + ?Sized>(k: u32, rate: f64, rng: &mut R) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("Erlang shape must be at least 1"));
    }
    let mut total = 0.0;
    for _ in 0..k {
        total += sample_exponential(rate, rng)?;
    }
    Ok(total)
}

/// Infinite, time-ordered stream of meetings for `n` nodes.
#[derive(Debug, Clone)]
pub struct PoissonMeetings {
    n: usize,
    gap: Exp<f64>,
    total_rate: f64,
    rng: ChaCha8Rng,
    now: f64,
}

impl PoissonMeetings {
    pub fn nodes(&self) -> usize {
        self.n
    }

    /// Rate of the superposed stream, `λ·n(n−1)/2`.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }
}

impl Iterator for PoissonMeetings {
    type Item = MeetingEvent;

    fn next(&mut self) -> Option<MeetingEvent> {
        let mut t = self.now + self.gap.sample(&mut self.rng);
        if t <= self.now {
            t = self.now.next_up();
        }
        self.now = t;
        let a = self.rng.random_range(0..self.n);
        let mut b = self.rng.random_range(0..self.n - 1);
        if b >= a {
            b += 1;
        }
        Some(MeetingEvent::new(t, a, b))
    }
}

/// Build the meeting stream for `n` nodes at pairwise rate `lambda`.
pub fn event_stream(n: usize, lambda: MeetingRate, seed: u64) -> Result<PoissonMeetings> {
    if n < 2 {
        return Err(Error::config(format!("need at least 2 nodes, got {n}")));
    }
    let total = lambda.get() * pair_count(n);
    let gap = Exp::new(total).map_err(|e| Error::config(e.to_string()))?;
    Ok(PoissonMeetings {
        n,
        gap,
        total_rate: total,
        rng: ChaCha8Rng::seed_from_u64(seed),
        now: 0.0,
    })
}

/// Write a `time,a,b` CSV trace.
pub fn write_trace<W: Write>(writer: W, events: &[MeetingEvent]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["time", "a", "b"])?;
    for ev in events {
        out.write_record([ev.time.to_string(), ev.a.to_string(), ev.b.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> csv::Result<Vec<MeetingEvent>> {
    let mut input = csv::Reader::from_reader(reader);
    input
        .deserialize::<MeetingEvent>()
        .map(|row| row.map(|ev| MeetingEvent::new(ev.time, ev.a, ev.b)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_test, Summary};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rate(l: f64) -> MeetingRate {
        MeetingRate::new(l).unwrap()
    }

    fn mean_gap(n: usize, count: usize) -> f64 {
        let events: Vec<_> = event_stream(n, rate(1.0), 3).unwrap().take(count).collect();
        events.last().unwrap().time / count as f64
    }

    #[test]
    fn rejects_bad_config() {
        assert!(event_stream(1, rate(1.0), 0).unwrap_err().is_config());
        assert!(MeetingRate::new(0.0).is_err());
        assert!(MeetingRate::new(f64::NAN).is_err());
        assert!(MeetingRate::new(-1.0f32).is_err());
    }

    #[test]
    fn superposed_gap_means() {
        assert_abs_diff_eq!(mean_gap(2, 100_000), 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(mean_gap(3, 100_000), 1.0 / 3.0, epsilon = 0.02 / 3.0);
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<_> = event_stream(7, rate(0.3), 99).unwrap().take(1000).collect();
        let b: Vec<_> = event_stream(7, rate(0.3), 99).unwrap().take(1000).collect();
        assert_eq!(a, b);
        let c: Vec<_> = event_stream(7, rate(0.3), 100).unwrap().take(1000).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn exponential_moments_and_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_exponential(2.0, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|&x| x >= 0.0));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert_abs_diff_eq!(mean, 0.5, epsilon = 0.005);

        let tail = (0..1_000_000)
            .filter(|_| sample_exponential(1.0, &mut rng).unwrap() > 1.0)
            .count() as f64
            / 1e6;
        assert_abs_diff_eq!(tail, (-1.0f64).exp(), epsilon = 0.01 * (-1.0f64).exp());
        assert!(sample_exponential(0.0, &mut rng).is_err());
        assert!(sample_exponential(-3.0, &mut rng).is_err());
    }

    #[test]
    fn erlang_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_erlang(4, 2.0, &mut rng).unwrap())
            .collect();
        let s = Summary::of(&draws).unwrap();
        assert_abs_diff_eq!(s.mean, 2.0, epsilon = 0.02);
        assert_abs_diff_eq!(s.variance(), 1.0, epsilon = 0.03);
        assert!(sample_erlang(0, 1.0, &mut rng).is_err());
        assert!(sample_erlang(2, 0.0, &mut rng).is_err());

        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_erlang(1, 3.0, &mut r1).unwrap(),
            sample_exponential(3.0, &mut r2).unwrap()
        );
    }

    #[test]
    fn single_pair_gaps_are_exponential() {
        let lambda = 0.7;
        let mut last = 0.0;
        let mut gaps = Vec::new();
        for ev in event_stream(5, rate(lambda), 21).unwrap() {
            if ev.pair() == (1, 3) {
                gaps.push(ev.time - last);
                last = ev.time;
                if gaps.len() == 20_000 {
                    break;
                }
            }
        }
        let out = ks_test(&gaps, |x| 1.0 - (-lambda * x).exp());
        assert!(out.passes(0.01), "{out:?}");
    }

    #[test]
    fn pair_counts_are_poisson() {
        let (n, lambda, horizon) = (4, 1.0, 100.0);
        let mut counts = Vec::new();
        for seed in 0..5000 {
            let mut per_pair = [0u32; 16];
            for ev in event_stream(n, rate(lambda), seed).unwrap() {
                if ev.time > horizon {
                    break;
                }
                per_pair[ev.a * n + ev.b] += 1;
            }
            for a in 0..n {
                for b in a + 1..n {
                    counts.push(per_pair[a * n + b] as f64);
                }
            }
        }
        let s = Summary::of(&counts).unwrap();
        let expected = lambda * horizon;
        assert_abs_diff_eq!(s.mean, expected, epsilon = 0.03 * expected);
        assert_abs_diff_eq!(s.variance(), expected, epsilon = 0.03 * expected);
    }

    #[test]
    fn trace_csv_round_trip() {
        let events: Vec<_> = event_stream(4, rate(1.0), 2).unwrap().take(50).collect();
        let mut buf = Vec::new();
        write_trace(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,a,b\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), events);
    }

    proptest! {
        #[test]
        fn events_valid_and_strictly_increasing(n in 2usize..40, lambda in 0.01f64..50.0, seed: u64) {
            let mut last = 0.0;
            for ev in event_stream(n, rate(lambda), seed).unwrap().take(500) {
                prop_assert!(ev.time > last);
                prop_assert!(ev.a < ev.b && ev.b < n);
                last = ev.time;
            }
        }
    }
}
