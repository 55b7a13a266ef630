//! Spatial mobility on the unit square and contact-onset detection.
//!
//! Nodes move at constant speed `v` under the random direction model
//! (reflecting walls, exponential leg durations) or the random waypoint model
//! (zero pause). Two nodes *meet* when their distance drops below the range
//! `r`; one [`MeetingEvent`] is emitted per contact onset.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meeting::{sample_exponential, MeetingEvent, MeetingRate};
use crate::scalar::Scalar;

/// Stationary-density constant of the random waypoint model.
pub const WAYPOINT_OMEGA: f64 = 1.3683;

pub const DEFAULT_EPOCH_MEAN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MobilityModel {
    RandomDirection,
    RandomWaypoint,
}

impl MobilityModel {
    /// `c_π` in `λ = c_π·v·r`.
    pub fn rate_constant<T: Scalar>(self) -> T {
        let eight_over_pi = T::of_f64(8.0) / T::PI();
        match self {
            MobilityModel::RandomDirection => eight_over_pi,
            MobilityModel::RandomWaypoint => eight_over_pi * T::of_f64(WAYPOINT_OMEGA),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    pub model: MobilityModel,
    /// Speed in side lengths per time unit.
    pub speed: f64,
    /// Transmission range in side lengths.
    pub range: f64,
    /// Mean leg duration (random direction only).
    #[serde(default = "default_epoch_mean")]
    pub epoch_mean: f64,
    /// Time simulated and discarded before recording starts. `None` picks
    /// 0 for random direction (uniform start is stationary) and `10/v` for
    /// random waypoint.
    #[serde(default)]
    pub burn_in: Option<f64>,
}

fn default_epoch_mean() -> f64 {
    DEFAULT_EPOCH_MEAN
}

impl MobilityConfig {
    pub fn new(model: MobilityModel, speed: f64, range: f64) -> Self {
        MobilityConfig {
            model,
            speed,
            range,
            epoch_mean: DEFAULT_EPOCH_MEAN,
            burn_in: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::config(format!("speed must be positive, got {}", self.speed)));
        }
        if !(self.range > 0.0 && self.range < 1.0) {
            return Err(Error::config(format!(
                "range must lie in (0, 1), got {}",
                self.range
            )));
        }
        if !(self.epoch_mean.is_finite() && self.epoch_mean > 0.0) {
            return Err(Error::config("epoch_mean must be positive"));
        }
        if matches!(self.burn_in, Some(b) if !(b >= 0.0 && b.is_finite())) {
            return Err(Error::config("burn_in must be non-negative"));
        }
        Ok(())
    }

    /// The meeting model assumes `r ≪ 1`; large ranges are accepted but flagged.
    pub fn warning(&self) -> Option<String> {
        (self.range > 0.2).then(|| {
            format!(
                "range {} is not small relative to the unit square; the Poisson meeting model may not hold",
                self.range
            )
        })
    }

    /// Default sampling step `r/(4v)`: a pair closes at most `r/2` per step.
    pub fn default_step(&self) -> f64 {
        self.range / (4.0 * self.speed)
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(match self.model {
            MobilityModel::RandomDirection => 0.0,
            MobilityModel::RandomWaypoint => 10.0 / self.speed,
        })
    }
}

/// Range `c/√n` that keeps the network disconnected as it grows.
pub fn range_for_nodes(c: f64, n: usize) -> f64 {
    c / (n as f64).sqrt()
}

/// `λ = c_π·v·r` for the two built-in models.
pub fn theoretical_lambda(config: &MobilityConfig) -> Result<MeetingRate> {
    config.validate()?;
    MeetingRate::new(contact_rate(config.model, config.speed, config.range))
}

pub fn contact_rate<T: Scalar>(model: MobilityModel, speed: T, range: T) -> T {
    model.rate_constant::<T>() * speed * range
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Point::new(rng.random(), rng.random())
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn in_unit_square(self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Heading {
    /// Direction of travel in radians, `[0, 2π)`.
    Angle(f64),
    Waypoint(Point),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeKinematics {
    pub position: Point,
    pub heading: Heading,
    /// Time until the next direction change (random direction) or until the
    /// waypoint is reached (random waypoint).
    pub leg_remaining: f64,
}

/// Mirror `x` back into `[0, 1]`; returns the folded value and whether the
/// direction of travel along this axis flipped.
fn reflect(mut x: f64) -> (f64, bool) {
    let mut flipped = false;
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > 1.0 {
            x = 2.0 - x;
        } else {
            return (x, flipped);
        }
        flipped = !flipped;
    }
}

impl NodeKinematics {
    pub fn spawn<R: Rng + ?Sized>(config: &MobilityConfig, rng: &mut R) -> Self {
        let position = Point::uniform(rng);
        match config.model {
            MobilityModel::RandomDirection => NodeKinematics {
                position,
                heading: Heading::Angle(rng.random::<f64>() * TAU),
                leg_remaining: sample_exponential(1.0 / config.epoch_mean, rng)
                    .expect("validated epoch_mean"),
            },
            MobilityModel::RandomWaypoint => {
                let target = Point::uniform(rng);
                NodeKinematics {
                    position,
                    heading: Heading::Waypoint(target),
                    leg_remaining: position.distance(target) / config.speed,
                }
            }
        }
    }

    /// Move for `dt` time units.
    pub fn advance<R: Rng + ?Sized>(mut self, config: &MobilityConfig, dt: f64, rng: &mut R) -> Self {
        self.advance_in_place(config, dt, rng);
        self
    }

    pub fn advance_in_place<R: Rng + ?Sized>(&mut self, config: &MobilityConfig, dt: f64, rng: &mut R) {
        let mut remaining = dt;
        while remaining > 0.0 {
            let step = remaining.min(self.leg_remaining);
            self.travel(config.speed * step);
            self.leg_remaining -= step;
            remaining -= step;
            if self.leg_remaining <= 0.0 {
                self.start_leg(config, rng);
            }
        }
    }

    fn travel(&mut self, distance: f64) {
        match self.heading {
            Heading::Angle(theta) => {
                let (x, flip_x) = reflect(self.position.x + distance * theta.cos());
                let (y, flip_y) = reflect(self.position.y + distance * theta.sin());
                self.position = Point::new(x, y);
                let mut theta = theta;
                if flip_x {
                    theta = PI - theta;
                }
                if flip_y {
                    theta = -theta;
                }
                self.heading = Heading::Angle(theta.rem_euclid(TAU));
            }
            Heading::Waypoint(target) => {
                let left = self.position.distance(target);
                if distance >= left || left == 0.0 {
                    self.position = target;
                } else {
                    let f = distance / left;
                    self.position = Point::new(
                        self.position.x + f * (target.x - self.position.x),
                        self.position.y + f * (target.y - self.position.y),
                    );
                }
            }
        }
    }

    fn start_leg<R: Rng + ?Sized>(&mut self, config: &MobilityConfig, rng: &mut R) {
        match config.model {
            MobilityModel::RandomDirection => {
                self.heading = Heading::Angle(rng.random::<f64>() * TAU);
                self.leg_remaining = sample_exponential(1.0 / config.epoch_mean, rng)
                    .expect("validated epoch_mean");
            }
            MobilityModel::RandomWaypoint => {
                // Zero-length legs are possible in principle; redraw until the
                // node actually has somewhere to go.
                loop {
                    let target = Point::uniform(rng);
                    let len = self.position.distance(target);
                    if len > 0.0 {
                        self.heading = Heading::Waypoint(target);
                        self.leg_remaining = len / config.speed;
                        break;
                    }
                }
            }
        }
    }
}

/// Anything that can report node positions at non-decreasing sample times.
pub trait PositionSampler {
    fn node_count(&self) -> usize;

    /// Upper bound on any node's speed, used to validate the sampling step.
    fn max_speed(&self) -> f64;

    /// Fill `out` with positions at time `t`. Calls use non-decreasing `t`.
    fn positions_at(&mut self, t: f64, out: &mut [Point]);
}

/// A population of nodes driven by a random mobility model.
#[derive(Debug, Clone)]
pub struct MobileNodes {
    config: MobilityConfig,
    nodes: Vec<NodeKinematics>,
    rng: ChaCha8Rng,
    now: f64,
}

impl MobileNodes {
    pub fn new(n: usize, config: MobilityConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if n < 2 {
            return Err(Error::config(format!("need at least 2 nodes, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<_> = (0..n).map(|_| NodeKinematics::spawn(&config, &mut rng)).collect();
        let burn_in = config.burn_in();
        if burn_in > 0.0 {
            let dt = config.default_step().max(burn_in / 10_000.0);
            let mut elapsed = 0.0;
            while elapsed < burn_in {
                let step = dt.min(burn_in - elapsed);
                for node in &mut nodes {
                    node.advance_in_place(&config, step, &mut rng);
                }
                elapsed += step;
            }
        }
        Ok(MobileNodes {
            config,
            nodes,
            rng,
            now: 0.0,
        })
    }

    pub fn config(&self) -> &MobilityConfig {
        &self.config
    }

    pub fn kinematics(&self) -> &[NodeKinematics] {
        &self.nodes
    }
}

impl PositionSampler for MobileNodes {
    fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn max_speed(&self) -> f64 {
        self.config.speed
    }

    fn positions_at(&mut self, t: f64, out: &mut [Point]) {
        let dt = t - self.now;
        if dt > 0.0 {
            for node in &mut self.nodes {
                node.advance_in_place(&self.config, dt, &mut self.rng);
            }
            self.now = t;
        }
        for (slot, node) in out.iter_mut().zip(&self.nodes) {
            *slot = node.position;
        }
    }
}

/// Deterministic trajectories given by a closure `f(t, positions)`.
pub struct ScriptedPaths<F> {
    n: usize,
    max_speed: f64,
    path: F,
}

impl<F: FnMut(f64, &mut [Point])> ScriptedPaths<F> {
    pub fn new(n: usize, max_speed: f64, path: F) -> Self {
        ScriptedPaths { n, max_speed, path }
    }
}

impl<F: FnMut(f64, &mut [Point])> PositionSampler for ScriptedPaths<F> {
    fn node_count(&self) -> usize {
        self.n
    }

    fn max_speed(&self) -> f64 {
        self.max_speed
    }

    fn positions_at(&mut self, t: f64, out: &mut [Point]) {
        (self.path)(t, out)
    }
}

/// Fraction of the step at which the linearly interpolated separation first
/// reaches `r`.
fn crossing_fraction(prev: (f64, f64), next: (f64, f64), r: f64) -> f64 {
    let (dx, dy) = (next.0 - prev.0, next.1 - prev.1);
    let a = dx * dx + dy * dy;
    let b = 2.0 * (prev.0 * dx + prev.1 * dy);
    let c = prev.0 * prev.0 + prev.1 * prev.1 - r * r;
    let disc = b * b - 4.0 * a * c;
    if a <= 0.0 || disc < 0.0 {
        return 1.0;
    }
    let s = (-b - disc.sqrt()) / (2.0 * a);
    if s.is_finite() && s > 0.0 {
        s.min(1.0)
    } else {
        1.0
    }
}

/// Incremental onset detector over fixed sampling steps.
#[derive(Debug, Clone)]
pub struct ContactDetector {
    n: usize,
    range: f64,
    dt: f64,
    step: u64,
    prev: Vec<Point>,
    next: Vec<Point>,
    in_range: Vec<bool>,
}

impl ContactDetector {
    /// Take the initial sample at `t = 0`. Pairs already in range at start do
    /// not count as onsets.
    pub fn new<S: PositionSampler + ?Sized>(sampler: &mut S, range: f64, dt: f64) -> Result<Self> {
        let n = sampler.node_count();
        if n < 2 {
            return Err(Error::config(format!("need at least 2 nodes, got {n}")));
        }
        if !(range > 0.0) {
            return Err(Error::config("range must be positive"));
        }
        let limit = range / (4.0 * sampler.max_speed());
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "sampling step {dt} must lie in (0, r/(4v)] = (0, {limit}]; contacts could be skipped"
            )));
        }
        let mut prev = vec![Point::default(); n];
        sampler.positions_at(0.0, &mut prev);
        let mut in_range = vec![false; n * n];
        for a in 0..n {
            for b in a + 1..n {
                in_range[a * n + b] = prev[a].distance(prev[b]) < range;
            }
        }
        Ok(ContactDetector {
            n,
            range,
            dt,
            step: 0,
            next: prev.clone(),
            prev,
            in_range,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Advance one sampling step, appending onsets in time order to `out`.
    pub fn step<S: PositionSampler + ?Sized>(&mut self, sampler: &mut S, out: &mut Vec<MeetingEvent>) {
        let t0 = self.time();
        self.step += 1;
        let t1 = self.time();
        sampler.positions_at(t1, &mut self.next);
        let start = out.len();
        let n = self.n;
        for a in 0..n {
            let (pa, qa) = (self.prev[a], self.next[a]);
            for b in a + 1..n {
                let (pb, qb) = (self.prev[b], self.next[b]);
                let within = qa.distance(qb) < self.range;
                let slot = &mut self.in_range[a * n + b];
                if within && !*slot {
                    let s = crossing_fraction(
                        (pb.x - pa.x, pb.y - pa.y),
                        (qb.x - qa.x, qb.y - qa.y),
                        self.range,
                    );
                    let time = (t0 + s * (t1 - t0)).max(t0.next_up()).min(t1);
                    out.push(MeetingEvent::new(time, a, b));
                }
                *slot = within;
            }
        }
        out[start..].sort_by(|x, y| x.time.total_cmp(&y.time));
        std::mem::swap(&mut self.prev, &mut self.next);
    }
}

/// Record every contact onset in `[0, duration]`.
pub fn detect_contact_onsets<S: PositionSampler + ?Sized>(
    sampler: &mut S,
    range: f64,
    duration: f64,
    dt: f64,
) -> Result<Vec<MeetingEvent>> {
    if !(duration > 0.0) {
        return Err(Error::config("duration must be positive"));
    }
    let mut detector = ContactDetector::new(sampler, range, dt)?;
    let steps = (duration / dt).ceil() as u64;
    let mut events = Vec::new();
    for _ in 0..steps {
        detector.step(sampler, &mut events);
    }
    Ok(events)
}

/// Lazily generated contact-onset stream, usable wherever a meeting stream is.
pub struct SpatialContacts<S> {
    sampler: S,
    detector: ContactDetector,
    pending: VecDeque<MeetingEvent>,
    scratch: Vec<MeetingEvent>,
    generated: usize,
}

impl SpatialContacts<MobileNodes> {
    pub fn random(n: usize, config: MobilityConfig, seed: u64) -> Result<Self> {
        let dt = config.default_step();
        SpatialContacts::new(MobileNodes::new(n, config, seed)?, config.range, dt)
    }
}

impl<S: PositionSampler> SpatialContacts<S> {
    pub fn new(mut sampler: S, range: f64, dt: f64) -> Result<Self> {
        let detector = ContactDetector::new(&mut sampler, range, dt)?;
        Ok(SpatialContacts {
            sampler,
            detector,
            pending: VecDeque::new(),
            scratch: Vec::new(),
            generated: 0,
        })
    }

    /// Model time covered by the samples taken so far.
    pub fn elapsed(&self) -> f64 {
        self.detector.time()
    }

    /// Onsets detected within [`elapsed`](Self::elapsed), consumed or not.
    pub fn generated(&self) -> usize {
        self.generated
    }
}

impl<S: PositionSampler> Iterator for SpatialContacts<S> {
    type Item = MeetingEvent;

    fn next(&mut self) -> Option<MeetingEvent> {
        while self.pending.is_empty() {
            self.scratch.clear();
            self.detector.step(&mut self.sampler, &mut self.scratch);
            self.generated += self.scratch.len();
            self.pending.extend(self.scratch.drain(..));
        }
        self.pending.pop_front()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub rate: f64,
    pub events: usize,
    /// Set when the trace held no events; `rate` is then 0.
    pub empty: bool,
}

impl LambdaEstimate {
    pub fn meeting_rate(&self) -> Result<MeetingRate> {
        MeetingRate::new(self.rate)
    }
}

/// Pairwise rate estimate: onsets per unit time per pair.
pub fn estimate_lambda(events: &[MeetingEvent], n: usize, duration: f64) -> Result<LambdaEstimate> {
    estimate_lambda_from_count(events.len(), n, duration)
}

pub fn estimate_lambda_from_count(count: usize, n: usize, duration: f64) -> Result<LambdaEstimate> {
    if n < 2 {
        return Err(Error::config(format!("need at least 2 nodes, got {n}")));
    }
    if !(duration > 0.0) {
        return Err(Error::config("duration must be positive"));
    }
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    Ok(LambdaEstimate {
        rate: count as f64 / (duration * pairs),
        events: count,
        empty: count == 0,
    })
}

/// Gaps between consecutive onsets of the pair `(a, b)`.
pub fn pair_gaps(events: &[MeetingEvent], a: usize, b: usize) -> Vec<f64> {
    let key = MeetingEvent::new(0.0, a, b).pair();
    let times: Vec<f64> = events.iter().filter(|e| e.pair() == key).map(|e| e.time).collect();
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_test;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rd(speed: f64, range: f64) -> MobilityConfig {
        MobilityConfig::new(MobilityModel::RandomDirection, speed, range)
    }

    fn straight(x: f64, y: f64, theta: f64) -> NodeKinematics {
        NodeKinematics {
            position: Point::new(x, y),
            heading: Heading::Angle(theta),
            leg_remaining: 100.0,
        }
    }

    #[test]
    fn straight_line_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = straight(0.5, 0.5, 0.0).advance(&rd(1.0, 0.1), 0.1, &mut rng);
        assert_abs_diff_eq!(k.position.x, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(k.position.y, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mirror_reflection_at_wall() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = straight(0.95, 0.5, 0.0).advance(&rd(1.0, 0.1), 0.1, &mut rng);
        assert_abs_diff_eq!(k.position.x, 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(k.position.y, 0.5, epsilon = 1e-12);
        // Now heading back towards the interior.
        let Heading::Angle(theta) = k.heading else { panic!() };
        assert_abs_diff_eq!(theta, PI, epsilon = 1e-12);
    }

    #[test]
    fn waypoint_reached_then_replaced() {
        let cfg = MobilityConfig::new(MobilityModel::RandomWaypoint, 1.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = NodeKinematics {
            position: Point::new(0.1, 0.1),
            heading: Heading::Waypoint(Point::new(0.1, 0.3)),
            leg_remaining: 0.2,
        };
        let half = k.advance(&cfg, 0.1, &mut rng);
        assert_abs_diff_eq!(half.position.y, 0.2, epsilon = 1e-12);
        let arrived = k.advance(&cfg, 0.2, &mut rng);
        assert_abs_diff_eq!(arrived.position.y, 0.3, epsilon = 1e-12);
        assert_ne!(arrived.heading, Heading::Waypoint(Point::new(0.1, 0.3)));
    }

    #[test]
    fn theoretical_rates() {
        let l = theoretical_lambda(&rd(1.0, 0.1)).unwrap().get();
        assert_abs_diff_eq!(l, 0.254_647_908_9, epsilon = 1e-9);
        let w = MobilityConfig::new(MobilityModel::RandomWaypoint, 1.0, 0.1);
        assert_abs_diff_eq!(theoretical_lambda(&w).unwrap().get(), 0.348_434_7, epsilon = 1e-6);
        let doubled = theoretical_lambda(&rd(2.0, 0.1)).unwrap().get();
        assert_abs_diff_eq!(doubled, 2.0 * l, epsilon = 1e-15);
        let single: f32 = contact_rate(MobilityModel::RandomDirection, 1.0f32, 0.1);
        assert_abs_diff_eq!(single, 0.254_647_9, epsilon = 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(rd(0.0, 0.1).validate().is_err());
        assert!(rd(1.0, 0.0).validate().is_err());
        assert!(rd(1.0, 1.5).validate().is_err());
        assert!(rd(1.0, 0.3).warning().is_some());
        assert!(rd(1.0, 0.05).warning().is_none());
        assert_abs_diff_eq!(range_for_nodes(0.5, 100), 0.05);
    }

    #[test]
    fn estimate_from_counts() {
        let ev = |k: usize| vec![MeetingEvent::new(1.0, 0, 1); k];
        assert_eq!(estimate_lambda(&ev(100), 2, 50.0).unwrap().rate, 2.0);
        assert_eq!(estimate_lambda(&ev(300), 3, 100.0).unwrap().rate, 1.0);
        let empty = estimate_lambda(&[], 5, 10.0).unwrap();
        assert!(empty.empty && empty.rate == 0.0);
        assert!(empty.meeting_rate().is_err());
    }

    #[test]
    fn estimate_on_synthetic_poisson_trace() {
        let (n, lambda, duration) = (10, 0.5, 500.0);
        let events: Vec<_> = crate::meeting::event_stream(n, MeetingRate::new(lambda).unwrap(), 17)
            .unwrap()
            .take_while(|e| e.time <= duration)
            .collect();
        assert!(events.len() >= 10_000);
        let est = estimate_lambda(&events, n, duration).unwrap();
        assert_abs_diff_eq!(est.rate, lambda, epsilon = 0.03 * lambda);
    }

    #[test]
    fn head_on_pass_gives_single_onset() {
        let mut paths = ScriptedPaths::new(2, 1.0, |t, out: &mut [Point]| {
            out[0] = Point::new(0.2 + t, 0.5);
            out[1] = Point::new(0.8 - t, 0.5);
        });
        let events = detect_contact_onsets(&mut paths, 0.05, 0.6, 0.0125).unwrap();
        assert_eq!(events.len(), 1);
        // Separation 0.6 − 2t reaches 0.05 at t = 0.275.
        assert_abs_diff_eq!(events[0].time, 0.275, epsilon = 1e-9);
    }

    #[test]
    fn oscillating_pair_counts_each_entry() {
        let omega = TAU;
        let mut paths = ScriptedPaths::new(2, 0.06 * omega, move |t, out: &mut [Point]| {
            out[0] = Point::new(0.5, 0.5);
            out[1] = Point::new(0.5 + 0.08 + 0.06 * (omega * t).cos(), 0.5);
        });
        let events = detect_contact_onsets(&mut paths, 0.05, 2.0, 0.01).unwrap();
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| e.pair() == (0, 1)));
    }

    #[test]
    fn coarse_step_rejected() {
        let mut paths = ScriptedPaths::new(2, 1.0, |_, out: &mut [Point]| out.fill(Point::new(0.5, 0.5)));
        let err = detect_contact_onsets(&mut paths, 0.05, 1.0, 0.02).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn onsets_are_debounced_per_pair() {
        let cfg = rd(1.0, 0.08);
        let mut nodes = MobileNodes::new(8, cfg, 3).unwrap();
        let dt = cfg.default_step();
        let mut det = ContactDetector::new(&mut nodes, cfg.range, dt).unwrap();
        let mut positions = vec![Point::default(); 8];
        let mut events = Vec::new();
        // Re-sample a shadow copy to check that between two onsets of a pair the
        // pair was out of range at some sample.
        let mut shadow = MobileNodes::new(8, cfg, 3).unwrap();
        let mut left_since_onset = [true; 64];
        for _ in 0..20_000 {
            let before = events.len();
            det.step(&mut nodes, &mut events);
            shadow.positions_at(det.time(), &mut positions);
            for e in &events[before..] {
                assert!(left_since_onset[e.a * 8 + e.b], "re-onset without leaving range");
                left_since_onset[e.a * 8 + e.b] = false;
            }
            for a in 0..8 {
                for b in a + 1..8 {
                    if positions[a].distance(positions[b]) >= cfg.range {
                        left_since_onset[a * 8 + b] = true;
                    }
                }
            }
        }
        assert!(!events.is_empty());
        assert!(events.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn random_direction_stationary_distribution_is_uniform() {
        let cfg = rd(1.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut nodes: Vec<_> = (0..1000).map(|_| NodeKinematics::spawn(&cfg, &mut rng)).collect();
        let mut cells = [0u64; 100];
        let rounds = 10_000;
        for _ in 0..rounds {
            for node in &mut nodes {
                node.advance_in_place(&cfg, 0.5, &mut rng);
                let p = node.position;
                assert!(p.in_unit_square());
                let cx = ((p.x * 10.0) as usize).min(9);
                let cy = ((p.y * 10.0) as usize).min(9);
                cells[cy * 10 + cx] += 1;
            }
        }
        let expected = (rounds * 1000) as f64 / 100.0;
        for (i, &c) in cells.iter().enumerate() {
            let rel = (c as f64 - expected).abs() / expected;
            assert!(rel < 0.02, "cell {i}: {c} vs {expected}");
        }
    }

    #[test]
    fn spatial_lambda_and_poisson_gaps() {
        let cfg = rd(1.0, 0.05);
        let n = 20;
        let mut nodes = MobileNodes::new(n, cfg, 9).unwrap();
        let duration = 4000.0;
        let events = detect_contact_onsets(&mut nodes, cfg.range, duration, cfg.default_step()).unwrap();
        let est = estimate_lambda(&events, n, duration).unwrap();
        let theory = theoretical_lambda(&cfg).unwrap().get();
        assert!((est.rate - theory).abs() / theory < 0.1, "{} vs {theory}", est.rate);
        let gaps = pair_gaps(&events, 2, 7);
        assert!(gaps.len() > 300);
        let out = ks_test(&gaps, |x| 1.0 - (-est.rate * x).exp());
        assert!(out.passes(0.01), "{out:?}");
    }

    #[test]
    fn lazy_stream_matches_batch_detection() {
        let cfg = rd(1.0, 0.1);
        let batch = detect_contact_onsets(
            &mut MobileNodes::new(6, cfg, 5).unwrap(),
            cfg.range,
            50.0,
            cfg.default_step(),
        )
        .unwrap();
        let lazy: Vec<_> = SpatialContacts::random(6, cfg, 5)
            .unwrap()
            .take_while(|e| e.time <= 50.0)
            .collect();
        assert_eq!(lazy, batch);
    }

    proptest! {
        #[test]
        fn positions_stay_in_square(seed: u64, steps in 1usize..200, dt in 0.001f64..2.0, waypoint: bool) {
            let model = if waypoint { MobilityModel::RandomWaypoint } else { MobilityModel::RandomDirection };
            let cfg = MobilityConfig::new(model, 1.3, 0.05);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut k = NodeKinematics::spawn(&cfg, &mut rng);
            for _ in 0..steps {
                k.advance_in_place(&cfg, dt, &mut rng);
                prop_assert!(k.position.in_unit_square());
            }
        }
    }
}
