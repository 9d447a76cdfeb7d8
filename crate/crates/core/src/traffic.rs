//! Closed-loop virtual-user load patterns.
//!
//! A pattern only describes how many users are active at time `t`; the
//! simulator owns the users themselves (see [`crate::sim::Simulation`]), so
//! latency feeds back into the offered load the way a Locust swarm does.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Ramp,
    Periodic,
    Random,
    Spike,
}

impl PatternKind {
    /// Rotation order used for episodes and reports.
    pub const ALL: [PatternKind; 4] = [
        PatternKind::Ramp,
        PatternKind::Periodic,
        PatternKind::Random,
        PatternKind::Spike,
    ];

    pub fn index(self) -> usize {
        match self {
            PatternKind::Ramp => 0,
            PatternKind::Periodic => 1,
            PatternKind::Random => 2,
            PatternKind::Spike => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Ramp => "ramp",
            PatternKind::Periodic => "periodic",
            PatternKind::Random => "random",
            PatternKind::Spike => "spike",
        }
    }

    /// Pattern identifier scaled into `[0, 1]`.
    pub fn id_scalar(self) -> f64 {
        self.index() as f64 / (Self::ALL.len() - 1) as f64
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ramp" => Ok(PatternKind::Ramp),
            "periodic" => Ok(PatternKind::Periodic),
            "random" => Ok(PatternKind::Random),
            "spike" => Ok(PatternKind::Spike),
            other => Err(Error::UnknownPattern(other.to_string())),
        }
    }
}

/// Shape parameters shared by all four patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub u_min: usize,
    pub u_max: usize,
    /// Think time between a response and the user's next request, seconds.
    pub hold: f64,
    pub period: f64,
    pub spike_at: f64,
    pub spike_len: f64,
    /// Redraw interval of the random pattern, seconds.
    pub random_interval: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            u_min: 5,
            u_max: 50,
            hold: 0.5,
            period: 120.0,
            spike_at: 100.0,
            spike_len: 30.0,
            random_interval: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub u_min: usize,
    pub u_max: usize,
    pub period: f64,
    pub spike_at: f64,
    pub spike_len: f64,
    pub hold: f64,
    pub random_interval: f64,
    /// Length of the run the curve is defined over, seconds.
    pub duration: f64,
    pub seed: u64,
}

impl PatternSpec {
    pub fn new(kind: PatternKind, cfg: &TrafficConfig, duration: f64, seed: u64) -> Self {
        Self {
            kind,
            u_min: cfg.u_min,
            u_max: cfg.u_max,
            period: cfg.period,
            spike_at: cfg.spike_at,
            spike_len: cfg.spike_len,
            hold: cfg.hold,
            random_interval: cfg.random_interval,
            duration,
            seed,
        }
    }

    /// A constant user population, handy for calibration runs.
    pub fn constant(users: usize, hold: f64, duration: f64) -> Self {
        Self {
            kind: PatternKind::Ramp,
            u_min: users,
            u_max: users,
            period: 1.0,
            spike_at: 0.0,
            spike_len: 0.0,
            hold,
            random_interval: 15.0,
            duration,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_min > self.u_max {
            return Err(Error::InvalidPattern(format!(
                "u_min {} > u_max {}",
                self.u_min, self.u_max
            )));
        }
        if !(self.duration >= 0.0) || !(self.hold >= 0.0) {
            return Err(Error::InvalidPattern(
                "duration and hold must be non-negative".into(),
            ));
        }
        if self.kind == PatternKind::Periodic && !(self.period > 0.0) {
            return Err(Error::InvalidPattern("period must be positive".into()));
        }
        if self.kind == PatternKind::Random && !(self.random_interval > 0.0) {
            return Err(Error::InvalidPattern(
                "random_interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Piecewise-constant user count, sampled at the points where it changes.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCountCurve {
    pub samples: Vec<(f64, usize)>,
}

impl UserCountCurve {
    pub fn at(&self, t: f64) -> usize {
        let idx = self.samples.partition_point(|&(ts, _)| ts <= t);
        if idx == 0 {
            self.samples.first().map_or(0, |s| s.1)
        } else {
            self.samples[idx - 1].1
        }
    }
}

/// A validated pattern with its random levels pre-drawn.
#[derive(Debug, Clone)]
pub struct TrafficPattern {
    spec: PatternSpec,
    random_levels: Vec<usize>,
}

impl TrafficPattern {
    pub fn new(spec: PatternSpec) -> Result<Self> {
        spec.validate()?;
        let random_levels = if spec.kind == PatternKind::Random {
            let mut rng = rng::seeded(rng::derive_seed(spec.seed, rng::streams::TRAFFIC_CURVE));
            let n = (spec.duration / spec.random_interval).floor() as usize + 1;
            (0..n)
                .map(|_| rng.gen_range(spec.u_min..=spec.u_max))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            spec,
            random_levels,
        })
    }

    pub fn spec(&self) -> &PatternSpec {
        &self.spec
    }

    pub fn kind(&self) -> PatternKind {
        self.spec.kind
    }

    pub fn user_count(&self, t: f64) -> Result<usize> {
        let s = &self.spec;
        if !(0.0..=s.duration).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                duration: s.duration,
            });
        }
        let span = (s.u_max - s.u_min) as f64;
        let users = match s.kind {
            PatternKind::Ramp => {
                let frac = if s.duration > 0.0 { t / s.duration } else { 1.0 };
                s.u_min + (span * frac).round() as usize
            }
            PatternKind::Periodic => {
                let phase = 2.0 * std::f64::consts::PI * t / s.period - std::f64::consts::FRAC_PI_2;
                let level = span * (1.0 + phase.sin()) / 2.0;
                s.u_min + level.round() as usize
            }
            PatternKind::Random => {
                let idx = (t / s.random_interval).floor() as usize;
                self.random_levels[idx.min(self.random_levels.len() - 1)]
            }
            PatternKind::Spike => {
                if t >= s.spike_at && t < s.spike_at + s.spike_len {
                    s.u_max
                } else {
                    s.u_min
                }
            }
        };
        Ok(users.min(s.u_max))
    }

    /// Samples the curve every `step` seconds, keeping only change points.
    pub fn curve(&self, step: f64) -> UserCountCurve {
        let mut samples: Vec<(f64, usize)> = Vec::new();
        let n = (self.spec.duration / step).floor() as usize;
        for i in 0..=n {
            let t = i as f64 * step;
            let u = self.user_count(t).expect("t within duration");
            if samples.last().map_or(true, |&(_, prev)| prev != u) {
                samples.push((t, u));
            }
        }
        UserCountCurve { samples }
    }
}

/// Convenience wrapper around [`TrafficPattern::user_count`].
pub fn user_count(spec: &PatternSpec, t: f64) -> Result<usize> {
    TrafficPattern::new(spec.clone())?.user_count(t)
}

/// Lifecycle of one closed-loop virtual user.
#[derive(Debug, Clone, Default)]
struct VirtualUser {
    live: bool,
    retiring: bool,
    in_flight: bool,
    /// Bumped whenever a user is deactivated so stale arrivals are ignored.
    generation: u64,
}

/// A scheduled first request of a newly activated user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedArrival {
    pub user: usize,
    pub generation: u64,
    pub at: f64,
}

/// Closed-loop virtual users following a [`TrafficPattern`]: each user issues
/// a request, waits for it to finish, thinks for `hold` seconds and repeats.
/// Users removed by the curve leave only after their in-flight request
/// completes.
#[derive(Debug, Clone)]
pub struct LoadGenerator {
    pattern: TrafficPattern,
    users: Vec<VirtualUser>,
    target: usize,
    jitter: rand_chacha::ChaCha8Rng,
}

impl LoadGenerator {
    pub fn new(pattern: TrafficPattern) -> Self {
        let jitter = rng::seeded(rng::derive_seed(
            pattern.spec().seed,
            rng::streams::TRAFFIC_JITTER,
        ));
        Self {
            pattern,
            users: Vec::new(),
            target: 0,
            jitter,
        }
    }

    pub fn pattern(&self) -> &TrafficPattern {
        &self.pattern
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn hold(&self) -> f64 {
        self.pattern.spec().hold
    }

    /// Users currently alive, including those waiting to retire.
    pub fn live_users(&self) -> usize {
        self.users.iter().filter(|u| u.live).count()
    }

    pub fn in_flight(&self) -> usize {
        self.users.iter().filter(|u| u.in_flight).count()
    }

    /// Follows the curve at `now` (clamped to the pattern duration) and
    /// returns first arrivals for newly activated users.
    pub fn retarget(&mut self, now: f64) -> Vec<PlannedArrival> {
        let t = now.clamp(0.0, self.pattern.spec().duration);
        self.target = self.pattern.user_count(t).expect("clamped into duration");
        let mut planned = Vec::new();

        let mut active = self.users.iter().filter(|u| u.live && !u.retiring).count();
        // Cancel pending retirements first: those users are still in flight.
        for u in self.users.iter_mut() {
            if active >= self.target {
                break;
            }
            if u.live && u.retiring {
                u.retiring = false;
                active += 1;
            }
        }
        while active < self.target {
            let idx = match self.users.iter().position(|u| !u.live) {
                Some(i) => i,
                None => {
                    self.users.push(VirtualUser::default());
                    self.users.len() - 1
                }
            };
            let hold = self.pattern.spec().hold;
            let offset = if hold > 0.0 {
                self.jitter.gen_range(0.0..hold)
            } else {
                0.0
            };
            let u = &mut self.users[idx];
            u.live = true;
            u.retiring = false;
            u.generation += 1;
            planned.push(PlannedArrival {
                user: idx,
                generation: u.generation,
                at: now + offset,
            });
            active += 1;
        }
        if active > self.target {
            let mut excess = active - self.target;
            for u in self.users.iter_mut().rev() {
                if excess == 0 {
                    break;
                }
                if !u.live || u.retiring {
                    continue;
                }
                if u.in_flight {
                    u.retiring = true;
                } else {
                    u.live = false;
                    u.generation += 1;
                }
                excess -= 1;
            }
        }
        planned
    }

    /// Validates an arrival; marks the user in flight when it is current.
    pub fn on_arrival(&mut self, user: usize, generation: u64) -> bool {
        match self.users.get_mut(user) {
            Some(u) if u.live && u.generation == generation && !u.in_flight => {
                u.in_flight = true;
                true
            }
            _ => false,
        }
    }

    /// Returns the user's next arrival, or `None` if the user retired.
    pub fn on_complete(&mut self, user: usize, now: f64) -> Option<PlannedArrival> {
        let hold = self.pattern.spec().hold;
        let u = self.users.get_mut(user)?;
        u.in_flight = false;
        if u.retiring || !u.live {
            u.live = false;
            u.retiring = false;
            u.generation += 1;
            return None;
        }
        Some(PlannedArrival {
            user,
            generation: u.generation,
            at: now + hold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: PatternKind) -> PatternSpec {
        PatternSpec::new(kind, &TrafficConfig::default(), 300.0, 11)
    }

    #[test]
    fn ramp_starts_at_u_min_and_ends_at_u_max() {
        let p = TrafficPattern::new(spec(PatternKind::Ramp)).unwrap();
        assert_eq!(p.user_count(0.0).unwrap(), 5);
        assert_eq!(p.user_count(300.0).unwrap(), 50);
    }

    #[test]
    fn spike_window() {
        let p = TrafficPattern::new(spec(PatternKind::Spike)).unwrap();
        assert_eq!(p.user_count(115.0).unwrap(), 50);
        assert_eq!(p.user_count(99.9).unwrap(), 5);
        assert_eq!(p.user_count(130.0).unwrap(), 5);
    }

    #[test]
    fn periodic_trough_at_zero_and_peak_at_half_period() {
        let p = TrafficPattern::new(spec(PatternKind::Periodic)).unwrap();
        assert_eq!(p.user_count(0.0).unwrap(), 5);
        assert_eq!(p.user_count(60.0).unwrap(), 50);
    }

    #[test]
    fn time_outside_episode_is_rejected() {
        let p = TrafficPattern::new(spec(PatternKind::Ramp)).unwrap();
        assert!(matches!(
            p.user_count(300.5),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(p.user_count(-1.0).is_err());
    }

    #[test]
    fn random_pattern_reproduces_with_seed() {
        let a = TrafficPattern::new(spec(PatternKind::Random)).unwrap();
        let b = TrafficPattern::new(spec(PatternKind::Random)).unwrap();
        assert_eq!(a.curve(1.0), b.curve(1.0));
        let mut other = spec(PatternKind::Random);
        other.seed = 12;
        let c = TrafficPattern::new(other).unwrap();
        assert_ne!(a.curve(1.0), c.curve(1.0));
    }

    #[test]
    fn random_pattern_constant_within_interval() {
        let p = TrafficPattern::new(spec(PatternKind::Random)).unwrap();
        for k in 0..20 {
            let base = p.user_count(k as f64 * 15.0).unwrap();
            for dt in [0.5, 7.0, 14.9] {
                assert_eq!(p.user_count(k as f64 * 15.0 + dt).unwrap(), base);
            }
        }
    }

    #[test]
    fn spike_takes_exactly_two_values() {
        let curve = TrafficPattern::new(spec(PatternKind::Spike)).unwrap().curve(0.5);
        let mut values: Vec<usize> = curve.samples.iter().map(|s| s.1).collect();
        values.sort_unstable();
        values.dedup();
        assert_eq!(values, vec![5, 50]);
    }

    #[test]
    fn curve_lookup_matches_direct_evaluation() {
        let p = TrafficPattern::new(spec(PatternKind::Periodic)).unwrap();
        let curve = p.curve(1.0);
        for i in 0..300 {
            let t = i as f64;
            assert_eq!(curve.at(t), p.user_count(t).unwrap());
        }
    }

    #[test]
    fn pattern_names_parse() {
        for k in PatternKind::ALL {
            assert_eq!(k.name().parse::<PatternKind>().unwrap(), k);
        }
        assert!(matches!(
            "burst".parse::<PatternKind>(),
            Err(Error::UnknownPattern(_))
        ));
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut s = spec(PatternKind::Ramp);
        s.u_min = 60;
        assert!(TrafficPattern::new(s).is_err());
    }

    proptest! {
        #[test]
        fn counts_stay_within_bounds(kind in 0usize..4, t in 0.0f64..=300.0,
                                     u_min in 0usize..20, extra in 0usize..60, seed: u64) {
            let mut s = spec(PatternKind::ALL[kind]);
            s.u_min = u_min;
            s.u_max = u_min + extra;
            s.seed = seed;
            let p = TrafficPattern::new(s).unwrap();
            let u = p.user_count(t).unwrap();
            prop_assert!(u >= u_min && u <= u_min + extra);
        }

        #[test]
        fn periodic_repeats_every_period(t in 0.0f64..180.0) {
            let p = TrafficPattern::new(spec(PatternKind::Periodic)).unwrap();
            prop_assert_eq!(p.user_count(t).unwrap(), p.user_count(t + 120.0).unwrap());
        }

        #[test]
        fn ramp_is_monotone(a in 0.0f64..=300.0, b in 0.0f64..=300.0) {
            let p = TrafficPattern::new(spec(PatternKind::Ramp)).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.user_count(lo).unwrap() <= p.user_count(hi).unwrap());
        }
    }
}
