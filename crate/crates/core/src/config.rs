//! Scenario parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waterfill::Waterfill;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(
        "road is {road:.0} m long but users may start at {spawn_end:.0} m and travel up to {travel:.0} m in one episode"
    )]
    RoadTooShort { road: f64, spawn_end: f64, travel: f64 },
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

/// Cellular scenario: BSs on a line, users on a parallel road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_users: usize,
    pub num_bs: usize,
    /// Spacing between neighbouring BSs, m.
    pub inter_bs_distance: f64,
    /// Distance between the BS line and the road, m.
    pub road_offset: f64,
    /// Bandwidth per user, Hz.
    pub bandwidth: f64,
    /// Noise power over the user bandwidth, W.
    pub noise_power: f64,
    /// Per-BS power limit, W.
    pub max_bs_power: f64,
    pub path_loss_intercept_db: f64,
    pub path_loss_slope_db: f64,
    /// Segment size in bits.
    pub segment_size: f64,
    /// Per-user segment sizes, overriding `segment_size` when set.
    pub user_segment_sizes: Option<Vec<f64>>,
    pub segments_per_video: usize,
    pub frames_per_segment: usize,
    pub slots_per_frame: usize,
    /// Frame duration, s. The slot duration is `frame_duration / slots_per_frame`.
    pub frame_duration: f64,
    /// Number of past frames of gains kept in the state.
    pub history_depth: usize,
    /// Number of strongest BSs whose gains enter the state.
    pub neighbor_bs_count: usize,
    pub amplifier_efficiency: f64,
    pub circuit_power: f64,
    /// Weight of the per-BS power-limit violation in the reward.
    pub penalty_coefficient: f64,
    pub initial_speed: f64,
    pub speed_bounds: (f64, f64),
    pub acceleration_std: f64,
    /// Users start uniformly within this interval of the road, m.
    pub spawn_interval: (f64, f64),
}

impl Default for SimConfig {
    /// The full-size scenario: 150 s videos of 1 MB, 10 s segments.
    fn default() -> Self {
        Self {
            num_users: 10,
            num_bs: 8,
            inter_bs_distance: 500.0,
            road_offset: 200.0,
            bandwidth: 2e6,
            noise_power: dbm_to_watts(-95.0),
            max_bs_power: dbm_to_watts(46.0),
            path_loss_intercept_db: 35.3,
            path_loss_slope_db: 37.6,
            segment_size: 8e6,
            user_segment_sizes: None,
            segments_per_video: 15,
            frames_per_segment: 10,
            slots_per_frame: 1000,
            frame_duration: 1.0,
            history_depth: 2,
            neighbor_bs_count: 2,
            amplifier_efficiency: 1.0,
            circuit_power: 0.0,
            penalty_coefficient: 0.1,
            initial_speed: 16.0,
            speed_bounds: (12.0, 20.0),
            acceleration_std: 0.5,
            spawn_interval: (0.0, 500.0),
        }
    }
}

impl SimConfig {
    /// Reduced scenario used for desk-scale learning runs: two users, three
    /// segments, 100 slots per frame.
    pub fn desk() -> Self {
        Self {
            num_users: 2,
            num_bs: 3,
            segments_per_video: 3,
            slots_per_frame: 100,
            spawn_interval: (0.0, 300.0),
            ..Self::default()
        }
    }

    pub fn slot_duration(&self) -> f64 {
        self.frame_duration / self.slots_per_frame as f64
    }

    pub fn frame_budget(&self) -> usize {
        self.segments_per_video * self.frames_per_segment
    }

    /// Columns per user row of the state matrix.
    pub fn state_width(&self) -> usize {
        4 + (self.history_depth + 1) * self.neighbor_bs_count
    }

    pub fn road_length(&self) -> f64 {
        (self.num_bs - 1) as f64 * self.inter_bs_distance
    }

    pub fn segment_size_of(&self, user: usize) -> f64 {
        match &self.user_segment_sizes {
            Some(sizes) => sizes[user],
            None => self.segment_size,
        }
    }

    /// Path loss in dB at distance `d` metres.
    pub fn path_loss_db(&self, d: f64) -> f64 {
        self.path_loss_intercept_db + self.path_loss_slope_db * d.log10()
    }

    pub fn waterfill(&self) -> Waterfill {
        Waterfill {
            bandwidth: self.bandwidth,
            noise_power: self.noise_power,
            slot_duration: self.slot_duration(),
            frame_duration: self.frame_duration,
            amplifier_efficiency: self.amplifier_efficiency,
            circuit_power: self.circuit_power,
            rate_ceiling: None,
        }
    }

    /// Average rate at the best on-road position when the BS spends its
    /// full power budget; the actor's output scale.
    pub fn rate_ceiling(&self) -> f64 {
        let best = 10f64.powf(-self.path_loss_db(self.road_offset) / 10.0);
        self.waterfill()
            .rate_at_power(best, self.max_bs_power)
            .expect("validated configuration")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.num_users < 1 {
            return bad("num_users must be at least 1");
        }
        if self.num_bs < 2 {
            return bad("num_bs must be at least 2");
        }
        if self.neighbor_bs_count < 1 || self.neighbor_bs_count > self.num_bs {
            return bad("neighbor_bs_count must lie in 1..=num_bs");
        }
        if self.segments_per_video < 2 {
            return bad("segments_per_video must be at least 2");
        }
        if self.frames_per_segment < 1 || self.slots_per_frame < 1 {
            return bad("frames_per_segment and slots_per_frame must be positive");
        }
        for (name, v) in [
            ("inter_bs_distance", self.inter_bs_distance),
            ("road_offset", self.road_offset),
            ("bandwidth", self.bandwidth),
            ("noise_power", self.noise_power),
            ("max_bs_power", self.max_bs_power),
            ("segment_size", self.segment_size),
            ("frame_duration", self.frame_duration),
            ("amplifier_efficiency", self.amplifier_efficiency),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.circuit_power >= 0.0 && self.penalty_coefficient >= 0.0 && self.acceleration_std >= 0.0) {
            return bad("circuit_power, penalty_coefficient and acceleration_std must be non-negative");
        }
        if let Some(sizes) = &self.user_segment_sizes {
            if sizes.len() != self.num_users || sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad("user_segment_sizes needs one positive size per user");
            }
        }
        let (vmin, vmax) = self.speed_bounds;
        if !(0.0 <= vmin && vmin <= self.initial_speed && self.initial_speed <= vmax) {
            return bad("speed bounds must satisfy 0 <= min <= initial_speed <= max");
        }
        let (s0, s1) = self.spawn_interval;
        if !(0.0 <= s0 && s0 <= s1) {
            return bad("spawn interval must satisfy 0 <= start <= end");
        }
        let travel = vmax * self.frame_budget() as f64 * self.frame_duration;
        if s1 + travel > self.road_length() {
            return Err(ConfigError::RoadTooShort {
                road: self.road_length(),
                spawn_end: s1,
                travel,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        SimConfig::default().validate().unwrap();
        SimConfig::desk().validate().unwrap();
    }

    #[test]
    fn slot_duration_times_slots_is_frame() {
        let c = SimConfig::default();
        assert_eq!(c.slot_duration() * c.slots_per_frame as f64, c.frame_duration);
        assert_eq!(c.slot_duration(), 1e-3);
    }

    #[test]
    fn short_road_is_rejected() {
        let c = SimConfig {
            num_bs: 2,
            ..SimConfig::desk()
        };
        assert!(matches!(c.validate(), Err(ConfigError::RoadTooShort { .. })));
    }

    #[test]
    fn speed_bounds_must_bracket_initial_speed() {
        let c = SimConfig {
            initial_speed: 25.0,
            ..SimConfig::desk()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn power_units() {
        assert!((dbm_to_watts(46.0) - 39.810_717_055).abs() < 1e-6);
        assert!((watts_to_dbm(1.0) - 30.0).abs() < 1e-12);
    }
}
