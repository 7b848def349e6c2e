//! Episodic video-streaming environment.
//!
//! One step is one frame. Every user draws mobility and fading from its own
//! random streams, so relabelling users at reset permutes every per-user
//! output and nothing else.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::waterfill::{Waterfill, WaterfillError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("action has {got} entries for {expected} users")]
    ActionLength { expected: usize, got: usize },
    #[error("action for user {user} is {value}; rates must be finite and non-negative")]
    InvalidAction { user: usize, value: f64 },
    #[error("episode already finished; call reset")]
    EpisodeOver,
    #[error("distance must be positive, got {0}")]
    ZeroDistance(f64),
    #[error("user labels must be a permutation of 0..{0}")]
    BadLabels(usize),
    #[error(transparent)]
    Waterfill(#[from] WaterfillError),
}

/// Row-major `K x width` observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    /// Rows flattened in user order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserKinematics {
    /// Position along the road, m.
    pub position: f64,
    pub velocity: f64,
}

/// Large-scale gains of one user for one frame and the fading drawn in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    /// Linear gains to the `N_b` strongest BSs, strongest first.
    pub large_scale: Vec<f64>,
    /// Index of the serving (strongest) BS.
    pub serving_bs: usize,
    /// Exponential(1) slot gains of the last executed frame.
    pub small_scale: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserProgress {
    /// Downloaded but not yet played bits.
    pub buffer_bits: f64,
    /// 1-based frame index within the segment being played.
    pub playback_frame: usize,
    /// Fraction of segments `2..=N_v` downloaded.
    pub downloaded_fraction: f64,
    /// Realized delivered bits.
    pub cumulative_delivered: f64,
    /// `sum rate * frame_duration` over executed actions.
    pub cumulative_planned: f64,
    /// 1-based segment being played.
    pub current_segment: usize,
    /// Deadlines at which realized delivery fell short.
    pub stalls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: StateMatrix,
    pub per_user_energy: Vec<f64>,
    pub per_user_delivered_bits: Vec<f64>,
    /// Rates actually executed (zero for users that finished downloading).
    pub executed_rates: Vec<f64>,
    /// `sum_m (E_m - P_max * frame_duration)^+` over BSs.
    pub penalty: f64,
    /// Stalls newly recorded in this frame.
    pub stalls: usize,
    pub done: bool,
}

impl StepOutcome {
    pub fn energy(&self) -> f64 {
        self.per_user_energy.iter().sum()
    }
}

/// Path-loss gain (linear) at distance `d`.
pub fn large_scale_gain(config: &SimConfig, d: f64) -> Result<f64, SimError> {
    if !(d > 0.0) {
        return Err(SimError::ZeroDistance(d));
    }
    Ok(10f64.powf(-config.path_loss_db(d) / 10.0))
}

/// One frame of random-acceleration motion. Velocity is clamped to the
/// speed bounds, then the position advances by one frame of travel.
pub fn advance_mobility(
    config: &SimConfig,
    kinematics: UserKinematics,
    acceleration: f64,
) -> UserKinematics {
    let (lo, hi) = config.speed_bounds;
    let velocity = (kinematics.velocity + acceleration * config.frame_duration).clamp(lo, hi);
    UserKinematics {
        position: kinematics.position + velocity * config.frame_duration,
        velocity,
    }
}

/// Draws an acceleration for one frame.
pub fn sample_acceleration(config: &SimConfig, rng: &mut ChaCha8Rng) -> f64 {
    if config.acceleration_std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, config.acceleration_std)
        .expect("validated std")
        .sample(rng)
}

#[derive(Debug, Clone)]
struct User {
    mobility_rng: ChaCha8Rng,
    fading_rng: ChaCha8Rng,
    kinematics: UserKinematics,
    history: VecDeque<Vec<f64>>,
    serving_bs: usize,
    small_scale: Vec<f64>,
    progress: UserProgress,
    segment_size: f64,
}

impl User {
    fn required_total(&self, config: &SimConfig) -> f64 {
        self.segment_size * (config.segments_per_video - 1) as f64
    }

    fn serving_gain(&self) -> f64 {
        self.history.back().expect("history is never empty")[0]
    }
}

/// The environment. Holds no state shared with other instances.
#[derive(Debug, Clone)]
pub struct Env {
    config: SimConfig,
    waterfill: Waterfill,
    users: Vec<User>,
    frame: usize,
    done: bool,
    /// dB range mapped onto [0, 1] in the state.
    gain_db_range: (f64, f64),
}

impl Env {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let hi = -config.path_loss_db(config.road_offset);
        let far = config
            .road_offset
            .hypot(config.neighbor_bs_count as f64 * config.inter_bs_distance);
        let lo = -config.path_loss_db(far);
        let waterfill = config.waterfill();
        Ok(Self {
            config,
            waterfill,
            users: Vec::new(),
            frame: 0,
            done: true,
            gain_db_range: (lo, hi),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn num_users(&self) -> usize {
        self.config.num_users
    }

    /// Frames executed so far in this episode.
    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn progress(&self, user: usize) -> &UserProgress {
        &self.users[user].progress
    }

    pub fn kinematics(&self, user: usize) -> UserKinematics {
        self.users[user].kinematics
    }

    pub fn planned_delivered(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.progress.cumulative_planned).collect()
    }

    pub fn realized_delivered(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.progress.cumulative_delivered).collect()
    }

    pub fn segment_sizes(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.segment_size).collect()
    }

    pub fn channel(&self, user: usize) -> ChannelSnapshot {
        let u = &self.users[user];
        ChannelSnapshot {
            large_scale: u.history.back().unwrap().clone(),
            serving_bs: u.serving_bs,
            small_scale: u.small_scale.clone(),
        }
    }

    /// Serving gains `alpha_t^k` for the frame about to execute.
    pub fn serving_gains(&self) -> Vec<f64> {
        self.users.iter().map(User::serving_gain).collect()
    }

    /// Starts an episode with user `k` drawing from random stream `k`.
    pub fn reset(&mut self, seed: u64) -> StateMatrix {
        let labels: Vec<usize> = (0..self.config.num_users).collect();
        self.reset_with_labels(seed, &labels).expect("identity labels")
    }

    /// Starts an episode where user slot `k` draws from stream `labels[k]`.
    pub fn reset_with_labels(&mut self, seed: u64, labels: &[usize]) -> Result<StateMatrix, SimError> {
        let k = self.config.num_users;
        let mut seen = vec![false; k];
        if labels.len() != k {
            return Err(SimError::BadLabels(k));
        }
        for &l in labels {
            if l >= k || seen[l] {
                return Err(SimError::BadLabels(k));
            }
            seen[l] = true;
        }
        let cfg = &self.config;
        self.users = labels
            .iter()
            .map(|&label| {
                let mut mobility_rng = ChaCha8Rng::seed_from_u64(seed);
                mobility_rng.set_stream(2 * label as u64);
                let mut fading_rng = ChaCha8Rng::seed_from_u64(seed);
                fading_rng.set_stream(2 * label as u64 + 1);
                let (s0, s1) = cfg.spawn_interval;
                let u: f64 = rand::Rng::random(&mut mobility_rng);
                let kinematics = UserKinematics {
                    position: s0 + (s1 - s0) * u,
                    velocity: cfg.initial_speed,
                };
                let segment_size = cfg.segment_size_of(label);
                let (gains, serving_bs) = neighbour_gains(cfg, kinematics.position);
                let history = std::iter::repeat_n(gains, cfg.history_depth + 1).collect();
                User {
                    mobility_rng,
                    fading_rng,
                    kinematics,
                    history,
                    serving_bs,
                    small_scale: Vec::new(),
                    progress: UserProgress {
                        buffer_bits: segment_size,
                        playback_frame: 1,
                        downloaded_fraction: 0.0,
                        cumulative_delivered: 0.0,
                        cumulative_planned: 0.0,
                        current_segment: 1,
                        stalls: 0,
                    },
                    segment_size,
                }
            })
            .collect();
        self.frame = 0;
        self.done = false;
        Ok(self.build_state())
    }

    /// Executes one frame with per-user average rates (b/s).
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, SimError> {
        if self.done {
            return Err(SimError::EpisodeOver);
        }
        let k = self.config.num_users;
        if action.len() != k {
            return Err(SimError::ActionLength {
                expected: k,
                got: action.len(),
            });
        }
        for (user, &value) in action.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SimError::InvalidAction { user, value });
            }
        }
        let cfg = self.config.clone();
        let dt = cfg.frame_duration;
        let mut per_bs_energy = vec![0.0; cfg.num_bs];
        let mut energy = Vec::with_capacity(k);
        let mut delivered = Vec::with_capacity(k);
        let mut executed = Vec::with_capacity(k);
        for (user, &rate) in self.users.iter_mut().zip(action) {
            // fading is drawn every frame so the stream stays aligned
            let gains: Vec<f64> = (0..cfg.slots_per_frame)
                .map(|_| Exp1.sample(&mut user.fading_rng))
                .collect();
            let rate = if user.progress.downloaded_fraction >= 1.0 { 0.0 } else { rate };
            let alpha = user.serving_gain();
            let nu = self.waterfill.water_level_for_rate(alpha, rate)?.water_level;
            let slots = self.waterfill.slot_powers(alpha, nu, &gains);
            per_bs_energy[user.serving_bs] += slots.radiated_energy;
            energy.push(slots.energy);
            delivered.push(slots.delivered_bits);
            executed.push(rate);
            user.small_scale = gains;
            user.progress.cumulative_delivered += slots.delivered_bits;
            user.progress.cumulative_planned += rate * dt;
        }
        let cap = cfg.max_bs_power * dt;
        let penalty: f64 = per_bs_energy.iter().map(|e| (e - cap).max(0.0)).sum();
        let reward = -energy.iter().sum::<f64>() - cfg.penalty_coefficient * penalty;

        self.frame += 1;
        let t = self.frame;
        let mut new_stalls = 0;
        for user in &mut self.users {
            let s = user.segment_size;
            let total = user.required_total(&cfg);
            let p = &mut user.progress;
            if t % cfg.frames_per_segment == 0 {
                let l = t / cfg.frames_per_segment;
                if l < cfg.segments_per_video && p.cumulative_delivered < s * l as f64 {
                    p.stalls += 1;
                    new_stalls += 1;
                }
            }
            let played = t as f64 * s / cfg.frames_per_segment as f64;
            p.buffer_bits = (s + p.cumulative_delivered - played).max(0.0);
            p.playback_frame = t % cfg.frames_per_segment + 1;
            p.current_segment = (t / cfg.frames_per_segment + 1).min(cfg.segments_per_video);
            p.downloaded_fraction = (p.cumulative_delivered / total).min(1.0);

            let a = sample_acceleration(&cfg, &mut user.mobility_rng);
            user.kinematics = advance_mobility(&cfg, user.kinematics, a);
            let (gains, serving) = neighbour_gains(&cfg, user.kinematics.position);
            user.history.pop_front();
            user.history.push_back(gains);
            user.serving_bs = serving;
        }
        let all_downloaded = self.users.iter().all(|u| u.progress.downloaded_fraction >= 1.0);
        self.done = all_downloaded || t >= cfg.frame_budget();
        Ok(StepOutcome {
            reward,
            next_state: self.build_state(),
            per_user_energy: energy,
            per_user_delivered_bits: delivered,
            executed_rates: executed,
            penalty,
            stalls: new_stalls,
            done: self.done,
        })
    }

    /// Normalized observation: per user `[B / S, l / N_f, eta, (M + 1) / num_bs,
    /// gains oldest to newest]` with gains in dB mapped affinely so the
    /// on-road range is roughly [0, 1].
    pub fn build_state(&self) -> StateMatrix {
        let cfg = &self.config;
        let width = cfg.state_width();
        let (lo, hi) = self.gain_db_range;
        let mut data = Vec::with_capacity(cfg.num_users * width);
        for u in &self.users {
            let p = &u.progress;
            data.push(p.buffer_bits / u.segment_size);
            data.push(p.playback_frame as f64 / cfg.frames_per_segment as f64);
            data.push(p.downloaded_fraction);
            data.push((u.serving_bs + 1) as f64 / cfg.num_bs as f64);
            for frame in &u.history {
                for &g in frame {
                    data.push((10.0 * g.log10() - lo) / (hi - lo));
                }
            }
        }
        StateMatrix::new(cfg.num_users, width, data)
    }
}

/// Gains to the `N_b` strongest BSs (strongest first) and the serving BS.
fn neighbour_gains(config: &SimConfig, position: f64) -> (Vec<f64>, usize) {
    let mut all: Vec<(f64, usize)> = (0..config.num_bs)
        .map(|m| {
            let d = (position - m as f64 * config.inter_bs_distance).hypot(config.road_offset);
            (large_scale_gain(config, d).expect("road offset is positive"), m)
        })
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let serving = all[0].1;
    (all.iter().take(config.neighbor_bs_count).map(|(g, _)| *g).collect(), serving)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_user() -> SimConfig {
        SimConfig {
            num_users: 1,
            ..SimConfig::desk()
        }
    }

    #[test]
    fn reset_starts_with_a_full_first_segment() {
        let mut env = Env::new(single_user()).unwrap();
        let s = env.reset(7);
        assert_eq!(s.shape(), (1, 10));
        let row = s.row(0);
        assert_eq!(row[0], 1.0);
        assert_eq!(row[1], 1.0 / 10.0);
        assert_eq!(row[2], 0.0);
        assert_eq!(env.progress(0).playback_frame, 1);
    }

    #[test]
    fn state_width_without_history() {
        let cfg = SimConfig {
            history_depth: 0,
            ..SimConfig::desk()
        };
        let mut env = Env::new(cfg).unwrap();
        assert_eq!(env.reset(1).shape(), (2, 4 + 2));
    }

    #[test]
    fn path_loss_reference_points() {
        let c = SimConfig::default();
        assert_eq!(c.path_loss_db(1.0), 35.3);
        assert!((c.path_loss_db(10.0) - 72.9).abs() < 1e-12);
        let at_200 = 35.3 + 37.6 * 200f64.log10();
        let g = large_scale_gain(&c, 200.0).unwrap();
        assert!((-10.0 * g.log10() - at_200).abs() < 1e-9);
        assert_eq!(large_scale_gain(&c, 0.0).unwrap_err(), SimError::ZeroDistance(0.0));
    }

    #[test]
    fn mobility_clamps_and_moves() {
        let c = SimConfig::default();
        let k = advance_mobility(&c, UserKinematics { position: 0.0, velocity: 20.0 }, 1.0);
        assert_eq!(k.velocity, 20.0);
        let k = advance_mobility(&c, UserKinematics { position: 5.0, velocity: 16.0 }, 0.0);
        assert_eq!(k.position, 5.0 + 16.0 * c.frame_duration);
        let k = advance_mobility(&c, UserKinematics { position: 0.0, velocity: 12.5 }, -3.0);
        assert_eq!(k.velocity, 12.0);
    }

    #[test]
    fn zero_action_costs_nothing() {
        let mut env = Env::new(SimConfig::desk()).unwrap();
        env.reset(3);
        let out = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.penalty, 0.0);
        assert!(out.per_user_delivered_bits.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let mut env = Env::new(SimConfig::desk()).unwrap();
        env.reset(3);
        assert!(matches!(env.step(&[1.0]), Err(SimError::ActionLength { .. })));
        assert!(matches!(env.step(&[1.0, f64::NAN]), Err(SimError::InvalidAction { user: 1, .. })));
        assert!(matches!(env.step(&[-1.0, 0.0]), Err(SimError::InvalidAction { user: 0, .. })));
    }

    #[test]
    fn light_load_has_no_penalty() {
        let mut env = Env::new(single_user()).unwrap();
        env.reset(5);
        let out = env.step(&[8e5]).unwrap();
        assert_eq!(out.penalty, 0.0);
        assert!(out.reward < 0.0);
        assert_eq!(out.reward, -out.energy());
    }

    #[test]
    fn one_frame_matches_hand_evaluation() {
        let cfg = SimConfig {
            slots_per_frame: 4,
            ..single_user()
        };
        let mut env = Env::new(cfg.clone()).unwrap();
        env.reset(11);
        let alpha = env.serving_gains()[0];
        let rate = 1.2e6;
        let out = env.step(&[rate]).unwrap();
        let g = env.channel(0).small_scale;
        assert_eq!(g.len(), 4);
        let nu = cfg.waterfill().water_level_for_rate(alpha, rate).unwrap().water_level;
        let tau = 0.25;
        let mut bits = 0.0;
        let mut energy = 0.0;
        for gj in g {
            let p = f64::max(nu - cfg.noise_power / (alpha * gj), 0.0);
            bits += tau * cfg.bandwidth * (1.0 + alpha * gj * p / cfg.noise_power).log2();
            energy += tau * p;
        }
        assert!((out.per_user_delivered_bits[0] - bits).abs() <= 1e-9 * bits.max(1.0));
        assert!((out.per_user_energy[0] - energy).abs() <= 1e-12 * energy.max(1.0));
    }

    #[test]
    fn bad_labels_are_rejected() {
        let mut env = Env::new(SimConfig::desk()).unwrap();
        assert!(env.reset_with_labels(0, &[0, 0]).is_err());
        assert!(env.reset_with_labels(0, &[0]).is_err());
        assert!(env.reset_with_labels(0, &[1, 0]).is_ok());
    }

    #[test]
    fn stepping_after_done_fails() {
        let mut env = Env::new(single_user()).unwrap();
        env.reset(0);
        while !env.is_done() {
            env.step(&[0.0]).unwrap();
        }
        assert_eq!(env.frame(), env.config().frame_budget());
        assert_eq!(env.step(&[0.0]).unwrap_err(), SimError::EpisodeOver);
    }
}
