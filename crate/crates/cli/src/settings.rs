//! Flat `key = value` run configuration with `sim.*`, `nn.*`, `agent.*` and
//! `run.*` namespaces.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ppa_core::agent::AgentConfig;
use ppa_core::config::{dbm_to_watts, ConfigError, SimConfig};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("{0}")]
    Agent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Full,
    Desk,
}

impl Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            _ => Err("expected `full` or `desk`".into()),
        }
    }
}

impl Preset {
    pub fn sim(self) -> SimConfig {
        match self {
            Preset::Full => SimConfig::default(),
            Preset::Desk => SimConfig::desk(),
        }
    }

    pub fn agent(self) -> AgentConfig {
        match self {
            Preset::Full => AgentConfig::default(),
            Preset::Desk => AgentConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err("expected `f32` or `f64`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Moving-average window of the `return_smoothed` column.
    pub smoothing_window: usize,
    /// Episodes per seed for `eval` and `oracle`.
    pub eval_episodes: usize,
    pub checkpoint: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            episodes: 2000,
            seeds: vec![0],
            smoothing_window: 400,
            eval_episodes: 100,
            checkpoint: true,
        }
    }
}

/// Everything a command needs, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub precision: Precision,
    pub run: RunSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let run = RunSettings::default();
        Self {
            preset: Preset::Full,
            sim: SimConfig::default(),
            agent: AgentConfig {
                noise_horizon: run.episodes,
                ..AgentConfig::default()
            },
            precision: Precision::F32,
            run,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, SettingsError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| SettingsError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, SettingsError>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `0,3,7` or a half-open range `0..10`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>, SettingsError> {
    let seeds = if let Some((a, b)) = value.split_once("..") {
        let a: u64 = parse("run.seeds", a.trim())?;
        let b: u64 = parse("run.seeds", b.trim())?;
        (a..b).collect()
    } else {
        parse_list("run.seeds", value)?
    };
    if seeds.is_empty() {
        return Err(SettingsError::BadValue {
            key: "run.seeds".into(),
            value: value.into(),
            reason: "no seeds".into(),
        });
    }
    Ok(seeds)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Splits config text into `(key, value)` pairs. `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>, SettingsError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SettingsError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Builds a configuration from entries in order. `preset` is applied
    /// first wherever it appears; later entries override earlier ones.
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self, SettingsError> {
        let mut cfg = RunConfig::default();
        if let Some((k, v)) = entries.iter().rev().find(|(k, _)| k == "preset") {
            cfg.preset = parse(k, v)?;
            cfg.sim = cfg.preset.sim();
            cfg.agent = cfg.preset.agent();
        }
        let mut unknown = Vec::new();
        let mut horizon_set = false;
        for (k, v) in entries {
            if k == "agent.noise_horizon" {
                horizon_set = true;
            }
            if !cfg.set(k, v)? {
                unknown.push(k.clone());
            }
        }
        if !unknown.is_empty() {
            return Err(SettingsError::UnknownKeys(unknown));
        }
        if !horizon_set {
            cfg.agent.noise_horizon = cfg.run.episodes;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads an optional file, then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, SettingsError> {
        let mut entries = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| SettingsError::Io {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })?;
                parse_entries(&text)?
            }
            None => Vec::new(),
        };
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| SettingsError::Syntax {
                line: 0,
                text: o.clone(),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_entries(&entries)
    }

    pub fn validate(&self) -> Result<(), SettingsError> {
        self.sim.validate()?;
        let a = &self.agent;
        let bad = |m: &str| Err(SettingsError::Agent(m.to_string()));
        if a.hidden_width == 0 || a.batch_size == 0 || a.buffer_capacity < a.batch_size {
            return bad("hidden_width and batch_size must be positive and buffer_capacity >= batch_size");
        }
        if !(a.soft_update > 0.0 && a.soft_update <= 1.0) {
            return bad("agent.soft_update must lie in (0, 1]");
        }
        if !(a.discount > 0.0 && a.discount <= 1.0) {
            return bad("agent.discount must lie in (0, 1]");
        }
        if self.run.smoothing_window == 0 {
            return bad("run.smoothing_window must be at least 1");
        }
        Ok(())
    }

    /// Returns `false` for unknown keys.
    fn set(&mut self, key: &str, v: &str) -> Result<bool, SettingsError> {
        let s = &mut self.sim;
        let a = &mut self.agent;
        let r = &mut self.run;
        match key {
            "preset" => {}
            "sim.num_users" => s.num_users = parse(key, v)?,
            "sim.num_bs" => s.num_bs = parse(key, v)?,
            "sim.inter_bs_distance" => s.inter_bs_distance = parse(key, v)?,
            "sim.road_offset" => s.road_offset = parse(key, v)?,
            "sim.bandwidth" => s.bandwidth = parse(key, v)?,
            "sim.noise_power_w" => s.noise_power = parse(key, v)?,
            "sim.noise_power_dbm" => s.noise_power = dbm_to_watts(parse(key, v)?),
            "sim.max_bs_power_w" => s.max_bs_power = parse(key, v)?,
            "sim.max_bs_power_dbm" => s.max_bs_power = dbm_to_watts(parse(key, v)?),
            "sim.path_loss_intercept_db" => s.path_loss_intercept_db = parse(key, v)?,
            "sim.path_loss_slope_db" => s.path_loss_slope_db = parse(key, v)?,
            "sim.segment_bits" => s.segment_size = parse(key, v)?,
            "sim.user_segment_bits" => {
                s.user_segment_sizes = if v == "none" { None } else { Some(parse_list(key, v)?) }
            }
            "sim.segments_per_video" => s.segments_per_video = parse(key, v)?,
            "sim.frames_per_segment" => s.frames_per_segment = parse(key, v)?,
            "sim.slots_per_frame" => s.slots_per_frame = parse(key, v)?,
            "sim.frame_duration" => s.frame_duration = parse(key, v)?,
            "sim.history_depth" => s.history_depth = parse(key, v)?,
            "sim.neighbor_bs_count" => s.neighbor_bs_count = parse(key, v)?,
            "sim.amplifier_efficiency" => s.amplifier_efficiency = parse(key, v)?,
            "sim.circuit_power" => s.circuit_power = parse(key, v)?,
            "sim.penalty_coefficient" => s.penalty_coefficient = parse(key, v)?,
            "sim.initial_speed" => s.initial_speed = parse(key, v)?,
            "sim.speed_min" => s.speed_bounds.0 = parse(key, v)?,
            "sim.speed_max" => s.speed_bounds.1 = parse(key, v)?,
            "sim.acceleration_std" => s.acceleration_std = parse(key, v)?,
            "sim.spawn_start" => s.spawn_interval.0 = parse(key, v)?,
            "sim.spawn_end" => s.spawn_interval.1 = parse(key, v)?,
            "nn.architecture" => a.architecture = parse(key, v)?,
            "nn.hidden_width" => a.hidden_width = parse(key, v)?,
            "nn.hidden_layers" => a.hidden_layers = parse(key, v)?,
            "nn.precision" => self.precision = parse(key, v)?,
            "agent.actor_lr" => a.actor_lr = parse(key, v)?,
            "agent.critic_lr" => a.critic_lr = parse(key, v)?,
            "agent.critic_l2" => a.critic_l2 = parse(key, v)?,
            "agent.soft_update" => a.soft_update = parse(key, v)?,
            "agent.discount" => a.discount = parse(key, v)?,
            "agent.batch_size" => a.batch_size = parse(key, v)?,
            "agent.buffer_capacity" => a.buffer_capacity = parse(key, v)?,
            "agent.noise_std_start" => a.noise_std_start = parse(key, v)?,
            "agent.noise_std_end" => a.noise_std_end = parse(key, v)?,
            "agent.noise_horizon" => a.noise_horizon = parse(key, v)?,
            "agent.reward_scale" => a.reward_scale = parse(key, v)?,
            "agent.stored_action" => a.stored_action = parse(key, v)?,
            "run.episodes" => r.episodes = parse(key, v)?,
            "run.seeds" => r.seeds = parse_seeds(v)?,
            "run.smoothing_window" => r.smoothing_window = parse(key, v)?,
            "run.eval_episodes" => r.eval_episodes = parse(key, v)?,
            "run.checkpoint" => r.checkpoint = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every setting in canonical form. Parsing the result back yields an
    /// equal configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.sim;
        let a = &self.agent;
        let r = &self.run;
        vec![
            ("preset", self.preset.to_string()),
            ("sim.num_users", s.num_users.to_string()),
            ("sim.num_bs", s.num_bs.to_string()),
            ("sim.inter_bs_distance", s.inter_bs_distance.to_string()),
            ("sim.road_offset", s.road_offset.to_string()),
            ("sim.bandwidth", s.bandwidth.to_string()),
            ("sim.noise_power_w", s.noise_power.to_string()),
            ("sim.max_bs_power_w", s.max_bs_power.to_string()),
            ("sim.path_loss_intercept_db", s.path_loss_intercept_db.to_string()),
            ("sim.path_loss_slope_db", s.path_loss_slope_db.to_string()),
            ("sim.segment_bits", s.segment_size.to_string()),
            (
                "sim.user_segment_bits",
                s.user_segment_sizes.as_deref().map_or("none".to_string(), join),
            ),
            ("sim.segments_per_video", s.segments_per_video.to_string()),
            ("sim.frames_per_segment", s.frames_per_segment.to_string()),
            ("sim.slots_per_frame", s.slots_per_frame.to_string()),
            ("sim.frame_duration", s.frame_duration.to_string()),
            ("sim.history_depth", s.history_depth.to_string()),
            ("sim.neighbor_bs_count", s.neighbor_bs_count.to_string()),
            ("sim.amplifier_efficiency", s.amplifier_efficiency.to_string()),
            ("sim.circuit_power", s.circuit_power.to_string()),
            ("sim.penalty_coefficient", s.penalty_coefficient.to_string()),
            ("sim.initial_speed", s.initial_speed.to_string()),
            ("sim.speed_min", s.speed_bounds.0.to_string()),
            ("sim.speed_max", s.speed_bounds.1.to_string()),
            ("sim.acceleration_std", s.acceleration_std.to_string()),
            ("sim.spawn_start", s.spawn_interval.0.to_string()),
            ("sim.spawn_end", s.spawn_interval.1.to_string()),
            ("nn.architecture", a.architecture.to_string()),
            ("nn.hidden_width", a.hidden_width.to_string()),
            ("nn.hidden_layers", a.hidden_layers.to_string()),
            ("nn.precision", self.precision.to_string()),
            ("agent.actor_lr", a.actor_lr.to_string()),
            ("agent.critic_lr", a.critic_lr.to_string()),
            ("agent.critic_l2", a.critic_l2.to_string()),
            ("agent.soft_update", a.soft_update.to_string()),
            ("agent.discount", a.discount.to_string()),
            ("agent.batch_size", a.batch_size.to_string()),
            ("agent.buffer_capacity", a.buffer_capacity.to_string()),
            ("agent.noise_std_start", a.noise_std_start.to_string()),
            ("agent.noise_std_end", a.noise_std_end.to_string()),
            ("agent.noise_horizon", a.noise_horizon.to_string()),
            ("agent.reward_scale", a.reward_scale.to_string()),
            ("agent.stored_action", a.stored_action.to_string()),
            ("run.episodes", r.episodes.to_string()),
            ("run.seeds", join(&r.seeds)),
            ("run.smoothing_window", r.smoothing_window.to_string()),
            ("run.eval_episodes", r.eval_episodes.to_string()),
            ("run.checkpoint", r.checkpoint.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Short hash of the resolved configuration.
    pub fn run_id(&self) -> String {
        hash_hex(self.to_text().as_bytes())
    }
}

/// First 12 hex digits of the SHA-256 of `bytes`.
pub fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(6).map(|b| format!("{b:02x}")).collect()
}
