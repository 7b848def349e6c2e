//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "PPACKPT\0"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes
//! payload  f64 values: actor, critic, actor target, critic target params,
//!          then actor Adam m, v and critic Adam m, v
//! ```
//!
//! Values are written as `f64` whatever the training precision.

use std::io::{Read, Write};

use ppa_nn::{Adam, AdamConfig, AdamState, LayerKind, LayerSpec, Network, Scalar};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Agent, AgentConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PPACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint networks are incompatible with the configuration:\n  checkpoint: {found}\n  config:     {expected}")]
    Incompatible { expected: String, found: String },
    #[error("checkpoint payload is truncated")]
    Truncated,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: AgentConfig,
    users: usize,
    state_width: usize,
    rate_ceiling: f64,
    actor: Vec<LayerSpec>,
    critic: Vec<LayerSpec>,
    actor_adam_step: u64,
    critic_adam_step: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    noise_std: f64,
}

/// Compact textual form of a layer stack, used in compatibility errors.
pub fn signature(specs: &[LayerSpec]) -> String {
    specs
        .iter()
        .map(|s| {
            let kind = match s.kind {
                LayerKind::Dense => "fc",
                LayerKind::Equivariant => "pe",
                LayerKind::Invariant => "pi",
            };
            format!("{kind}[{}x{}->{}]", s.blocks, s.in_width, s.out_width)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_values<W: Write, T: Scalar>(w: &mut W, values: &[T]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_values<T: Scalar>(bytes: &mut &[u8], n: usize) -> Result<Vec<T>, CheckpointError> {
    if bytes.len() < 8 * n {
        return Err(CheckpointError::Truncated);
    }
    let (head, rest) = bytes.split_at(8 * n);
    *bytes = rest;
    Ok(head
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

impl<T: Scalar> Agent<T> {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let header = Header {
            config: self.config.clone(),
            users: self.users,
            state_width: self.state_width,
            rate_ceiling: self.rate_ceiling,
            actor: self.actor.specs().to_vec(),
            critic: self.critic.specs().to_vec(),
            actor_adam_step: self.actor_opt.state.step,
            critic_adam_step: self.critic_opt.state.step,
            rng_seed: self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            noise_std: self.noise_std,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for net in [&self.actor, &self.critic, &self.actor_target, &self.critic_target] {
            write_values(&mut w, net.params())?;
        }
        for opt in [&self.actor_opt, &self.critic_opt] {
            write_values(&mut w, &opt.state.m)?;
            write_values(&mut w, &opt.state.v)?;
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_checkpoint(&mut out).expect("writing to memory");
        out
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut bytes = data.as_slice();
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        bytes = &bytes[20..];
        if bytes.len() < hlen {
            return Err(CheckpointError::Truncated);
        }
        let header: Header = serde_json::from_slice(&bytes[..hlen])?;
        bytes = &bytes[hlen..];

        let n_actor: usize = header.actor.iter().map(LayerSpec::param_count).sum();
        let n_critic: usize = header.critic.iter().map(LayerSpec::param_count).sum();
        let build = |specs: &[LayerSpec], params: Vec<T>| {
            Network::from_params(specs.to_vec(), params).map_err(|e| CheckpointError::Incompatible {
                expected: signature(specs),
                found: e.to_string(),
            })
        };
        let actor = build(&header.actor, read_values(&mut bytes, n_actor)?)?;
        let critic = build(&header.critic, read_values(&mut bytes, n_critic)?)?;
        let actor_target = build(&header.actor, read_values(&mut bytes, n_actor)?)?;
        let critic_target = build(&header.critic, read_values(&mut bytes, n_critic)?)?;

        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(header.rng_seed.get(2 * i..2 * i + 2).unwrap_or("zz"), 16)
                .map_err(|_| CheckpointError::Truncated)?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(header.rng_stream);
        rng.set_word_pos(header.rng_word_pos.parse().map_err(|_| CheckpointError::Truncated)?);

        let mut agent = Agent::from_networks(
            header.config.clone(),
            header.users,
            header.state_width,
            header.rate_ceiling,
            actor,
            critic,
            rng,
        );
        agent.actor_target = actor_target;
        agent.critic_target = critic_target;
        agent.actor_opt = Adam {
            config: AdamConfig::new(header.config.actor_lr),
            state: AdamState {
                step: header.actor_adam_step,
                m: read_values(&mut bytes, n_actor)?,
                v: read_values(&mut bytes, n_actor)?,
            },
        };
        agent.critic_opt = Adam {
            config: AdamConfig::new(header.config.critic_lr).with_weight_decay(header.config.critic_l2),
            state: AdamState {
                step: header.critic_adam_step,
                m: read_values(&mut bytes, n_critic)?,
                v: read_values(&mut bytes, n_critic)?,
            },
        };
        agent.noise_std = header.noise_std;
        Ok(agent)
    }

    /// Loads a checkpoint and checks its networks against the ones `config`
    /// would build for `users` users with `state_width` columns.
    pub fn read_compatible<R: Read>(
        r: R,
        config: &AgentConfig,
        users: usize,
        state_width: usize,
    ) -> Result<Self, super::AgentError> {
        let agent = Self::read_checkpoint(r)?;
        let dims = config.dims(users, state_width);
        let want_actor = ppa_nn::actor_specs(config.architecture, dims)?;
        let want_critic = ppa_nn::critic_specs(config.architecture, dims)?;
        if agent.actor.specs() != want_actor.as_slice() || agent.critic.specs() != want_critic.as_slice() {
            return Err(CheckpointError::Incompatible {
                expected: format!(
                    "actor {} | critic {}",
                    signature(&want_actor),
                    signature(&want_critic)
                ),
                found: format!(
                    "actor {} | critic {}",
                    signature(agent.actor.specs()),
                    signature(agent.critic.specs())
                ),
            }
            .into());
        }
        Ok(agent)
    }
}
