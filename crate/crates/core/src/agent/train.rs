use ppa_nn::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, Experience, QosSchedule, ReplayBuffer, StoredAction};
use crate::sim::Env;

/// Per-episode totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub env_seed: u64,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    pub energy: f64,
    pub penalty: f64,
    pub stalls: usize,
    pub noise_std: f64,
    pub frames: usize,
}

/// How actions are chosen in a non-learning episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Actor output without noise.
    Greedy,
    /// Independent uniform rates in `[0, ceiling]` every frame.
    Random,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Environment seed of episode `episode` in a run seeded with `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ episode as u64)
}

/// Runs one episode without learning. The safe layer is always applied.
pub fn run_episode<T: Scalar>(
    env: &mut Env,
    agent: Option<&Agent<T>>,
    policy: Policy,
    env_seed: u64,
    rate_ceiling: f64,
) -> Result<EpisodeRecord, AgentError> {
    let schedule = QosSchedule::from_config(env.config());
    let mut rng = ChaCha8Rng::seed_from_u64(env_seed ^ 0xA5A5_A5A5);
    let mut state = env.reset(env_seed);
    let mut rec = EpisodeRecord {
        episode: 0,
        env_seed,
        ret: 0.0,
        energy: 0.0,
        penalty: 0.0,
        stalls: 0,
        noise_std: 0.0,
        frames: 0,
    };
    while !env.is_done() {
        let raw = match (policy, agent) {
            (Policy::Greedy, Some(agent)) => agent
                .policy(&state)?
                .into_iter()
                .map(|u| u * agent.rate_ceiling())
                .collect(),
            (Policy::Greedy, None) => panic!("greedy evaluation needs an agent"),
            (Policy::Random, _) => (0..env.num_users())
                .map(|_| rng.random::<f64>() * rate_ceiling)
                .collect::<Vec<_>>(),
        };
        let action = schedule.apply(&raw, &env.planned_delivered(), env.frame() + 1);
        let out = env.step(&action)?;
        rec.ret += out.reward;
        rec.energy += out.energy();
        rec.penalty += out.penalty;
        rec.stalls += out.stalls;
        rec.frames += 1;
        state = out.next_state;
    }
    Ok(rec)
}

/// DDPG training state that survives between calls: replay buffer and
/// episode counter. Each frame: act with exploration noise, project through
/// the safe layer, step, store the transition, then (once the buffer
/// holds a full batch) one critic step, one actor step and one soft update.
#[derive(Debug, Clone)]
pub struct Trainer {
    buffer: ReplayBuffer,
    episode: usize,
    seed: u64,
}

impl Trainer {
    pub fn new(buffer_capacity: usize, seed: u64) -> Self {
        Self {
            buffer: ReplayBuffer::new(buffer_capacity),
            episode: 0,
            seed,
        }
    }

    /// Episodes run so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Runs `episodes` more training episodes.
    pub fn run<T: Scalar>(
        &mut self,
        env: &mut Env,
        agent: &mut Agent<T>,
        episodes: usize,
        mut on_episode: impl FnMut(&EpisodeRecord),
    ) -> Result<Vec<EpisodeRecord>, AgentError> {
        let schedule = QosSchedule::from_config(env.config());
        let batch_size = agent.config().batch_size;
        let mut records = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let episode = self.episode;
            let std = agent.config().noise_std(episode);
            agent.set_noise_std(std);
            let env_seed = episode_seed(self.seed, episode);
            let mut state = env.reset(env_seed);
            let mut rec = EpisodeRecord {
                episode,
                env_seed,
                ret: 0.0,
                energy: 0.0,
                penalty: 0.0,
                stalls: 0,
                noise_std: std,
                frames: 0,
            };
            while !env.is_done() {
                let raw = agent.act(&state, true)?;
                let action = schedule.apply(&raw, &env.planned_delivered(), env.frame() + 1);
                let out = env.step(&action)?;
                rec.ret += out.reward;
                rec.energy += out.energy();
                rec.penalty += out.penalty;
                rec.stalls += out.stalls;
                rec.frames += 1;
                self.buffer.push(Experience {
                    state: state.as_slice().to_vec(),
                    action: match agent.config().stored_action {
                        StoredAction::Requested => raw,
                        StoredAction::Executed => action,
                    },
                    reward: out.reward,
                    next_state: out.next_state.as_slice().to_vec(),
                    done: out.done,
                });
                state = out.next_state;
                if self.buffer.len() >= batch_size {
                    let idx = self.buffer.sample_indices(agent.rng_mut(), batch_size);
                    let batch: Vec<&Experience> = idx.iter().map(|&i| self.buffer.get(i)).collect();
                    agent.critic_update(&batch)?;
                    agent.actor_update(&batch)?;
                    agent.soft_update()?;
                }
            }
            self.episode += 1;
            on_episode(&rec);
            records.push(rec);
        }
        Ok(records)
    }
}

/// Trains `agent` for `episodes` episodes from an empty replay buffer.
pub fn train<T: Scalar>(
    env: &mut Env,
    agent: &mut Agent<T>,
    episodes: usize,
    seed: u64,
    on_episode: impl FnMut(&EpisodeRecord),
) -> Result<Vec<EpisodeRecord>, AgentError> {
    Trainer::new(agent.config().buffer_capacity, seed).run(env, agent, episodes, on_episode)
}
