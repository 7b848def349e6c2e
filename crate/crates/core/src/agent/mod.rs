//! DDPG with optional permutation-symmetric actor and critic.

mod checkpoint;
mod replay;
mod safe;
mod train;


use ndarray::{Array2, ArrayView2};
use ppa_nn::{
    actor_specs, critic_specs, Adam, AdamConfig, Architecture, NetDims, Network, NnError, Scalar,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimError, StateMatrix};

pub use checkpoint::{CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use replay::{Experience, ReplayBuffer};
pub use safe::QosSchedule;
pub use train::{episode_seed, run_episode, train, EpisodeRecord, Policy, Trainer};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("state has shape {got:?}, agent expects {expected:?}")]
    StateShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Which action a transition records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoredAction {
    /// The noisy actor output before the safe layer. The projection is then
    /// part of the environment seen by the critic, so `Q(s', mu'(s'))` is
    /// evaluated on the same kind of action it was trained on.
    Requested,
    /// The action after the safe layer, i.e. what was executed.
    Executed,
}

impl std::fmt::Display for StoredAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StoredAction::Requested => "requested",
            StoredAction::Executed => "executed",
        })
    }
}

impl std::str::FromStr for StoredAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "requested" => Ok(StoredAction::Requested),
            "executed" => Ok(StoredAction::Executed),
            other => Err(format!("unknown stored action `{other}` (expected `requested` or `executed`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub architecture: Architecture,
    pub hidden_width: usize,
    /// Hidden-to-hidden weight layers (input and output layers come extra).
    pub hidden_layers: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_l2: f64,
    /// Target tracking rate `omega`.
    pub soft_update: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub noise_std_start: f64,
    pub noise_std_end: f64,
    /// Episodes over which the exploration std decays linearly.
    pub noise_horizon: usize,
    /// Rewards are multiplied by this before they reach the critic.
    pub reward_scale: f64,
    pub stored_action: StoredAction,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Symmetric,
            hidden_width: 600,
            hidden_layers: 4,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            critic_l2: 1e-4,
            soft_update: 1e-3,
            discount: 1.0,
            batch_size: 512,
            buffer_capacity: 1_000_000,
            noise_std_start: 0.3,
            noise_std_end: 0.0,
            noise_horizon: 100_000,
            reward_scale: 1.0,
            stored_action: StoredAction::Requested,
        }
    }
}

impl AgentConfig {
    /// Smaller networks and faster target tracking for the desk scenario.
    pub fn desk() -> Self {
        Self {
            hidden_width: 64,
            hidden_layers: 2,
            batch_size: 64,
            buffer_capacity: 100_000,
            soft_update: 0.01,
            noise_horizon: 2000,
            ..Self::default()
        }
    }

    /// Exploration std (in units of the rate ceiling) for an episode.
    pub fn noise_std(&self, episode: usize) -> f64 {
        if self.noise_horizon == 0 {
            return self.noise_std_end.max(0.0);
        }
        let frac = (episode as f64 / self.noise_horizon as f64).min(1.0);
        (self.noise_std_start + (self.noise_std_end - self.noise_std_start) * frac).max(0.0)
    }

    pub fn dims(&self, users: usize, state_width: usize) -> NetDims {
        NetDims {
            users,
            state_width,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
        }
    }
}

/// Actor, critic, their targets and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent<T> {
    config: AgentConfig,
    users: usize,
    state_width: usize,
    rate_ceiling: f64,
    pub(crate) actor: Network<T>,
    pub(crate) critic: Network<T>,
    pub(crate) actor_target: Network<T>,
    pub(crate) critic_target: Network<T>,
    pub(crate) actor_opt: Adam<T>,
    pub(crate) critic_opt: Adam<T>,
    pub(crate) rng: ChaCha8Rng,
    noise_std: f64,
}

impl<T: Scalar> Agent<T> {
    pub fn new(
        config: AgentConfig,
        users: usize,
        state_width: usize,
        rate_ceiling: f64,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = config.dims(users, state_width);
        let actor = Network::new(actor_specs(config.architecture, dims)?, &mut rng)?;
        let critic = Network::new(critic_specs(config.architecture, dims)?, &mut rng)?;
        Ok(Self::from_networks(config, users, state_width, rate_ceiling, actor, critic, rng))
    }

    pub(crate) fn from_networks(
        config: AgentConfig,
        users: usize,
        state_width: usize,
        rate_ceiling: f64,
        actor: Network<T>,
        critic: Network<T>,
        rng: ChaCha8Rng,
    ) -> Self {
        let actor_opt = Adam::new(AdamConfig::new(config.actor_lr), actor.num_params());
        let critic_opt = Adam::new(
            AdamConfig::new(config.critic_lr).with_weight_decay(config.critic_l2),
            critic.num_params(),
        );
        Self {
            noise_std: config.noise_std_start,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            config,
            users,
            state_width,
            rate_ceiling,
            actor,
            critic,
            actor_opt,
            critic_opt,
            rng,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn state_width(&self) -> usize {
        self.state_width
    }

    pub fn rate_ceiling(&self) -> f64 {
        self.rate_ceiling
    }

    pub fn actor(&self) -> &Network<T> {
        &self.actor
    }

    pub fn critic(&self) -> &Network<T> {
        &self.critic
    }

    pub fn actor_target(&self) -> &Network<T> {
        &self.actor_target
    }

    pub fn critic_target(&self) -> &Network<T> {
        &self.critic_target
    }

    pub fn actor_mut(&mut self) -> &mut Network<T> {
        &mut self.actor
    }

    pub fn critic_mut(&mut self) -> &mut Network<T> {
        &mut self.critic
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn set_noise_std(&mut self, std: f64) {
        self.noise_std = std.max(0.0);
    }

    fn check_state(&self, state: &StateMatrix) -> Result<(), AgentError> {
        let expected = (self.users, self.state_width);
        if state.shape() != expected {
            return Err(AgentError::StateShape {
                expected,
                got: state.shape(),
            });
        }
        Ok(())
    }

    /// Deterministic policy output in units of the rate ceiling, `(0, 1)`.
    pub fn policy(&self, state: &StateMatrix) -> Result<Vec<f64>, AgentError> {
        self.check_state(state)?;
        let x = Array2::from_shape_fn((1, state.as_slice().len()), |(_, c)| T::of(state.as_slice()[c]));
        let y = self.actor.predict(x.view())?;
        Ok(y.iter().map(|v| v.as_f64()).collect())
    }

    /// Rates (b/s) to request. With `explore`, Gaussian noise of the current
    /// std is added in normalized units and the result clamped to
    /// `[0, ceiling]`.
    pub fn act(&mut self, state: &StateMatrix, explore: bool) -> Result<Vec<f64>, AgentError> {
        let mut u = self.policy(state)?;
        if explore && self.noise_std > 0.0 {
            for v in &mut u {
                let n: f64 = StandardNormal.sample(&mut self.rng);
                *v = (*v + self.noise_std * n).clamp(0.0, 1.0);
            }
        }
        Ok(u.into_iter().map(|v| v * self.rate_ceiling).collect())
    }

    /// `[batch, K * (state_width + 1)]` critic input from flattened states
    /// and normalized actions.
    fn critic_input(&self, states: &[&[f64]], actions: ArrayView2<T>) -> Array2<T> {
        let w = self.state_width;
        let mut x = Array2::zeros((states.len(), self.users * (w + 1)));
        for (b, s) in states.iter().enumerate() {
            for k in 0..self.users {
                let base = k * (w + 1);
                for c in 0..w {
                    x[[b, base + c]] = T::of(s[k * w + c]);
                }
                x[[b, base + w]] = actions[[b, k]];
            }
        }
        x
    }

    fn state_batch(&self, states: &[&[f64]]) -> Array2<T> {
        let cols = self.users * self.state_width;
        Array2::from_shape_fn((states.len(), cols), |(b, c)| T::of(states[b][c]))
    }

    /// `Q(s, a)` for a flattened state and rates in b/s.
    pub fn q_value(&self, state: &[f64], rates: &[f64]) -> Result<f64, AgentError> {
        let a = Array2::from_shape_fn((1, self.users), |(_, k)| T::of(rates[k] / self.rate_ceiling));
        let x = self.critic_input(&[state], a.view());
        Ok(self.critic.predict(x.view())?[[0, 0]].as_f64())
    }

    /// One critic step on the mean squared TD error. Returns the loss
    /// before the step.
    pub fn critic_update(&mut self, batch: &[&Experience]) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let n = batch.len();
        let next: Vec<&[f64]> = batch.iter().map(|e| e.next_state.as_slice()).collect();
        let next_actions = self.actor_target.predict(self.state_batch(&next).view())?;
        let q_next = self
            .critic_target
            .predict(self.critic_input(&next, next_actions.view()).view())?;

        let states: Vec<&[f64]> = batch.iter().map(|e| e.state.as_slice()).collect();
        let actions = Array2::from_shape_fn((n, self.users), |(b, k)| {
            T::of(batch[b].action[k] / self.rate_ceiling)
        });
        let q = self.critic.forward(self.critic_input(&states, actions.view()).view())?;

        let gamma = self.config.discount;
        let scale = self.config.reward_scale;
        let mut upstream = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for (b, e) in batch.iter().enumerate() {
            let bootstrap = if e.done { 0.0 } else { gamma * q_next[[b, 0]].as_f64() };
            let y = scale * e.reward + bootstrap;
            let err = q[[b, 0]].as_f64() - y;
            loss += err * err;
            upstream[[b, 0]] = T::of(2.0 * err / n as f64);
        }
        let (grads, _) = self.critic.backward(upstream.view())?;
        self.critic_opt.step(self.critic.params_mut(), grads.as_slice());
        Ok(loss / n as f64)
    }

    /// One actor ascent step along the sampled policy gradient. Returns the
    /// norm of the parameter gradient.
    pub fn actor_update(&mut self, batch: &[&Experience]) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let states: Vec<&[f64]> = batch.iter().map(|e| e.state.as_slice()).collect();
        self.actor_step_with(&states, |agent, actions| {
            let n = actions.nrows();
            let x = agent.critic_input(&states, actions);
            agent.critic.forward(x.view())?;
            let (_, dx) = agent.critic.backward(Array2::from_elem((n, 1), T::one()).view())?;
            let w = agent.state_width;
            Ok(Array2::from_shape_fn((n, agent.users), |(b, k)| dx[[b, k * (w + 1) + w]]))
        })
    }

    /// Actor ascent step given `dQ/da` per sample (normalized action units).
    /// The objective is the batch mean of `Q`.
    pub(crate) fn actor_step_with(
        &mut self,
        states: &[&[f64]],
        dq_da: impl FnOnce(&mut Self, ArrayView2<T>) -> Result<Array2<T>, AgentError>,
    ) -> Result<f64, AgentError> {
        let n = states.len();
        let actions = self.actor.forward(self.state_batch(states).view())?;
        let g = dq_da(self, actions.view())?;
        // descend on -mean(Q)
        let scale = T::of(-1.0 / n as f64);
        let da = g.mapv(|v| v * scale);
        let (grads, _) = self.actor.backward(da.view())?;
        self.actor_opt.step(self.actor.params_mut(), grads.as_slice());
        Ok(grads.norm())
    }

    /// Moves both targets a fraction `omega` toward their mains.
    pub fn soft_update(&mut self) -> Result<(), AgentError> {
        let omega = T::of(self.config.soft_update);
        self.actor_target.soft_update_from(&self.actor, omega)?;
        self.critic_target.soft_update_from(&self.critic, omega)?;
        Ok(())
    }
}
