//! Actor and critic layer stacks, and free-parameter counting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::layer::{Activation, LayerSpec};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Fully-connected actor and critic.
    FullyConnected,
    /// Permutation-equivariant actor, permutation-invariant critic.
    Symmetric,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::FullyConnected => "fc",
            Architecture::Symmetric => "pepi",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fc" => Ok(Architecture::FullyConnected),
            "pepi" | "pe/pi" | "symmetric" => Ok(Architecture::Symmetric),
            other => Err(format!("unknown architecture `{other}` (expected `fc` or `pepi`)")),
        }
    }
}

/// Sizes shared by the actor and critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub users: usize,
    /// Per-user state columns.
    pub state_width: usize,
    /// Total width `d` of every hidden layer.
    pub hidden_width: usize,
    /// Number of `d x d` hidden-to-hidden weight layers. The stack also has an
    /// input layer and an output layer, so it holds `hidden_layers + 2`
    /// weight matrices.
    pub hidden_layers: usize,
}

impl NetDims {
    fn block_width(&self, arch: Architecture) -> Result<usize> {
        match arch {
            Architecture::FullyConnected => Ok(self.hidden_width),
            Architecture::Symmetric => {
                if self.users == 0 || self.hidden_width % self.users != 0 {
                    Err(NnError::Indivisible {
                        width: self.hidden_width,
                        users: self.users,
                    })
                } else {
                    Ok(self.hidden_width / self.users)
                }
            }
        }
    }
}

/// Actor: `K x state_width` state to `K` outputs in `(0, 1)`.
pub fn actor_specs(arch: Architecture, dims: NetDims) -> Result<Vec<LayerSpec>> {
    let k = dims.users;
    let d = dims.block_width(arch)?;
    let mut specs = Vec::with_capacity(dims.hidden_layers + 2);
    match arch {
        Architecture::FullyConnected => {
            specs.push(LayerSpec::dense(k * dims.state_width, d, Activation::Relu));
            for _ in 0..dims.hidden_layers {
                specs.push(LayerSpec::dense(d, d, Activation::Relu));
            }
            specs.push(LayerSpec::dense(d, k, Activation::ScaledTanh));
        }
        Architecture::Symmetric => {
            specs.push(LayerSpec::equivariant(k, dims.state_width, d, Activation::Relu));
            for _ in 0..dims.hidden_layers {
                specs.push(LayerSpec::equivariant(k, d, d, Activation::Relu));
            }
            specs.push(LayerSpec::equivariant(k, d, 1, Activation::ScaledTanh));
        }
    }
    Ok(specs)
}

/// Critic: per-user rows `[state, action]` to one scalar.
pub fn critic_specs(arch: Architecture, dims: NetDims) -> Result<Vec<LayerSpec>> {
    let k = dims.users;
    let width = dims.state_width + 1;
    let d = dims.block_width(arch)?;
    let mut specs = Vec::with_capacity(dims.hidden_layers + 2);
    match arch {
        Architecture::FullyConnected => {
            specs.push(LayerSpec::dense(k * width, d, Activation::Relu));
            for _ in 0..dims.hidden_layers {
                specs.push(LayerSpec::dense(d, d, Activation::Relu));
            }
            specs.push(LayerSpec::dense(d, 1, Activation::Identity));
        }
        Architecture::Symmetric => {
            specs.push(LayerSpec::equivariant(k, width, d, Activation::Relu));
            for _ in 0..dims.hidden_layers {
                specs.push(LayerSpec::equivariant(k, d, d, Activation::Relu));
            }
            specs.push(LayerSpec::invariant(k, d, 1, Activation::Identity));
        }
    }
    Ok(specs)
}

/// Distinct trainable scalars, weights and biases reported separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub weights: u64,
    pub biases: u64,
}

impl ParamCount {
    pub fn of_specs(specs: &[LayerSpec]) -> Self {
        specs.iter().fold(Self::default(), |acc, s| Self {
            weights: acc.weights + s.weight_count() as u64,
            biases: acc.biases + s.bias_count() as u64,
        })
    }

    /// Actor plus critic, optionally doubled for the target copies.
    pub fn of_agent(arch: Architecture, dims: NetDims, include_targets: bool) -> Result<Self> {
        let actor = Self::of_specs(&actor_specs(arch, dims)?);
        let critic = Self::of_specs(&critic_specs(arch, dims)?);
        let copies = if include_targets { 2 } else { 1 };
        Ok(Self {
            weights: copies * (actor.weights + critic.weights),
            biases: copies * (actor.biases + critic.biases),
        })
    }

    pub fn total(&self) -> u64 {
        self.weights + self.biases
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(users: usize) -> NetDims {
        NetDims {
            users,
            state_width: 10,
            hidden_width: 600,
            hidden_layers: 4,
        }
    }

    #[test]
    fn indivisible_width_is_rejected() {
        let d = NetDims {
            hidden_width: 601,
            ..dims(2)
        };
        assert_eq!(
            actor_specs(Architecture::Symmetric, d).unwrap_err(),
            NnError::Indivisible { width: 601, users: 2 }
        );
        assert!(actor_specs(Architecture::FullyConnected, d).is_ok());
    }

    #[test]
    fn fully_connected_counts_without_targets() {
        // actor 4*600^2 + 600*2*10 + 600*2, critic 4*600^2 + 600*2*11 + 600
        let c = ParamCount::of_agent(Architecture::FullyConnected, dims(2), false).unwrap();
        assert_eq!(c.weights, 1_453_200 + 1_453_800);
        assert_eq!(c.biases, (600 * 5 + 2) + (600 * 5 + 1));
    }

    #[test]
    fn architecture_round_trips_through_text() {
        for a in [Architecture::FullyConnected, Architecture::Symmetric] {
            assert_eq!(a.to_string().parse::<Architecture>().unwrap(), a);
        }
        assert!("cnn".parse::<Architecture>().is_err());
    }
}
