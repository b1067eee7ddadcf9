//! Shared actor and centralized critic with their input normalizers.

use rand::Rng;

use super::net::{log_softmax, softmax, Mlp, NetworkSpec};
use super::norm::RunningNorm;
use crate::env::ActionId;
use crate::error::{CheckpointError, Result};
use crate::rng::stream;

pub const HIDDEN: [usize; 2] = [64, 64];

/// Action distribution of the actor for one observation.
pub fn forward_actor(actor: &Mlp, observation: &[f64]) -> Result<Vec<f64>> {
    let logits = actor.forward(observation)?;
    Ok(softmax(&logits))
}

pub fn forward_critic(critic: &Mlp, global_state: &[f64]) -> Result<f64> {
    Ok(critic.forward(global_state)?[0])
}

/// All learned state of a MAPPO policy. One instance drives every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub obs_norm: RunningNorm,
    pub state_norm: RunningNorm,
}

impl PolicyParams {
    pub fn new(obs_dim: usize, state_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[0x1417]);
        PolicyParams {
            actor: Mlp::init(NetworkSpec::new(obs_dim, &HIDDEN, ActionId::COUNT), 0.01, &mut rng),
            critic: Mlp::init(NetworkSpec::new(state_dim, &HIDDEN, 1), 1.0, &mut rng),
            obs_norm: RunningNorm::new(obs_dim),
            state_norm: RunningNorm::new(state_dim),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec().input_dim
    }

    pub fn state_dim(&self) -> usize {
        self.critic.spec().input_dim
    }

    /// Fails when the policy was built for different input dimensions.
    pub fn ensure_dims(&self, obs_dim: usize, state_dim: usize) -> Result<()> {
        if self.obs_dim() != obs_dim {
            return Err(CheckpointError::DimensionMismatch {
                what: "observation",
                checkpoint: self.obs_dim(),
                env: obs_dim,
            }
            .into());
        }
        if self.state_dim() != state_dim {
            return Err(CheckpointError::DimensionMismatch {
                what: "global state",
                checkpoint: self.state_dim(),
                env: state_dim,
            }
            .into());
        }
        Ok(())
    }

    /// Probabilities over the four actions for a raw observation.
    pub fn action_probs(&self, raw_obs: &[f64]) -> Result<Vec<f64>> {
        forward_actor(&self.actor, &self.obs_norm.normalize(raw_obs))
    }

    pub fn value(&self, raw_state: &[f64]) -> Result<f64> {
        forward_critic(&self.critic, &self.state_norm.normalize(raw_state))
    }

    pub fn greedy_action(&self, raw_obs: &[f64]) -> Result<ActionId> {
        let logits = self.actor.forward(&self.obs_norm.normalize(raw_obs))?;
        Ok(ActionId::from_index(super::net::argmax(&logits)).expect("4 logits"))
    }

    /// Samples an action; returns it with its log-probability.
    pub fn sample_action<R: Rng + ?Sized>(&self, raw_obs: &[f64], rng: &mut R) -> Result<(ActionId, f64)> {
        let logits = self.actor.forward(&self.obs_norm.normalize(raw_obs))?;
        let logp = log_softmax(&logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = logp.len() - 1;
        for (i, lp) in logp.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                chosen = i;
                break;
            }
        }
        Ok((ActionId::from_index(chosen).expect("4 logits"), logp[chosen]))
    }
}
