//! Trajectory storage for on-policy updates.

use super::gae::compute_gae;

/// Transitions of one finished episode, `steps × agents`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRollout {
    pub n_agents: usize,
    pub steps: usize,
    pub obs: Vec<f64>,
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl EpisodeRollout {
    pub fn new(n_agents: usize) -> Self {
        EpisodeRollout {
            n_agents,
            steps: 0,
            obs: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Rows in (episode, step, agent) order with advantages and returns filled
/// in once each episode is complete.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub state_dim: usize,
    pub obs: Vec<f64>,
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episodes: usize,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, state_dim: usize) -> Self {
        RolloutBuffer {
            obs_dim,
            state_dim,
            obs: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
            episodes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Appends a finished episode and computes its per-agent advantages.
    /// Episodes end at the step limit and bootstrap from zero.
    pub fn push_episode(&mut self, ep: &EpisodeRollout, gamma: f64, lambda: f64) {
        let n = ep.n_agents;
        let base = self.advantages.len();
        self.obs.extend_from_slice(&ep.obs);
        self.states.extend_from_slice(&ep.states);
        self.actions.extend_from_slice(&ep.actions);
        self.log_probs.extend_from_slice(&ep.log_probs);
        self.values.extend_from_slice(&ep.values);
        self.rewards.extend_from_slice(&ep.rewards);
        self.dones.extend_from_slice(&ep.dones);
        self.advantages.resize(base + ep.steps * n, 0.0);
        self.returns.resize(base + ep.steps * n, 0.0);
        for agent in 0..n {
            let r: Vec<f64> = (0..ep.steps).map(|t| ep.rewards[t * n + agent]).collect();
            let v: Vec<f64> = (0..ep.steps).map(|t| ep.values[t * n + agent]).collect();
            let (adv, ret) = compute_gae(&r, &v, 0.0, gamma, lambda);
            for t in 0..ep.steps {
                self.advantages[base + t * n + agent] = adv[t];
                self.returns[base + t * n + agent] = ret[t];
            }
        }
        self.episodes += 1;
    }

    /// Mean per-step reward over all stored transitions.
    pub fn mean_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_agent_gae_is_independent() {
        let mut ep = EpisodeRollout::new(2);
        ep.steps = 2;
        ep.obs = vec![0.0; 4];
        ep.states = vec![0.0; 4];
        ep.actions = vec![0; 4];
        ep.log_probs = vec![0.0; 4];
        ep.values = vec![0.0; 4];
        // agent 0 gets 1 each step, agent 1 gets 0
        ep.rewards = vec![1.0, 0.0, 1.0, 0.0];
        ep.dones = vec![false, false, true, true];
        let mut buf = RolloutBuffer::new(1, 1);
        buf.push_episode(&ep, 0.5, 1.0);
        assert_eq!(buf.advantages, vec![1.5, 0.0, 1.0, 0.0]);
        assert_eq!(buf.len(), 4);
        assert_eq!(buf.episodes, 1);
    }
}
