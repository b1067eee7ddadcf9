//! MAPPO trainer: one actor shared by every agent, a centralized critic over
//! the global state, GAE advantages and clipped PPO updates.

pub mod adam;
pub mod buffer;
pub mod checkpoint;
pub mod gae;
pub mod net;
pub mod norm;
pub mod policy;
pub mod ppo;

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::env::{ActionId, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::randomization::RandomizationLevel;
use crate::rng::{stream, SimRng};
use crate::track::TrackMap;

pub use buffer::{EpisodeRollout, RolloutBuffer};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use policy::{forward_actor, forward_critic, PolicyParams};
pub use ppo::{ppo_update, Optimizers, UpdateStats};

const EPISODE_STREAM: u64 = 0xE915;
const SHUFFLE_STREAM: u64 = 0x5AFF;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub ppo_epochs: usize,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub episodes_per_update: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            steps_per_episode: 400,
            lr_actor: 5e-4,
            lr_critic: 5e-4,
            ppo_epochs: 15,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            minibatches: 4,
            max_grad_norm: 10.0,
            episodes_per_update: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lr_actor,
            self.lr_critic,
            self.entropy_coef,
            self.gamma,
            self.gae_lambda,
            self.value_coef,
            self.max_grad_norm,
        ];
        if positive.iter().any(|v| !(*v >= 0.0) || !v.is_finite())
            || self.steps_per_episode == 0
            || self.ppo_epochs == 0
            || self.minibatches == 0
            || self.episodes_per_update == 0
        {
            return Err(Error::InvalidConfig("training parameters must be positive".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidConfig(format!("clip_eps {} outside (0, 1)", self.clip_eps)));
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(Error::InvalidConfig("gamma and gae_lambda must be at most 1".into()));
        }
        Ok(())
    }
}

/// Plays one episode with actions sampled from the shared actor, storing
/// every agent's transition. Randomized actuation profiles are drawn at reset.
pub fn run_sampling_episode(
    env: &mut Environment,
    policy: &PolicyParams,
    level: &RandomizationLevel,
    rng: &mut SimRng,
) -> Result<EpisodeRollout> {
    let n = env.config().n_agents;
    let profiles: Vec<_> = (0..n).map(|_| level.sample_profile(rng)).collect();
    let reset_seed: u64 = rng.random();
    let mut res = env.reset(&profiles, reset_seed)?;
    let mut ep = EpisodeRollout::new(n);
    let mut actions = vec![ActionId::NoOp; n];
    while !res.done {
        for (i, action) in actions.iter_mut().enumerate() {
            let obs = res.observations[i].to_array();
            let state = res.global_state.for_agent(i);
            let (a, logp) = policy.sample_action(&obs, rng)?;
            let value = policy.value(&state)?;
            *action = a;
            ep.obs.extend_from_slice(&obs);
            ep.states.extend_from_slice(&state);
            ep.actions.push(a.index());
            ep.log_probs.push(logp);
            ep.values.push(value);
        }
        res = env.step(&actions)?;
        ep.rewards.extend_from_slice(&res.rewards);
        ep.dones.extend(std::iter::repeat_n(res.done, n));
        ep.steps += 1;
    }
    Ok(ep)
}

/// Collects `n_episodes` sampled episodes starting at global episode index
/// `first_episode`. Episodes run in parallel; each has its own seeded stream
/// and results are merged in episode order.
pub fn collect_rollouts(
    env_config: &EnvConfig,
    track: &Arc<TrackMap>,
    policy: &PolicyParams,
    level: &RandomizationLevel,
    n_episodes: usize,
    first_episode: usize,
    train: &TrainConfig,
) -> Result<RolloutBuffer> {
    let episodes: Vec<EpisodeRollout> = (0..n_episodes)
        .into_par_iter()
        .map(|k| {
            let index = (first_episode + k) as u64;
            let mut rng = stream(env_config.seed, &[EPISODE_STREAM, index]);
            let mut env = Environment::new(env_config.clone(), Arc::clone(track))?;
            run_sampling_episode(&mut env, policy, level, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut buffer = RolloutBuffer::new(env_config.obs_dim(), env_config.state_dim());
    for ep in &episodes {
        buffer.push_episode(ep, train.gamma, train.gae_lambda);
    }
    Ok(buffer)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub update: usize,
    /// Episodes completed after this update.
    pub episode: usize,
    /// Mean per-agent, per-step reward of the episodes collected for this update.
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

pub const TRAIN_LOG_HEADER: &str = "update,episode,mean_reward,actor_loss,critic_loss,entropy";

impl TrainLogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.update, self.episode, self.mean_reward, self.actor_loss, self.critic_loss, self.entropy
        )
    }
}

pub struct Trainer {
    env_config: EnvConfig,
    track: Arc<TrackMap>,
    config: TrainConfig,
    level: RandomizationLevel,
    policy: PolicyParams,
    optimizers: Optimizers,
    shuffle_rng: SimRng,
    episodes_done: usize,
    updates: usize,
}

impl Trainer {
    /// The environment's episode length is taken from `steps_per_episode`.
    pub fn new(
        mut env_config: EnvConfig,
        track: Arc<TrackMap>,
        config: TrainConfig,
        level: RandomizationLevel,
    ) -> Result<Self> {
        config.validate()?;
        level.validate()?;
        env_config.max_steps = config.steps_per_episode;
        env_config.validate()?;
        let policy = PolicyParams::new(env_config.obs_dim(), env_config.state_dim(), env_config.seed);
        let optimizers = Optimizers::new(&policy, &config);
        let shuffle_rng = stream(env_config.seed, &[SHUFFLE_STREAM]);
        Ok(Trainer {
            env_config,
            track,
            config,
            level,
            policy,
            optimizers,
            shuffle_rng,
            episodes_done: 0,
            updates: 0,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn into_policy(self) -> PolicyParams {
        self.policy
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_config
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// Collects up to `episodes_per_update` episodes and runs one PPO update.
    pub fn update(&mut self, max_episodes: usize) -> Result<TrainLogRow> {
        let n = self.config.episodes_per_update.min(max_episodes).max(1);
        let buffer = collect_rollouts(
            &self.env_config,
            &self.track,
            &self.policy,
            &self.level,
            n,
            self.episodes_done,
            &self.config,
        )?;
        let stats = ppo_update(
            &mut self.policy,
            &mut self.optimizers,
            &buffer,
            &self.config,
            &mut self.shuffle_rng,
        )?;
        self.policy.obs_norm.update(&buffer.obs);
        self.policy.state_norm.update(&buffer.states);
        self.episodes_done += n;
        self.updates += 1;
        Ok(TrainLogRow {
            update: self.updates,
            episode: self.episodes_done,
            mean_reward: buffer.mean_reward(),
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            entropy: stats.entropy,
        })
    }

    /// Trains for `config.episodes` episodes, calling `on_update` after each update.
    pub fn train(&mut self, mut on_update: impl FnMut(&TrainLogRow)) -> Result<Vec<TrainLogRow>> {
        let mut log = Vec::new();
        while self.episodes_done < self.config.episodes {
            let row = self.update(self.config.episodes - self.episodes_done)?;
            on_update(&row);
            log.push(row);
        }
        Ok(log)
    }
}
