//! Clipped-surrogate PPO loss, its analytic gradient and the update loop.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::adam::{clip_grad_norm, Adam};
use super::buffer::RolloutBuffer;
use super::gae::normalize_advantages;
use super::net::{log_softmax, Mlp};
use super::policy::PolicyParams;
use super::TrainConfig;
use crate::error::{Error, Result};

const CHUNK_ROWS: usize = 256;

/// Normalized network inputs and targets for a set of transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            obs: self.obs.select(ndarray::Axis(0), idx),
            states: self.states.select(ndarray::Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }

    fn slice(&self, start: usize, end: usize) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        (
            self.obs.slice(ndarray::s![start..end, ..]),
            self.states.slice(ndarray::s![start..end, ..]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

impl From<&TrainConfig> for LossCoefficients {
    fn from(c: &TrainConfig) -> Self {
        LossCoefficients {
            clip_eps: c.clip_eps,
            entropy_coef: c.entropy_coef,
            value_coef: c.value_coef,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Clipped surrogate plus entropy bonus.
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub actor_grad: Vec<f64>,
    pub critic_grad: Vec<f64>,
}

impl LossOutput {
    pub fn total(&self) -> f64 {
        self.actor_loss + self.critic_loss
    }

    fn zeros(na: usize, nc: usize) -> Self {
        LossOutput {
            actor_loss: 0.0,
            critic_loss: 0.0,
            entropy: 0.0,
            clip_fraction: 0.0,
            actor_grad: vec![0.0; na],
            critic_grad: vec![0.0; nc],
        }
    }

    fn accumulate(&mut self, other: &LossOutput) {
        self.actor_loss += other.actor_loss;
        self.critic_loss += other.critic_loss;
        self.entropy += other.entropy;
        self.clip_fraction += other.clip_fraction;
        self.actor_grad.iter_mut().zip(&other.actor_grad).for_each(|(a, b)| *a += b);
        self.critic_grad.iter_mut().zip(&other.critic_grad).for_each(|(a, b)| *a += b);
    }
}

/// PPO losses on `batch` and their gradients with respect to the actor and
/// critic parameters.
///
/// actor = −mean(min(r·A, clip(r, 1±ε)·A)) − c_ent·mean(H),
/// critic = c_v·mean((V − R)²).
pub fn ppo_loss(actor: &Mlp, critic: &Mlp, batch: &Batch, coef: &LossCoefficients) -> LossOutput {
    let n = batch.len();
    let na = actor.params().len();
    let nc = critic.params().len();
    if n == 0 {
        return LossOutput::zeros(na, nc);
    }
    let scale = 1.0 / n as f64;
    let starts: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
    // Fixed chunking merged in order keeps results independent of thread count.
    let parts: Vec<LossOutput> = starts
        .par_iter()
        .map(|&s| chunk_loss(actor, critic, batch, s, (s + CHUNK_ROWS).min(n), scale, coef))
        .collect();
    let mut total = LossOutput::zeros(na, nc);
    for p in &parts {
        total.accumulate(p);
    }
    total
}

/// Clipped surrogate of row `i` given the new log-probability of its action.
/// Returns the objective, its derivative with respect to that log-probability
/// and whether the ratio was clipped.
fn surrogate(logp_a: f64, batch: &Batch, i: usize, coef: &LossCoefficients) -> (f64, f64, bool) {
    let adv = batch.advantages[i];
    let ratio = (logp_a - batch.old_log_probs[i]).exp();
    let clipped = ratio.clamp(1.0 - coef.clip_eps, 1.0 + coef.clip_eps);
    let unclipped_obj = ratio * adv;
    let clipped_obj = clipped * adv;
    // Gradient flows through the ratio only when the unclipped term is the minimum.
    if unclipped_obj <= clipped_obj {
        (unclipped_obj, unclipped_obj, clipped != ratio)
    } else {
        (clipped_obj, 0.0, clipped != ratio)
    }
}

/// Actor and critic losses without gradients.
pub fn loss_values(actor: &Mlp, critic: &Mlp, batch: &Batch, coef: &LossCoefficients) -> (f64, f64) {
    (actor_loss_value(actor, batch, coef), critic_loss_value(critic, batch, coef))
}

/// Actor term of [`loss_values`].
pub fn actor_loss_value(actor: &Mlp, batch: &Batch, coef: &LossCoefficients) -> f64 {
    actor_loss_from_logits(actor.forward_batch(batch.obs.view()).output.view(), batch, coef)
}

/// Actor term given the logits of every sample.
pub fn actor_loss_from_logits(logits: ArrayView2<'_, f64>, batch: &Batch, coef: &LossCoefficients) -> f64 {
    let n = batch.len();
    if n == 0 {
        return 0.0;
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    for i in 0..n {
        let logp = log_softmax(logits.row(i).as_slice().expect("contiguous row"));
        let (obj, _, _) = surrogate(logp[batch.actions[i]], batch, i, coef);
        let entropy: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
        loss += scale * (-obj - coef.entropy_coef * entropy);
    }
    loss
}

/// Critic term of [`loss_values`].
pub fn critic_loss_value(critic: &Mlp, batch: &Batch, coef: &LossCoefficients) -> f64 {
    critic_loss_from_values(critic.forward_batch(batch.states.view()).output.view(), batch, coef)
}

/// Critic term given the value estimate of every sample.
pub fn critic_loss_from_values(values: ArrayView2<'_, f64>, batch: &Batch, coef: &LossCoefficients) -> f64 {
    let n = batch.len();
    if n == 0 {
        return 0.0;
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    for i in 0..n {
        let err = values[(i, 0)] - batch.returns[i];
        loss += scale * coef.value_coef * err * err;
    }
    loss
}

fn chunk_loss(
    actor: &Mlp,
    critic: &Mlp,
    batch: &Batch,
    start: usize,
    end: usize,
    scale: f64,
    coef: &LossCoefficients,
) -> LossOutput {
    let (obs, states) = batch.slice(start, end);
    let rows = end - start;
    let a_cache = actor.forward_batch(obs);
    let c_cache = critic.forward_batch(states);
    let k = a_cache.output.ncols();

    let mut out = LossOutput::zeros(actor.params().len(), critic.params().len());
    let mut d_logits = Array2::<f64>::zeros((rows, k));
    let mut d_value = Array2::<f64>::zeros((rows, 1));
    for r in 0..rows {
        let i = start + r;
        let logits = a_cache.output.row(r);
        let logits = logits.as_slice().expect("contiguous row");
        let logp = log_softmax(logits);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let a = batch.actions[i];
        let (obj, d_obj_d_logp, clipped) = surrogate(logp[a], batch, i, coef);
        if clipped {
            out.clip_fraction += scale;
        }
        let entropy: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        out.actor_loss += scale * (-obj - coef.entropy_coef * entropy);
        out.entropy += scale * entropy;
        for j in 0..k {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let d_surr = -d_obj_d_logp * (onehot - probs[j]);
            // dH/dz_j = -p_j (log p_j + H)
            let d_ent = -probs[j] * (logp[j] + entropy);
            d_logits[(r, j)] = scale * (d_surr - coef.entropy_coef * d_ent);
        }

        let v = c_cache.output[(r, 0)];
        let err = v - batch.returns[i];
        out.critic_loss += scale * coef.value_coef * err * err;
        d_value[(r, 0)] = scale * coef.value_coef * 2.0 * err;
    }
    actor.backward_into(&a_cache, d_logits.view(), &mut out.actor_grad);
    critic.backward_into(&c_cache, d_value.view(), &mut out.critic_grad);
    out
}

/// Builds a normalized training batch from the whole buffer.
pub fn prepare_batch(policy: &PolicyParams, buffer: &RolloutBuffer) -> Batch {
    let n = buffer.len();
    let mut obs = Array2::zeros((n, buffer.obs_dim));
    let mut states = Array2::zeros((n, buffer.state_dim));
    for i in 0..n {
        let row = &buffer.obs[i * buffer.obs_dim..(i + 1) * buffer.obs_dim];
        policy
            .obs_norm
            .normalize_into(row, obs.row_mut(i).as_slice_mut().expect("contiguous"));
        let row = &buffer.states[i * buffer.state_dim..(i + 1) * buffer.state_dim];
        policy
            .state_norm
            .normalize_into(row, states.row_mut(i).as_slice_mut().expect("contiguous"));
    }
    let mut advantages = buffer.advantages.clone();
    normalize_advantages(&mut advantages);
    Batch {
        obs,
        states,
        actions: buffer.actions.clone(),
        old_log_probs: buffer.log_probs.clone(),
        advantages,
        returns: buffer.returns.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// Optimizer state carried across updates.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(policy: &PolicyParams, cfg: &TrainConfig) -> Self {
        Optimizers {
            actor: Adam::new(policy.actor.params().len(), cfg.lr_actor),
            critic: Adam::new(policy.critic.params().len(), cfg.lr_critic),
        }
    }
}

/// Runs `ppo_epochs` passes of shuffled minibatch updates over the buffer.
/// A non-finite loss aborts the update before any parameter is touched by it.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut PolicyParams,
    opt: &mut Optimizers,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let batch = prepare_batch(policy, buffer);
    let n = batch.len();
    if n == 0 {
        return Ok(UpdateStats::default());
    }
    let coef = LossCoefficients::from(cfg);
    let minibatches = cfg.minibatches.clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for epoch in 0..cfg.ppo_epochs {
        idx.shuffle(rng);
        for m in 0..minibatches {
            let lo = m * n / minibatches;
            let hi = (m + 1) * n / minibatches;
            let mb = batch.select(&idx[lo..hi]);
            let mut out = ppo_loss(&policy.actor, &policy.critic, &mb, &coef);
            let finite = out.actor_loss.is_finite()
                && out.critic_loss.is_finite()
                && out.actor_grad.iter().chain(&out.critic_grad).all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!(
                    "PPO loss diverged at epoch {epoch}, minibatch {m}: actor {} critic {} entropy {}",
                    out.actor_loss, out.critic_loss, out.entropy
                )));
            }
            let ga = clip_grad_norm(&mut out.actor_grad, cfg.max_grad_norm);
            let gc = clip_grad_norm(&mut out.critic_grad, cfg.max_grad_norm);
            opt.actor.step(policy.actor.params_mut(), &out.actor_grad);
            opt.critic.step(policy.critic.params_mut(), &out.critic_grad);
            stats.actor_loss += out.actor_loss;
            stats.critic_loss += out.critic_loss;
            stats.entropy += out.entropy;
            stats.clip_fraction += out.clip_fraction;
            stats.actor_grad_norm += ga;
            stats.critic_grad_norm += gc;
            count += 1.0;
        }
    }
    stats.actor_loss /= count;
    stats.critic_loss /= count;
    stats.entropy /= count;
    stats.clip_fraction /= count;
    stats.actor_grad_norm /= count;
    stats.critic_grad_norm /= count;
    Ok(stats)
}
