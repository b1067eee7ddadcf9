//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "MARLCKPT"
//! version  u32 LE
//! layout   u32 LE words: actor (input, n_hidden, hidden.., output),
//!          critic (same), obs_norm dim, state_norm dim
//! payload  f64 LE: actor params, critic params,
//!          obs_norm (count, mean.., var..), state_norm (count, mean.., var..)
//! ```

use std::path::Path;

use super::net::{Mlp, NetworkSpec};
use super::norm::RunningNorm;
use super::policy::PolicyParams;
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"MARLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 20;

pub fn encode(policy: &PolicyParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let mut words: Vec<u32> = Vec::new();
    for spec in [policy.actor.spec(), policy.critic.spec()] {
        words.push(spec.input_dim as u32);
        words.push(spec.hidden.len() as u32);
        words.extend(spec.hidden.iter().map(|&h| h as u32));
        words.push(spec.output_dim as u32);
    }
    words.push(policy.obs_norm.dim() as u32);
    words.push(policy.state_norm.dim() as u32);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    policy.actor.params().iter().for_each(|&v| put(v));
    policy.critic.params().iter().for_each(|&v| put(v));
    for norm in [&policy.obs_norm, &policy.state_norm] {
        put(norm.count);
        norm.mean.iter().for_each(|&v| put(v));
        norm.var.iter().for_each(|&v| put(v));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self) -> std::result::Result<usize, CheckpointError> {
        let v = self.u32()?;
        if v == 0 || v > MAX_DIM {
            return Err(CheckpointError::Corrupt(format!("implausible dimension {v}")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Corrupt("non-finite parameter".into()));
        }
        Ok(vals)
    }

    fn spec(&mut self) -> std::result::Result<NetworkSpec, CheckpointError> {
        let input = self.dim()?;
        let n_hidden = self.u32()?;
        if n_hidden > 16 {
            return Err(CheckpointError::Corrupt(format!("implausible layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden).map(|_| self.dim()).collect::<std::result::Result<Vec<_>, _>>()?;
        let output = self.dim()?;
        Ok(NetworkSpec::new(input, &hidden, output))
    }

    fn norm(&mut self, dim: usize) -> std::result::Result<RunningNorm, CheckpointError> {
        let count = self.f64s(1)?[0];
        let mean = self.f64s(dim)?;
        let var = self.f64s(dim)?;
        Ok(RunningNorm { count, mean, var })
    }
}

pub fn decode(bytes: &[u8]) -> Result<PolicyParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::Corrupt("missing magic".into()))? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic bytes".into()).into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let actor_spec = r.spec()?;
    let critic_spec = r.spec()?;
    let obs_dim = r.dim()?;
    let state_dim = r.dim()?;
    if obs_dim != actor_spec.input_dim || state_dim != critic_spec.input_dim {
        return Err(CheckpointError::Corrupt("normalizer dimensions disagree with networks".into()).into());
    }
    let actor = r.f64s(actor_spec.param_count())?;
    let critic = r.f64s(critic_spec.param_count())?;
    let obs_norm = r.norm(obs_dim)?;
    let state_norm = r.norm(state_dim)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    Ok(PolicyParams {
        actor: Mlp::from_params(actor_spec, actor)?,
        critic: Mlp::from_params(critic_spec, critic)?,
        obs_norm,
        state_norm,
    })
}

pub fn save_checkpoint(policy: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(policy)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and checks it against the environment's dimensions.
pub fn load_checkpoint_for(path: &Path, obs_dim: usize, state_dim: usize) -> Result<PolicyParams> {
    let p = load_checkpoint(path)?;
    p.ensure_dims(obs_dim, state_dim)?;
    Ok(p)
}
