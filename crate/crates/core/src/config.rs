//! Plain-text run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Lines of the form
//! `param uniform lo hi` (or `normal`/`const`) define a custom randomization
//! level. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::baseline::RssParams;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::mappo::TrainConfig;
use crate::randomization::{parse_param_line, RandomizationLevel, PARAM_NAMES};
use crate::track::TrackMap;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub rss: RssParams,
    /// Track file; the built-in rounded rectangle when absent.
    pub track: Option<PathBuf>,
    /// Level defined by distribution lines in the file, if any.
    pub level: Option<RandomizationLevel>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if let (Some(track), Some(dir)) = (&cfg.track, path.parent()) {
            if track.is_relative() {
                cfg.track = Some(dir.join(track));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut level: Option<RandomizationLevel> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                let (param, dist) = parse_param_line(line).map_err(|m| Error::parse(origin, line_no, m))?;
                let lvl = level.get_or_insert_with(|| {
                    let mut l = RandomizationLevel::none();
                    l.name = "custom".into();
                    l
                });
                let slot = lvl
                    .param_mut(param)
                    .ok_or_else(|| Error::parse(origin, line_no, format!("unknown key `{param}`")))?;
                *slot = dist;
                continue;
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|m| Error::parse(origin, line_no, m))?;
        }
        if let Some(l) = &level {
            l.validate()?;
        }
        cfg.level = level;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let f = || value.parse::<f64>().map_err(|_| format!("`{key}`: bad number `{value}`"));
        let u = || value.parse::<usize>().map_err(|_| format!("`{key}`: bad integer `{value}`"));
        let veh = &mut self.env.vehicle;
        let tr = &mut self.train;
        let rss = &mut self.rss;
        match key {
            "n_agents" => self.env.n_agents = u()?,
            "n_parked" => self.env.n_parked = u()?,
            "max_steps" => self.env.max_steps = u()?,
            "dt" => self.env.dt = f()?,
            "v_min" => self.env.v_min = f()?,
            "v_max" => {
                self.env.v_max = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|_| format!("`v_max`: bad number `{s}`")))
                    .collect::<std::result::Result<_, _>>()?;
                if self.env.v_max.is_empty() {
                    return Err("`v_max` needs at least one value".into());
                }
            }
            "accel" => self.env.accel = f()?,
            "perception_radius" => self.env.perception_radius = f()?,
            "collision_radius" => self.env.collision_radius = f()?,
            "seed" => self.env.seed = value.parse().map_err(|_| format!("`seed`: bad integer `{value}`"))?,
            "baseline" => veh.baseline = f()?,
            "k_steer" => veh.k_steer = f()?,
            "omega_max" => veh.omega_max = f()?,
            "tau" => veh.tau = f()?,
            "lookahead" => veh.lookahead = f()?,
            "v_wheel_max" => veh.v_wheel_max = f()?,
            "episodes" => tr.episodes = u()?,
            "steps_per_episode" => tr.steps_per_episode = u()?,
            "lr" => {
                tr.lr_actor = f()?;
                tr.lr_critic = tr.lr_actor;
            }
            "lr_actor" => tr.lr_actor = f()?,
            "lr_critic" => tr.lr_critic = f()?,
            "ppo_epochs" => tr.ppo_epochs = u()?,
            "entropy_coef" => tr.entropy_coef = f()?,
            "gamma" => tr.gamma = f()?,
            "gae_lambda" => tr.gae_lambda = f()?,
            "clip_eps" => tr.clip_eps = f()?,
            "value_coef" => tr.value_coef = f()?,
            "minibatches" => tr.minibatches = u()?,
            "max_grad_norm" => tr.max_grad_norm = f()?,
            "episodes_per_update" => tr.episodes_per_update = u()?,
            "rss_response_time" => rss.response_time = f()?,
            "rss_max_accel" => rss.max_accel = f()?,
            "rss_min_brake" => rss.min_brake = f()?,
            "rss_max_brake" => rss.max_brake = f()?,
            "track" => self.track = Some(PathBuf::from(value)),
            _ if PARAM_NAMES.contains(&key) => {
                return Err(format!("`{key}` takes a distribution line, not `key = value`"))
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.rss.validate()
    }

    /// Loads the configured track, or builds the default one.
    pub fn load_track(&self) -> Result<Arc<TrackMap>> {
        Ok(Arc::new(match &self.track {
            Some(path) => TrackMap::load(path)?,
            None => TrackMap::default(),
        }))
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let e = &self.env;
        let v = &e.vehicle;
        let t = &self.train;
        let r = &self.rss;
        let v_max: Vec<String> = e.v_max.iter().map(|x| x.to_string()).collect();
        let mut out = String::new();
        let mut kv = |k: &str, val: String| out.push_str(&format!("{k} = {val}\n"));
        kv("n_agents", e.n_agents.to_string());
        kv("n_parked", e.n_parked.to_string());
        kv("max_steps", e.max_steps.to_string());
        kv("dt", e.dt.to_string());
        kv("v_min", e.v_min.to_string());
        kv("v_max", v_max.join(","));
        kv("accel", e.accel.to_string());
        kv("perception_radius", e.perception_radius.to_string());
        kv("collision_radius", e.collision_radius.to_string());
        kv("seed", e.seed.to_string());
        kv("baseline", v.baseline.to_string());
        kv("k_steer", v.k_steer.to_string());
        kv("omega_max", v.omega_max.to_string());
        kv("tau", v.tau.to_string());
        kv("lookahead", v.lookahead.to_string());
        kv("v_wheel_max", v.v_wheel_max.to_string());
        kv("episodes", t.episodes.to_string());
        kv("steps_per_episode", t.steps_per_episode.to_string());
        kv("lr_actor", t.lr_actor.to_string());
        kv("lr_critic", t.lr_critic.to_string());
        kv("ppo_epochs", t.ppo_epochs.to_string());
        kv("entropy_coef", t.entropy_coef.to_string());
        kv("gamma", t.gamma.to_string());
        kv("gae_lambda", t.gae_lambda.to_string());
        kv("clip_eps", t.clip_eps.to_string());
        kv("value_coef", t.value_coef.to_string());
        kv("minibatches", t.minibatches.to_string());
        kv("max_grad_norm", t.max_grad_norm.to_string());
        kv("episodes_per_update", t.episodes_per_update.to_string());
        kv("rss_response_time", r.response_time.to_string());
        kv("rss_max_accel", r.max_accel.to_string());
        kv("rss_min_brake", r.min_brake.to_string());
        kv("rss_max_brake", r.max_brake.to_string());
        if let Some(p) = &self.track {
            kv("track", p.display().to_string());
        }
        if let Some(l) = &self.level {
            out.push_str(&l.to_level_string());
        }
        out
    }
}
