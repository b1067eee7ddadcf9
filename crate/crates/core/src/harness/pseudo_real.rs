//! Held-out deployment perturbations: delayed actions, a frozen actuation
//! bias per agent, observation noise and skipped motion updates.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::env::{ActionId, Observation, StepOverrides, OBS_DIM};
use crate::error::{Error, Result};
use crate::geom::wrap_angle;
use crate::randomization::{parse_param_line, RandomizationLevel};
use crate::rng::SimRng;
use crate::vehicle::ActuationProfile;

/// Widening of the high randomization bounds used for the default bias.
pub const DEFAULT_BIAS_WIDENING: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRealProfile {
    pub action_delay_steps: usize,
    /// Distribution the frozen per-agent bias is drawn from once per run.
    pub bias: RandomizationLevel,
    pub observation_noise_sigma: [f64; OBS_DIM],
    /// Probability that an agent skips its motion update on a given step.
    pub update_jitter: f64,
}

impl Default for PseudoRealProfile {
    /// One step of delay, bias 20% wider than the high level, 0.01 noise on
    /// angles and distances, 5% skipped updates.
    fn default() -> Self {
        let mut sigma = [0.0; OBS_DIM];
        sigma[..5].fill(0.01);
        PseudoRealProfile {
            action_delay_steps: 1,
            bias: RandomizationLevel::high().widened(DEFAULT_BIAS_WIDENING, "bias"),
            observation_noise_sigma: sigma,
            update_jitter: 0.05,
        }
    }
}

impl PseudoRealProfile {
    /// The profile that changes nothing.
    pub fn zero() -> Self {
        PseudoRealProfile {
            action_delay_steps: 0,
            bias: RandomizationLevel {
                name: "bias".into(),
                ..RandomizationLevel::none()
            },
            observation_noise_sigma: [0.0; OBS_DIM],
            update_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.update_jitter) {
            return Err(Error::InvalidConfig(format!(
                "update_jitter {} outside [0, 1]",
                self.update_jitter
            )));
        }
        if self.observation_noise_sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("observation noise sigmas must be finite and >= 0".into()));
        }
        self.bias.validate()
    }

    /// `default` or a profile file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "default" => Ok(Self::default()),
            "zero" | "none" => Ok(Self::zero()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Starts from [`PseudoRealProfile::zero`]. Keys: `action_delay_steps`,
    /// `update_jitter`, `observation_noise_sigma` (one value for every field
    /// or nine values), `bias` (`none`, `med`, `high` or `default`). Bias
    /// distribution lines `param kind a [b]` override single parameters.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut p = Self::zero();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |m: String| Error::parse(origin, line_no, m);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                let (param, dist) = parse_param_line(line).map_err(err)?;
                let slot = p
                    .bias
                    .param_mut(param)
                    .ok_or_else(|| err(format!("unknown bias parameter `{param}`")))?;
                *slot = dist;
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("`{key}`: bad number `{s}`")));
            match key {
                "action_delay_steps" => {
                    p.action_delay_steps = value
                        .parse()
                        .map_err(|_| err(format!("`{key}`: bad integer `{value}`")))?
                }
                "update_jitter" => p.update_jitter = num(value)?,
                "observation_noise_sigma" => {
                    let vals: Vec<f64> = value
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(num)
                        .collect::<Result<_>>()?;
                    match vals.len() {
                        1 => p.observation_noise_sigma = [vals[0]; OBS_DIM],
                        OBS_DIM => p.observation_noise_sigma.copy_from_slice(&vals),
                        n => return Err(err(format!("expected 1 or {OBS_DIM} sigmas, got {n}"))),
                    }
                }
                "bias" => {
                    let level = match value {
                        "default" => Self::default().bias,
                        name => RandomizationLevel::builtin(name)
                            .ok_or_else(|| err(format!("unknown bias level `{name}`")))?,
                    };
                    p.bias = RandomizationLevel {
                        name: "bias".into(),
                        ..level
                    };
                }
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_profile_string(&self) -> String {
        let sigmas: Vec<String> = self.observation_noise_sigma.iter().map(|s| s.to_string()).collect();
        format!(
            "action_delay_steps = {}\nupdate_jitter = {}\nobservation_noise_sigma = {}\n{}",
            self.action_delay_steps,
            self.update_jitter,
            sigmas.join(" "),
            self.bias.to_level_string()
        )
    }
}

/// Per-run perturbation state. All randomness comes from its own stream;
/// components with zero magnitude draw nothing, so the zero profile leaves
/// a run bit-identical.
#[derive(Debug, Clone)]
pub struct PseudoReal {
    profile: PseudoRealProfile,
    biases: Vec<ActuationProfile>,
    queue: VecDeque<Vec<ActionId>>,
    rng: SimRng,
}

impl PseudoReal {
    /// Draws the frozen biases and fills the action queue with no-ops.
    pub fn new(profile: &PseudoRealProfile, n_agents: usize, mut rng: SimRng) -> Self {
        let biases = (0..n_agents).map(|_| profile.bias.sample_profile(&mut rng)).collect();
        let queue = (0..profile.action_delay_steps)
            .map(|_| vec![ActionId::NoOp; n_agents])
            .collect();
        PseudoReal {
            profile: profile.clone(),
            biases,
            queue,
            rng,
        }
    }

    pub fn biases(&self) -> &[ActuationProfile] {
        &self.biases
    }

    /// Actuation each agent actually gets: its policy-time profile composed
    /// with the frozen bias.
    pub fn compose_profiles(&self, profiles: &[ActuationProfile]) -> Vec<ActuationProfile> {
        profiles.iter().zip(&self.biases).map(|(p, b)| p.compose(b)).collect()
    }

    /// Pushes the chosen actions and returns the ones executed this step.
    pub fn delay_actions(&mut self, actions: Vec<ActionId>) -> Vec<ActionId> {
        self.queue.push_back(actions);
        self.queue.pop_front().expect("queue holds at least the pushed entry")
    }

    /// Adds zero-mean Gaussian noise to each observation field. Distances
    /// stay in `[0, perception_radius]` and angles stay wrapped.
    pub fn perturb_observation(&mut self, obs: &Observation, perception_radius: f64) -> Observation {
        let mut a = obs.to_array();
        for (k, v) in a.iter_mut().enumerate() {
            let sigma = self.profile.observation_noise_sigma[k];
            if sigma > 0.0 {
                *v += Normal::new(0.0, sigma).expect("validated sigma").sample(&mut self.rng);
            }
        }
        if self.profile.observation_noise_sigma[0] > 0.0 {
            a[0] = wrap_angle(a[0]);
        }
        if self.profile.observation_noise_sigma[2] > 0.0 {
            a[2] = wrap_angle(a[2]);
        }
        for k in [3, 4] {
            if self.profile.observation_noise_sigma[k] > 0.0 {
                a[k] = a[k].clamp(0.0, perception_radius);
            }
        }
        Observation::from_array(&a)
    }

    /// Motion-skip flags for the next step.
    pub fn overrides(&mut self, n_agents: usize) -> StepOverrides {
        let p = self.profile.update_jitter;
        let skip_motion = (0..n_agents)
            .map(|_| if p > 0.0 { self.rng.random_bool(p) } else { false })
            .collect();
        StepOverrides { skip_motion }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn default_profile_values() {
        let p = PseudoRealProfile::default();
        assert_eq!(p.action_delay_steps, 1);
        assert_eq!(p.update_jitter, 0.05);
        assert_eq!(p.observation_noise_sigma, [0.01, 0.01, 0.01, 0.01, 0.01, 0.0, 0.0, 0.0, 0.0]);
        let (lo, hi) = p.bias.gain.bounds().unwrap();
        assert!((lo - 0.4).abs() < 1e-12 && (hi - 1.6).abs() < 1e-12);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn parse_round_trip() {
        let p = PseudoRealProfile::default();
        assert_eq!(PseudoRealProfile::parse(&p.to_profile_string(), "t").unwrap(), p);
        let q = PseudoRealProfile::parse("action_delay_steps = 2\nbias = default\ntrim const 0\n", "t").unwrap();
        assert_eq!(q.action_delay_steps, 2);
        assert_eq!(q.bias.gain, p.bias.gain);
        assert_eq!(q.bias.trim, crate::randomization::ParamDist::Const(0.0));
        let r = PseudoRealProfile::parse("observation_noise_sigma = 0.01, 0.01,0.01 0.01 0.01, 0, 0, 0, 0\n", "t").unwrap();
        assert_eq!(r.observation_noise_sigma, p.observation_noise_sigma);
    }

    #[test]
    fn parse_errors() {
        let e = PseudoRealProfile::parse("update_jitter = 0.1\nupdate_jitter = 2\n", "p").unwrap_err();
        assert!(matches!(e, Error::InvalidConfig(_)), "{e}");
        let e = PseudoRealProfile::parse("\nobservation_noise_sigma = 1 2\n", "p").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = PseudoRealProfile::parse("delay = 1\n", "p").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
    }

    #[test]
    fn delay_two_shifts_constant_stream() {
        let profile = PseudoRealProfile {
            action_delay_steps: 2,
            ..PseudoRealProfile::zero()
        };
        let mut pr = PseudoReal::new(&profile, 1, stream(0, &[]));
        let inputs = [ActionId::Accelerate, ActionId::Brake, ActionId::ChangeLane, ActionId::Accelerate];
        let out: Vec<ActionId> = inputs.iter().map(|&a| pr.delay_actions(vec![a])[0]).collect();
        assert_eq!(out, vec![ActionId::NoOp, ActionId::NoOp, ActionId::Accelerate, ActionId::Brake]);
    }

    #[test]
    fn zero_profile_is_identity_and_draws_nothing() {
        let mut pr = PseudoReal::new(&PseudoRealProfile::zero(), 3, stream(4, &[]));
        let obs = Observation {
            steering_angle: 0.3,
            dist_same_lane_ahead: 0.7,
            own_speed: 0.2,
            ..Observation::default()
        };
        assert_eq!(pr.perturb_observation(&obs, 1.0), obs);
        let acts = vec![ActionId::Brake, ActionId::NoOp, ActionId::ChangeLane];
        assert_eq!(pr.delay_actions(acts.clone()), acts);
        assert_eq!(pr.overrides(3).skip_motion, vec![false; 3]);
        let profiles = vec![ActuationProfile::NOMINAL; 3];
        assert_eq!(pr.compose_profiles(&profiles), profiles);
        let untouched: u64 = stream(4, &[]).random();
        assert_eq!(pr.rng.random::<u64>(), untouched);
    }

    #[test]
    fn full_jitter_skips_everyone() {
        let profile = PseudoRealProfile {
            update_jitter: 1.0,
            ..PseudoRealProfile::zero()
        };
        let mut pr = PseudoReal::new(&profile, 4, stream(1, &[]));
        for _ in 0..10 {
            assert!(pr.overrides(4).skip_motion.iter().all(|&s| s));
        }
    }

    #[test]
    fn noisy_distances_stay_in_range() {
        let profile = PseudoRealProfile {
            observation_noise_sigma: [0.5; OBS_DIM],
            ..PseudoRealProfile::zero()
        };
        let mut pr = PseudoReal::new(&profile, 1, stream(2, &[]));
        let obs = Observation {
            dist_same_lane_ahead: 1.0,
            dist_opposite_lane_ahead: 0.0,
            steering_angle: 3.1,
            ..Observation::default()
        };
        for _ in 0..200 {
            let o = pr.perturb_observation(&obs, 1.0);
            assert!((0.0..=1.0).contains(&o.dist_same_lane_ahead));
            assert!((0.0..=1.0).contains(&o.dist_opposite_lane_ahead));
            assert!(o.steering_angle > -std::f64::consts::PI && o.steering_angle <= std::f64::consts::PI);
        }
    }
}
