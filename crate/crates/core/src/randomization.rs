//! Per-episode actuation randomization levels.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::vehicle::ActuationProfile;

/// Distribution of a single actuation parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sigma: f64 },
    Const(f64),
}

impl ParamDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamDist::Const(v) => v,
            ParamDist::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            }
            ParamDist::Normal { mean, sigma } => {
                if sigma == 0.0 {
                    mean
                } else {
                    Normal::new(mean, sigma).expect("validated sigma").sample(rng)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ParamDist::Const(v) => v,
            ParamDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            ParamDist::Normal { mean, .. } => mean,
        }
    }

    /// Closed support for bounded distributions.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            ParamDist::Const(v) => Some((v, v)),
            ParamDist::Uniform { lo, hi } => Some((lo, hi)),
            ParamDist::Normal { .. } => None,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            ParamDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            ParamDist::Normal { mean, sigma } => mean.is_finite() && sigma.is_finite() && sigma >= 0.0,
            ParamDist::Const(v) => v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid distribution for {name}: {self}")))
        }
    }

    /// Widens a uniform range symmetrically about its centre; normal sigmas
    /// are scaled. Constants stay put.
    pub fn widened(&self, factor: f64) -> ParamDist {
        match *self {
            ParamDist::Uniform { lo, hi } => {
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo) * factor;
                ParamDist::Uniform { lo: c - h, hi: c + h }
            }
            ParamDist::Normal { mean, sigma } => ParamDist::Normal {
                mean,
                sigma: sigma * factor,
            },
            c @ ParamDist::Const(_) => c,
        }
    }
}

impl fmt::Display for ParamDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamDist::Uniform { lo, hi } => write!(f, "uniform {lo} {hi}"),
            ParamDist::Normal { mean, sigma } => write!(f, "normal {mean} {sigma}"),
            ParamDist::Const(v) => write!(f, "const {v}"),
        }
    }
}

/// The steering error entry describes zero-mean per-step noise; the sampled
/// profile stores its standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationLevel {
    pub name: String,
    pub steer_factor: ParamDist,
    pub motor_k: ParamDist,
    pub gain: ParamDist,
    pub trim: ParamDist,
    pub steer_error: ParamDist,
}

pub const PARAM_NAMES: [&str; 5] = ["steer_factor", "motor_k", "gain", "trim", "steer_error"];

impl RandomizationLevel {
    pub fn none() -> Self {
        RandomizationLevel {
            name: "none".into(),
            steer_factor: ParamDist::Const(1.0),
            motor_k: ParamDist::Const(27.0),
            gain: ParamDist::Const(1.0),
            trim: ParamDist::Const(0.0),
            steer_error: ParamDist::Const(0.0),
        }
    }

    pub fn medium() -> Self {
        RandomizationLevel {
            name: "med".into(),
            steer_factor: ParamDist::Uniform { lo: 0.8, hi: 1.2 },
            motor_k: ParamDist::Uniform { lo: 22.0, hi: 32.0 },
            gain: ParamDist::Uniform { lo: 0.8, hi: 1.2 },
            trim: ParamDist::Uniform { lo: -0.1, hi: 0.1 },
            steer_error: ParamDist::Normal { mean: 0.0, sigma: 0.1 },
        }
    }

    pub fn high() -> Self {
        RandomizationLevel {
            name: "high".into(),
            steer_factor: ParamDist::Uniform { lo: 0.5, hi: 1.5 },
            motor_k: ParamDist::Uniform { lo: 14.0, hi: 40.0 },
            gain: ParamDist::Uniform { lo: 0.5, hi: 1.5 },
            trim: ParamDist::Uniform { lo: -0.15, hi: 0.15 },
            steer_error: ParamDist::Normal { mean: 0.0, sigma: 0.5 },
        }
    }

    /// Resolves a built-in level name (`none`, `med`/`medium`, `high`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Self::none()),
            "med" | "medium" => Some(Self::medium()),
            "high" => Some(Self::high()),
            _ => None,
        }
    }

    /// Built-in name or a level file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(level) = Self::builtin(name_or_path) {
            return Ok(level);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into());
            return Self::parse(&text, &stem, name_or_path);
        }
        Err(Error::Usage(format!(
            "unknown randomization level `{name_or_path}` (expected none, med, high or a level file)"
        )))
    }

    pub fn params(&self) -> [(&'static str, &ParamDist); 5] {
        [
            ("steer_factor", &self.steer_factor),
            ("motor_k", &self.motor_k),
            ("gain", &self.gain),
            ("trim", &self.trim),
            ("steer_error", &self.steer_error),
        ]
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut ParamDist> {
        match name {
            "steer_factor" => Some(&mut self.steer_factor),
            "motor_k" | "k" | "K" => Some(&mut self.motor_k),
            "gain" => Some(&mut self.gain),
            "trim" => Some(&mut self.trim),
            "steer_error" => Some(&mut self.steer_error),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in self.params() {
            d.validate(name)?;
        }
        let positive = |name: &str, d: &ParamDist| -> Result<()> {
            match d.bounds() {
                Some((lo, _)) if lo > 0.0 => Ok(()),
                _ => Err(Error::InvalidConfig(format!(
                    "{name} must be bounded and strictly positive, got {d}"
                ))),
            }
        };
        positive("steer_factor", &self.steer_factor)?;
        positive("motor_k", &self.motor_k)?;
        positive("gain", &self.gain)?;
        match self.steer_error {
            ParamDist::Normal { mean: 0.0, .. } => {}
            ParamDist::Const(0.0) => {}
            ParamDist::Uniform { lo, .. } if lo >= 0.0 => {}
            d => {
                return Err(Error::InvalidConfig(format!(
                    "steer_error must be `normal 0 sigma`, `const 0` or a non-negative uniform sigma range, got {d}"
                )))
            }
        }
        Ok(())
    }

    /// Copy with every distribution widened by `factor`.
    pub fn widened(&self, factor: f64, name: &str) -> Self {
        RandomizationLevel {
            name: name.into(),
            steer_factor: self.steer_factor.widened(factor),
            motor_k: self.motor_k.widened(factor),
            gain: self.gain.widened(factor),
            trim: self.trim.widened(factor),
            steer_error: self.steer_error.widened(factor),
        }
    }

    /// Parses `param uniform lo hi` / `param normal mean sigma` /
    /// `param const value` lines on top of level `none`.
    pub fn parse(text: &str, name: &str, origin: &str) -> Result<Self> {
        let mut level = RandomizationLevel::none();
        level.name = name.into();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (param, dist) = parse_param_line(line).map_err(|m| Error::parse(origin, i + 1, m))?;
            let slot = level
                .param_mut(param)
                .ok_or_else(|| Error::parse(origin, i + 1, format!("unknown parameter `{param}`")))?;
            *slot = dist;
        }
        level.validate()?;
        Ok(level)
    }

    pub fn to_level_string(&self) -> String {
        self.params()
            .iter()
            .map(|(n, d)| format!("{n} {d}\n"))
            .collect()
    }

    pub fn sample_profile<R: Rng + ?Sized>(&self, rng: &mut R) -> ActuationProfile {
        let steer_factor = self.steer_factor.sample(rng);
        let motor_k = self.motor_k.sample(rng);
        let gain = self.gain.sample(rng);
        let trim = self.trim.sample(rng);
        let steer_error_sigma = match self.steer_error {
            ParamDist::Normal { sigma, .. } => sigma,
            d => d.sample(rng),
        };
        ActuationProfile {
            steer_factor,
            motor_k,
            gain,
            trim,
            steer_error_sigma,
        }
    }
}

/// Parses one `param kind a [b]` line. Returns the parameter name and distribution.
pub(crate) fn parse_param_line(line: &str) -> std::result::Result<(&str, ParamDist), String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number `{s}`"));
    let dist = match f.as_slice() {
        [_, "uniform", lo, hi] => ParamDist::Uniform {
            lo: num(lo)?,
            hi: num(hi)?,
        },
        [_, "normal", mean, sigma] => ParamDist::Normal {
            mean: num(mean)?,
            sigma: num(sigma)?,
        },
        [_, "const", v] => ParamDist::Const(num(v)?),
        _ => {
            return Err(format!(
                "expected `param uniform lo hi`, `param normal mean sigma` or `param const value`, got `{line}`"
            ))
        }
    };
    Ok((f[0], dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn none_is_nominal() {
        let mut rng = stream(1, &[]);
        for _ in 0..100 {
            assert_eq!(RandomizationLevel::none().sample_profile(&mut rng), ActuationProfile::NOMINAL);
        }
    }

    #[test]
    fn medium_within_bounds() {
        let level = RandomizationLevel::medium();
        let mut rng = stream(2, &[]);
        for _ in 0..10_000 {
            let p = level.sample_profile(&mut rng);
            assert!((0.8..=1.2).contains(&p.steer_factor));
            assert!((22.0..=32.0).contains(&p.motor_k));
            assert!((0.8..=1.2).contains(&p.gain));
            assert!((-0.1..=0.1).contains(&p.trim));
            assert_eq!(p.steer_error_sigma, 0.1);
        }
    }

    #[test]
    fn high_steer_factor_monte_carlo() {
        let level = RandomizationLevel::high();
        let mut rng = stream(3, &[]);
        let n = 100_000;
        let mut sum = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..n {
            let s = level.sample_profile(&mut rng).steer_factor;
            sum += s;
            lo = lo.min(s);
            hi = hi.max(s);
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
        assert!(lo >= 0.5 && hi <= 1.5);
    }

    #[test]
    fn same_seed_same_sequence() {
        let level = RandomizationLevel::high();
        let a: Vec<_> = {
            let mut r = stream(9, &[4]);
            (0..50).map(|_| level.sample_profile(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = stream(9, &[4]);
            (0..50).map(|_| level.sample_profile(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn level_file_round_trip() {
        let high = RandomizationLevel::high();
        let parsed = RandomizationLevel::parse(&high.to_level_string(), "high", "mem").unwrap();
        assert_eq!(parsed, high);
    }

    #[test]
    fn level_file_errors() {
        let err = RandomizationLevel::parse("gain uniform 1.2 0.8\n", "x", "f").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let err = RandomizationLevel::parse("# c\nwheel const 1\n", "x", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = RandomizationLevel::parse("gain uniform 0.8\n", "x", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(RandomizationLevel::parse("steer_error normal 0.2 0.1\n", "x", "f").is_err());
        assert!(RandomizationLevel::parse("gain const 0\n", "x", "f").is_err());
    }

    #[test]
    fn resolve_rejects_unknown() {
        assert!(matches!(
            RandomizationLevel::resolve("extreme"),
            Err(Error::Usage(_))
        ));
        assert_eq!(RandomizationLevel::resolve("medium").unwrap(), RandomizationLevel::medium());
    }
}
