//! Training, evaluation and comparison commands behind the CLI.

pub mod eval;
pub mod metrics;
pub mod pseudo_real;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mappo::{save_checkpoint, TrainLogRow, Trainer, TRAIN_LOG_HEADER};
use crate::randomization::RandomizationLevel;

pub use eval::{evaluate, run_episode, Controller, EvalOptions, RunOutcome};
pub use metrics::{
    episode_log_to_csv, mean_std, metrics_from_log, metrics_to_csv, parse_episode_log, parse_metrics_csv,
    LogRow, RunMetrics,
};
pub use pseudo_real::{PseudoReal, PseudoRealProfile};

/// Training log path next to a checkpoint path.
pub fn train_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.csv");
    checkpoint.with_file_name(name)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<TrainLogRow>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

impl TrainOutcome {
    pub fn final_mean_reward(&self) -> Option<f64> {
        self.log.last().map(|r| r.mean_reward)
    }
}

/// Trains a policy at `level`, then writes the checkpoint to `out` and the
/// per-update log next to it.
pub fn cmd_train(
    cfg: &RunConfig,
    level: &RandomizationLevel,
    out: &Path,
    on_update: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome> {
    let track = cfg.load_track()?;
    let mut trainer = Trainer::new(cfg.env.clone(), track, cfg.train.clone(), level.clone())?;
    let log = trainer.train(on_update)?;
    let log_path = train_log_path(out);
    let mut text = String::from(TRAIN_LOG_HEADER);
    text.push('\n');
    for row in &log {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    save_checkpoint(trainer.policy(), out)?;
    std::fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        log,
        checkpoint: out.to_path_buf(),
        log_path,
    })
}

/// Evaluates `controller` and returns the metrics CSV. Episode logs, when
/// requested, are written as `run_NNN.csv` into `log_dir`.
pub fn cmd_eval(cfg: &RunConfig, controller: &Controller, opts: &EvalOptions, log_dir: Option<&Path>) -> Result<String> {
    let track = cfg.load_track()?;
    let opts = EvalOptions {
        keep_logs: opts.keep_logs || log_dir.is_some(),
        ..opts.clone()
    };
    let outcomes = evaluate(&cfg.env, &track, controller, &opts)?;
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for o in &outcomes {
            let path = dir.join(format!("run_{:03}.csv", o.metrics.run));
            let rows = o.log.as_deref().unwrap_or_default();
            std::fs::write(&path, episode_log_to_csv(rows)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let metrics: Vec<RunMetrics> = outcomes.iter().map(|o| o.metrics).collect();
    Ok(metrics_to_csv(&metrics))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub label: String,
    pub runs: usize,
    /// `(mean, std)` per metric, in [`metrics::METRIC_NAMES`] order.
    pub stats: [(f64, f64); 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub policies: Vec<PolicySummary>,
    /// `ratios[i][j]` is the mean reward of policy `i` over that of policy `j`.
    pub ratios: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn from_runs(labelled: &[(String, Vec<RunMetrics>)]) -> Self {
        let policies: Vec<PolicySummary> = labelled
            .iter()
            .map(|(label, runs)| {
                let cols = metrics::metric_columns(runs);
                PolicySummary {
                    label: label.clone(),
                    runs: runs.len(),
                    stats: std::array::from_fn(|k| mean_std(&cols[k])),
                }
            })
            .collect();
        let ratios = policies
            .iter()
            .map(|a| policies.iter().map(|b| a.stats[0].0 / b.stats[0].0).collect())
            .collect();
        Comparison { policies, ratios }
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let width = self.policies.iter().map(|p| p.label.len()).max().unwrap_or(6).max(6);
        write!(out, "{:<width$} {:>5}", "policy", "runs").expect("write to String");
        for name in metrics::METRIC_NAMES {
            write!(out, " {:>22}", name).expect("write to String");
        }
        out.push('\n');
        for p in &self.policies {
            write!(out, "{:<width$} {:>5}", p.label, p.runs).expect("write to String");
            for (m, s) in p.stats {
                write!(out, " {:>22}", format!("{m:.4} ± {s:.4}")).expect("write to String");
            }
            out.push('\n');
        }
        out.push_str("\nmean reward ratio (row / column)\n");
        write!(out, "{:<width$}", "").expect("write to String");
        for p in &self.policies {
            write!(out, " {:>width$}", p.label).expect("write to String");
        }
        out.push('\n');
        for (p, row) in self.policies.iter().zip(&self.ratios) {
            write!(out, "{:<width$}", p.label).expect("write to String");
            for r in row {
                write!(out, " {:>width$}", format!("{r:.3}")).expect("write to String");
            }
            out.push('\n');
        }
        out
    }

    /// Whitespace-separated columns, one row per policy.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("# policy");
        for name in metrics::METRIC_NAMES {
            write!(out, " {name} {name}_std").expect("write to String");
        }
        out.push('\n');
        for p in &self.policies {
            out.push_str(&p.label.replace(char::is_whitespace, "_"));
            for (m, s) in p.stats {
                write!(out, " {m} {s}").expect("write to String");
            }
            out.push('\n');
        }
        out
    }
}

/// Compares at least two metrics files; labels are the file stems.
pub fn cmd_compare(files: &[PathBuf]) -> Result<Comparison> {
    if files.len() < 2 {
        return Err(Error::Usage("compare needs at least two metrics files".into()));
    }
    let mut labelled = Vec::with_capacity(files.len());
    for path in files {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let runs = parse_metrics_csv(&text, &path.display().to_string())?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        labelled.push((label, runs));
    }
    Ok(Comparison::from_runs(&labelled))
}

/// Mean of the paired differences `a[r] - b[r]` and its standard error.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, s) = mean_std(&d);
    (m, s / (d.len().max(1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runs(rewards: &[f64]) -> Vec<RunMetrics> {
        rewards
            .iter()
            .enumerate()
            .map(|(run, &r)| RunMetrics {
                run,
                mean_reward: r,
                mean_speed: 0.3,
                track_exits: 1,
                collisions: 0,
                lane_changes: 2,
            })
            .collect()
    }

    #[test]
    fn self_comparison_has_unit_ratios() {
        let c = Comparison::from_runs(&[("a".into(), runs(&[0.2, 0.3])), ("a".into(), runs(&[0.2, 0.3]))]);
        assert!(c.ratios.iter().flatten().all(|&r| r == 1.0));
    }

    #[test]
    fn three_way_matrix() {
        let c = Comparison::from_runs(&[
            ("x".into(), runs(&[0.2])),
            ("y".into(), runs(&[0.4])),
            ("z".into(), runs(&[0.1])),
        ]);
        assert_eq!(c.ratios.len(), 3);
        for i in 0..3 {
            assert_eq!(c.ratios[i][i], 1.0);
        }
        assert_eq!(c.ratios[1][0], 2.0);
        assert_eq!(c.ratios[1][2], 4.0);
        let plot = c.plot_data();
        assert_eq!(plot.lines().count(), 4);
        assert!(plot.lines().skip(1).all(|l| l.split_whitespace().count() == 11));
        assert!(c.report().contains("0.2000 ± 0.0000"));
    }

    #[test]
    fn compare_reports_parse_line() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        let bad = dir.path().join("bad.csv");
        std::fs::write(&good, metrics_to_csv(&runs(&[0.1, 0.2]))).unwrap();
        std::fs::write(&bad, format!("{}\n0,0.1,0.2,0,0,0\n1,0.1,x,0,0,0\n", metrics::METRICS_HEADER)).unwrap();
        assert!(cmd_compare(&[good.clone(), good.clone()]).is_ok());
        let err = cmd_compare(&[good.clone(), bad]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(cmd_compare(&[good]), Err(Error::Usage(_))));
    }

    #[test]
    fn paired_difference_values() {
        let (m, se) = paired_difference(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn train_log_path_appends_suffix() {
        assert_eq!(train_log_path(Path::new("out/p.ckpt")), PathBuf::from("out/p.ckpt.log.csv"));
    }
}
