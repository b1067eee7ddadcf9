//! Per-run metrics, episode logs and their CSV forms.

use std::fmt::Write as _;

use crate::env::{ActionId, StepResult};
use crate::error::{Error, Result};
use crate::track::LaneId;

pub const METRICS_HEADER: &str = "run,mean_reward,mean_speed,track_exits,collisions,lane_changes";
pub const SUMMARY_LABEL: &str = "summary";
pub const EPISODE_LOG_HEADER: &str = "step,agent,x,y,theta,v,action,reward,c,t,l,lane";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub run: usize,
    /// Mean reward per agent and step.
    pub mean_reward: f64,
    /// Mean measured speed per agent and step, m/s.
    pub mean_speed: f64,
    /// Times an agent went from on-track to off-track.
    pub track_exits: u64,
    /// Times an agent went from collision-free to colliding.
    pub collisions: u64,
    pub lane_changes: u64,
}

/// Accumulates [`RunMetrics`] step by step.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    reward_sum: f64,
    speed_sum: f64,
    samples: u64,
    prev_off: Vec<bool>,
    prev_collision: Vec<bool>,
    track_exits: u64,
    collisions: u64,
    lane_changes: u64,
}

impl MetricsAccumulator {
    pub fn new(n_agents: usize) -> Self {
        MetricsAccumulator {
            reward_sum: 0.0,
            speed_sum: 0.0,
            samples: 0,
            prev_off: vec![false; n_agents],
            prev_collision: vec![false; n_agents],
            track_exits: 0,
            collisions: 0,
            lane_changes: 0,
        }
    }

    /// Records one agent's step. Calls must come in (step, agent) order.
    pub fn record(&mut self, agent: usize, reward: f64, v: f64, collision: bool, off_track: bool, lane_change: bool) {
        self.reward_sum += reward;
        self.speed_sum += v;
        self.samples += 1;
        if off_track && !self.prev_off[agent] {
            self.track_exits += 1;
        }
        if collision && !self.prev_collision[agent] {
            self.collisions += 1;
        }
        self.lane_changes += u64::from(lane_change);
        self.prev_off[agent] = off_track;
        self.prev_collision[agent] = collision;
    }

    pub fn record_step(&mut self, res: &StepResult) {
        for (i, (t, &r)) in res.terms.iter().zip(&res.rewards).enumerate() {
            self.record(i, r, t.v, t.collision, t.off_track, t.lane_change);
        }
    }

    pub fn finish(&self, run: usize) -> RunMetrics {
        let n = self.samples.max(1) as f64;
        RunMetrics {
            run,
            mean_reward: self.reward_sum / n,
            mean_speed: self.speed_sum / n,
            track_exits: self.track_exits,
            collisions: self.collisions,
            lane_changes: self.lane_changes,
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Column values of every metric, in header order after `run`.
pub fn metric_columns(runs: &[RunMetrics]) -> [Vec<f64>; 5] {
    [
        runs.iter().map(|m| m.mean_reward).collect(),
        runs.iter().map(|m| m.mean_speed).collect(),
        runs.iter().map(|m| m.track_exits as f64).collect(),
        runs.iter().map(|m| m.collisions as f64).collect(),
        runs.iter().map(|m| m.lane_changes as f64).collect(),
    ]
}

pub const METRIC_NAMES: [&str; 5] = ["mean_reward", "mean_speed", "track_exits", "collisions", "lane_changes"];

/// One row per run, then a `summary` row holding the column means.
pub fn metrics_to_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in runs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.run, m.mean_reward, m.mean_speed, m.track_exits, m.collisions, m.lane_changes
        )
        .expect("write to String");
    }
    let means: Vec<String> = metric_columns(runs).iter().map(|c| mean_std(c).0.to_string()).collect();
    writeln!(out, "{SUMMARY_LABEL},{}", means.join(",")).expect("write to String");
    out
}

/// Parses per-run rows; the summary row is checked for shape and skipped.
pub fn parse_metrics_csv(text: &str, origin: &str) -> Result<Vec<RunMetrics>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        Some((i, h)) => return Err(Error::parse(origin, i + 1, format!("unexpected header `{h}`"))),
        None => return Err(Error::parse(origin, 1, "empty metrics file")),
    }
    let mut runs = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let err = |m: String| Error::parse(origin, line_no, m);
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad number `{s}`")))
        };
        let count = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad count `{s}`")));
        if f[0] == SUMMARY_LABEL {
            for s in &f[1..] {
                num(s)?;
            }
            continue;
        }
        runs.push(RunMetrics {
            run: f[0].parse().map_err(|_| err(format!("bad run index `{}`", f[0])))?,
            mean_reward: num(f[1])?,
            mean_speed: num(f[2])?,
            track_exits: count(f[3])?,
            collisions: count(f[4])?,
            lane_changes: count(f[5])?,
        });
    }
    if runs.is_empty() {
        return Err(Error::parse(origin, 1, "no run rows"));
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub agent: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub action: ActionId,
    pub reward: f64,
    pub c: bool,
    pub t: bool,
    pub l: bool,
    pub lane: LaneId,
}

pub fn episode_log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(EPISODE_LOG_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.agent,
            r.x,
            r.y,
            r.theta,
            r.v,
            r.action,
            r.reward,
            u8::from(r.c),
            u8::from(r.t),
            u8::from(r.l),
            r.lane.index()
        )
        .expect("write to String");
    }
    out
}

pub fn parse_episode_log(text: &str, origin: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == EPISODE_LOG_HEADER => {}
        _ => return Err(Error::parse(origin, 1, "missing episode log header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let err = |m: String| Error::parse(origin, i + 1, m);
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return Err(err(format!("expected 12 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad integer `{s}`")));
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(err(format!("bad flag `{s}`"))),
        };
        rows.push(LogRow {
            step: int(f[0])?,
            agent: int(f[1])?,
            x: num(f[2])?,
            y: num(f[3])?,
            theta: num(f[4])?,
            v: num(f[5])?,
            action: f[6].parse().map_err(err)?,
            reward: num(f[7])?,
            c: flag(f[8])?,
            t: flag(f[9])?,
            l: flag(f[10])?,
            lane: LaneId::from_index(int(f[11])?).ok_or_else(|| err(format!("bad lane `{}`", f[11])))?,
        });
    }
    Ok(rows)
}

/// Recomputes run metrics from a logged episode.
pub fn metrics_from_log(rows: &[LogRow], run: usize) -> RunMetrics {
    let n_agents = rows.iter().map(|r| r.agent + 1).max().unwrap_or(0);
    let mut acc = MetricsAccumulator::new(n_agents);
    for r in rows {
        acc.record(r.agent, r.reward, r.v, r.c, r.t, r.l);
    }
    acc.finish(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn onsets_are_counted_once() {
        let mut acc = MetricsAccumulator::new(1);
        for &(c, t) in &[(false, false), (true, true), (true, true), (false, false), (true, false)] {
            acc.record(0, 0.1, 0.1, c, t, false);
        }
        let m = acc.finish(0);
        assert_eq!(m.collisions, 2);
        assert_eq!(m.track_exits, 1);
        assert!((m.mean_reward - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn metrics_parse_errors_have_line_numbers() {
        let text = format!("{METRICS_HEADER}\n0,0.1,0.2,0,0,0\n1,abc,0.2,0,0,0\n");
        assert!(matches!(parse_metrics_csv(&text, "m"), Err(Error::Parse { line: 3, .. })));
        let text = format!("{METRICS_HEADER}\n0,0.1,0.2,0,0\n");
        assert!(matches!(parse_metrics_csv(&text, "m"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_metrics_csv("a,b\n", "m"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn log_round_trip() {
        let rows = vec![
            LogRow {
                step: 1,
                agent: 0,
                x: 0.1 + 0.2,
                y: -1.0 / 3.0,
                theta: std::f64::consts::PI,
                v: 0.25,
                action: ActionId::ChangeLane,
                reward: -0.25,
                c: false,
                t: true,
                l: true,
                lane: LaneId::Outer,
            },
            LogRow {
                step: 1,
                agent: 1,
                x: 1e-300,
                y: 2.0,
                theta: 0.0,
                v: 0.0,
                action: ActionId::NoOp,
                reward: 0.0,
                c: true,
                t: false,
                l: false,
                lane: LaneId::Inner,
            },
        ];
        assert_eq!(parse_episode_log(&episode_log_to_csv(&rows), "l").unwrap(), rows);
    }

    fn arb_metrics() -> impl Strategy<Value = RunMetrics> {
        (0usize..1000, -20.0f64..2.0, 0.0f64..1.0, 0u64..500, 0u64..500, 0u64..500).prop_map(
            |(run, mean_reward, mean_speed, track_exits, collisions, lane_changes)| RunMetrics {
                run,
                mean_reward,
                mean_speed,
                track_exits,
                collisions,
                lane_changes,
            },
        )
    }

    proptest! {
        #[test]
        fn csv_round_trip(runs in prop::collection::vec(arb_metrics(), 1..40)) {
            let text = metrics_to_csv(&runs);
            prop_assert_eq!(parse_metrics_csv(&text, "m").unwrap(), runs);
        }
    }
}
