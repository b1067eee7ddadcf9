//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr; the test fails if any criterion fails.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use marl_drive::baseline::{rss_safe_distance, RssParams};
use marl_drive::env::{compute_reward, ActionId, EnvConfig, Environment, RewardTerms};
use marl_drive::harness::{
    episode_log_to_csv, evaluate, paired_difference, parse_episode_log, Controller, EvalOptions, LogRow,
    PseudoRealProfile, RunMetrics,
};
use marl_drive::mappo::net::{Mlp, NetworkSpec};
use marl_drive::mappo::policy::HIDDEN;
use marl_drive::mappo::ppo::{actor_loss_from_logits, critic_loss_from_values, ppo_loss, Batch, LossCoefficients};
use marl_drive::mappo::{PolicyParams, TrainConfig, Trainer};
use marl_drive::randomization::RandomizationLevel;
use marl_drive::rng::{derive_seed, stream};
use marl_drive::track::TrackMap;
use marl_drive::vehicle::{forward_kinematics, inverse_kinematics, BodyTwist};

const EVAL_RUNS: usize = 30;
const EVAL_SEED: u64 = 2024;
const CONVERGENCE_EPISODES: usize = 500;

struct Report {
    failures: Vec<usize>,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        // Written past the test harness capture so the lines always show.
        let _ = writeln!(std::io::stderr(), "criterion {id:>2} {name}: {verdict} ({detail})");
        if !pass {
            self.failures.push(id);
        }
    }
}

fn kinematics_round_trip(report: &mut Report) {
    let start = Instant::now();
    let mut rng = stream(1, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let t = BodyTwist {
            v: rng.random_range(-1.0..1.0),
            omega: rng.random_range(-10.0..10.0),
        };
        let back = forward_kinematics(inverse_kinematics(t, 0.1), 0.1);
        worst = worst.max((back.v - t.v).abs()).max((back.omega - t.omega).abs());
    }
    let elapsed = start.elapsed();
    report.record(
        1,
        "kinematics round trip",
        worst < 1e-12 && elapsed < Duration::from_secs(1),
        format!("max error {worst:.3e}, {:.3} s", elapsed.as_secs_f64()),
    );
}

fn random_batch(actor: &Mlp, state_dim: usize, rows: usize, seed: u64) -> Batch {
    let mut rng = stream(seed, &[0xBA7C]);
    let obs = ndarray::Array2::from_shape_fn((rows, actor.spec().input_dim), |_| rng.random_range(-2.0..2.0));
    let states = ndarray::Array2::from_shape_fn((rows, state_dim), |_| rng.random_range(-2.0..2.0));
    let actions: Vec<usize> = (0..rows).map(|_| rng.random_range(0..ActionId::COUNT)).collect();
    let logits = actor.forward_batch(obs.view()).output;
    let old_log_probs = (0..rows)
        .map(|i| {
            let l = marl_drive::mappo::net::log_softmax(logits.row(i).as_slice().unwrap());
            // shift so that some ratios fall outside the clip range
            l[actions[i]] + rng.random_range(-0.4..0.4)
        })
        .collect();
    let advantages = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
    let returns = (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect();
    Batch {
        obs,
        states,
        actions,
        old_log_probs,
        advantages,
        returns,
    }
}

fn gradient_oracle(report: &mut Report) {
    let start = Instant::now();
    let cfg = EnvConfig::default();
    let coef = LossCoefficients::from(&TrainConfig::default());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let mut rng = stream(seed, &[0x6AD]);
        let actor = Mlp::init(NetworkSpec::new(cfg.obs_dim(), &HIDDEN, ActionId::COUNT), 1.0, &mut rng);
        let critic = Mlp::init(NetworkSpec::new(cfg.state_dim(), &HIDDEN, 1), 1.0, &mut rng);
        let batch = random_batch(&actor, cfg.state_dim(), 8, seed);
        let analytic = ppo_loss(&actor, &critic, &batch, &coef);
        let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        // Layers before the perturbed one keep their cached activations.
        let actor_cache = actor.forward_batch(batch.obs.view());
        let mut probe = actor.clone();
        for k in 0..actor.params().len() {
            let layer = actor.spec().layer_of_param(k).unwrap();
            let loss = |net: &Mlp| actor_loss_from_logits(net.forward_batch_from(&actor_cache, layer).view(), &batch, &coef);
            let w = actor.params()[k];
            probe.params_mut()[k] = w + h;
            let plus = loss(&probe);
            probe.params_mut()[k] = w - h;
            let minus = loss(&probe);
            probe.params_mut()[k] = w;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max(rel(analytic.actor_grad[k], fd));
        }
        let critic_cache = critic.forward_batch(batch.states.view());
        let mut probe = critic.clone();
        for k in 0..critic.params().len() {
            let layer = critic.spec().layer_of_param(k).unwrap();
            let loss = |net: &Mlp| critic_loss_from_values(net.forward_batch_from(&critic_cache, layer).view(), &batch, &coef);
            let w = critic.params()[k];
            probe.params_mut()[k] = w + h;
            let plus = loss(&probe);
            probe.params_mut()[k] = w - h;
            let minus = loss(&probe);
            probe.params_mut()[k] = w;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max(rel(analytic.critic_grad[k], fd));
        }
        checked += actor.params().len() + critic.params().len();
    }
    let elapsed = start.elapsed();
    report.record(
        2,
        "gradient oracle",
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "{checked} parameters over 20 seeds, max relative error {worst:.3e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}

/// One episode with random actions and medium randomization. Returns the
/// episode log, live rewards and per-step collision checks.
fn random_episode(seed: u64) -> (Vec<LogRow>, Vec<f64>, usize, usize) {
    let cfg = EnvConfig::default();
    let n = cfg.n_agents;
    let mut env = Environment::new(cfg.clone(), Arc::new(TrackMap::default())).unwrap();
    let mut rng = stream(seed, &[0xE9]);
    let level = RandomizationLevel::medium();
    let profiles: Vec<_> = (0..n).map(|_| level.sample_profile(&mut rng)).collect();
    let mut res = env.reset(&profiles, derive_seed(seed, &[7])).unwrap();
    let mut rows = Vec::new();
    let mut live = Vec::new();
    let (mut flag_mismatches, mut collision_steps) = (0, 0);
    let limit2 = (2.0 * cfg.collision_radius).powi(2);
    while !res.done {
        let actions: Vec<ActionId> = (0..n)
            .map(|_| ActionId::from_index(rng.random_range(0..ActionId::COUNT)).unwrap())
            .collect();
        res = env.step(&actions).unwrap();
        let cars: Vec<(f64, f64)> = env
            .agents()
            .iter()
            .map(|a| (a.pose.x, a.pose.y))
            .chain(env.parked().iter().map(|p| (p.pose.x, p.pose.y)))
            .collect();
        for i in 0..n {
            let brute = (0..cars.len()).any(|j| {
                j != i && {
                    let (dx, dy) = (cars[i].0 - cars[j].0, cars[i].1 - cars[j].1);
                    dx * dx + dy * dy < limit2
                }
            });
            if brute != res.terms[i].collision {
                flag_mismatches += 1;
            }
            collision_steps += usize::from(brute);
            let a = &env.agents()[i];
            let t = &res.terms[i];
            rows.push(LogRow {
                step: env.steps(),
                agent: i,
                x: a.pose.x,
                y: a.pose.y,
                theta: a.pose.theta,
                v: t.v,
                action: actions[i],
                reward: res.rewards[i],
                c: t.collision,
                t: t.off_track,
                l: t.lane_change,
                lane: a.lane_id,
            });
            live.push(res.rewards[i]);
        }
    }
    (rows, live, flag_mismatches, collision_steps)
}

fn reward_and_collision_oracles(report: &mut Report) {
    let mut reward_mismatches = 0usize;
    let mut rows_checked = 0usize;
    let mut flag_mismatches = 0usize;
    let mut collision_steps = 0usize;
    let mut penalised = 0usize;
    for seed in 0..10 {
        let (rows, live, fm, cs) = random_episode(seed);
        flag_mismatches += fm;
        collision_steps += cs;
        let parsed = parse_episode_log(&episode_log_to_csv(&rows), "episode").unwrap();
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        for (row, &r) in parsed.iter().zip(&live) {
            let recomputed = row.v - 5.0 * flag(row.c) - 5.0 * flag(row.t) - 0.5 * flag(row.l);
            let terms = RewardTerms {
                v: row.v,
                collision: row.c,
                off_track: row.t,
                lane_change: row.l,
            };
            if recomputed.to_bits() != r.to_bits() || row.reward.to_bits() != r.to_bits() || compute_reward(&terms) != r {
                reward_mismatches += 1;
            }
            penalised += usize::from(row.c || row.t || row.l);
        }
        rows_checked += parsed.len();
    }
    report.record(
        3,
        "reward oracle",
        reward_mismatches == 0 && rows_checked == 10 * 400 * 3 && penalised > 0,
        format!("{rows_checked} logged rewards, {penalised} with penalties, {reward_mismatches} mismatches"),
    );
    report.record(
        4,
        "collision oracle",
        flag_mismatches == 0 && collision_steps > 0,
        format!("{collision_steps} colliding agent-steps over 10 episodes, {flag_mismatches} mismatches"),
    );
}

fn rss_formula(report: &mut Report) {
    let p = RssParams::default();
    let cases = [
        ((0.0, 0.0), 0.0025),
        ((0.3, 0.2), 0.03 + 0.00125 + 0.325 * 0.325 / 0.5 - 0.04 / 0.5),
        ((0.5, 0.0), 0.6025),
        ((0.4, 0.4), 0.04 + 0.00125 + 0.425 * 0.425 / 0.5 - 0.16 / 0.5),
        ((0.1, 2.0), 0.0),
    ];
    let worst = cases
        .iter()
        .map(|&((r, f), want)| (rss_safe_distance(r, f, &p) - want).abs())
        .fold(0.0, f64::max);
    report.record(
        8,
        "RSS formula",
        worst < 1e-12,
        format!("{} hand values, max error {worst:.3e}", cases.len()),
    );
}

fn table_fidelity(report: &mut Report) {
    const N: usize = 100_000;
    let mut problems = Vec::new();
    for level in [RandomizationLevel::none(), RandomizationLevel::medium(), RandomizationLevel::high()] {
        let mut rng = stream(99, &[level.name.len() as u64]);
        for (name, dist) in level.params() {
            let samples: Vec<f64> = (0..N).map(|_| dist.sample(&mut rng)).collect();
            let mean = samples.iter().sum::<f64>() / N as f64;
            let target = dist.mean();
            if (mean - target).abs() > 0.005 * target.abs().max(1.0) {
                problems.push(format!("{} {name} mean {mean} vs {target}", level.name));
            }
            if let Some((lo, hi)) = dist.bounds() {
                if samples.iter().any(|s| *s < lo || *s > hi) {
                    problems.push(format!("{} {name} out of bounds", level.name));
                }
            }
            if level.name == "none" && samples.iter().any(|s| *s != samples[0]) {
                problems.push(format!("none {name} has variance"));
            }
        }
        let profiles: Vec<_> = (0..N).map(|_| level.sample_profile(&mut rng)).collect();
        let (lo, hi) = level.gain.bounds().unwrap();
        if profiles.iter().any(|p| p.gain < lo || p.gain > hi || !p.is_valid()) {
            problems.push(format!("{} profile gain out of bounds", level.name));
        }
        if level.name == "none" && profiles.iter().any(|p| *p != profiles[0]) {
            problems.push("none profiles vary".into());
        }
    }
    report.record(
        10,
        "randomization table fidelity",
        problems.is_empty(),
        if problems.is_empty() {
            format!("{N} samples per parameter and level")
        } else {
            problems.join("; ")
        },
    );
}

fn mean_reward(runs: &[RunMetrics]) -> f64 {
    runs.iter().map(|m| m.mean_reward).sum::<f64>() / runs.len() as f64
}

fn rewards(runs: &[RunMetrics]) -> Vec<f64> {
    runs.iter().map(|m| m.mean_reward).collect()
}

fn eval(controller: &Controller, pseudo_real: Option<PseudoRealProfile>) -> Vec<RunMetrics> {
    let opts = EvalOptions {
        runs: EVAL_RUNS,
        seed: EVAL_SEED,
        pseudo_real,
        keep_logs: false,
    };
    evaluate(&EnvConfig::default(), &Arc::new(TrackMap::default()), controller, &opts)
        .unwrap()
        .into_iter()
        .map(|o| o.metrics)
        .collect()
}

/// Trains at `level` for the default budget. When `snapshot_at` is given,
/// also returns the policy after that many episodes and the time taken.
fn train(level: RandomizationLevel, snapshot_at: Option<usize>) -> (PolicyParams, Option<(PolicyParams, Duration)>) {
    let start = Instant::now();
    let mut trainer =
        Trainer::new(EnvConfig::default(), Arc::new(TrackMap::default()), TrainConfig::default(), level).unwrap();
    let mut snapshot = None;
    if let Some(n) = snapshot_at {
        while trainer.episodes_done() < n {
            trainer.update(n - trainer.episodes_done()).unwrap();
        }
        snapshot = Some((trainer.policy().clone(), start.elapsed()));
    }
    trainer.train(|_| {}).unwrap();
    (trainer.into_policy(), snapshot)
}

fn learning_criteria(report: &mut Report) {
    let env = EnvConfig::default();
    let steps = env.max_steps as f64;
    let (med, early) = train(RandomizationLevel::medium(), Some(CONVERGENCE_EPISODES));
    let (med_early, early_time) = early.unwrap();
    let untrained = PolicyParams::new(env.obs_dim(), env.state_dim(), env.seed);
    let trained_return = mean_reward(&eval(&Controller::Mappo(Box::new(med_early)), None)) * steps;
    let untrained_return = mean_reward(&eval(&Controller::Mappo(Box::new(untrained)), None)) * steps;
    report.record(
        5,
        "desk-scale convergence",
        early_time < Duration::from_secs(2 * 3600)
            && trained_return >= 2.0 * untrained_return
            && trained_return > untrained_return,
        format!(
            "{CONVERGENCE_EPISODES} episodes in {:.0} s; greedy return per agent {trained_return:.2} vs untrained {untrained_return:.2}",
            early_time.as_secs_f64()
        ),
    );

    let (none, _) = train(RandomizationLevel::none(), None);
    let (high, _) = train(RandomizationLevel::high(), None);
    let med_c = Controller::Mappo(Box::new(med));
    let none_c = Controller::Mappo(Box::new(none));
    let high_c = Controller::Mappo(Box::new(high));
    let rule_c = Controller::RuleBased(RssParams::default());
    let pr = Some(PseudoRealProfile::default());
    let med_pr = eval(&med_c, pr.clone());
    let none_pr = eval(&none_c, pr.clone());
    let rule_pr = eval(&rule_c, pr.clone());
    let (d_none, se_none) = paired_difference(&rewards(&med_pr), &rewards(&none_pr));
    let (d_rule, se_rule) = paired_difference(&rewards(&med_pr), &rewards(&rule_pr));
    let ratio = mean_reward(&med_pr) / mean_reward(&rule_pr);
    report.record(
        6,
        "transfer-gap ordering",
        d_none > se_none && d_rule > se_rule,
        format!(
            "{} training episodes; pseudo-real mean reward med {:.4}, none {:.4}, rule-based {:.4}; med-none {d_none:.4} (se {se_none:.4}), \
             med-rule {d_rule:.4} (se {se_rule:.4}); med/rule ratio {ratio:.3}{}",
            TrainConfig::default().episodes,
            mean_reward(&med_pr),
            mean_reward(&none_pr),
            mean_reward(&rule_pr),
            if mean_reward(&rule_pr) < 0.0 { " (negative rewards, below 1 means med loses less)" } else { "" }
        ),
    );

    let mut gaps = Vec::new();
    let mut all_lower = true;
    for (name, c, pseudo) in [("none", &none_c, &none_pr), ("med", &med_c, &med_pr), ("high", &high_c, &eval(&high_c, pr.clone()))] {
        let clean = mean_reward(&eval(c, None));
        let real = mean_reward(pseudo);
        all_lower &= real < clean;
        gaps.push(format!("{name} {clean:.4} -> {real:.4}"));
    }
    report.record(7, "gap existence", all_lower, format!("clean -> pseudo-real: {}", gaps.join(", ")));
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_marl-drive"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism(report: &mut Report) {
    let config = "max_steps = 40\nsteps_per_episode = 40\nepisodes = 6\nepisodes_per_update = 3\nppo_epochs = 3\nseed = 5\n";
    let outputs = ["p.ckpt", "p.ckpt.log.csv", "p.csv", "p_pr.csv", "rb.csv", "plot.dat", "logs/run_001.csv"];
    let mut snapshots = Vec::new();
    let mut all_ok = true;
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("run.cfg"), config).unwrap();
        all_ok &= run_cli(d, &["train", "--config", "run.cfg", "--level", "high", "--out", "p.ckpt"]);
        all_ok &= run_cli(d, &["eval", "p.ckpt", "--config", "run.cfg", "--runs", "4", "--seed", "3", "--out", "p.csv"]);
        all_ok &= run_cli(
            d,
            &[
                "eval", "p.ckpt", "--config", "run.cfg", "--runs", "4", "--seed", "3", "--pseudo-real", "default",
                "--out", "p_pr.csv", "--episode-logs", "logs",
            ],
        );
        all_ok &= run_cli(
            d,
            &["baseline-eval", "--config", "run.cfg", "--runs", "4", "--seed", "3", "--pseudo-real", "default", "--out", "rb.csv"],
        );
        all_ok &= run_cli(d, &["compare", "p.csv", "p_pr.csv", "rb.csv", "--out", "plot.dat"]);
        let snap: Vec<Vec<u8>> = outputs.iter().map(|f| std::fs::read(d.join(f)).unwrap_or_default()).collect();
        all_ok &= snap.iter().all(|b| !b.is_empty());
        snapshots.push(snap);
    }
    let identical = snapshots[0] == snapshots[1];
    report.record(
        9,
        "determinism",
        all_ok && identical,
        format!("{} output files from train, eval, baseline-eval and compare, identical: {identical}", outputs.len()),
    );
}

#[test]
fn acceptance_criteria() {
    let mut report = Report { failures: Vec::new() };
    kinematics_round_trip(&mut report);
    gradient_oracle(&mut report);
    reward_and_collision_oracles(&mut report);
    learning_criteria(&mut report);
    rss_formula(&mut report);
    determinism(&mut report);
    table_fidelity(&mut report);
    assert!(report.failures.is_empty(), "failed criteria: {:?}", report.failures);
}
