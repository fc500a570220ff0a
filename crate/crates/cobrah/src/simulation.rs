//! The experiment engine: a restless environment loop under semi-bandit or
//! full feedback, a greedy full-information dynamic oracle evaluated on its
//! own state trajectory, regret and reward metrics across seeded
//! replications, and diagnostic calculators for the regret-bound formulas.
//!
//! Regret is computed on expected means (oracle-trajectory means minus
//! policy-trajectory means), so the regret curves carry no sampling noise.
//! The oracle is the exact per-round greedy optimizer given its own
//! propagated states; on rare paths a policy can transiently beat it, so
//! instantaneous regret is kept signed rather than clamped.

use rayon::prelude::*;

use crate::cohort::{generate_synthetic_cohort, SyntheticCohortSpec};
use crate::divergence::{bernoulli_kl, concentration_scale, ConcentrationConfig};
use crate::error::{Error, Result};
use crate::model::{
    mean_reward, rollout, sample_reward, step_dynamics, ArmSpec, StateVec, SuperArm,
};
use crate::policy::{
    build_policy, initialization_rounds, select_ff, select_top_c, FeedbackMode, KnownArmModel,
    PolicyKind, PolicyParams,
};
use crate::rng::{stream, StreamKind};

/// Where the ground-truth cohort comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CohortSource {
    Synthetic(SyntheticCohortSpec),
    /// Pre-built arms (e.g. loaded from a fitted-cohort file).
    Arms(Vec<ArmSpec>),
}

/// Per-round budget: an explicit count or a fraction of the cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapacitySpec {
    Count(usize),
    BudgetFraction(f64),
}

/// Full description of one experiment (one policy, R replications).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub horizon: usize,
    pub cohort: CohortSource,
    pub capacity: CapacitySpec,
    pub feedback: FeedbackMode,
    pub policy: PolicyKind,
    pub params: PolicyParams,
    pub replications: usize,
    pub base_seed: u64,
    /// Rounds excluded from enrollment averages.
    pub burn_in: usize,
    /// Rolling window for reward curves.
    pub reward_window: usize,
    /// Rolling window for enrollment curves.
    pub enrollment_window: usize,
}

impl ExperimentConfig {
    pub fn new(
        cohort: CohortSource,
        capacity: CapacitySpec,
        feedback: FeedbackMode,
        policy: PolicyKind,
        horizon: usize,
        replications: usize,
        base_seed: u64,
    ) -> Self {
        ExperimentConfig {
            horizon,
            cohort,
            capacity,
            feedback,
            policy,
            params: PolicyParams::default(),
            replications,
            base_seed,
            burn_in: 30,
            reward_window: 200,
            enrollment_window: 5,
        }
    }
}

/// A validated experiment with the cohort materialized and the capacity
/// resolved to a count.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub arms: Vec<ArmSpec>,
    pub capacity: usize,
    pub config: ExperimentConfig,
}

impl ResolvedExperiment {
    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }

    pub fn initialization_rounds(&self) -> usize {
        initialization_rounds(self.arms.len(), self.capacity)
    }

    fn known(&self) -> Vec<KnownArmModel> {
        self.arms
            .iter()
            .map(|a| KnownArmModel { dynamics: a.dynamics, reward: a.reward_model })
            .collect()
    }
}

/// Validates a configuration and materializes the cohort. All violations
/// surface here, before any round runs.
pub fn resolve(config: &ExperimentConfig) -> Result<ResolvedExperiment> {
    let arms = match &config.cohort {
        CohortSource::Synthetic(spec) => {
            if spec.arms == 0 {
                return Err(Error::Config("cohort must have at least one arm".into()));
            }
            generate_synthetic_cohort(spec)
        }
        CohortSource::Arms(arms) => arms.clone(),
    };
    if arms.is_empty() {
        return Err(Error::Config("cohort must have at least one arm".into()));
    }
    let m = arms.len();
    let capacity = match config.capacity {
        CapacitySpec::Count(c) => c,
        CapacitySpec::BudgetFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("budget fraction {f} outside (0, 1]")));
            }
            ((f * m as f64).round() as usize).max(1)
        }
    };
    if capacity == 0 || capacity > m {
        return Err(Error::CapacityExceedsArms { capacity, arms: m });
    }
    if config.replications == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let init = initialization_rounds(m, capacity);
    if config.horizon < init {
        return Err(Error::Config(format!(
            "horizon {} shorter than the {init}-round initialization phase",
            config.horizon
        )));
    }
    // Policy/feedback compatibility is validated by construction; probe once.
    build_policy(
        config.policy,
        config.feedback,
        capacity,
        config.horizon,
        &arms.iter().map(|a| KnownArmModel { dynamics: a.dynamics, reward: a.reward_model }).collect::<Vec<_>>(),
        &config.params,
        stream(config.base_seed, 0, 0, StreamKind::Policy),
    )?;
    Ok(ResolvedExperiment { arms, capacity, config: config.clone() })
}

/// Everything recorded about one simulated round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub chosen: SuperArm,
    /// True means along the policy's trajectory, after this round's action.
    pub true_means: Vec<f64>,
    /// Sampled rewards for the observed subset.
    pub sampled: Vec<Option<bool>>,
    pub oracle_arm: SuperArm,
    /// True means along the oracle's own trajectory.
    pub oracle_means: Vec<f64>,
    /// Signed expected-reward gap for this round.
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// Realized aggregate reward: sum over the chosen arms under semi-bandit
    /// feedback, the enrollment count over all arms under full feedback.
    pub aggregate_reward: f64,
}

/// One greedy full-information oracle step: ranks arms by their true
/// one-step-ahead means on the oracle's own trajectory, then advances that
/// trajectory under the chosen action.
pub fn oracle_step(
    arms: &[ArmSpec],
    states: &mut [StateVec],
    capacity: usize,
    feedback: FeedbackMode,
) -> Result<SuperArm> {
    let chosen = match feedback {
        FeedbackMode::SemiBandit => {
            let means: Vec<f64> = arms
                .iter()
                .zip(states.iter())
                .map(|(arm, &x)| {
                    mean_reward(
                        &arm.reward_model,
                        arm.theta,
                        step_dynamics(&arm.dynamics, x, true),
                    )
                })
                .collect();
            select_top_c(&means, capacity)?
        }
        FeedbackMode::FullFeedback => {
            let pairs: Vec<(f64, f64)> = arms
                .iter()
                .zip(states.iter())
                .map(|(arm, &x)| {
                    let g = |y: bool| {
                        mean_reward(
                            &arm.reward_model,
                            arm.theta,
                            step_dynamics(&arm.dynamics, x, y),
                        )
                    };
                    (g(true), g(false))
                })
                .collect();
            select_ff(&pairs, capacity)?
        }
    };
    for (i, (arm, x)) in arms.iter().zip(states.iter_mut()).enumerate() {
        *x = step_dynamics(&arm.dynamics, *x, chosen.contains(i));
    }
    Ok(chosen)
}

/// Runs one seeded episode. Deterministic given `(base_seed,
/// replication)`: each round the policy selects, every arm's true state
/// advances under the policy's action (selected or not), rewards are
/// sampled from the advanced states, feedback is delivered per mode, and
/// the oracle advances in parallel on its own trajectory.
pub fn run_episode(exp: &ResolvedExperiment, replication: usize) -> Result<Vec<RoundRecord>> {
    let cfg = &exp.config;
    let m = exp.arms.len();
    let mut policy = build_policy(
        cfg.policy,
        cfg.feedback,
        exp.capacity,
        cfg.horizon,
        &exp.known(),
        &cfg.params,
        stream(cfg.base_seed, replication as u64, 0, StreamKind::Policy),
    )?;
    let mut reward_rngs: Vec<_> = (0..m)
        .map(|i| stream(cfg.base_seed, replication as u64, i as u64, StreamKind::Reward))
        .collect();

    let mut states: Vec<StateVec> = exp.arms.iter().map(|a| a.x0).collect();
    let mut oracle_states = states.clone();
    let mut records = Vec::with_capacity(cfg.horizon);
    let mut cum_regret = 0.0;

    for t in 1..=cfg.horizon {
        let chosen = policy.select(t)?;

        // Restless advance of every true state under the policy's action.
        for (i, (arm, x)) in exp.arms.iter().zip(states.iter_mut()).enumerate() {
            *x = step_dynamics(&arm.dynamics, *x, chosen.contains(i));
        }
        let true_means: Vec<f64> = exp
            .arms
            .iter()
            .zip(states.iter())
            .map(|(arm, &x)| mean_reward(&arm.reward_model, arm.theta, x))
            .collect();

        let oracle_arm = oracle_step(&exp.arms, &mut oracle_states, exp.capacity, cfg.feedback)?;
        let oracle_means: Vec<f64> = exp
            .arms
            .iter()
            .zip(oracle_states.iter())
            .map(|(arm, &x)| mean_reward(&arm.reward_model, arm.theta, x))
            .collect();

        let mut sampled: Vec<Option<bool>> = vec![None; m];
        match cfg.feedback {
            FeedbackMode::SemiBandit => {
                for &i in chosen.members() {
                    sampled[i] = Some(sample_reward(&mut reward_rngs[i], true_means[i])?);
                }
            }
            FeedbackMode::FullFeedback => {
                for i in 0..m {
                    sampled[i] = Some(sample_reward(&mut reward_rngs[i], true_means[i])?);
                }
            }
        }
        policy.observe(t, &sampled);

        let (oracle_agg, policy_agg, aggregate_reward) = match cfg.feedback {
            FeedbackMode::SemiBandit => (
                oracle_arm.members().iter().map(|&i| oracle_means[i]).sum::<f64>(),
                chosen.members().iter().map(|&i| true_means[i]).sum::<f64>(),
                chosen
                    .members()
                    .iter()
                    .filter(|&&i| sampled[i] == Some(true))
                    .count() as f64,
            ),
            FeedbackMode::FullFeedback => (
                oracle_means.iter().sum::<f64>(),
                true_means.iter().sum::<f64>(),
                sampled.iter().filter(|s| **s == Some(true)).count() as f64,
            ),
        };
        let inst_regret = oracle_agg - policy_agg;
        cum_regret += inst_regret;
        records.push(RoundRecord {
            round: t,
            chosen,
            true_means,
            sampled,
            oracle_arm,
            oracle_means,
            inst_regret,
            cum_regret,
            aggregate_reward,
        });
    }
    Ok(records)
}

/// Gaps between consecutive pull rounds.
pub fn visit_intervals(pull_rounds: &[usize]) -> Vec<usize> {
    pull_rounds.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Rolling average with a trailing window (shorter at the start).
pub fn rolling_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= series[i - w];
        }
        let n = (i + 1).min(w);
        out.push(sum / n as f64);
    }
    out
}

/// Per-replication series derived from one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub records: Vec<RoundRecord>,
    /// Pulls per arm, excluding the initialization phase.
    pub visit_counts: Vec<usize>,
    /// Gaps between consecutive pulls per arm, excluding initialization.
    pub visit_intervals: Vec<Vec<usize>>,
    /// Cumulative realized reward per round.
    pub cum_reward: Vec<f64>,
    /// Cumulative reward divided by the round index.
    pub longrun_avg: Vec<f64>,
    /// Rolling average of the per-round aggregate reward.
    pub rolling_reward: Vec<f64>,
    /// Enrollment count per round (full feedback only).
    pub enrollment: Option<Vec<f64>>,
    /// Rolling enrollment average (full feedback only).
    pub rolling_enrollment: Option<Vec<f64>>,
}

fn episode_metrics(exp: &ResolvedExperiment, records: Vec<RoundRecord>) -> EpisodeMetrics {
    let m = exp.arms.len();
    let init = exp.initialization_rounds();
    let mut pull_rounds: Vec<Vec<usize>> = vec![Vec::new(); m];
    for rec in &records {
        if rec.round <= init {
            continue;
        }
        for &i in rec.chosen.members() {
            pull_rounds[i].push(rec.round);
        }
    }
    let visit_counts: Vec<usize> = pull_rounds.iter().map(Vec::len).collect();
    let intervals: Vec<Vec<usize>> = pull_rounds.iter().map(|r| visit_intervals(r)).collect();

    let rewards: Vec<f64> = records.iter().map(|r| r.aggregate_reward).collect();
    let mut cum_reward = Vec::with_capacity(rewards.len());
    let mut acc = 0.0;
    for &r in &rewards {
        acc += r;
        cum_reward.push(acc);
    }
    let longrun_avg: Vec<f64> =
        cum_reward.iter().enumerate().map(|(i, &c)| c / (i + 1) as f64).collect();
    let rolling_reward = rolling_average(&rewards, exp.config.reward_window);

    let (enrollment, rolling_enrollment) = match exp.config.feedback {
        FeedbackMode::FullFeedback => {
            let counts = rewards.clone();
            let rolling = rolling_average(&counts, exp.config.enrollment_window);
            (Some(counts), Some(rolling))
        }
        FeedbackMode::SemiBandit => (None, None),
    };

    EpisodeMetrics {
        records,
        visit_counts,
        visit_intervals: intervals,
        cum_reward,
        longrun_avg,
        rolling_reward,
        enrollment,
        rolling_enrollment,
    }
}

/// All replications of one experiment plus cross-replication aggregates.
#[derive(Debug, Clone)]
pub struct MetricsBundle {
    pub policy: PolicyKind,
    pub experiment: ResolvedExperiment,
    pub episodes: Vec<EpisodeMetrics>,
    /// Mean cumulative regret per round across replications.
    pub mean_cum_regret: Vec<f64>,
    /// Standard deviation (n-1) of cumulative regret per round.
    pub sd_cum_regret: Vec<f64>,
}

impl MetricsBundle {
    pub fn final_mean_regret(&self) -> f64 {
        *self.mean_cum_regret.last().unwrap_or(&0.0)
    }

    /// Mean long-run average reward at round `t` (1-based) across
    /// replications.
    pub fn mean_longrun_avg_at(&self, t: usize) -> f64 {
        let vals: Vec<f64> = self.episodes.iter().map(|e| e.longrun_avg[t - 1]).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Mean enrollment count per round, excluding the first `burn_in`
    /// rounds, across replications (full feedback only).
    pub fn mean_enrollment_after_burn_in(&self, burn_in: usize) -> Option<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for e in &self.episodes {
            let series = e.enrollment.as_ref()?;
            for (i, &v) in series.iter().enumerate() {
                if i + 1 > burn_in {
                    total += v;
                    count += 1;
                }
            }
        }
        (count > 0).then(|| total / count as f64)
    }

    /// Average per-round regret over a 1-based inclusive round window,
    /// averaged across replications.
    pub fn mean_per_round_regret(&self, from: usize, to: usize) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for e in &self.episodes {
            for rec in &e.records {
                if rec.round >= from && rec.round <= to {
                    total += rec.inst_regret;
                    count += 1;
                }
            }
        }
        total / count as f64
    }
}

/// Runs all replications (in parallel) and aggregates the curves.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsBundle> {
    let exp = resolve(config)?;
    let episodes: Vec<Result<EpisodeMetrics>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            run_episode(&exp, rep).map(|records| episode_metrics(&exp, records)).map_err(|e| {
                Error::Config(format!("replication {rep}: {e}"))
            })
        })
        .collect();
    let mut eps = Vec::with_capacity(episodes.len());
    for e in episodes {
        eps.push(e?);
    }

    let n = config.horizon;
    let r = eps.len();
    let mut mean_cum_regret = vec![0.0; n];
    let mut sd_cum_regret = vec![0.0; n];
    for t in 0..n {
        let vals: Vec<f64> = eps.iter().map(|e| e.records[t].cum_regret).collect();
        let mean = vals.iter().sum::<f64>() / r as f64;
        mean_cum_regret[t] = mean;
        sd_cum_regret[t] = if r > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
        } else {
            0.0
        };
    }
    Ok(MetricsBundle {
        policy: config.policy,
        experiment: exp,
        episodes: eps,
        mean_cum_regret,
        sd_cum_regret,
    })
}

// ---------------------------------------------------------------------------
// Regret-bound diagnostics
// ---------------------------------------------------------------------------

/// Inputs to the logarithmic regret-bound formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretBoundInputs {
    pub arms: usize,
    pub capacity: usize,
    /// Number of super-arms of size at most the capacity.
    pub super_arm_count: f64,
    pub l_g: f64,
    pub diam_x_theta: f64,
    /// Minimal per-pull trajectory divergence between separated arms
    /// (the full-feedback variant substitutes its own separation constant).
    pub delta_min: f64,
    /// Minimal aggregate reward gap (parameterizes the separation
    /// condition; recorded alongside the bound).
    pub gap_min: f64,
}

/// Expected-regret bound after `n` rounds:
/// `C L_g diam(X x Theta) |S| (4 B(ceil(m/C)^-4)^2 log n / delta_min^2
/// + m^2 pi^2 / 3)`.
pub fn theorem2_bound(
    inp: &RegretBoundInputs,
    cfg: &ConcentrationConfig,
    n: f64,
) -> Result<f64> {
    if inp.delta_min <= 0.0 {
        return Err(Error::InvalidBound(format!("delta_min = {} must be positive", inp.delta_min)));
    }
    if n < 1.0 {
        return Err(Error::InvalidBound(format!("horizon {n} must be >= 1")));
    }
    let alpha = (inp.arms as f64 / inp.capacity as f64).ceil().powi(-4);
    let b = concentration_scale(cfg, alpha);
    let m = inp.arms as f64;
    let log_term = 4.0 * b * b * n.ln() / (inp.delta_min * inp.delta_min);
    let tail_term = m * m * std::f64::consts::PI.powi(2) / 3.0;
    Ok(inp.capacity as f64 * inp.l_g * inp.diam_x_theta * inp.super_arm_count * (log_term + tail_term))
}

/// Exhaustively evaluates the separation constants on a small instance
/// under a fixed per-arm action sequence: the minimal positive aggregate
/// gap over rounds and super-arms, and the minimal per-pull trajectory
/// divergence between mean-separated arm pairs.
pub fn brute_force_delta_min(
    arms: &[ArmSpec],
    action_seqs: &[Vec<bool>],
    capacity: usize,
    horizon: usize,
) -> Result<(f64, f64)> {
    let m = arms.len();
    if m > 4 || horizon > 20 {
        return Err(Error::TooLarge(format!("{m} arms x {horizon} rounds")));
    }
    if action_seqs.len() != m || action_seqs.iter().any(|s| s.len() < horizon) {
        return Err(Error::Config("need one action sequence of horizon length per arm".into()));
    }
    if capacity == 0 || capacity > m {
        return Err(Error::CapacityExceedsArms { capacity, arms: m });
    }

    // Means per arm per round under its own action sequence.
    let mut means = vec![vec![0.0; horizon]; m];
    for i in 0..m {
        let states = rollout(&arms[i], &action_seqs[i][..horizon])?;
        for t in 0..horizon {
            means[i][t] = mean_reward(&arms[i].reward_model, arms[i].theta, states[t]);
        }
    }

    // Minimal positive gap between the optimal aggregate and any super-arm.
    let mut gap_min = f64::INFINITY;
    for t in 0..horizon {
        let mut aggregates = Vec::new();
        for mask in 0..(1usize << m) {
            if (mask.count_ones() as usize) > capacity {
                continue;
            }
            aggregates.push((0..m).filter(|i| mask & (1 << i) != 0).map(|i| means[i][t]).sum::<f64>());
        }
        let opt = aggregates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for agg in aggregates {
            let gap = opt - agg;
            if gap > 1e-12 {
                gap_min = gap_min.min(gap);
            }
        }
    }
    if !gap_min.is_finite() {
        return Err(Error::GapDegenerate);
    }

    // Cross means: arm j's parameters propagated through arm i's dynamics
    // and action sequence.
    let mut cross = vec![vec![vec![0.0; horizon]; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut x = arms[j].x0;
            for t in 0..horizon {
                x = step_dynamics(&arms[i].dynamics, x, action_seqs[i][t]);
                cross[i][j][t] = mean_reward(&arms[i].reward_model, arms[j].theta, x);
            }
        }
    }

    let mut delta_min = f64::INFINITY;
    let threshold = gap_min / (2.0 * m as f64);
    for t in 1..=horizon {
        for i in 0..m {
            let pulls_before: usize =
                action_seqs[i][..t - 1].iter().filter(|&&y| y).count();
            if pulls_before == 0 {
                continue;
            }
            for j in 0..m {
                if i == j || (means[i][t - 1] - means[j][t - 1]).abs() < threshold {
                    continue;
                }
                let mut div = 0.0;
                for s in 0..t {
                    if action_seqs[i][s] {
                        div += bernoulli_kl(means[i][s], cross[i][j][s])?;
                    }
                }
                delta_min = delta_min.min(div / pulls_before as f64);
            }
        }
    }
    if !delta_min.is_finite() {
        return Err(Error::GapDegenerate);
    }
    Ok((gap_min, delta_min))
}
