//! Allocation policies: the trajectory-KL confidence-bound policies (in
//! theoretical and tuned flavors, for semi-bandit and full feedback), plus
//! the random, combinatorial UCB, and sliding-window UCB baselines, all
//! behind one policy contract.
//!
//! The protocol per round `t` is `select(t)` followed by `observe(t, ..)`:
//! the environment applies the returned super-arm, advances every arm's
//! state, samples rewards, and feeds back the observed subset (selected
//! arms under semi-bandit feedback, everyone under full feedback).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::divergence::{theoretical_radius, ConcentrationConfig, TunedRadiusConfig};
use crate::error::{Error, Result};
use crate::estimation::{
    fit_mle, ucb_argmax_lookahead, MleResult, ObservationLog, RadiusRule, SolverConfig,
};
use crate::model::{DynamicsSpec, RewardModelSpec, StateVec, SuperArm};

/// What the environment reveals each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    /// Rewards observed only for selected arms.
    SemiBandit,
    /// Rewards observed for every arm every round.
    FullFeedback,
}

/// The part of an arm the learner is allowed to know: its dynamics and
/// reward link, but not `theta` or the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownArmModel {
    pub dynamics: DynamicsSpec,
    pub reward: RewardModelSpec,
}

/// Per-round record of a policy's behavior.
#[derive(Debug, Clone, Default)]
pub struct PolicyTrace {
    /// Chosen super-arm per round.
    pub selections: Vec<SuperArm>,
    /// Cumulative pull counts per arm.
    pub pull_counts: Vec<usize>,
    /// Per-round ranking scores when the policy computes them (confidence
    /// bounds for top-C selection, gains for full-feedback selection).
    pub scores: Vec<Option<Vec<f64>>>,
}

impl PolicyTrace {
    fn new(arms: usize) -> Self {
        PolicyTrace { selections: Vec::new(), pull_counts: vec![0; arms], scores: Vec::new() }
    }

    fn push(&mut self, chosen: SuperArm, scores: Option<Vec<f64>>) {
        for &i in chosen.members() {
            self.pull_counts[i] += 1;
        }
        self.selections.push(chosen);
        self.scores.push(scores);
    }

    pub fn rounds(&self) -> usize {
        self.selections.len()
    }
}

/// Behavioral contract shared by all policies.
pub trait BanditPolicy: Send {
    /// Chooses the super-arm for round `t` (1-based, called in order).
    /// Never exceeds the capacity.
    fn select(&mut self, t: usize) -> Result<SuperArm>;

    /// Delivers the round's observed rewards (`None` = unobserved).
    fn observe(&mut self, t: usize, feedback: &[Option<bool>]);

    fn trace(&self) -> &PolicyTrace;
}

/// Number of rounds needed to cover every arm once in blocks of size `C`.
pub fn initialization_rounds(arms: usize, capacity: usize) -> usize {
    arms.div_ceil(capacity)
}

/// The initialization super-arm for `round`, if the round falls in the
/// coverage phase: consecutive index blocks of size `capacity`.
pub fn initialization_block(round: usize, arms: usize, capacity: usize) -> Option<SuperArm> {
    if round == 0 || round > initialization_rounds(arms, capacity) {
        return None;
    }
    let lo = (round - 1) * capacity;
    let hi = (lo + capacity).min(arms);
    Some(SuperArm::new((lo..hi).collect(), arms, capacity).expect("block within bounds"))
}

/// The `capacity` indices with the largest values; ties broken by lowest
/// index. Errors when the capacity exceeds the number of arms.
pub fn select_top_c(values: &[f64], capacity: usize) -> Result<SuperArm> {
    let m = values.len();
    if capacity > m {
        return Err(Error::CapacityExceedsArms { capacity, arms: m });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    SuperArm::new(order.into_iter().take(capacity).collect(), m, capacity)
}

/// Maximizes the decomposable aggregate `sum_i g_i(y_i)` subject to at most
/// `capacity` selections: ranks arms by the gain `g_i(visited) -
/// g_i(rested)` and keeps up to `capacity` arms with strictly positive
/// gains. May return fewer than `capacity` arms (or none) — selecting a
/// negative-gain arm can only lower a monotone aggregate.
pub fn select_ff(values_by_action: &[(f64, f64)], capacity: usize) -> Result<SuperArm> {
    let m = values_by_action.len();
    if capacity > m {
        return Err(Error::CapacityExceedsArms { capacity, arms: m });
    }
    let mut gains: Vec<(f64, usize)> = values_by_action
        .iter()
        .enumerate()
        .map(|(i, &(g1, g0))| {
            let gain = g1 - g0;
            (if gain.is_nan() { f64::NEG_INFINITY } else { gain }, i)
        })
        .collect();
    gains.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let chosen: Vec<usize> =
        gains.into_iter().take(capacity).filter(|&(g, _)| g > 0.0).map(|(_, i)| i).collect();
    SuperArm::new(chosen, m, capacity)
}

/// Sliding-window size for the distribution-independent regime:
/// `min(ceil((m / C)^(1/3)), horizon)`, floored at 1.
pub fn sliding_window_size(arms: usize, capacity: usize, horizon: usize) -> usize {
    let w = (arms as f64 / capacity as f64).powf(1.0 / 3.0).ceil() as usize;
    w.clamp(1, horizon.max(1))
}

/// Sliding-window configuration: the window, the per-round trigger cap
/// (equal to the capacity), and the total-variation proxy behind the
/// reduced window formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwConfig {
    pub window: usize,
    pub k_trigger: usize,
    pub variation_proxy: f64,
}

impl SwConfig {
    /// Window from the reduced formula, or an explicit override.
    pub fn auto(arms: usize, capacity: usize, horizon: usize, override_window: Option<usize>) -> Result<Self> {
        let window = match override_window {
            Some(0) | None => sliding_window_size(arms, capacity, horizon),
            Some(w) => w,
        };
        if window == 0 {
            return Err(Error::Config("sliding window must be >= 1".into()));
        }
        Ok(SwConfig { window, k_trigger: capacity, variation_proxy: horizon as f64 })
    }
}

// ---------------------------------------------------------------------------
// Confidence-bound policies on the trajectory-KL ball
// ---------------------------------------------------------------------------

/// Which confidence radius the policy runs with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CobrahVariant {
    /// Finite-time radius `B(t^-4) sqrt(4 log t / T_i)`.
    Theoretical(ConcentrationConfig),
    /// Variance-tuned radius `sqrt(min(eta/4, V) log t / T_i)`.
    Tuned(TunedRadiusConfig),
}

/// The trajectory-KL confidence-bound policy. Maintains a full action and
/// observation log per arm, refits the constrained MLE every learning
/// round, and ranks arms by the optimistic one-step-ahead mean.
pub struct CobrahPolicy {
    feedback: FeedbackMode,
    variant: CobrahVariant,
    arms: usize,
    capacity: usize,
    known: Vec<KnownArmModel>,
    solver: SolverConfig,
    logs: Vec<ObservationLog>,
    warm_mle: Vec<Option<(f64, StateVec)>>,
    warm_ucb: Vec<Option<(f64, StateVec)>>,
    trace: PolicyTrace,
}

impl CobrahPolicy {
    pub fn new(
        feedback: FeedbackMode,
        variant: CobrahVariant,
        capacity: usize,
        known: Vec<KnownArmModel>,
        solver: SolverConfig,
    ) -> Result<Self> {
        let arms = known.len();
        if capacity == 0 || capacity > arms {
            return Err(Error::CapacityExceedsArms { capacity, arms });
        }
        Ok(CobrahPolicy {
            feedback,
            variant,
            arms,
            capacity,
            known,
            solver,
            logs: (0..arms).map(ObservationLog::new).collect(),
            warm_mle: vec![None; arms],
            warm_ucb: vec![None; arms],
            trace: PolicyTrace::new(arms),
        })
    }

    fn fit_arm(&self, i: usize) -> Result<MleResult> {
        let mut warm: Vec<(f64, StateVec)> = Vec::with_capacity(2);
        if let Some(w) = self.warm_mle[i] {
            warm.push(w);
        }
        if let Some(w) = self.warm_ucb[i] {
            warm.push(w);
        }
        fit_mle(&self.logs[i], &self.known[i].dynamics, &self.known[i].reward, &self.solver, &warm)
    }

    fn radius_rule<'a>(&'a self, t: usize, pulls: usize) -> RadiusRule<'a> {
        match &self.variant {
            CobrahVariant::Theoretical(cfg) => RadiusRule::Fixed(
                theoretical_radius(cfg, t as f64, pulls.max(1)).expect("t >= 2 after initialization"),
            ),
            CobrahVariant::Tuned(cfg) => {
                RadiusRule::Tuned { cfg, round: t as f64, pulls: pulls.max(1) }
            }
        }
    }

    /// Optimistic means for arm `i` at round `t`: the value when visited,
    /// and (under full feedback) also when rested.
    fn arm_scores(&self, i: usize, t: usize) -> Result<(f64, f64, (f64, StateVec), (f64, StateVec))> {
        let fit = self.fit_arm(i)?;
        let rule = self.radius_rule(t, self.logs[i].pulls());
        let warm: Vec<(f64, StateVec)> = self.warm_ucb[i].into_iter().collect();
        let (ucb_visit, argmax) = ucb_argmax_lookahead(
            &self.logs[i],
            true,
            &fit,
            rule,
            &self.known[i].dynamics,
            &self.known[i].reward,
            &self.solver,
            &warm,
        )?;
        let ucb_rest = match self.feedback {
            FeedbackMode::SemiBandit => 0.0,
            FeedbackMode::FullFeedback => {
                let rule = self.radius_rule(t, self.logs[i].pulls());
                ucb_argmax_lookahead(
                    &self.logs[i],
                    false,
                    &fit,
                    rule,
                    &self.known[i].dynamics,
                    &self.known[i].reward,
                    &self.solver,
                    &warm,
                )?
                .0
            }
        };
        Ok((ucb_visit, ucb_rest, fit.params(), argmax))
    }
}

impl BanditPolicy for CobrahPolicy {
    fn select(&mut self, t: usize) -> Result<SuperArm> {
        debug_assert_eq!(t, self.trace.rounds() + 1, "rounds must be played in order");
        let chosen = if let Some(block) = initialization_block(t, self.arms, self.capacity) {
            self.trace.push(block.clone(), None);
            block
        } else {
            let per_arm: Vec<Result<_>> =
                (0..self.arms).into_par_iter().map(|i| self.arm_scores(i, t)).collect();
            let mut scores = Vec::with_capacity(self.arms);
            let mut pairs = Vec::with_capacity(self.arms);
            for (i, res) in per_arm.into_iter().enumerate() {
                let (v1, v0, mle, argmax) = res?;
                self.warm_mle[i] = Some(mle);
                self.warm_ucb[i] = Some(argmax);
                pairs.push((v1, v0));
                scores.push(match self.feedback {
                    FeedbackMode::SemiBandit => v1,
                    FeedbackMode::FullFeedback => v1 - v0,
                });
            }
            let chosen = match self.feedback {
                FeedbackMode::SemiBandit => select_top_c(&scores, self.capacity)?,
                FeedbackMode::FullFeedback => select_ff(&pairs, self.capacity)?,
            };
            self.trace.push(chosen.clone(), Some(scores));
            chosen
        };
        for i in 0..self.arms {
            self.logs[i].push_action(chosen.contains(i));
        }
        Ok(chosen)
    }

    fn observe(&mut self, t: usize, feedback: &[Option<bool>]) {
        debug_assert_eq!(feedback.len(), self.arms);
        for (i, fb) in feedback.iter().enumerate() {
            if let Some(r) = fb {
                self.logs[i].record_reward(t, *r).expect("observation for the current round");
            }
        }
    }

    fn trace(&self) -> &PolicyTrace {
        &self.trace
    }
}

// ---------------------------------------------------------------------------
// Index baselines: combinatorial UCB, with and without a sliding window
// ---------------------------------------------------------------------------

/// Reward statistics for one arm/action stream, optionally windowed.
#[derive(Debug, Clone, Default)]
struct RewardStream {
    rewards: Vec<bool>,
}

impl RewardStream {
    fn push(&mut self, r: bool) {
        self.rewards.push(r);
    }

    /// Mean and count over the last `window` observations (all of them when
    /// `window` is `None`).
    fn windowed(&self, window: Option<usize>) -> (f64, usize) {
        let n = self.rewards.len();
        let lo = match window {
            Some(w) => n.saturating_sub(w),
            None => 0,
        };
        let slice = &self.rewards[lo..];
        if slice.is_empty() {
            return (0.0, 0);
        }
        let ones = slice.iter().filter(|&&r| r).count();
        (ones as f64 / slice.len() as f64, slice.len())
    }
}

/// Combinatorial UCB baseline (`window = None`) and its sliding-window
/// variant (`window = Some(w)`). Under semi-bandit feedback the index is the
/// classic `mean + sqrt(3 ln t / (2 n))` over observed pulls with top-C
/// selection. Under full feedback each arm keeps separate visited/rested
/// reward streams and selection maximizes the index gain.
pub struct UcbBaselinePolicy {
    feedback: FeedbackMode,
    arms: usize,
    capacity: usize,
    window: Option<usize>,
    visited: Vec<RewardStream>,
    rested: Vec<RewardStream>,
    trace: PolicyTrace,
}

impl UcbBaselinePolicy {
    pub fn new(
        feedback: FeedbackMode,
        arms: usize,
        capacity: usize,
        window: Option<usize>,
    ) -> Result<Self> {
        if capacity == 0 || capacity > arms {
            return Err(Error::CapacityExceedsArms { capacity, arms });
        }
        if window == Some(0) {
            return Err(Error::Config("sliding window must be >= 1".into()));
        }
        Ok(UcbBaselinePolicy {
            feedback,
            arms,
            capacity,
            window,
            visited: vec![RewardStream::default(); arms],
            rested: vec![RewardStream::default(); arms],
            trace: PolicyTrace::new(arms),
        })
    }

    fn index(&self, stream: &RewardStream, t: usize) -> f64 {
        let (mean, n) = stream.windowed(self.window);
        if n == 0 {
            return f64::INFINITY;
        }
        mean + (3.0 * (t as f64).ln() / (2.0 * n as f64)).sqrt()
    }
}

impl BanditPolicy for UcbBaselinePolicy {
    fn select(&mut self, t: usize) -> Result<SuperArm> {
        debug_assert_eq!(t, self.trace.rounds() + 1);
        if let Some(block) = initialization_block(t, self.arms, self.capacity) {
            self.trace.push(block.clone(), None);
            return Ok(block);
        }
        let chosen = match self.feedback {
            FeedbackMode::SemiBandit => {
                let indices: Vec<f64> =
                    (0..self.arms).map(|i| self.index(&self.visited[i], t)).collect();
                let chosen = select_top_c(&indices, self.capacity)?;
                self.trace.push(chosen.clone(), Some(indices));
                chosen
            }
            FeedbackMode::FullFeedback => {
                let pairs: Vec<(f64, f64)> = (0..self.arms)
                    .map(|i| (self.index(&self.visited[i], t), self.index(&self.rested[i], t)))
                    .collect();
                let gains: Vec<f64> = pairs
                    .iter()
                    .map(|&(a, b)| if a.is_infinite() && b.is_infinite() { 0.0 } else { a - b })
                    .collect();
                let sanitized: Vec<(f64, f64)> =
                    gains.iter().map(|&g| (g.max(0.0), 0.0)).collect();
                let chosen = select_ff(&sanitized, self.capacity)?;
                self.trace.push(chosen.clone(), Some(gains));
                chosen
            }
        };
        Ok(chosen)
    }

    fn observe(&mut self, t: usize, feedback: &[Option<bool>]) {
        debug_assert_eq!(feedback.len(), self.arms);
        let chosen = self.trace.selections.last().cloned().unwrap_or_else(SuperArm::empty);
        debug_assert_eq!(t, self.trace.rounds());
        for (i, fb) in feedback.iter().enumerate() {
            if let Some(r) = fb {
                if chosen.contains(i) {
                    self.visited[i].push(*r);
                } else {
                    self.rested[i].push(*r);
                }
            }
        }
    }

    fn trace(&self) -> &PolicyTrace {
        &self.trace
    }
}

// ---------------------------------------------------------------------------
// Random baseline
// ---------------------------------------------------------------------------

/// Chooses a uniform subset of `capacity` arms each round.
pub struct RandomPolicy {
    arms: usize,
    capacity: usize,
    rng: ChaCha8Rng,
    trace: PolicyTrace,
}

impl RandomPolicy {
    pub fn new(arms: usize, capacity: usize, rng: ChaCha8Rng) -> Result<Self> {
        if capacity == 0 || capacity > arms {
            return Err(Error::CapacityExceedsArms { capacity, arms });
        }
        Ok(RandomPolicy { arms, capacity, rng, trace: PolicyTrace::new(arms) })
    }
}

impl BanditPolicy for RandomPolicy {
    fn select(&mut self, t: usize) -> Result<SuperArm> {
        debug_assert_eq!(t, self.trace.rounds() + 1);
        // Partial Fisher-Yates: uniform over size-C subsets.
        let mut pool: Vec<usize> = (0..self.arms).collect();
        for i in 0..self.capacity {
            let j = self.rng.gen_range(i..self.arms);
            pool.swap(i, j);
        }
        let chosen = SuperArm::new(pool[..self.capacity].to_vec(), self.arms, self.capacity)?;
        self.trace.push(chosen.clone(), None);
        Ok(chosen)
    }

    fn observe(&mut self, _t: usize, _feedback: &[Option<bool>]) {}

    fn trace(&self) -> &PolicyTrace {
        &self.trace
    }
}

// ---------------------------------------------------------------------------
// Policy construction
// ---------------------------------------------------------------------------

/// Policy selector, as exposed through experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Random,
    Cucb,
    SwUcb,
    CobrahSb,
    CobrahSbTuned,
    CobrahFf,
    CobrahFfTuned,
}

impl PolicyKind {
    pub fn id(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Cucb => "cucb",
            PolicyKind::SwUcb => "sw-ucb",
            PolicyKind::CobrahSb => "cobrah-sb",
            PolicyKind::CobrahSbTuned => "cobrah-sb-tuned",
            PolicyKind::CobrahFf => "cobrah-ff",
            PolicyKind::CobrahFfTuned => "cobrah-ff-tuned",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "random" => PolicyKind::Random,
            "cucb" => PolicyKind::Cucb,
            "sw-ucb" => PolicyKind::SwUcb,
            "cobrah-sb" => PolicyKind::CobrahSb,
            "cobrah-sb-tuned" => PolicyKind::CobrahSbTuned,
            "cobrah-ff" => PolicyKind::CobrahFf,
            "cobrah-ff-tuned" => PolicyKind::CobrahFfTuned,
            other => return Err(Error::Config(format!("unknown policy id '{other}'"))),
        })
    }
}

/// Hyperparameters shared across policy constructions.
#[derive(Debug, Clone, Copy)]
pub struct PolicyParams {
    pub eta: f64,
    pub window: Option<usize>,
    pub solver: SolverConfig,
    pub concentration: ConcentrationConfig,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            eta: 1.0,
            window: None,
            solver: SolverConfig::default(),
            concentration: ConcentrationConfig::default(),
        }
    }
}

/// Builds a policy, validating feedback-mode compatibility.
pub fn build_policy(
    kind: PolicyKind,
    feedback: FeedbackMode,
    capacity: usize,
    horizon: usize,
    known: &[KnownArmModel],
    params: &PolicyParams,
    rng: ChaCha8Rng,
) -> Result<Box<dyn BanditPolicy>> {
    let arms = known.len();
    let requires = |mode: FeedbackMode, label: &str| -> Result<()> {
        if feedback != mode {
            return Err(Error::Config(format!("policy '{label}' requires {} feedback", match mode {
                FeedbackMode::SemiBandit => "semi-bandit",
                FeedbackMode::FullFeedback => "full",
            })));
        }
        Ok(())
    };
    let tuned = TunedRadiusConfig { eta: params.eta, ..TunedRadiusConfig::default() };
    Ok(match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(arms, capacity, rng)?),
        PolicyKind::Cucb => Box::new(UcbBaselinePolicy::new(feedback, arms, capacity, None)?),
        PolicyKind::SwUcb => {
            let cfg = SwConfig::auto(arms, capacity, horizon, params.window)?;
            Box::new(UcbBaselinePolicy::new(feedback, arms, capacity, Some(cfg.window))?)
        }
        PolicyKind::CobrahSb => {
            requires(FeedbackMode::SemiBandit, "cobrah-sb")?;
            Box::new(CobrahPolicy::new(
                feedback,
                CobrahVariant::Theoretical(params.concentration),
                capacity,
                known.to_vec(),
                params.solver,
            )?)
        }
        PolicyKind::CobrahSbTuned => {
            requires(FeedbackMode::SemiBandit, "cobrah-sb-tuned")?;
            Box::new(CobrahPolicy::new(
                feedback,
                CobrahVariant::Tuned(tuned),
                capacity,
                known.to_vec(),
                params.solver,
            )?)
        }
        PolicyKind::CobrahFf => {
            requires(FeedbackMode::FullFeedback, "cobrah-ff")?;
            Box::new(CobrahPolicy::new(
                feedback,
                CobrahVariant::Theoretical(params.concentration),
                capacity,
                known.to_vec(),
                params.solver,
            )?)
        }
        PolicyKind::CobrahFfTuned => {
            requires(FeedbackMode::FullFeedback, "cobrah-ff-tuned")?;
            Box::new(CobrahPolicy::new(
                feedback,
                CobrahVariant::Tuned(tuned),
                capacity,
                known.to_vec(),
                params.solver,
            )?)
        }
    })
}
