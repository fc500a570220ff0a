//! Constrained maximum-likelihood estimation of `(theta, x0)` from an arm's
//! observation history, and the optimistic mean obtained by maximizing the
//! reward over a trajectory-KL confidence ball around the MLE.
//!
//! Both problems are three-dimensional box-constrained nonconvex programs.
//! They are solved with multi-start projected gradient descent: a
//! deterministic lattice of starts is screened by objective value, the best
//! few are refined with central finite-difference gradients, and warm starts
//! from the previous round are injected. The KL-ball constraint is handled
//! with a quadratic penalty whose multiplier doubles across outer rounds;
//! final answers are certified against the exact constraint.

use crate::divergence::{
    bernoulli_kl_unchecked, tuned_radius, TunedRadiusConfig, PROB_CLIP,
};
use crate::error::{Error, Result};
use crate::model::{logistic, DynamicsSpec, RewardModelSpec, StateVec};

/// Per-arm history: one action per elapsed round plus the observed rewards.
///
/// Rounds are 1-based. Under semi-bandit feedback an observation exists
/// exactly for the rounds where the arm was pulled; under full feedback
/// every round carries an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLog {
    arm_id: usize,
    actions: Vec<bool>,
    observations: Vec<(usize, bool)>,
    pulls: usize,
}

impl ObservationLog {
    pub fn new(arm_id: usize) -> Self {
        ObservationLog { arm_id, actions: Vec::new(), observations: Vec::new(), pulls: 0 }
    }

    /// Builds a log from raw parts, validating that observation rounds are
    /// strictly increasing and within the recorded history.
    pub fn from_parts(
        arm_id: usize,
        actions: Vec<bool>,
        observations: Vec<(usize, bool)>,
    ) -> Result<Self> {
        for w in observations.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Order {
                    line: w[1].0,
                    message: "observation rounds must be strictly increasing".into(),
                });
            }
        }
        if let Some(&(round, _)) = observations.last() {
            if round > actions.len() {
                return Err(Error::RoundOutOfRange { round, len: actions.len() });
            }
        }
        if observations.first().is_some_and(|&(r, _)| r == 0) {
            return Err(Error::RoundOutOfRange { round: 0, len: actions.len() });
        }
        let pulls = actions.iter().filter(|&&y| y).count();
        Ok(ObservationLog { arm_id, actions, observations, pulls })
    }

    pub fn arm_id(&self) -> usize {
        self.arm_id
    }

    /// Appends the action taken in the next round.
    pub fn push_action(&mut self, y: bool) {
        self.actions.push(y);
        if y {
            self.pulls += 1;
        }
    }

    /// Records the reward observed in `round`, which must be the most
    /// recently recorded round.
    pub fn record_reward(&mut self, round: usize, reward: bool) -> Result<()> {
        if round != self.actions.len() || round == 0 {
            return Err(Error::RoundOutOfRange { round, len: self.actions.len() });
        }
        if self.observations.last().is_some_and(|&(r, _)| r >= round) {
            return Err(Error::Order {
                line: round,
                message: "reward already recorded for this round".into(),
            });
        }
        self.observations.push((round, reward));
        Ok(())
    }

    pub fn actions(&self) -> &[bool] {
        &self.actions
    }

    pub fn observations(&self) -> &[(usize, bool)] {
        &self.observations
    }

    /// Number of rounds in which the arm was pulled (`T_i`).
    pub fn pulls(&self) -> usize {
        self.pulls
    }

    /// Number of rounds with an observed reward (`|T_i|` under semi-bandit,
    /// the full horizon under full feedback).
    pub fn observed_count(&self) -> usize {
        self.observations.len()
    }

    pub fn rounds(&self) -> usize {
        self.actions.len()
    }
}

/// Result of a constrained MLE fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleResult {
    pub theta_hat: f64,
    pub x0_hat: StateVec,
    pub neg_log_likelihood: f64,
    pub converged: bool,
}

impl MleResult {
    pub fn params(&self) -> (f64, StateVec) {
        (self.theta_hat, self.x0_hat)
    }
}

/// Deterministic solver settings shared by the MLE and UCB subproblems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Lattice points per axis for the multi-start screen.
    pub lattice_points: usize,
    /// How many screened lattice points are refined by descent.
    pub descent_starts: usize,
    /// Iteration cap per descent.
    pub max_iters: usize,
    /// Initial step size, halved on non-improvement.
    pub init_step: f64,
    /// Minimum accepted improvement per step.
    pub tol: f64,
    /// Central finite-difference step for gradients.
    pub fd_step: f64,
    /// Outer quadratic-penalty rounds for the constrained maximization.
    pub penalty_rounds: usize,
    /// Initial penalty multiplier, doubled each outer round.
    pub penalty_init: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lattice_points: 5,
            descent_starts: 4,
            max_iters: 200,
            init_step: 0.05,
            tol: 1e-7,
            fd_step: 1e-5,
            penalty_rounds: 5,
            penalty_init: 64.0,
        }
    }
}

/// Confidence-ball radius used by [`ucb_mean_lookahead`]: either a fixed
/// value or the tuned rule, which depends on the candidate through the
/// empirical log-likelihood-ratio variance.
#[derive(Debug, Clone, Copy)]
pub enum RadiusRule<'a> {
    Fixed(f64),
    Tuned { cfg: &'a TunedRadiusConfig, round: f64, pulls: usize },
}

impl RadiusRule<'_> {
    fn radius_for(&self, candidate_variance: f64) -> f64 {
        match *self {
            RadiusRule::Fixed(r) => r,
            RadiusRule::Tuned { cfg, round, pulls } => {
                tuned_radius(cfg, candidate_variance, round, pulls)
            }
        }
    }
}

type Point = [f64; 3];

fn clamp_box(p: Point) -> Point {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0)]
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// One-pass trajectory evaluator over a recorded action history, with an
/// optional hypothetical next action appended for look-ahead objectives.
pub(crate) struct TrajectoryEval<'a> {
    dynamics: &'a DynamicsSpec,
    reward: &'a RewardModelSpec,
    actions: &'a [bool],
    next_action: Option<bool>,
    observations: &'a [(usize, bool)],
}

pub(crate) struct ConstraintEval {
    /// Average trajectory KL per observed round against the cached fit.
    pub avg_kl: f64,
    /// Sample variance of per-round log-likelihood-ratio terms
    /// (infinite when fewer than two rounds are observed).
    pub llr_variance: f64,
    /// Mean reward at the final (possibly look-ahead) state.
    pub objective: f64,
}

impl<'a> TrajectoryEval<'a> {
    pub(crate) fn new(
        dynamics: &'a DynamicsSpec,
        reward: &'a RewardModelSpec,
        actions: &'a [bool],
        next_action: Option<bool>,
        observations: &'a [(usize, bool)],
    ) -> Self {
        TrajectoryEval { dynamics, reward, actions, next_action, observations }
    }

    fn logit(&self, theta: f64, x: StateVec) -> f64 {
        self.reward.nu * theta + self.reward.omega[0] * x.b + self.reward.omega[1] * x.a
    }

    fn roll<F: FnMut(usize, StateVec)>(&self, x0: StateVec, mut visit: F) -> StateVec {
        let mut x = x0;
        for (idx, &y) in self.actions.iter().enumerate() {
            x = crate::model::step_dynamics(self.dynamics, x, y);
            visit(idx + 1, x);
        }
        if let Some(y) = self.next_action {
            x = crate::model::step_dynamics(self.dynamics, x, y);
        }
        x
    }

    /// Negative Bernoulli log-likelihood of the observed rewards under the
    /// candidate parameters.
    pub(crate) fn nll(&self, p: Point) -> f64 {
        let theta = p[0];
        let x0 = StateVec::new(p[1], p[2]);
        let mut obs = self.observations.iter().peekable();
        let mut total = 0.0;
        self.roll(x0, |round, x| {
            while let Some(&&(r, reward_bit)) = obs.peek() {
                if r != round {
                    break;
                }
                obs.next();
                let g = clip(logistic(self.logit(theta, x)));
                total -= if reward_bit { g.ln() } else { (1.0 - g).ln() };
            }
        });
        total
    }

    /// Candidate means at observed rounds, for caching a fit's trajectory.
    fn means_at_observed(&self, p: Point) -> Vec<f64> {
        let theta = p[0];
        let x0 = StateVec::new(p[1], p[2]);
        let mut means = Vec::with_capacity(self.observations.len());
        let mut obs = self.observations.iter().peekable();
        self.roll(x0, |round, x| {
            while let Some(&&(r, _)) = obs.peek() {
                if r != round {
                    break;
                }
                obs.next();
                means.push(logistic(self.logit(theta, x)));
            }
        });
        means
    }

    /// Constraint statistics of a candidate against cached fit means
    /// (already clipped), plus the look-ahead objective, in one pass.
    pub(crate) fn constraint(&self, p: Point, fit_means: &[f64]) -> ConstraintEval {
        let theta = p[0];
        let x0 = StateVec::new(p[1], p[2]);
        let mut kl_sum = 0.0;
        // Welford accumulator over log-likelihood-ratio terms.
        let (mut count, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        let mut obs = self.observations.iter().peekable();
        let mut k = 0usize;
        let final_state = self.roll(x0, |round, x| {
            while let Some(&&(r, reward_bit)) = obs.peek() {
                if r != round {
                    break;
                }
                obs.next();
                let g_cand = logistic(self.logit(theta, x));
                let g_fit = fit_means[k];
                k += 1;
                kl_sum += bernoulli_kl_unchecked(g_cand, g_fit);
                let gc = clip(g_cand);
                let term = if reward_bit {
                    (gc / g_fit).ln()
                } else {
                    ((1.0 - gc) / (1.0 - g_fit)).ln()
                };
                count += 1;
                let delta = term - mean;
                mean += delta / count as f64;
                m2 += delta * (term - mean);
            }
        });
        let avg_kl = if count == 0 { 0.0 } else { kl_sum / count as f64 };
        let llr_variance =
            if count >= 2 { m2 / (count - 1) as f64 } else { f64::INFINITY };
        let objective = logistic(self.logit(theta, final_state));
        ConstraintEval { avg_kl, llr_variance, objective }
    }
}

fn central_gradient<F: Fn(Point) -> f64>(f: &F, x: Point, h: f64) -> Point {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut lo = x;
        let mut hi = x;
        lo[i] -= h;
        hi[i] += h;
        g[i] = (f(hi) - f(lo)) / (2.0 * h);
    }
    g
}

/// Projected gradient descent on the unit box. Returns the final point, its
/// value, and whether the step size was exhausted before the iteration cap.
fn projected_descent<F: Fn(Point) -> f64>(
    f: &F,
    start: Point,
    cfg: &SolverConfig,
) -> (Point, f64, bool) {
    let mut x = clamp_box(start);
    let mut fx = f(x);
    let mut alpha = cfg.init_step;
    for _ in 0..cfg.max_iters {
        let grad = central_gradient(f, x, cfg.fd_step);
        let trial = clamp_box([
            x[0] - alpha * grad[0],
            x[1] - alpha * grad[1],
            x[2] - alpha * grad[2],
        ]);
        let ft = f(trial);
        if ft <= fx - cfg.tol {
            x = trial;
            fx = ft;
        } else {
            alpha *= 0.5;
            if alpha < 1e-10 {
                return (x, fx, true);
            }
        }
    }
    (x, fx, false)
}

fn lattice(points: usize) -> Vec<Point> {
    let n = points.max(2);
    let coord = |i: usize| i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push([coord(i), coord(j), coord(k)]);
            }
        }
    }
    out
}

/// Screens the start lattice by objective value and keeps the best few.
fn screened_starts<F: Fn(Point) -> f64>(f: &F, cfg: &SolverConfig) -> Vec<Point> {
    let grid = lattice(cfg.lattice_points);
    let mut scored: Vec<(f64, usize)> = grid.iter().map(|&p| f(p)).zip(0..).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.iter().take(cfg.descent_starts.max(1)).map(|&(_, i)| grid[i]).collect()
}

/// Negative log-likelihood of `(theta, x0)` for the recorded history:
/// states are rolled forward from `x0` under the recorded actions and the
/// Bernoulli log-loss is summed over observed rounds.
pub fn neg_log_likelihood(
    candidate: (f64, StateVec),
    log: &ObservationLog,
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
) -> Result<f64> {
    if log.observations().is_empty() {
        return Err(Error::EmptyHistory);
    }
    let eval = TrajectoryEval::new(dynamics, reward, log.actions(), None, log.observations());
    Ok(eval.nll([candidate.0, candidate.1.b, candidate.1.a]))
}

/// Fits `(theta, x0)` by minimizing the negative log-likelihood over the
/// unit box with multi-start projected gradient descent. Deterministic for
/// a fixed configuration; `warm` points (e.g. the previous round's
/// estimate) are refined alongside the lattice starts.
pub fn fit_mle(
    log: &ObservationLog,
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
    cfg: &SolverConfig,
    warm: &[(f64, StateVec)],
) -> Result<MleResult> {
    if log.observations().is_empty() {
        return Err(Error::EmptyHistory);
    }
    let eval = TrajectoryEval::new(dynamics, reward, log.actions(), None, log.observations());
    let f = |p: Point| eval.nll(p);

    let mut starts = screened_starts(&f, cfg);
    starts.extend(warm.iter().map(|&(t, x)| clamp_box([t, x.b, x.a])));

    let mut best: Option<(Point, f64, bool)> = None;
    for s in starts {
        let (x, fx, conv) = projected_descent(&f, s, cfg);
        if best.as_ref().map_or(true, |&(_, bf, _)| fx < bf) {
            best = Some((x, fx, conv));
        }
    }
    let (x, fx, converged) = best.expect("at least one start");
    Ok(MleResult {
        theta_hat: x[0],
        x0_hat: StateVec::new(x[1], x[2]),
        neg_log_likelihood: fx,
        converged,
    })
}

/// Optimistic mean: maximizes `g(theta, x_final)` over the unit box subject
/// to the average trajectory KL against the fit staying within `radius`.
/// The objective state is the one reached after the recorded actions.
///
/// Always at least the plug-in mean of the fit (the fit itself is feasible
/// at any radius, including zero).
pub fn ucb_mean(
    log: &ObservationLog,
    mle: &MleResult,
    radius: f64,
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
    cfg: &SolverConfig,
) -> Result<f64> {
    if radius < 0.0 {
        return Err(Error::InvalidRadius(radius));
    }
    ucb_optimize(log, None, mle, RadiusRule::Fixed(radius), dynamics, reward, cfg, &[])
}

/// Look-ahead variant used by the policies: the objective state includes a
/// hypothetical next action, and the radius may follow the tuned rule.
#[allow(clippy::too_many_arguments)]
pub fn ucb_mean_lookahead(
    log: &ObservationLog,
    next_action: bool,
    mle: &MleResult,
    rule: RadiusRule<'_>,
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
    cfg: &SolverConfig,
    warm: &[(f64, StateVec)],
) -> Result<f64> {
    if let RadiusRule::Fixed(r) = rule {
        if r < 0.0 {
            return Err(Error::InvalidRadius(r));
        }
    }
    ucb_optimize(log, Some(next_action), mle, rule, dynamics, reward, cfg, warm)
}

/// Like [`ucb_mean_lookahead`] but also returns the maximizing candidate,
/// for warm-starting the next round.
#[allow(clippy::too_many_arguments)]
pub fn ucb_argmax_lookahead(
    log: &ObservationLog,
    next_action: bool,
    mle: &MleResult,
    rule: RadiusRule<'_>,
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
    cfg: &SolverConfig,
    warm: &[(f64, StateVec)],
) -> Result<(f64, (f64, StateVec))> {
    ucb_optimize_inner(log, Some(next_action), mle, rule, dynamics, reward, cfg, warm)
}

#[allow(clippy::too_many_arguments)]
fn ucb_optimize(
    log: &ObservationLog,
    next_action: Option<bool>,
    mle: &MleResult,
    rule: RadiusRule<'_>,
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
    cfg: &SolverConfig,
    warm: &[(f64, StateVec)],
) -> Result<f64> {
    ucb_optimize_inner(log, next_action, mle, rule, dynamics, reward, cfg, warm)
        .map(|(value, _)| value)
}

#[allow(clippy::too_many_arguments)]
fn ucb_optimize_inner(
    log: &ObservationLog,
    next_action: Option<bool>,
    mle: &MleResult,
    rule: RadiusRule<'_>,
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
    cfg: &SolverConfig,
    warm: &[(f64, StateVec)],
) -> Result<(f64, (f64, StateVec))> {
    let eval =
        TrajectoryEval::new(dynamics, reward, log.actions(), next_action, log.observations());
    let mle_point: Point = [mle.theta_hat, mle.x0_hat.b, mle.x0_hat.a];
    // Cache the fit's (clipped) means at observed rounds once; every
    // candidate evaluation compares against them.
    let fit_means: Vec<f64> =
        eval.means_at_observed(mle_point).into_iter().map(clip).collect();

    let violation = |c: &ConstraintEval| -> f64 {
        (c.avg_kl - rule.radius_for(c.llr_variance)).max(0.0)
    };
    let feas_tol = |c: &ConstraintEval| -> f64 { 1e-6 * rule.radius_for(c.llr_variance).max(0.0) + 1e-12 };

    // Track the best exactly-feasible candidate seen anywhere.
    let mut best_value = f64::NEG_INFINITY;
    let mut best_point = mle_point;
    let mut consider = |p: Point| {
        let c = eval.constraint(p, &fit_means);
        if violation(&c) <= feas_tol(&c) && c.objective > best_value {
            best_value = c.objective;
            best_point = p;
        }
    };
    consider(mle_point);

    let mut mu = cfg.penalty_init;
    let mut rounds_left = cfg.penalty_rounds.max(1);
    // Screen starts by the initial penalized score.
    let penalized = |p: Point, mu: f64| -> f64 {
        let c = eval.constraint(p, &fit_means);
        -(c.objective) + mu * violation(&c).powi(2)
    };
    let screen = |p: Point| penalized(p, cfg.penalty_init);
    let mut starts = screened_starts(&screen, cfg);
    starts.push(mle_point);
    starts.extend(warm.iter().map(|&(t, x)| clamp_box([t, x.b, x.a])));

    let mut frontier = starts;
    while rounds_left > 0 {
        let f = |p: Point| penalized(p, mu);
        for point in frontier.iter_mut() {
            let (x, _, _) = projected_descent(&f, *point, cfg);
            consider(x);
            *point = x;
        }
        mu *= 2.0;
        rounds_left -= 1;
    }

    // The fit itself is always feasible, so a value is guaranteed.
    Ok((best_value, (best_point[0], StateVec::new(best_point[1], best_point[2]))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mean_reward, rollout, sample_reward, ArmSpec, DynamicsSpec};
    use crate::rng::{stream, StreamKind};
    use rand::Rng;

    fn default_model() -> (DynamicsSpec, RewardModelSpec) {
        (DynamicsSpec::from_primitives(0.7, 0.8, 0.4, 0.6, 0.2, 0.3), RewardModelSpec::default())
    }

    fn log_from(actions: &[bool], obs: &[(usize, bool)]) -> ObservationLog {
        ObservationLog::from_parts(0, actions.to_vec(), obs.to_vec()).unwrap()
    }

    #[test]
    fn log_validation() {
        assert!(ObservationLog::from_parts(0, vec![true, false], vec![(1, true), (1, false)]).is_err());
        assert!(ObservationLog::from_parts(0, vec![true], vec![(2, true)]).is_err());
        assert!(ObservationLog::from_parts(0, vec![true], vec![(0, true)]).is_err());
        let mut log = ObservationLog::new(3);
        log.push_action(true);
        log.record_reward(1, true).unwrap();
        assert!(log.record_reward(1, false).is_err());
        log.push_action(false);
        assert_eq!(log.pulls(), 1);
        assert_eq!(log.observed_count(), 1);
        assert_eq!(log.rounds(), 2);
    }

    #[test]
    fn nll_single_observation_hand_values() {
        // Identity dynamics, theta = 0, x0 = origin => g = 1/2 at every round.
        let rm = RewardModelSpec::default();
        let id = DynamicsSpec::identity();
        let log = log_from(&[true], &[(1, true)]);
        let nll = neg_log_likelihood((0.0, StateVec::ORIGIN), &log, &id, &rm).unwrap();
        assert!((nll - std::f64::consts::LN_2).abs() < 1e-12);
        let log0 = log_from(&[true], &[(1, false)]);
        let nll0 = neg_log_likelihood((0.0, StateVec::ORIGIN), &log0, &id, &rm).unwrap();
        assert!((nll0 - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn nll_is_additive_over_observations() {
        let (dyn_, rm) = default_model();
        let cand = (0.6, StateVec::new(0.3, 0.4));
        let both = log_from(&[true, false], &[(1, true), (2, false)]);
        let first = log_from(&[true, false], &[(1, true)]);
        let second = log_from(&[true, false], &[(2, false)]);
        let total = neg_log_likelihood(cand, &both, &dyn_, &rm).unwrap();
        let a = neg_log_likelihood(cand, &first, &dyn_, &rm).unwrap();
        let b = neg_log_likelihood(cand, &second, &dyn_, &rm).unwrap();
        assert!((total - a - b).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_empty_history() {
        let (dyn_, rm) = default_model();
        let log = log_from(&[true, false], &[]);
        assert_eq!(
            neg_log_likelihood((0.5, StateVec::ORIGIN), &log, &dyn_, &rm),
            Err(Error::EmptyHistory)
        );
    }

    #[test]
    fn finite_difference_gradient_matches_analytic_on_identity_dynamics() {
        // With identity dynamics the NLL is the logistic log-loss at x0, whose
        // gradient is sum (g - r) * (nu, omega).
        let rm = RewardModelSpec::default();
        let id = DynamicsSpec::identity();
        let log = log_from(
            &[true, true, false, true],
            &[(1, true), (2, false), (3, true), (4, false)],
        );
        let eval = TrajectoryEval::new(&id, &rm, log.actions(), None, log.observations());
        let p: Point = [0.4, 0.6, 0.3];
        let fd = central_gradient(&|q| eval.nll(q), p, 1e-5);
        let g = mean_reward(&rm, p[0], StateVec::new(p[1], p[2]));
        let mut analytic = [0.0; 3];
        for &(_, r) in log.observations() {
            let resid = g - if r { 1.0 } else { 0.0 };
            analytic[0] += resid * rm.nu;
            analytic[1] += resid * rm.omega[0];
            analytic[2] += resid * rm.omega[1];
        }
        for i in 0..3 {
            let denom = analytic[i].abs().max(1e-12);
            assert!(
                (fd[i] - analytic[i]).abs() / denom < 1e-4,
                "component {i}: fd {} vs analytic {}",
                fd[i],
                analytic[i]
            );
        }
    }

    #[test]
    fn fit_mle_all_ones_pushes_mean_up() {
        let rm = RewardModelSpec::default();
        let id = DynamicsSpec::identity();
        let log = log_from(&[true; 6], &[(1, true), (2, true), (3, true), (4, true), (5, true), (6, true)]);
        let cfg = SolverConfig::default();
        let fit = fit_mle(&log, &id, &rm, &cfg, &[]).unwrap();
        let g_hat = mean_reward(&rm, fit.theta_hat, fit.x0_hat);
        for &t in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            for &b in &[0.0, 0.5, 1.0] {
                for &a in &[0.0, 0.5, 1.0] {
                    assert!(g_hat + 1e-9 >= mean_reward(&rm, t, StateVec::new(b, a)) - 1e-6);
                }
            }
        }
    }

    #[test]
    fn fit_mle_beats_brute_force_grid_on_short_logs() {
        let (dyn_, rm) = default_model();
        let cfg = SolverConfig::default();
        let mut rng = stream(21, 0, 0, StreamKind::Cohort);
        for _ in 0..5 {
            let actions = [rng.gen::<bool>(), rng.gen::<bool>()];
            let obs = [(1, rng.gen::<bool>()), (2, rng.gen::<bool>())];
            let log = log_from(&actions, &obs);
            let fit = fit_mle(&log, &dyn_, &rm, &cfg, &[]).unwrap();
            // Exhaustive 21^3 lattice oracle.
            let mut grid_best = f64::INFINITY;
            for i in 0..21 {
                for j in 0..21 {
                    for k in 0..21 {
                        let cand = (
                            i as f64 / 20.0,
                            StateVec::new(j as f64 / 20.0, k as f64 / 20.0),
                        );
                        let v = neg_log_likelihood(cand, &log, &dyn_, &rm).unwrap();
                        grid_best = grid_best.min(v);
                    }
                }
            }
            assert!(
                fit.neg_log_likelihood <= grid_best + 1e-6,
                "solver {} vs grid {}",
                fit.neg_log_likelihood,
                grid_best
            );
        }
    }

    #[test]
    fn fit_mle_recovers_mean_trajectory() {
        let (dyn_, rm) = default_model();
        let truth = ArmSpec::new(0.7, dyn_, StateVec::new(0.9, 0.2));
        let mut rng = stream(33, 0, 0, StreamKind::Reward);
        let mut actions = Vec::new();
        let mut obs = Vec::new();
        let mut x = truth.x0;
        for t in 1..=300usize {
            let y = t % 3 == 0;
            actions.push(y);
            x = crate::model::step_dynamics(&dyn_, x, y);
            let r = sample_reward(&mut rng, mean_reward(&rm, truth.theta, x)).unwrap();
            obs.push((t, r));
        }
        let log = log_from(&actions, &obs);
        let fit = fit_mle(&log, &dyn_, &rm, &SolverConfig::default(), &[]).unwrap();
        let true_states = rollout(&truth, &actions).unwrap();
        let fit_arm = ArmSpec::new(fit.theta_hat, dyn_, fit.x0_hat);
        let fit_states = rollout(&fit_arm, &actions).unwrap();
        let avg_gap: f64 = (0..300)
            .map(|t| {
                (mean_reward(&rm, truth.theta, true_states[t])
                    - mean_reward(&rm, fit.theta_hat, fit_states[t]))
                .abs()
            })
            .sum::<f64>()
            / 300.0;
        assert!(avg_gap <= 0.05, "average mean gap {avg_gap}");
    }

    #[test]
    fn fit_mle_is_deterministic() {
        let (dyn_, rm) = default_model();
        let log = log_from(&[true, false, true], &[(1, true), (3, false)]);
        let cfg = SolverConfig::default();
        let a = fit_mle(&log, &dyn_, &rm, &cfg, &[]).unwrap();
        let b = fit_mle(&log, &dyn_, &rm, &cfg, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ucb_zero_radius_returns_plugin_on_pinned_trajectory() {
        // Identity dynamics pin the whole mean trajectory, so a zero radius
        // admits only candidates with the fit's mean everywhere.
        let rm = RewardModelSpec::default();
        let id = DynamicsSpec::identity();
        let log = log_from(&[true, true], &[(1, true), (2, false)]);
        let cfg = SolverConfig::default();
        let fit = fit_mle(&log, &id, &rm, &cfg, &[]).unwrap();
        let plug_in = mean_reward(&rm, fit.theta_hat, fit.x0_hat);
        let got = ucb_mean(&log, &fit, 0.0, &id, &rm, &cfg).unwrap();
        assert!((got - plug_in).abs() <= 1e-9, "got {got}, plug-in {plug_in}");
    }

    #[test]
    fn ucb_huge_radius_reaches_box_maximum() {
        // Zero-step propagation: objective is g(theta, x0) itself, with the
        // box maximum at theta = 1, b = 1, a = 0.
        let rm = RewardModelSpec::default();
        let id = DynamicsSpec::identity();
        let log = log_from(&[], &[]);
        let cfg = SolverConfig::default();
        let fit = MleResult {
            theta_hat: 0.5,
            x0_hat: StateVec::new(0.5, 0.5),
            neg_log_likelihood: 0.0,
            converged: true,
        };
        let got = ucb_mean(&log, &fit, 1e6, &id, &rm, &cfg).unwrap();
        assert!((got - 0.8807970779778823).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn ucb_rejects_negative_radius() {
        let (dyn_, rm) = default_model();
        let log = log_from(&[true], &[(1, true)]);
        let cfg = SolverConfig::default();
        let fit = fit_mle(&log, &dyn_, &rm, &cfg, &[]).unwrap();
        assert!(matches!(
            ucb_mean(&log, &fit, -0.5, &dyn_, &rm, &cfg),
            Err(Error::InvalidRadius(_))
        ));
    }

    #[test]
    fn ucb_optimism_and_radius_monotonicity() {
        let (dyn_, rm) = default_model();
        let cfg = SolverConfig::default();
        let mut rng = stream(8, 0, 0, StreamKind::Cohort);
        for _ in 0..20 {
            let n = 1 + rng.gen_range(0..5usize);
            let actions: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let mut obs: Vec<(usize, bool)> = Vec::new();
            for t in 1..=n {
                if rng.gen::<f64>() < 0.7 {
                    obs.push((t, rng.gen()));
                }
            }
            if obs.is_empty() {
                continue;
            }
            let log = log_from(&actions, &obs);
            let fit = fit_mle(&log, &dyn_, &rm, &cfg, &[]).unwrap();
            let fit_arm = ArmSpec::new(fit.theta_hat, dyn_, fit.x0_hat);
            let plug_in = mean_reward(
                &rm,
                fit.theta_hat,
                *rollout(&fit_arm, &actions).unwrap().last().unwrap(),
            );
            let mut prev = 0.0;
            for &radius in &[0.0, 0.01, 0.05, 0.2, 1.0] {
                let u = ucb_mean(&log, &fit, radius, &dyn_, &rm, &cfg).unwrap();
                assert!(u >= plug_in - 1e-9, "optimism violated: {u} < {plug_in}");
                assert!(u >= prev - 1e-9, "monotonicity violated at radius {radius}");
                prev = u;
            }
        }
    }

    #[test]
    fn ucb_close_to_grid_oracle_on_small_instance() {
        let (dyn_, rm) = default_model();
        let cfg = SolverConfig::default();
        let log = log_from(&[true, false, true], &[(1, true), (3, false)]);
        let fit = fit_mle(&log, &dyn_, &rm, &cfg, &[]).unwrap();
        let radius = 0.05;
        let got = ucb_mean(&log, &fit, radius, &dyn_, &rm, &cfg).unwrap();
        // 41^3 feasibility-checked grid oracle.
        let n_obs = log.observed_count() as f64;
        let rounds: Vec<usize> = log.observations().iter().map(|&(r, _)| r).collect();
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..41 {
            for j in 0..41 {
                for k in 0..41 {
                    let cand = (i as f64 / 40.0, StateVec::new(j as f64 / 40.0, k as f64 / 40.0));
                    let d = crate::divergence::trajectory_kl(
                        cand,
                        fit.params(),
                        log.actions(),
                        &rounds,
                        &dyn_,
                        &rm,
                    )
                    .unwrap();
                    if d / n_obs <= radius {
                        let arm = ArmSpec::new(cand.0, dyn_, cand.1);
                        let st = *rollout(&arm, log.actions()).unwrap().last().unwrap();
                        grid_best = grid_best.max(mean_reward(&rm, cand.0, st));
                    }
                }
            }
        }
        assert!(got >= grid_best - 1e-3, "solver {got} vs grid {grid_best}");
    }
}
