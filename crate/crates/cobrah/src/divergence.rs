//! Bernoulli and trajectory KL divergences, plus the confidence radii built
//! on them.
//!
//! The trajectory divergence compares the reward distributions induced by
//! two `(theta, x0)` hypotheses when both are pushed through the *same*
//! dynamics and action history; it is the yardstick every confidence set in
//! this crate is measured with. Two radii are provided: the finite-time
//! theoretical radius (conservative) and a tuned radius driven by the
//! empirical variance of per-round log-likelihood ratios.

use crate::error::{Error, Result};
use crate::model::{mean_reward, step_dynamics, DynamicsSpec, RewardModelSpec, StateVec};

/// Probabilities in denominators are kept this far away from {0, 1}. The
/// logistic link never reaches the endpoints exactly, so the clip only
/// guards floating-point underflow.
pub const PROB_CLIP: f64 = 1e-9;

/// Lipschitz/sub-Gaussian constants and set diameters entering the
/// theoretical confidence radius.
///
/// Defaults describe the unit-box logistic instantiation:
/// `X = [0,1]^2`, `Theta = [0,1]`, so `diam(X) = sqrt(2)`,
/// `diam(X x Theta) = sqrt(3)`; Bernoulli rewards are sub-Gaussian with
/// `sigma = 1/2`; the log-likelihood ratio is `3`-Lipschitz in the reward
/// because logits on the box span `[-1, 2]`; and the mean is
/// `(1/4)*sqrt(3)`-Lipschitz from the logistic slope bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationConfig {
    pub l_f: f64,
    pub l_p: f64,
    pub l_g: f64,
    pub sigma: f64,
    pub diam_x: f64,
    pub diam_x_theta: f64,
    pub d_x: usize,
    pub d_theta: usize,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            l_f: 1.0,
            l_p: 3.0,
            l_g: 0.25 * 3f64.sqrt(),
            sigma: 0.5,
            diam_x: 2f64.sqrt(),
            diam_x_theta: 3f64.sqrt(),
            d_x: 2,
            d_theta: 1,
        }
    }
}

/// How the tuned radius estimates the divergence variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceEstimator {
    /// Sample variance of per-round log-likelihood-ratio terms.
    #[default]
    EmpiricalLlr,
}

/// Configuration for the tuned (asymptotic) radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunedRadiusConfig {
    /// Variance cap: the radius uses `min(eta / 4, variance)`. The default
    /// cap `1/4` is the maximal Bernoulli variance.
    pub eta: f64,
    pub variance_estimator: VarianceEstimator,
}

impl Default for TunedRadiusConfig {
    fn default() -> Self {
        TunedRadiusConfig { eta: 1.0, variance_estimator: VarianceEstimator::EmpiricalLlr }
    }
}

fn clip_prob(q: f64) -> f64 {
    q.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// KL divergence between Bernoulli(p) and Bernoulli(q), with `0 ln 0 = 0`
/// and `q` clipped away from {0, 1}.
pub fn bernoulli_kl(p: f64, q: f64) -> Result<f64> {
    if p.is_nan() || q.is_nan() || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(if p.is_nan() || !(0.0..=1.0).contains(&p) {
            p
        } else {
            q
        }));
    }
    Ok(bernoulli_kl_unchecked(p, clip_prob(q)))
}

/// Hot-path KL for probabilities already known to be valid; `q` must be
/// pre-clipped away from {0, 1}.
pub(crate) fn bernoulli_kl_unchecked(p: f64, q: f64) -> f64 {
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    kl
}

/// Trajectory KL divergence between hypotheses `(theta, x0)` (true) and
/// `(theta', x0')` (alternative) pushed through the same dynamics and action
/// history, summed over the observed rounds (1-based).
pub fn trajectory_kl(
    true_params: (f64, StateVec),
    alt_params: (f64, StateVec),
    actions: &[bool],
    observed_rounds: &[usize],
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
) -> Result<f64> {
    if observed_rounds.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut rounds: Vec<usize> = observed_rounds.to_vec();
    rounds.sort_unstable();
    if let Some(&last) = rounds.last() {
        if last > actions.len() || rounds[0] == 0 {
            let bad = if rounds[0] == 0 { 0 } else { last };
            return Err(Error::RoundOutOfRange { round: bad, len: actions.len() });
        }
    }

    let (theta_t, mut x_t) = true_params;
    let (theta_a, mut x_a) = alt_params;
    let mut total = 0.0;
    let mut next = rounds.iter().peekable();
    for (idx, &y) in actions.iter().enumerate() {
        let round = idx + 1;
        x_t = step_dynamics(dynamics, x_t, y);
        x_a = step_dynamics(dynamics, x_a, y);
        let mut hit = false;
        while next.peek() == Some(&&round) {
            next.next();
            hit = true;
        }
        if hit {
            let p = mean_reward(reward, theta_t, x_t);
            let q = clip_prob(mean_reward(reward, theta_a, x_a));
            total += bernoulli_kl_unchecked(p, q);
        }
        if next.peek().is_none() {
            break;
        }
    }
    Ok(total)
}

/// The dimension- and geometry-dependent constant entering the theoretical
/// radius: `8 L_f diam(X) sqrt(pi)
/// + 48 sqrt(2) 2^{1/(d_x + d_theta)} L_f diam(X x Theta) sqrt(pi (d_x + d_theta))`.
pub fn concentration_constant(cfg: &ConcentrationConfig) -> f64 {
    let d = (cfg.d_x + cfg.d_theta) as f64;
    let pi = std::f64::consts::PI;
    8.0 * cfg.l_f * cfg.diam_x * pi.sqrt()
        + 48.0 * 2f64.sqrt() * 2f64.powf(1.0 / d) * cfg.l_f * cfg.diam_x_theta * (pi * d).sqrt()
}

/// The scale `B(alpha) = c_f / sqrt(log(1/alpha)) + L_p sigma sqrt(2)`
/// multiplying `sqrt(log(1/alpha) / T)` in the concentration bound.
pub fn concentration_scale(cfg: &ConcentrationConfig, alpha: f64) -> f64 {
    concentration_constant(cfg) / (1.0 / alpha).ln().sqrt() + cfg.l_p * cfg.sigma * 2f64.sqrt()
}

/// Theoretical per-round confidence radius at round `t` with `pulls` prior
/// selections: `B(t^-4) sqrt(4 log t / pulls)`. Requires `t >= 2`.
pub fn theoretical_radius(cfg: &ConcentrationConfig, t: f64, pulls: usize) -> Result<f64> {
    if t < 2.0 {
        return Err(Error::RadiusUndefined(t));
    }
    let alpha = t.powi(-4);
    Ok(concentration_scale(cfg, alpha) * (4.0 * t.ln() / pulls as f64).sqrt())
}

/// Tuned radius `sqrt(min(eta/4, variance) log t / pulls)`; the variance cap
/// `eta/4` stands in whenever the empirical variance is unavailable.
pub fn tuned_radius(cfg: &TunedRadiusConfig, variance_est: f64, t: f64, pulls: usize) -> f64 {
    debug_assert!(variance_est >= 0.0);
    let v = variance_est.max(0.0).min(cfg.eta / 4.0);
    (v * t.ln().max(0.0) / pulls as f64).sqrt()
}

/// Sample variance with the `n - 1` denominator.
pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    debug_assert!(n >= 2);
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Empirical variance, across observed rounds, of the per-round
/// log-likelihood-ratio term
/// `l_t = r_t ln(g_t / g_hat_t) + (1 - r_t) ln((1 - g_t) / (1 - g_hat_t))`
/// comparing the alternative hypothesis against the fitted one.
///
/// `observations` are `(round, reward)` pairs, 1-based and strictly
/// increasing. Needs at least two observations.
pub fn trajectory_llr_variance(
    actions: &[bool],
    observations: &[(usize, bool)],
    fitted: (f64, StateVec),
    alt: (f64, StateVec),
    dynamics: &DynamicsSpec,
    reward: &RewardModelSpec,
) -> Result<f64> {
    if observations.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: observations.len() });
    }
    if let Some(&(last, _)) = observations.last() {
        if last > actions.len() {
            return Err(Error::RoundOutOfRange { round: last, len: actions.len() });
        }
    }
    let (theta_f, mut x_f) = fitted;
    let (theta_a, mut x_a) = alt;
    let mut terms = Vec::with_capacity(observations.len());
    let mut obs = observations.iter().peekable();
    for (idx, &y) in actions.iter().enumerate() {
        let round = idx + 1;
        x_f = step_dynamics(dynamics, x_f, y);
        x_a = step_dynamics(dynamics, x_a, y);
        while let Some(&&(r, reward_bit)) = obs.peek() {
            if r != round {
                break;
            }
            obs.next();
            let g_hat = clip_prob(mean_reward(reward, theta_f, x_f));
            let g_alt = clip_prob(mean_reward(reward, theta_a, x_a));
            let r_t = if reward_bit { 1.0 } else { 0.0 };
            terms.push(r_t * (g_alt / g_hat).ln() + (1.0 - r_t) * ((1.0 - g_alt) / (1.0 - g_hat)).ln());
        }
        if obs.peek().is_none() {
            break;
        }
    }
    Ok(sample_variance(&terms))
}
