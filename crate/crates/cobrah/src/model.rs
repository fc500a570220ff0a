//! Ground-truth world model: two-factor agent states, piecewise-linear
//! restless dynamics, and Bernoulli rewards through a logistic link.
//!
//! Each arm (agent) carries a beneficial factor `b` and an adverse factor
//! `a`, both confined to `[0, 1]`. A round's binary action `y` (visit or
//! rest) enters the affine state update before the projection back onto the
//! unit box, and the reward mean is `logistic(nu * theta + omega . x)`.

use rand::Rng;

use crate::error::{Error, Result};

/// Agent state: beneficial factor `b` and adverse factor `a`, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVec {
    pub b: f64,
    pub a: f64,
}

impl StateVec {
    pub const ORIGIN: StateVec = StateVec { b: 0.0, a: 0.0 };

    pub fn new(b: f64, a: f64) -> Self {
        StateVec { b, a }
    }

    /// Componentwise projection onto the unit box.
    pub fn clamped(self) -> Self {
        StateVec {
            b: self.b.clamp(0.0, 1.0),
            a: self.a.clamp(0.0, 1.0),
        }
    }

    pub fn in_box(self) -> bool {
        (0.0..=1.0).contains(&self.b) && (0.0..=1.0).contains(&self.a)
    }
}

/// Affine-plus-projection state dynamics
/// `x' = proj_[0,1]( diag(d1, d2) x + (q1, q2) y + (k1, k2) )`.
///
/// `d` are decay coefficients, `q` action effects, `k` drift constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsSpec {
    pub d1: f64,
    pub d2: f64,
    pub q1: f64,
    pub q2: f64,
    pub k1: f64,
    pub k2: f64,
}

impl DynamicsSpec {
    pub fn new(d1: f64, d2: f64, q1: f64, q2: f64, k1: f64, k2: f64) -> Self {
        DynamicsSpec { d1, d2, q1, q2, k1, k2 }
    }

    /// Builds the action effects from visit-pressure primitives:
    /// `q1 = -q1' - k1` and `q2 = q2' - k2`, so a visit always depletes the
    /// beneficial factor while the adverse factor trades the rest drift `k2`
    /// for the visit drift `q2'`.
    pub fn from_primitives(d1: f64, d2: f64, q1p: f64, q2p: f64, k1: f64, k2: f64) -> Self {
        DynamicsSpec {
            d1,
            d2,
            q1: -q1p - k1,
            q2: q2p - k2,
            k1,
            k2,
        }
    }

    /// Identity dynamics: the state never moves.
    pub fn identity() -> Self {
        DynamicsSpec::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    }

    /// Whether the linear part is non-expansive (`max(|d1|, |d2|) <= 1`),
    /// which keeps the full update 1-Lipschitz after projection.
    pub fn is_stable(&self) -> bool {
        self.d1.abs().max(self.d2.abs()) <= 1.0
    }
}

/// Logistic reward link `g = 1 / (1 + exp(-(nu * theta + omega . x)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardModelSpec {
    /// Coefficient on the arm parameter `theta`.
    pub nu: f64,
    /// Coefficients on the state `(b, a)`.
    pub omega: [f64; 2],
}

impl Default for RewardModelSpec {
    fn default() -> Self {
        RewardModelSpec { nu: 1.0, omega: [1.0, -1.0] }
    }
}

impl RewardModelSpec {
    /// Upper bound on the Lipschitz constant of the mean in `(theta, x)`:
    /// the logistic slope never exceeds 1/4.
    pub fn lipschitz_bound(&self) -> f64 {
        let norm = (self.nu * self.nu
            + self.omega[0] * self.omega[0]
            + self.omega[1] * self.omega[1])
            .sqrt();
        0.25 * norm
    }
}

/// One arm's ground truth: reward parameter, dynamics, initial state, link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmSpec {
    pub theta: f64,
    pub dynamics: DynamicsSpec,
    pub x0: StateVec,
    pub reward_model: RewardModelSpec,
}

impl ArmSpec {
    pub fn new(theta: f64, dynamics: DynamicsSpec, x0: StateVec) -> Self {
        ArmSpec {
            theta,
            dynamics,
            x0,
            reward_model: RewardModelSpec::default(),
        }
    }
}

/// A super-arm: the subset of arms selected in one round, at most the
/// capacity `C`, stored as strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperArm {
    members: Vec<usize>,
}

impl SuperArm {
    /// Validates `|members| <= capacity`, uniqueness, and `index < arms`.
    pub fn new(mut members: Vec<usize>, arms: usize, capacity: usize) -> Result<Self> {
        members.sort_unstable();
        if members.len() > capacity {
            return Err(Error::CapacityExceedsArms { capacity, arms: members.len() });
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate arm index in super-arm".into()));
        }
        if let Some(&max) = members.last() {
            if max >= arms {
                return Err(Error::Config(format!("arm index {max} out of range (m = {arms})")));
            }
        }
        Ok(SuperArm { members })
    }

    pub fn empty() -> Self {
        SuperArm { members: Vec::new() }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, arm: usize) -> bool {
        self.members.binary_search(&arm).is_ok()
    }
}

/// Numerically stable logistic function.
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Expected reward `g(theta, x)` for the logistic link. Strictly inside
/// `(0, 1)` for finite inputs; increasing in `theta` and `b`, decreasing in
/// `a` under the default link.
pub fn mean_reward(spec: &RewardModelSpec, theta: f64, x: StateVec) -> f64 {
    logistic(spec.nu * theta + spec.omega[0] * x.b + spec.omega[1] * x.a)
}

/// One dynamics step: affine update with action `y`, then projection onto
/// the unit box.
pub fn step_dynamics(dyn_: &DynamicsSpec, x: StateVec, y: bool) -> StateVec {
    let yv = if y { 1.0 } else { 0.0 };
    StateVec {
        b: dyn_.d1 * x.b + dyn_.q1 * yv + dyn_.k1,
        a: dyn_.d2 * x.a + dyn_.q2 * yv + dyn_.k2,
    }
    .clamped()
}

/// Iterates the dynamics from the arm's initial state through `actions`,
/// returning the state reached after each action (`x_1 ..= x_T`).
pub fn rollout(arm: &ArmSpec, actions: &[bool]) -> Result<Vec<StateVec>> {
    if actions.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut states = Vec::with_capacity(actions.len());
    let mut x = arm.x0;
    for &y in actions {
        x = step_dynamics(&arm.dynamics, x, y);
        states.push(x);
    }
    Ok(states)
}

/// One Bernoulli draw with the given mean. Identical streams yield
/// identical draws.
pub fn sample_reward<R: Rng>(rng: &mut R, mean: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(Error::InvalidMean(mean));
    }
    Ok(rng.gen::<f64>() < mean)
}
