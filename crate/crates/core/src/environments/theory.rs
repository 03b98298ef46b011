//! Small constructions witnessing the informativeness gaps between planners.

use super::Environment;
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};
use crate::reward::{RewardFn, RewardSpec, ThetaSpace};

/// Discount used by the theory constructions; the witnesses do not depend on it.
pub const THEORY_DISCOUNT: f64 = 0.9;

/// Planner mapping the `i`-th θ to the `i`-th deterministic policy in
/// lexicographic order (state 0 is the most significant digit).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumeratedPlanner {
    pub num_states: usize,
    pub num_actions: usize,
}

impl EnumeratedPlanner {
    pub fn num_policies(&self) -> usize {
        self.num_actions.pow(self.num_states as u32)
    }

    pub fn policy(&self, theta_index: usize) -> Policy {
        assert!(theta_index < self.num_policies());
        let mut actions = vec![0; self.num_states];
        let mut rest = theta_index;
        for slot in actions.iter_mut().rev() {
            *slot = rest % self.num_actions;
            rest /= self.num_actions;
        }
        Policy::deterministic(&actions, self.num_actions)
    }

    pub fn policies(&self) -> Vec<Policy> {
        (0..self.num_policies()).map(|i| self.policy(i)).collect()
    }
}

fn scalar_thetas(count: usize) -> Result<ThetaSpace> {
    ThetaSpace::uniform((1..=count).map(|t| vec![t as f64]).collect())
}

/// Self-loop MDP where action 0 pays θ and every other action pays nothing;
/// Θ = {1, .., |A|^|S|}.
pub fn prop1_mdp(num_states: usize, num_actions: usize) -> Result<(Environment, EnumeratedPlanner)> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidArgument("sizes must be at least 1".into()));
    }
    let planner = EnumeratedPlanner {
        num_states,
        num_actions,
    };
    let count = num_actions
        .checked_pow(num_states as u32)
        .filter(|&c| c <= 1 << 20)
        .ok_or_else(|| Error::InvalidArgument("|A|^|S| too large to enumerate".into()))?;
    let rows = (0..num_states * num_actions)
        .map(|idx| vec![(idx / num_actions, 1.0)])
        .collect();
    let mdp = Mdp::new(
        num_states,
        num_actions,
        THEORY_DISCOUNT,
        rows,
        (0..num_states).collect(),
        vec![],
    );
    let env = Environment::new(mdp, RewardSpec::ActionBonus { action: 0 }, scalar_thetas(count)?)?;
    Ok((env, planner))
}

/// One state, two actions: the first pays θ ∈ {1, .., n}, the second nothing.
pub fn prop2_mdp(num_thetas: usize) -> Result<Environment> {
    if num_thetas < 2 {
        return Err(Error::InvalidArgument("need at least 2 thetas".into()));
    }
    let mdp = Mdp::new(
        1,
        2,
        THEORY_DISCOUNT,
        vec![vec![(0, 1.0)], vec![(0, 1.0)]],
        vec![0],
        vec![],
    );
    Environment::new(
        mdp,
        RewardSpec::ActionBonus { action: 0 },
        scalar_thetas(num_thetas)?,
    )
}

/// Two states, two actions. Arriving in state 0 pays θ; arriving in state 1
/// pays 0 after action 0 and -1 after action 1. Originally action 0 leads to
/// state 0 and action 1 to state 1. The `i`-th alternate dynamics (i = 1..=n)
/// send action 0 to state 1 and action 1 to state 0 with probability 2/(2i+1).
pub fn prop4_mdp(num_thetas: usize) -> Result<(Environment, Vec<Mdp>)> {
    if num_thetas < 2 {
        return Err(Error::InvalidArgument("need at least 2 thetas".into()));
    }
    let original = vec![vec![(0, 1.0)], vec![(1, 1.0)]];
    let mdp = Mdp::new(
        2,
        2,
        THEORY_DISCOUNT,
        [original.clone(), original].concat(),
        vec![0, 1],
        vec![],
    );
    let reward = RewardSpec::TargetOrPenalty {
        target: 0,
        penalized_action: 1,
        penalty: -1.0,
    };
    let alternates = (1..=num_thetas)
        .map(|i| {
            let q = 2.0 / (2 * i + 1) as f64;
            let row = vec![vec![(1, 1.0)], vec![(0, q), (1, 1.0 - q)]];
            mdp.with_transitions([row.clone(), row].concat())
        })
        .collect();
    let env = Environment::new(mdp, reward, scalar_thetas(num_thetas)?)?;
    Ok((env, alternates))
}

/// `E_{s' ~ P(s, a)}[r_θ(s, a, s')]`.
pub fn one_step_expected_reward(
    mdp: &Mdp,
    reward: &impl RewardFn,
    theta: &[f64],
    state: usize,
    action: usize,
) -> f64 {
    mdp.successors(state, action)
        .iter()
        .map(|&(n, p)| p * reward.reward(theta, state, action, n))
        .sum()
}
