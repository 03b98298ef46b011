//! Parameterized rewards `r_θ(s, a, s')` and the finite parameter space Θ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, PROB_TOL};

/// A pure reward evaluator.
pub trait RewardFn {
    fn reward(&self, theta: &[f64], state: usize, action: usize, next: usize) -> f64;
}

impl<F> RewardFn for F
where
    F: Fn(&[f64], usize, usize, usize) -> f64,
{
    fn reward(&self, theta: &[f64], state: usize, action: usize, next: usize) -> f64 {
        self(theta, state, action, next)
    }
}

/// The built-in reward families, serialized as a tagged union.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RewardSpec {
    /// `θ_i` on every transition out of `reward_states[i]`; zero elsewhere.
    StateExit { reward_states: Vec<usize> },
    /// `θ_i` for entering `reward_cells[i]`, `hole_penalty` for entering a hole.
    /// Transitions out of those cells pay nothing.
    GridCells {
        reward_cells: Vec<usize>,
        holes: Vec<usize>,
        hole_penalty: f64,
    },
    /// `θ_0` whenever `action` is taken; zero otherwise.
    ActionBonus { action: usize },
    /// `θ_0` for arriving in `target`; otherwise `penalty` when `penalized_action`
    /// was taken and zero when it was not.
    TargetOrPenalty {
        target: usize,
        penalized_action: usize,
        penalty: f64,
    },
}

impl RewardFn for RewardSpec {
    fn reward(&self, theta: &[f64], state: usize, action: usize, next: usize) -> f64 {
        match self {
            RewardSpec::StateExit { reward_states } => reward_states
                .iter()
                .position(|&s| s == state)
                .map_or(0.0, |i| theta[i]),
            RewardSpec::GridCells {
                reward_cells,
                holes,
                hole_penalty,
            } => {
                if reward_cells.contains(&state) || holes.contains(&state) {
                    0.0
                } else if let Some(i) = reward_cells.iter().position(|&c| c == next) {
                    theta[i]
                } else if holes.contains(&next) {
                    *hole_penalty
                } else {
                    0.0
                }
            }
            RewardSpec::ActionBonus { action: bonus } => {
                if action == *bonus {
                    theta[0]
                } else {
                    0.0
                }
            }
            RewardSpec::TargetOrPenalty {
                target,
                penalized_action,
                penalty,
            } => {
                if next == *target {
                    theta[0]
                } else if action == *penalized_action {
                    *penalty
                } else {
                    0.0
                }
            }
        }
    }
}

impl RewardSpec {
    /// Length of θ this family reads.
    pub fn theta_dim(&self) -> usize {
        match self {
            RewardSpec::StateExit { reward_states } => reward_states.len(),
            RewardSpec::GridCells { reward_cells, .. } => reward_cells.len(),
            RewardSpec::ActionBonus { .. } | RewardSpec::TargetOrPenalty { .. } => 1,
        }
    }
}

/// Finite set of reward parameters with prior weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSpace {
    params: Vec<Vec<f64>>,
    prior: Vec<f64>,
}

impl ThetaSpace {
    pub fn new(params: Vec<Vec<f64>>, prior: Vec<f64>) -> Result<Self> {
        let space = Self { params, prior };
        let problems = space.violations();
        if problems.is_empty() {
            Ok(space)
        } else {
            Err(Error::InvalidEnvironment(problems))
        }
    }

    pub fn uniform(params: Vec<Vec<f64>>) -> Result<Self> {
        let n = params.len();
        Self::new(params, vec![1.0 / n as f64; n])
    }

    /// Cartesian product of `values` over `dim` coordinates, first coordinate
    /// most significant, with a uniform prior.
    pub fn grid(values: &[f64], dim: usize) -> Result<Self> {
        let mut params: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..dim {
            params = params
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Self::uniform(params)
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.params.is_empty() {
            out.push("theta space is empty".to_string());
        }
        if self.params.len() != self.prior.len() {
            out.push(format!(
                "{} thetas but {} prior weights",
                self.params.len(),
                self.prior.len()
            ));
        }
        if self.prior.iter().any(|p| !(*p >= 0.0)) {
            out.push("prior has negative entries".to_string());
        }
        let sum: f64 = self.prior.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            out.push(format!("prior sums to {sum}"));
        }
        for i in 0..self.params.len() {
            for j in 0..i {
                if self.params[i] == self.params[j] {
                    out.push(format!("thetas {j} and {i} are identical"));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn param(&self, index: usize) -> &[f64] {
        &self.params[index]
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// Position of `theta` in the space, if present.
    pub fn index_of(&self, theta: &[f64]) -> Option<usize> {
        self.params.iter().position(|p| p.as_slice() == theta)
    }
}

/// Rewards for one θ, laid out parallel to the MDP's successor rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    num_actions: usize,
    rows: Vec<Vec<f64>>,
}

impl RewardTable {
    pub fn new(mdp: &Mdp, reward: &impl RewardFn, theta: &[f64]) -> Self {
        let na = mdp.num_actions();
        let rows = mdp
            .rows()
            .iter()
            .enumerate()
            .map(|(idx, row)| {
                let (s, a) = (idx / na, idx % na);
                row.iter()
                    .map(|&(next, _)| reward.reward(theta, s, a, next))
                    .collect()
            })
            .collect();
        Self {
            num_actions: na,
            rows,
        }
    }

    /// Rewards for each successor of `(state, action)`, in successor order.
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        &self.rows[state * self.num_actions + action]
    }

    /// Applies `f` to every reward.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            num_actions: self.num_actions,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&x| f(x)).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_enumerates_first_coordinate_most_significant() {
        let space = ThetaSpace::grid(&[0.0, 1.0], 2).unwrap();
        assert_eq!(
            space.params(),
            &[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        );
        assert_eq!(space.prior(), &[0.25; 4]);
        assert_eq!(space.index_of(&[1.0, 0.0]), Some(2));
    }

    #[test]
    fn duplicate_thetas_rejected() {
        assert!(ThetaSpace::uniform(vec![vec![1.0], vec![1.0]]).is_err());
        assert!(ThetaSpace::new(vec![vec![1.0], vec![2.0]], vec![0.7, 0.7]).is_err());
    }

    #[test]
    fn reward_families() {
        let exit = RewardSpec::StateExit {
            reward_states: vec![0, 1, 2],
        };
        assert_eq!(exit.reward(&[5.0, 6.0, 7.0], 1, 0, 9), 6.0);
        assert_eq!(exit.reward(&[5.0, 6.0, 7.0], 3, 1, 0), 0.0);
        let grid = RewardSpec::GridCells {
            reward_cells: vec![4, 20],
            holes: vec![7],
            hole_penalty: -10.0,
        };
        assert_eq!(grid.reward(&[4.0, 1.0], 3, 0, 4), 4.0);
        assert_eq!(grid.reward(&[4.0, 1.0], 6, 2, 7), -10.0);
        assert_eq!(grid.reward(&[4.0, 1.0], 6, 2, 8), 0.0);
        assert_eq!(grid.reward(&[4.0, 1.0], 4, 0, 4), 0.0);
        let witness = RewardSpec::TargetOrPenalty {
            target: 0,
            penalized_action: 1,
            penalty: -1.0,
        };
        assert_eq!(witness.reward(&[3.0], 1, 1, 0), 3.0);
        assert_eq!(witness.reward(&[3.0], 1, 1, 1), -1.0);
        assert_eq!(witness.reward(&[3.0], 1, 0, 1), 0.0);
    }

    #[test]
    fn closures_are_reward_fns() {
        let r = |theta: &[f64], s: usize, _a: usize, _n: usize| theta[0] * s as f64;
        assert_eq!(r.reward(&[2.0], 3, 0, 0), 6.0);
    }
}
