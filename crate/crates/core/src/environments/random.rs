use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::mdp::Mdp;
use crate::reward::{RewardSpec, ThetaSpace};
use crate::rng::derive_seed;

/// Shape of the random-MDP family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomMdpConfig {
    pub num_states: usize,
    pub num_actions: usize,
    pub successors_per_row: usize,
    pub discount: f64,
    /// States `0..reward_states` pay `θ_i` on every exit.
    pub reward_states: usize,
    pub theta_values: Vec<f64>,
    /// Bounds of the uniform split between two successors.
    pub prob_low: f64,
    pub prob_high: f64,
}

impl Default for RandomMdpConfig {
    fn default() -> Self {
        Self {
            num_states: 10,
            num_actions: 2,
            successors_per_row: 2,
            discount: 0.99,
            reward_states: 3,
            theta_values: vec![0.0, 1.0, 2.0, 3.0],
            prob_low: 0.05,
            prob_high: 0.95,
        }
    }
}

/// `count` random MDPs; the `i`-th is seeded from `(seed, i)`.
pub fn random_suite(cfg: &RandomMdpConfig, count: usize, seed: u64) -> Vec<Environment> {
    (0..count as u64)
        .map(|i| gen_random_mdp_with(cfg, derive_seed(seed, &[i])))
        .collect()
}

/// Random MDP with the default family shape.
pub fn gen_random_mdp(seed: u64) -> Environment {
    gen_random_mdp_with(&RandomMdpConfig::default(), seed)
}

/// Random MDP: each `(s, a)` gets `successors_per_row` distinct successors with
/// nonzero probabilities; reward-free states are the start states.
pub fn gen_random_mdp_with(cfg: &RandomMdpConfig, seed: u64) -> Environment {
    assert!(cfg.successors_per_row >= 1 && cfg.successors_per_row <= cfg.num_states);
    assert!(cfg.reward_states < cfg.num_states);
    assert!(0.0 < cfg.prob_low && cfg.prob_low <= cfg.prob_high && cfg.prob_high < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..cfg.num_states * cfg.num_actions)
        .map(|_| {
            let mut next: Vec<usize> = sample(&mut rng, cfg.num_states, cfg.successors_per_row)
                .into_iter()
                .collect();
            next.sort_unstable();
            let probs = if next.len() == 2 {
                let p = rng.gen_range(cfg.prob_low..=cfg.prob_high);
                vec![p, 1.0 - p]
            } else {
                let raw: Vec<f64> = next
                    .iter()
                    .map(|_| rng.gen_range(cfg.prob_low..=cfg.prob_high))
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            };
            next.into_iter().zip(probs).collect()
        })
        .collect();
    let mdp = Mdp::new(
        cfg.num_states,
        cfg.num_actions,
        cfg.discount,
        rows,
        (cfg.reward_states..cfg.num_states).collect(),
        vec![],
    );
    let reward = RewardSpec::StateExit {
        reward_states: (0..cfg.reward_states).collect(),
    };
    let theta = ThetaSpace::grid(&cfg.theta_values, cfg.reward_states).expect("distinct values");
    Environment::new(mdp, reward, theta).expect("generator output is valid")
}
