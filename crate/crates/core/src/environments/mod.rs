//! Environment bundles (MDP + reward family + Θ) and their generators.

mod gridworld;
mod random;
mod theory;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{validate_mdp, Mdp};
use crate::reward::{RewardSpec, RewardTable, ThetaSpace};

pub use gridworld::{
    build_gridworld, default_grid_spec, parse_map, Cell, GridHeader, GridSpec, Move, DEFAULT_MAP,
};
pub use random::{gen_random_mdp, gen_random_mdp_with, random_suite, RandomMdpConfig};
pub use theory::{
    one_step_expected_reward, prop1_mdp, prop2_mdp, prop4_mdp, EnumeratedPlanner,
    THEORY_DISCOUNT,
};

/// An MDP together with its reward family and parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub mdp: Mdp,
    pub reward: RewardSpec,
    pub theta: ThetaSpace,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentFile {
    states: usize,
    actions: usize,
    gamma: f64,
    transitions: Vec<(usize, usize, usize, f64)>,
    start_states: Vec<usize>,
    terminal_states: Vec<usize>,
    theta: Vec<Vec<f64>>,
    prior: Vec<f64>,
    reward_spec: RewardSpec,
}

impl Environment {
    /// Bundles the parts, rejecting broken MDPs and θ of the wrong length.
    pub fn new(mdp: Mdp, reward: RewardSpec, theta: ThetaSpace) -> Result<Self> {
        let mut problems: Vec<String> = validate_mdp(&mdp).iter().map(|v| v.to_string()).collect();
        let dim = reward.theta_dim();
        if let Some(i) = theta.params().iter().position(|p| p.len() != dim) {
            problems.push(format!("theta {i} has length {}, expected {dim}", theta.param(i).len()));
        }
        if problems.is_empty() {
            Ok(Self { mdp, reward, theta })
        } else {
            Err(Error::InvalidEnvironment(problems))
        }
    }

    /// Rewards of the `index`-th θ laid out over the MDP's successor rows.
    pub fn reward_table(&self, index: usize) -> RewardTable {
        RewardTable::new(&self.mdp, &self.reward, self.theta.param(index))
    }

    fn to_file(&self) -> EnvironmentFile {
        let na = self.mdp.num_actions();
        let transitions = self
            .mdp
            .rows()
            .iter()
            .enumerate()
            .flat_map(|(idx, row)| row.iter().map(move |&(n, p)| (idx / na, idx % na, n, p)))
            .collect();
        EnvironmentFile {
            states: self.mdp.num_states(),
            actions: na,
            gamma: self.mdp.discount(),
            transitions,
            start_states: self.mdp.start_states().to_vec(),
            terminal_states: self.mdp.terminal_states().to_vec(),
            theta: self.theta.params().to_vec(),
            prior: self.theta.prior().to_vec(),
            reward_spec: self.reward.clone(),
        }
    }

    fn from_file(file: EnvironmentFile) -> Result<Self> {
        let mut problems = Vec::new();
        let mut rows = vec![Vec::new(); file.states * file.actions];
        for &(s, a, n, p) in &file.transitions {
            if s >= file.states || a >= file.actions {
                problems.push(format!("transition ({s}, {a}, {n}, {p}) out of range"));
            } else {
                rows[s * file.actions + a].push((n, p));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidEnvironment(problems));
        }
        let mdp = Mdp::new(
            file.states,
            file.actions,
            file.gamma,
            rows,
            file.start_states,
            file.terminal_states,
        );
        let theta = ThetaSpace::new(file.theta, file.prior)?;
        Self::new(mdp, file.reward_spec, theta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("environment serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Content hash of the serialized environment, used as a cache key.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(serde_json::to_vec(&self.to_file()).expect("serializes"));
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}
