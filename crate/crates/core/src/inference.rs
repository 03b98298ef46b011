//! Exact Bayesian reward inference, the log-loss metric, and the mutual
//! information between θ and a planner's policy.

use serde::{Deserialize, Serialize};

use crate::environments::Environment;
use crate::error::Result;
use crate::mdp::{sample_trajectory, Policy, Trajectory};
use crate::planners::{PlanOptions, PlannerKind, PlannerSpec, PolicyCache};
use crate::rng::trajectory_seed;

/// Log loss reported in place of `+∞`.
pub const LOG_LOSS_CAP: f64 = 1e9;

/// Smoothing used for deterministic assumed models in misspecified runs.
pub const MISSPEC_EPS: f64 = 1e-5;

/// Default sup-norm tolerance when grouping equal policies.
pub const DEFAULT_POLICY_TOL: f64 = 1e-6;

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    dist.iter()
        .filter(|&&p| p > 0.0)
        .fold(0.0, |acc, &p| acc - p * p.ln())
}

/// The planner the inferrer assumes, plus the uniform-mixture floor applied to
/// its action probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumedModel {
    pub spec: PlannerSpec,
    pub smoothing_eps: f64,
}

impl AssumedModel {
    pub fn new(spec: PlannerSpec, smoothing_eps: f64) -> Self {
        assert!((0.0..1.0).contains(&smoothing_eps), "eps must lie in [0, 1)");
        Self {
            spec,
            smoothing_eps,
        }
    }

    /// The exact model, without smoothing.
    pub fn exact(spec: PlannerSpec) -> Self {
        Self::new(spec, 0.0)
    }
}

/// Per-step log-likelihood table of one policy under smoothing `eps`.
fn smoothed_log_probs(policy: &Policy, eps: f64) -> Vec<f64> {
    if eps == 0.0 {
        return policy.log_probs().to_vec();
    }
    let floor = eps / policy.num_actions() as f64;
    policy
        .probs()
        .iter()
        .map(|&p| ((1.0 - eps) * p + floor).ln())
        .collect()
}

/// `log Π_t [(1 - eps) π(a_t | s_t) + eps / |A|]`.
///
/// Transition probabilities are left out: they do not depend on θ and cancel
/// when the posterior is normalized.
pub fn trajectory_log_likelihood(policy: &Policy, trajectory: &Trajectory, eps: f64) -> f64 {
    let floor = eps / policy.num_actions() as f64;
    trajectory
        .steps
        .iter()
        .map(|&(s, a)| {
            if eps == 0.0 {
                policy.log_prob(s, a)
            } else {
                ((1.0 - eps) * policy.prob(s, a) + floor).ln()
            }
        })
        .sum()
}

pub fn trajectory_likelihood(policy: &Policy, trajectory: &Trajectory, eps: f64) -> f64 {
    trajectory_log_likelihood(policy, trajectory, eps).exp()
}

/// Distribution over Θ given a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub probs: Vec<f64>,
    /// `log probs`, kept separately so tiny posteriors do not round to zero.
    pub log_probs: Vec<f64>,
    /// Marginal likelihood `Σ prior_i L_i`; zero when no θ explains the data.
    pub evidence: f64,
    pub log_evidence: f64,
}

/// Normalizes `prior_i · exp(log_likelihoods_i)` in log space. When every
/// term vanishes the prior is returned unchanged with zero evidence.
pub fn posterior_from_log_likelihoods(prior: &[f64], log_likelihoods: &[f64]) -> Posterior {
    assert_eq!(prior.len(), log_likelihoods.len());
    let joint: Vec<f64> = prior
        .iter()
        .zip(log_likelihoods)
        .map(|(&p, &ll)| if p > 0.0 { p.ln() + ll } else { f64::NEG_INFINITY })
        .collect();
    let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Posterior {
            probs: prior.to_vec(),
            log_probs: prior.iter().map(|p| p.ln()).collect(),
            evidence: 0.0,
            log_evidence: f64::NEG_INFINITY,
        };
    }
    let weights: Vec<f64> = joint.iter().map(|&j| (j - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let log_total = total.ln();
    let log_evidence = max + log_total;
    Posterior {
        probs: weights.into_iter().map(|w| w / total).collect(),
        log_probs: joint.iter().map(|&j| (j - max) - log_total).collect(),
        evidence: log_evidence.exp(),
        log_evidence,
    }
}

/// Posterior from already-planned assumed-model policies, one per θ.
pub fn posterior_from_policies(
    policies: &[&Policy],
    prior: &[f64],
    trajectory: &Trajectory,
    eps: f64,
) -> Posterior {
    let lls: Vec<f64> = policies
        .iter()
        .map(|p| trajectory_log_likelihood(p, trajectory, eps))
        .collect();
    posterior_from_log_likelihoods(prior, &lls)
}

/// Exact Bayesian update of the environment's prior on `trajectory`, with
/// the likelihood given by `model`.
pub fn posterior(
    model: &AssumedModel,
    env: &Environment,
    trajectory: &Trajectory,
    options: &PlanOptions,
    cache: &PolicyCache,
) -> Result<Posterior> {
    assert!(!trajectory.is_empty(), "trajectory must be nonempty");
    let plans = plan_all(&model.spec, env, options, cache)?;
    let policies: Vec<&Policy> = plans.iter().map(|p| &p.policy).collect();
    Ok(posterior_from_policies(
        &policies,
        env.theta.prior(),
        trajectory,
        model.smoothing_eps,
    ))
}

/// `-log P(θ* | ξ)`, capped at [`LOG_LOSS_CAP`] with a flag when infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLoss {
    pub nats: f64,
    pub infinite: bool,
}

pub fn log_loss(posterior: &Posterior, true_index: usize) -> LogLoss {
    let lp = posterior.log_probs[true_index];
    if lp > f64::NEG_INFINITY {
        LogLoss {
            nats: -lp,
            infinite: false,
        }
    } else {
        LogLoss {
            nats: LOG_LOSS_CAP,
            infinite: true,
        }
    }
}

/// One row of the per-trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub env_id: u64,
    pub true_kind: PlannerKind,
    pub true_param: Option<f64>,
    pub model_kind: PlannerKind,
    pub model_param: Option<f64>,
    pub eps: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub theta_index: usize,
    pub start_state: usize,
    pub rollout: usize,
    pub log_loss_nats: f64,
    pub infinite_flag: bool,
    pub converged_flag: bool,
}

/// Column order of [`TrajectoryRecord`] in CSV output.
pub const TRAJECTORY_COLUMNS: [&str; 13] = [
    "env_id",
    "true_kind",
    "true_param",
    "model_kind",
    "model_param",
    "eps",
    "T",
    "theta_index",
    "start_state",
    "rollout",
    "log_loss_nats",
    "infinite_flag",
    "converged_flag",
];

/// Plans `spec` for every θ of the environment (through the cache).
pub fn plan_all(
    spec: &PlannerSpec,
    env: &Environment,
    options: &PlanOptions,
    cache: &PolicyCache,
) -> Result<Vec<std::sync::Arc<crate::planners::PlanOutput>>> {
    let fingerprint = env.fingerprint();
    env.theta
        .params()
        .iter()
        .map(|theta| cache.get_or_plan(fingerprint, spec, &env.mdp, &env.reward, theta, options))
        .collect()
}

/// One demonstration condition: who demonstrates, who infers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Condition {
    pub true_spec: PlannerSpec,
    pub model: AssumedModel,
}

/// Per-trajectory log losses for every θ*, start state and rollout, at each
/// length in `lengths`.
///
/// Trajectory seeds depend only on `(master_seed, env_id, θ*, start, rollout)`,
/// so shorter lengths see prefixes of the longest rollout and conditions that
/// share a true planner share their demonstrations.
#[allow(clippy::too_many_arguments)]
pub fn expected_log_loss_at(
    condition: &Condition,
    env: &Environment,
    env_id: u64,
    lengths: &[usize],
    rollouts_per_start: usize,
    master_seed: u64,
    options: &PlanOptions,
    cache: &PolicyCache,
) -> Result<Vec<TrajectoryRecord>> {
    assert!(rollouts_per_start >= 1);
    assert!(!lengths.is_empty() && lengths.iter().all(|&t| t >= 1));
    let truth = plan_all(&condition.true_spec, env, options, cache)?;
    let assumed = plan_all(&condition.model.spec, env, options, cache)?;
    let eps = condition.model.smoothing_eps;
    let tables: Vec<Vec<f64>> = assumed
        .iter()
        .map(|p| smoothed_log_probs(&p.policy, eps))
        .collect();
    let model_converged = assumed.iter().all(|p| p.converged);
    let prior = env.theta.prior();
    let na = env.mdp.num_actions();
    let max_len = *lengths.iter().max().unwrap();
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| lengths[i]);

    let n_theta = env.theta.len();
    let n_start = env.mdp.start_states().len();
    let mut per_length: Vec<Vec<TrajectoryRecord>> =
        vec![Vec::with_capacity(n_theta * n_start * rollouts_per_start); lengths.len()];
    let mut lls = vec![0.0; n_theta];
    for (theta_index, true_plan) in truth.iter().enumerate() {
        for &start in env.mdp.start_states() {
            for rollout in 0..rollouts_per_start {
                let seed = trajectory_seed(master_seed, env_id, theta_index, start, rollout);
                let xi = sample_trajectory(&env.mdp, &true_plan.policy, start, max_len, seed);
                lls.iter_mut().for_each(|x| *x = 0.0);
                let mut consumed = 0;
                for &li in &order {
                    let t = lengths[li];
                    for &(s, a) in &xi.steps[consumed..t] {
                        for (ll, table) in lls.iter_mut().zip(&tables) {
                            *ll += table[s * na + a];
                        }
                    }
                    consumed = t;
                    let post = posterior_from_log_likelihoods(prior, &lls);
                    let loss = log_loss(&post, theta_index);
                    per_length[li].push(TrajectoryRecord {
                        env_id,
                        true_kind: condition.true_spec.kind(),
                        true_param: condition.true_spec.param(),
                        model_kind: condition.model.spec.kind(),
                        model_param: condition.model.spec.param(),
                        eps,
                        t,
                        theta_index,
                        start_state: start,
                        rollout,
                        log_loss_nats: loss.nats,
                        infinite_flag: loss.infinite,
                        converged_flag: true_plan.converged && model_converged,
                    });
                }
            }
        }
    }
    Ok(per_length.into_iter().flatten().collect())
}

/// Per-trajectory log losses at a single length `t`.
#[allow(clippy::too_many_arguments)]
pub fn expected_log_loss(
    condition: &Condition,
    env: &Environment,
    env_id: u64,
    t: usize,
    rollouts_per_start: usize,
    master_seed: u64,
    options: &PlanOptions,
    cache: &PolicyCache,
) -> Result<Vec<TrajectoryRecord>> {
    expected_log_loss_at(
        condition,
        env,
        env_id,
        &[t],
        rollouts_per_start,
        master_seed,
        options,
        cache,
    )
}

/// Mean log loss of a batch of records.
pub fn mean_log_loss(records: &[TrajectoryRecord]) -> f64 {
    records.iter().map(|r| r.log_loss_nats).sum::<f64>() / records.len() as f64
}

/// Distance used to decide whether two policies are "the same": sup-norm on
/// probabilities for deterministic pairs, sup-norm on per-state action
/// log-odds otherwise (so near-saturated stochastic policies stay apart).
pub fn policy_distance(a: &Policy, b: &Policy) -> f64 {
    assert_eq!(a.probs().len(), b.probs().len());
    if a.is_deterministic() && b.is_deterministic() {
        return a
            .probs()
            .iter()
            .zip(b.probs())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
    }
    let mut worst: f64 = 0.0;
    for s in 0..a.num_states() {
        let (la, lb) = (a.log_row(s), b.log_row(s));
        let reference = a.greedy_action(s);
        for k in 0..la.len() {
            let oa = la[k] - la[reference];
            let ob = lb[k] - lb[reference];
            let d = match (oa.is_finite(), ob.is_finite()) {
                (true, true) => (oa - ob).abs(),
                (false, false) if la[k] == lb[k] => 0.0,
                _ => f64::INFINITY,
            };
            worst = worst.max(d);
        }
    }
    worst
}

/// `I(θ; d(θ))` and the quantities it is built from, in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct MutualInformation {
    pub mutual_information: f64,
    pub prior_entropy: f64,
    pub conditional_entropy: f64,
    pub distinct_policies: usize,
}

/// Mutual information between θ (distributed as `prior`) and the policy
/// `policies[i]` the planner returns for θ_i.
///
/// θs whose policies are within `tol` of a group's first member share the
/// group; given the policy, the posterior is the prior restricted to the group.
pub fn mutual_information_of_policies(
    policies: &[&Policy],
    prior: &[f64],
    tol: f64,
) -> MutualInformation {
    assert_eq!(policies.len(), prior.len());
    assert!(tol >= 0.0);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in policies.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| policy_distance(policies[g[0]], p) <= tol)
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let prior_entropy = entropy(prior);
    let conditional_entropy: f64 = groups
        .iter()
        .map(|g| {
            let mass: f64 = g.iter().map(|&i| prior[i]).sum();
            if mass > 0.0 {
                let within: Vec<f64> = g.iter().map(|&i| prior[i] / mass).collect();
                mass * entropy(&within)
            } else {
                0.0
            }
        })
        .sum();
    MutualInformation {
        mutual_information: prior_entropy - conditional_entropy,
        prior_entropy,
        conditional_entropy,
        distinct_policies: groups.len(),
    }
}

/// Plans `spec` for every θ of `env` and measures `I(θ; d(θ))`.
pub fn policy_mutual_information(
    spec: &PlannerSpec,
    env: &Environment,
    policy_tol: f64,
    options: &PlanOptions,
    cache: &PolicyCache,
) -> Result<MutualInformation> {
    let plans = plan_all(spec, env, options, cache)?;
    let policies: Vec<&Policy> = plans.iter().map(|p| &p.policy).collect();
    Ok(mutual_information_of_policies(
        &policies,
        env.theta.prior(),
        policy_tol,
    ))
}
