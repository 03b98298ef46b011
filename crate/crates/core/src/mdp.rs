//! Tabular MDPs and the fixed-point engine shared by every planner.
//!
//! The engine is generic over [`Backup`]: a backup computes `Q(s, a)` from the
//! current value estimate and aggregates a row of Q-values into `V(s)`. All
//! planner variants in [`crate::planners`] are expressed this way, so value
//! iteration, Q extraction and policy extraction are written once.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::reward::RewardTable;

/// Tolerance on row sums of transition distributions and policies.
pub const PROB_TOL: f64 = 1e-9;

/// Default sup-norm convergence threshold for value iteration.
pub const DEFAULT_TOL: f64 = 1e-3;

/// Default iteration cap for value iteration.
pub const DEFAULT_MAX_ITERS: usize = 1000;

/// Q-values closer than this to the row maximum count as tied for argmax.
///
/// Mathematically tied actions can differ by a few ulps depending on how a
/// backup normalizes its weights; ties then resolve to the lowest index.
pub const ARGMAX_TIE_TOL: f64 = 1e-9;

/// A finite MDP with sparse successor distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    /// Indexed by `s * num_actions + a`.
    transitions: Vec<Vec<(usize, f64)>>,
    start_states: Vec<usize>,
    terminal_states: Vec<usize>,
    terminal_mask: Vec<bool>,
}

impl Mdp {
    /// Builds an MDP without checking its invariants; see [`validate_mdp`].
    ///
    /// `transitions` is indexed by `s * num_actions + a`. Out-of-range terminal
    /// ids are kept (so validation can report them) but ignored by the mask.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        transitions: Vec<Vec<(usize, f64)>>,
        start_states: Vec<usize>,
        terminal_states: Vec<usize>,
    ) -> Self {
        let mut terminal_mask = vec![false; num_states];
        for &t in &terminal_states {
            if t < num_states {
                terminal_mask[t] = true;
            }
        }
        Self {
            num_states,
            num_actions,
            discount,
            transitions,
            start_states,
            terminal_states,
            terminal_mask,
        }
    }

    /// Like [`Mdp::new`], but rejects MDPs that fail validation.
    pub fn try_new(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        transitions: Vec<Vec<(usize, f64)>>,
        start_states: Vec<usize>,
        terminal_states: Vec<usize>,
    ) -> Result<Self> {
        let mdp = Self::new(
            num_states,
            num_actions,
            discount,
            transitions,
            start_states,
            terminal_states,
        );
        let violations = validate_mdp(&mdp);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidEnvironment(
                violations.iter().map(|v| v.to_string()).collect(),
            ))
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn start_states(&self) -> &[usize] {
        &self.start_states
    }

    pub fn terminal_states(&self) -> &[usize] {
        &self.terminal_states
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal_mask.get(state).copied().unwrap_or(false)
    }

    /// Successor distribution of `(state, action)` as `(next_state, probability)` pairs.
    pub fn successors(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transitions[state * self.num_actions + action]
    }

    /// All successor rows, indexed by `s * num_actions + a`.
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.transitions
    }

    /// Same MDP with a different transition table (used by transfer constructions).
    pub fn with_transitions(&self, transitions: Vec<Vec<(usize, f64)>>) -> Self {
        Self::new(
            self.num_states,
            self.num_actions,
            self.discount,
            transitions,
            self.start_states.clone(),
            self.terminal_states.clone(),
        )
    }

    /// Same MDP with a different discount.
    pub fn with_discount(&self, discount: f64) -> Self {
        let mut mdp = self.clone();
        mdp.discount = discount;
        mdp
    }
}

/// One broken invariant found by [`validate_mdp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.state, self.action) {
            (Some(s), Some(a)) => write!(f, "(s={s}, a={a}): {}", self.message),
            (Some(s), None) => write!(f, "(s={s}): {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

fn violation(state: Option<usize>, action: Option<usize>, message: String) -> Violation {
    Violation {
        state,
        action,
        message,
    }
}

/// Checks every structural invariant of `mdp` and reports each failure.
pub fn validate_mdp(mdp: &Mdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if mdp.num_states == 0 {
        out.push(violation(None, None, "num_states must be positive".into()));
    }
    if mdp.num_actions == 0 {
        out.push(violation(None, None, "num_actions must be positive".into()));
    }
    if !(0.0..1.0).contains(&mdp.discount) {
        out.push(violation(
            None,
            None,
            format!("discount {} outside [0, 1)", mdp.discount),
        ));
    }
    let expected_rows = mdp.num_states * mdp.num_actions;
    if mdp.transitions.len() != expected_rows {
        out.push(violation(
            None,
            None,
            format!(
                "expected {expected_rows} transition rows, found {}",
                mdp.transitions.len()
            ),
        ));
    }
    for (idx, row) in mdp.transitions.iter().enumerate().take(expected_rows) {
        let (s, a) = (idx / mdp.num_actions, idx % mdp.num_actions);
        let mut sum = 0.0;
        for &(next, p) in row {
            if next >= mdp.num_states {
                out.push(violation(
                    Some(s),
                    Some(a),
                    format!("successor {next} out of range"),
                ));
            }
            if !(p >= 0.0) {
                out.push(violation(
                    Some(s),
                    Some(a),
                    format!("negative probability {p} for successor {next}"),
                ));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_TOL {
            out.push(violation(
                Some(s),
                Some(a),
                format!("successor probabilities sum to {sum}"),
            ));
        }
    }
    if mdp.start_states.is_empty() {
        out.push(violation(None, None, "start_states is empty".into()));
    }
    for &s in &mdp.start_states {
        if s >= mdp.num_states {
            out.push(violation(Some(s), None, "start state out of range".into()));
        }
    }
    for &s in &mdp.terminal_states {
        if s >= mdp.num_states {
            out.push(violation(Some(s), None, "terminal state out of range".into()));
        }
    }
    out
}

/// State values `V(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(num_states: usize) -> Self {
        Self(vec![0.0; num_states])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Sup-norm distance to `other`.
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Action values `Q(s, a)`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QFunction {
    pub fn new(num_states: usize, num_actions: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), num_states * num_actions);
        Self {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }
}

/// Counters a backup may bump while it runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackupDiagnostics {
    /// Hyperbolic denominators pushed away from zero.
    pub clamped_denominators: usize,
}

/// One Bellman-style update, split into its inner expectation and its outer
/// aggregation over actions.
pub trait Backup {
    /// Human-readable name used in error messages.
    fn name(&self) -> String;

    /// The bracketed expectation for `(state, action)` given the current values.
    fn q_value(
        &self,
        state: usize,
        action: usize,
        values: &[f64],
        diagnostics: &mut BackupDiagnostics,
    ) -> f64;

    /// Combines one state's Q-values into its next value (max, Boltz, ...).
    fn aggregate(&self, q_row: &[f64]) -> f64;
}

/// Outcome of [`value_iterate`].
#[derive(Clone, Debug)]
pub struct ValueIteration {
    pub values: ValueFunction,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of every iteration, in order.
    pub residuals: Vec<f64>,
    pub diagnostics: BackupDiagnostics,
}

/// Applies `backup` once to `values`.
pub fn apply_backup(
    mdp: &Mdp,
    backup: &impl Backup,
    values: &[f64],
    diagnostics: &mut BackupDiagnostics,
    iteration: usize,
) -> Result<Vec<f64>> {
    let mut next = vec![0.0; mdp.num_states()];
    let mut q_row = vec![0.0; mdp.num_actions()];
    for (s, slot) in next.iter_mut().enumerate() {
        for (a, q) in q_row.iter_mut().enumerate() {
            *q = backup.q_value(s, a, values, diagnostics);
        }
        let v = backup.aggregate(&q_row);
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                backup: backup.name(),
                state: s,
                iteration,
            });
        }
        *slot = v;
    }
    Ok(next)
}

/// Iterates `V ← backup(V)` from zeros until the sup-norm change drops below
/// `tol` or `max_iters` updates have run.
pub fn value_iterate(
    mdp: &Mdp,
    backup: &impl Backup,
    tol: f64,
    max_iters: usize,
) -> Result<ValueIteration> {
    assert!(tol > 0.0, "tol must be positive");
    assert!(max_iters >= 1, "max_iters must be at least 1");
    let mut diagnostics = BackupDiagnostics::default();
    let mut values = vec![0.0; mdp.num_states()];
    let mut residuals = Vec::new();
    let mut converged = false;
    for iteration in 1..=max_iters {
        let next = apply_backup(mdp, backup, &values, &mut diagnostics, iteration)?;
        let residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        residuals.push(residual);
        if residual < tol {
            converged = true;
            break;
        }
    }
    Ok(ValueIteration {
        values: ValueFunction(values),
        iterations: residuals.len(),
        converged,
        residuals,
        diagnostics,
    })
}

/// Evaluates the backup's inner expectation at every `(s, a)` for fixed `v`.
pub fn q_from_v(mdp: &Mdp, backup: &impl Backup, v: &ValueFunction) -> Result<QFunction> {
    let mut diagnostics = BackupDiagnostics::default();
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut values = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let q = backup.q_value(s, a, v.values(), &mut diagnostics);
            if !q.is_finite() {
                return Err(Error::NonFiniteValue {
                    backup: backup.name(),
                    state: s,
                    iteration: 0,
                });
            }
            values.push(q);
        }
    }
    Ok(QFunction::new(ns, na, values))
}

/// Per-state action distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Policy {
    /// Builds a policy from row-major probabilities; log-probabilities are `ln p`.
    pub fn from_probs(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), num_states * num_actions);
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Self {
            num_states,
            num_actions,
            probs,
            log_probs,
        }
    }

    fn from_parts(
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
        log_probs: Vec<f64>,
    ) -> Self {
        Self {
            num_states,
            num_actions,
            probs,
            log_probs,
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self::from_probs(actions.len(), num_actions, probs)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self::from_probs(num_states, num_actions, vec![p; num_states * num_actions])
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    pub fn log_prob(&self, state: usize, action: usize) -> f64 {
        self.log_probs[state * self.num_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn log_row(&self, state: usize) -> &[f64] {
        &self.log_probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// True when every row puts all its mass on one action.
    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// The action with the most mass in `state` (lowest index on ties).
    pub fn greedy_action(&self, state: usize) -> usize {
        argmax_lowest(self.row(state), 0.0)
    }

    pub fn is_valid(&self) -> bool {
        (0..self.num_states).all(|s| {
            let row = self.row(s);
            row.iter().all(|p| (0.0..=1.0).contains(p))
                && (row.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL
        })
    }
}

/// How a Q-function is turned into a policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extraction {
    Deterministic,
    Boltzmann(f64),
}

/// Index of the first entry within `tie_tol` of the maximum.
pub(crate) fn argmax_lowest(row: &[f64], tie_tol: f64) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter()
        .position(|&x| x >= best - tie_tol)
        .unwrap_or(0)
}

/// Turns a Q-function into a policy.
pub fn extract_policy(q: &QFunction, mode: Extraction) -> Policy {
    let (ns, na) = (q.num_states(), q.num_actions());
    match mode {
        Extraction::Deterministic => {
            let actions: Vec<usize> = (0..ns)
                .map(|s| {
                    let row = q.row(s);
                    let scale = row.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
                    argmax_lowest(row, ARGMAX_TIE_TOL * scale)
                })
                .collect();
            Policy::deterministic(&actions, na)
        }
        Extraction::Boltzmann(beta) => {
            assert!(beta >= 0.0, "beta must be nonnegative");
            let mut probs = Vec::with_capacity(ns * na);
            let mut log_probs = Vec::with_capacity(ns * na);
            for s in 0..ns {
                let row = q.row(s);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let shifted: Vec<f64> = row.iter().map(|x| beta * (x - max)).collect();
                let log_z = shifted.iter().map(|x| x.exp()).sum::<f64>().ln();
                for x in shifted {
                    let lp = x - log_z;
                    log_probs.push(lp);
                    probs.push(lp.exp());
                }
            }
            Policy::from_parts(ns, na, probs, log_probs)
        }
    }
}

/// Value of following `policy` under the true dynamics and discount.
///
/// Iterates the policy-evaluation operator until the sup-norm change is below
/// `tol * (1 - γ)`, which bounds the distance to the fixed point by `tol`.
pub fn policy_value(mdp: &Mdp, rewards: &RewardTable, policy: &Policy, tol: f64) -> ValueFunction {
    assert!(tol > 0.0);
    let gamma = mdp.discount();
    let stop = (tol * (1.0 - gamma)).max(f64::EPSILON);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    // Expected one-step reward under the policy does not change between sweeps.
    let mut immediate = vec![0.0; ns];
    for (s, r) in immediate.iter_mut().enumerate() {
        for a in 0..na {
            let p = policy.prob(s, a);
            if p > 0.0 {
                let row = mdp.successors(s, a);
                let rs = rewards.row(s, a);
                *r += p * row.iter().zip(rs).map(|(&(_, pr), &rw)| pr * rw).sum::<f64>();
            }
        }
    }
    let mut v = vec![0.0; ns];
    loop {
        let mut next = immediate.clone();
        for (s, slot) in next.iter_mut().enumerate() {
            for a in 0..na {
                let p = policy.prob(s, a);
                if p > 0.0 {
                    let cont: f64 = mdp.successors(s, a).iter().map(|&(n, pr)| pr * v[n]).sum();
                    *slot += p * gamma * cont;
                }
            }
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < stop {
            break;
        }
    }
    ValueFunction(v)
}

/// A demonstration: `(state, action)` pairs in visit order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The first `t` steps.
    pub fn prefix(&self, t: usize) -> Trajectory {
        Trajectory {
            steps: self.steps[..t.min(self.steps.len())].to_vec(),
        }
    }
}

/// Draws an index from a probability row using one uniform variate.
pub(crate) fn sample_index(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Rolls out `policy` from `start_state` until `length` pairs are recorded.
///
/// Entering a terminal state resets the walk to `start_state`; terminals are
/// never recorded as visited states.
pub fn sample_trajectory(
    mdp: &Mdp,
    policy: &Policy,
    start_state: usize,
    length: usize,
    seed: u64,
) -> Trajectory {
    assert!(length >= 1, "trajectory length must be at least 1");
    assert!(
        mdp.start_states().contains(&start_state),
        "start state {start_state} is not a start state"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(length);
    let mut state = start_state;
    while steps.len() < length {
        let action = sample_index(policy.row(state).iter().copied(), rng.gen::<f64>());
        steps.push((state, action));
        let row = mdp.successors(state, action);
        let k = sample_index(row.iter().map(|&(_, p)| p), rng.gen::<f64>());
        let next = row[k].0;
        state = if mdp.is_terminal(next) { start_state } else { next };
    }
    Trajectory { steps }
}
