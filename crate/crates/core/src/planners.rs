//! Biased planners as mutations of the Bellman backup.
//!
//! Every planner is a [`BackupRule`]: an inner expectation over successors
//! (which may reweight transitions, transform rewards, or change how future
//! value is combined with reward) followed by an outer aggregation over
//! actions (max or the Boltzmann-weighted average).

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    apply_backup, extract_policy, q_from_v, value_iterate, Backup, BackupDiagnostics, Extraction,
    Mdp, Policy, ValueFunction, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::reward::{RewardFn, RewardTable};

/// Smallest magnitude allowed for a hyperbolic denominator `1 + kV`.
pub const HYPERBOLIC_DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Rational,
    Boltzmann,
    #[serde(rename = "illusion")]
    IllusionOfControl,
    #[serde(rename = "optimism")]
    OptimismPessimism,
    Prospect,
    Extremal,
    MyopicGamma,
    MyopicVi,
    Hyperbolic,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 9] = [
        PlannerKind::Rational,
        PlannerKind::Boltzmann,
        PlannerKind::IllusionOfControl,
        PlannerKind::OptimismPessimism,
        PlannerKind::Prospect,
        PlannerKind::Extremal,
        PlannerKind::MyopicGamma,
        PlannerKind::MyopicVi,
        PlannerKind::Hyperbolic,
    ];

    /// Short name used in specs, configs and CSV columns.
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Rational => "rational",
            PlannerKind::Boltzmann => "boltzmann",
            PlannerKind::IllusionOfControl => "illusion",
            PlannerKind::OptimismPessimism => "optimism",
            PlannerKind::Prospect => "prospect",
            PlannerKind::Extremal => "extremal",
            PlannerKind::MyopicGamma => "myopic_gamma",
            PlannerKind::MyopicVi => "myopic_vi",
            PlannerKind::Hyperbolic => "hyperbolic",
        }
    }

    /// Whether the planner returns stochastic policies.
    pub fn is_stochastic(self) -> bool {
        self == PlannerKind::Boltzmann
    }

    /// Parameter value at which the planner coincides with the rational one.
    pub fn neutral_param(self, env_discount: f64) -> Option<f64> {
        match self {
            PlannerKind::IllusionOfControl => Some(1.0),
            PlannerKind::OptimismPessimism => Some(0.0),
            PlannerKind::MyopicGamma => Some(env_discount),
            _ => None,
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "rational" => PlannerKind::Rational,
            "boltzmann" => PlannerKind::Boltzmann,
            "illusion" | "illusion_of_control" => PlannerKind::IllusionOfControl,
            "optimism" | "optimism_pessimism" => PlannerKind::OptimismPessimism,
            "prospect" => PlannerKind::Prospect,
            "extremal" => PlannerKind::Extremal,
            "myopic_gamma" => PlannerKind::MyopicGamma,
            "myopic_vi" => PlannerKind::MyopicVi,
            "hyperbolic" => PlannerKind::Hyperbolic,
            other => return Err(Error::InvalidSpec(other.to_string())),
        })
    }
}

/// A planner kind together with its degree parameter
/// (β, n, ω, c, α, γ', h or k; unused for `Rational`).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PlannerSpec {
    kind: PlannerKind,
    param: f64,
}

impl PlannerSpec {
    pub fn new(kind: PlannerKind, param: f64) -> Result<Self> {
        let param = if kind == PlannerKind::Rational { 0.0 } else { param };
        let ok = match kind {
            PlannerKind::Rational => true,
            PlannerKind::Boltzmann
            | PlannerKind::IllusionOfControl
            | PlannerKind::Hyperbolic => param.is_finite() && param >= 0.0,
            PlannerKind::OptimismPessimism => param.is_finite(),
            PlannerKind::Prospect => param.is_finite() && param > 0.0,
            PlannerKind::Extremal => (0.0..=1.0).contains(&param),
            PlannerKind::MyopicGamma => (0.0..1.0).contains(&param),
            PlannerKind::MyopicVi => param >= 1.0 && param.fract() == 0.0 && param < 1e9,
        };
        if ok {
            Ok(Self { kind, param })
        } else {
            Err(Error::InvalidSpec(format!("{}:{param}", kind.as_str())))
        }
    }

    pub fn rational() -> Self {
        Self {
            kind: PlannerKind::Rational,
            param: 0.0,
        }
    }

    pub fn boltzmann(beta: f64) -> Result<Self> {
        Self::new(PlannerKind::Boltzmann, beta)
    }

    pub fn kind(&self) -> PlannerKind {
        self.kind
    }

    /// The degree parameter, `None` for the rational planner.
    pub fn param(&self) -> Option<f64> {
        (self.kind != PlannerKind::Rational).then_some(self.param)
    }

    pub fn horizon(&self) -> Option<usize> {
        (self.kind == PlannerKind::MyopicVi).then_some(self.param as usize)
    }

    /// How the converged Q-function is turned into a policy.
    pub fn extraction(&self) -> Extraction {
        match self.kind {
            PlannerKind::Boltzmann => Extraction::Boltzmann(self.param),
            _ => Extraction::Deterministic,
        }
    }
}

impl PartialEq for PlannerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.param.to_bits() == other.param.to_bits()
    }
}

impl Eq for PlannerSpec {}

impl Hash for PlannerSpec {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.param.to_bits().hash(state);
    }
}

impl PartialOrd for PlannerSpec {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PlannerSpec {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.kind
            .cmp(&other.kind)
            .then(self.param.total_cmp(&other.param))
    }
}

impl fmt::Display for PlannerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            None => f.write_str(self.kind.as_str()),
            Some(p) => write!(f, "{}:{p}", self.kind.as_str()),
        }
    }
}

impl FromStr for PlannerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => {
                let param: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidSpec(s.to_string()))?;
                (k.parse::<PlannerKind>()?, Some(param))
            }
            None => (s.parse::<PlannerKind>()?, None),
        };
        match (kind, param) {
            (PlannerKind::Rational, None) => Ok(Self::rational()),
            (PlannerKind::Rational, Some(_)) | (_, None) => Err(Error::InvalidSpec(s.to_string())),
            (kind, Some(p)) => Self::new(kind, p).map_err(|_| Error::InvalidSpec(s.to_string())),
        }
    }
}

impl TryFrom<String> for PlannerSpec {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<PlannerSpec> for String {
    fn from(spec: PlannerSpec) -> Self {
        spec.to_string()
    }
}

/// `Boltz^β(x) = Σ x_i e^{βx_i} / Σ e^{βx_i}`, evaluated with the maximum shifted out.
pub fn boltz(values: &[f64], beta: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for &x in values {
        let w = (beta * (x - max)).exp();
        num += x * w;
        den += w;
    }
    num / den
}

/// Loss-averse reward transform `f_c`.
pub fn prospect_transform(r: f64, c: f64) -> f64 {
    if r > 0.0 {
        r.abs().ln_1p()
    } else if r < 0.0 {
        -c * r.abs().ln_1p()
    } else {
        0.0
    }
}

/// `P^n / Σ P^n` over a successor row; zero-probability successors keep zero
/// weight for every `n`, so `n = 0` is uniform over the support.
pub fn illusion_weights(probs: &[f64], n: f64) -> Vec<f64> {
    let log_max = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = probs
        .iter()
        .map(|&p| {
            if p > 0.0 {
                (n * (p.ln() - log_max)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `P(s') e^{ω x(s')}` normalized over the row, where `x` is the outcome value `r + γV`.
pub fn optimism_weights(probs: &[f64], outcomes: &[f64], omega: f64) -> Vec<f64> {
    let shift = probs
        .iter()
        .zip(outcomes)
        .filter(|(&p, _)| p > 0.0)
        .map(|(_, &x)| omega * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = probs
        .iter()
        .zip(outcomes)
        .map(|(&p, &x)| p * (omega * x - shift).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Clone, Debug)]
enum Inner {
    /// `Σ w (r + γV)` with fixed weights (true, or illusion-sharpened).
    Expected { gamma: f64, weights: Option<Vec<Vec<f64>>> },
    Optimism { gamma: f64, omega: f64 },
    Extremal { alpha: f64 },
    Hyperbolic { k: f64 },
}

#[derive(Clone, Copy, Debug)]
enum Outer {
    Max,
    Boltz(f64),
}

/// A planner's Bellman update bound to one MDP and one reward table.
#[derive(Clone, Debug)]
pub struct BackupRule<'a> {
    mdp: &'a Mdp,
    rewards: RewardTable,
    inner: Inner,
    outer: Outer,
    name: String,
}

impl<'a> BackupRule<'a> {
    /// The update `spec` performs on `mdp` with the given rewards.
    ///
    /// For `MyopicVi` this is the within-horizon backup (undiscounted unless
    /// `myopic_vi_discounted`); the horizon itself is handled by [`plan`].
    pub fn new(
        spec: &PlannerSpec,
        mdp: &'a Mdp,
        rewards: &RewardTable,
        options: &PlanOptions,
    ) -> Self {
        let gamma = mdp.discount();
        let p = spec.param;
        let expected = |gamma| Inner::Expected {
            gamma,
            weights: None,
        };
        let (inner, outer, rewards) = match spec.kind {
            PlannerKind::Rational => (expected(gamma), Outer::Max, rewards.clone()),
            PlannerKind::Boltzmann => (expected(gamma), Outer::Boltz(p), rewards.clone()),
            PlannerKind::IllusionOfControl => {
                let weights = mdp
                    .rows()
                    .iter()
                    .map(|row| {
                        let probs: Vec<f64> = row.iter().map(|&(_, q)| q).collect();
                        illusion_weights(&probs, p)
                    })
                    .collect();
                (
                    Inner::Expected {
                        gamma,
                        weights: Some(weights),
                    },
                    Outer::Max,
                    rewards.clone(),
                )
            }
            PlannerKind::OptimismPessimism => (
                Inner::Optimism { gamma, omega: p },
                Outer::Max,
                rewards.clone(),
            ),
            PlannerKind::Prospect => (
                expected(gamma),
                Outer::Max,
                rewards.map(|r| prospect_transform(r, p)),
            ),
            PlannerKind::Extremal => (Inner::Extremal { alpha: p }, Outer::Max, rewards.clone()),
            PlannerKind::MyopicGamma => (expected(p), Outer::Max, rewards.clone()),
            PlannerKind::MyopicVi => {
                let g = if options.myopic_vi_discounted { gamma } else { 1.0 };
                (expected(g), Outer::Max, rewards.clone())
            }
            PlannerKind::Hyperbolic => (Inner::Hyperbolic { k: p }, Outer::Max, rewards.clone()),
        };
        Self {
            mdp,
            rewards,
            inner,
            outer,
            name: spec.to_string(),
        }
    }
}

impl Backup for BackupRule<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn q_value(
        &self,
        state: usize,
        action: usize,
        values: &[f64],
        diagnostics: &mut BackupDiagnostics,
    ) -> f64 {
        let row = self.mdp.successors(state, action);
        let rewards = self.rewards.row(state, action);
        match &self.inner {
            Inner::Expected { gamma, weights } => match weights {
                None => row
                    .iter()
                    .zip(rewards)
                    .map(|(&(n, p), &r)| p * (r + gamma * values[n]))
                    .sum(),
                Some(w) => {
                    let w = &w[state * self.mdp.num_actions() + action];
                    row.iter()
                        .zip(rewards)
                        .zip(w)
                        .map(|((&(n, _), &r), &wt)| wt * (r + gamma * values[n]))
                        .sum()
                }
            },
            Inner::Optimism { gamma, omega } => {
                let outcomes: Vec<f64> = row
                    .iter()
                    .zip(rewards)
                    .map(|(&(n, _), &r)| r + gamma * values[n])
                    .collect();
                let probs: Vec<f64> = row.iter().map(|&(_, p)| p).collect();
                optimism_weights(&probs, &outcomes, *omega)
                    .iter()
                    .zip(&outcomes)
                    .map(|(w, x)| w * x)
                    .sum()
            }
            Inner::Extremal { alpha } => row
                .iter()
                .zip(rewards)
                .map(|(&(n, p), &r)| p * r.max((1.0 - alpha) * r + alpha * values[n]))
                .sum(),
            Inner::Hyperbolic { k } => row
                .iter()
                .zip(rewards)
                .map(|(&(n, p), &r)| {
                    let mut denom = 1.0 + k * values[n];
                    if denom.abs() < HYPERBOLIC_DENOM_FLOOR {
                        diagnostics.clamped_denominators += 1;
                        denom = HYPERBOLIC_DENOM_FLOOR.copysign(denom);
                    }
                    p * (r + values[n]) / denom
                })
                .sum(),
        }
    }

    fn aggregate(&self, q_row: &[f64]) -> f64 {
        match self.outer {
            Outer::Max => q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Outer::Boltz(beta) => boltz(q_row, beta),
        }
    }
}

/// Knobs shared by every planner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Use the environment discount inside the myopic-VI horizon instead of 1.
    pub myopic_vi_discounted: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            myopic_vi_discounted: false,
        }
    }
}

/// A planner's policy plus how the fixed-point search went.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutput {
    pub policy: Policy,
    pub values: ValueFunction,
    pub converged: bool,
    pub iterations: usize,
    pub clamped_denominators: usize,
}

/// Runs the planner `spec` for the rewards in `rewards`.
pub fn plan_with_table(
    spec: &PlannerSpec,
    mdp: &Mdp,
    rewards: &RewardTable,
    options: &PlanOptions,
) -> Result<PlanOutput> {
    let rule = BackupRule::new(spec, mdp, rewards, options);
    let (values, converged, iterations, diagnostics) = match spec.horizon() {
        Some(h) => {
            // h backups total: h - 1 value updates, then the final Q read-out.
            let mut diagnostics = BackupDiagnostics::default();
            let mut v = vec![0.0; mdp.num_states()];
            for i in 1..h {
                v = apply_backup(mdp, &rule, &v, &mut diagnostics, i)?;
            }
            (ValueFunction(v), true, h, diagnostics)
        }
        None => {
            let run = value_iterate(mdp, &rule, options.tol, options.max_iters)?;
            (run.values, run.converged, run.iterations, run.diagnostics)
        }
    };
    let q = q_from_v(mdp, &rule, &values)?;
    Ok(PlanOutput {
        policy: extract_policy(&q, spec.extraction()),
        values,
        converged,
        iterations,
        clamped_denominators: diagnostics.clamped_denominators,
    })
}

/// Runs the planner `spec` for reward parameter `theta`.
pub fn plan(
    spec: &PlannerSpec,
    mdp: &Mdp,
    reward: &impl RewardFn,
    theta: &[f64],
    options: &PlanOptions,
) -> Result<PlanOutput> {
    plan_with_table(spec, mdp, &RewardTable::new(mdp, reward, theta), options)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct CacheKey {
    env: u64,
    spec: PlannerSpec,
    theta: Vec<u64>,
    tol: u64,
    max_iters: usize,
    myopic_vi_discounted: bool,
}

/// Memoizes planner outputs by (environment fingerprint, spec, θ, options).
///
/// Concurrent callers may plan the same key twice; the first insert wins and
/// both results are identical, so writes are idempotent.
#[derive(Debug, Default)]
pub struct PolicyCache {
    entries: Mutex<HashMap<CacheKey, Arc<PlanOutput>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl PolicyCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached plan for `theta`, computing it on a miss.
    pub fn get_or_plan(
        &self,
        env_fingerprint: u64,
        spec: &PlannerSpec,
        mdp: &Mdp,
        reward: &impl RewardFn,
        theta: &[f64],
        options: &PlanOptions,
    ) -> Result<Arc<PlanOutput>> {
        let key = CacheKey {
            env: env_fingerprint,
            spec: *spec,
            theta: theta.iter().map(|x| x.to_bits()).collect(),
            tol: options.tol.to_bits(),
            max_iters: options.max_iters,
            myopic_vi_discounted: options.myopic_vi_discounted,
        };
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(hit));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let out = Arc::new(plan(spec, mdp, reward, theta, options)?);
        let mut entries = self.entries.lock().unwrap();
        Ok(Arc::clone(entries.entry(key).or_insert(out)))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(hits, misses)` so far.
    pub fn stats(&self) -> (usize, usize) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }
}
