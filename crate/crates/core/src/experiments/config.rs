//! Sweep configuration files (TOML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environments::{
    build_gridworld, default_grid_spec, parse_map, random_suite, Environment, RandomMdpConfig,
};
use crate::error::{Error, Result};
use crate::inference::MISSPEC_EPS;
use crate::mdp::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::planners::{PlanOptions, PlannerKind, PlannerSpec};

/// How assumed models that can assign zero probability are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// Mix deterministic assumed policies with `smoothing_eps` of uniform.
    Smoothed,
    /// No smoothing; zero-evidence trajectories fall back to the prior.
    PriorFallback,
}

impl EpsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EpsMode::Smoothed => "smoothed",
            EpsMode::PriorFallback => "prior_fallback",
        }
    }
}

impl std::str::FromStr for EpsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed" => Ok(EpsMode::Smoothed),
            "prior_fallback" | "prior-fallback" => Ok(EpsMode::PriorFallback),
            other => Err(Error::InvalidArgument(format!("unknown eps mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvFamily {
    Random,
    Gridworld,
    Files,
}

/// Where the sweep's environments come from. Which fields apply depends on
/// `family`: `count`/`seed`/`generator` for random, `map` for gridworld
/// (default map when absent), `paths` for files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentsConfig {
    pub family: EnvFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<RandomMdpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<PathBuf>>,
}

impl Default for EnvironmentsConfig {
    fn default() -> Self {
        Self {
            family: EnvFamily::Random,
            count: Some(20),
            seed: Some(0),
            generator: None,
            map: None,
            paths: None,
        }
    }
}

/// Degree-parameter grid per planner kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grids {
    pub boltzmann: Vec<f64>,
    pub illusion: Vec<f64>,
    pub optimism: Vec<f64>,
    pub prospect: Vec<f64>,
    pub extremal: Vec<f64>,
    pub myopic_gamma: Vec<f64>,
    pub myopic_vi: Vec<f64>,
    pub hyperbolic: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            boltzmann: vec![0.1, 0.316, 1.0, 3.16, 10.0, 31.6, 100.0],
            illusion: vec![0.1, 0.316, 1.0, 3.16, 10.0],
            optimism: vec![-10.0, -3.16, -1.0, -0.316, 0.0, 0.316, 1.0, 3.16, 10.0],
            prospect: vec![0.1, 0.316, 1.0, 3.16, 10.0],
            extremal: vec![0.1, 0.25, 0.5, 0.75, 0.9, 0.99],
            myopic_gamma: vec![0.5, 0.7, 0.9, 0.95, 0.99],
            myopic_vi: vec![1.0, 2.0, 3.0, 5.0, 10.0, 20.0],
            hyperbolic: vec![0.01, 0.1, 1.0, 10.0],
        }
    }
}

impl Grids {
    /// Grid for `kind`; the rational planner has a single parameterless entry.
    pub fn values(&self, kind: PlannerKind) -> &[f64] {
        match kind {
            PlannerKind::Rational => &[0.0],
            PlannerKind::Boltzmann => &self.boltzmann,
            PlannerKind::IllusionOfControl => &self.illusion,
            PlannerKind::OptimismPessimism => &self.optimism,
            PlannerKind::Prospect => &self.prospect,
            PlannerKind::Extremal => &self.extremal,
            PlannerKind::MyopicGamma => &self.myopic_gamma,
            PlannerKind::MyopicVi => &self.myopic_vi,
            PlannerKind::Hyperbolic => &self.hyperbolic,
        }
    }

    /// Specs for every grid value of `kind`. Panics on invalid grids;
    /// [`SweepConfig::validate`] rules them out.
    pub fn specs(&self, kind: PlannerKind) -> Vec<PlannerSpec> {
        self.values(kind)
            .iter()
            .map(|&p| PlannerSpec::new(kind, p).expect("validated grid"))
            .collect()
    }
}

/// Conditions of the misspecification suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MisspecConfig {
    /// The fixed model of the Boltzmann-assumed suite and the reference line
    /// of the other two.
    pub baseline: PlannerSpec,
    /// True planners of the parameter-misspecification suite; each is inferred
    /// under every grid value of its own kind.
    pub param_true: Vec<PlannerSpec>,
    /// Horizons of true myopic-VI planners inferred as myopic-γ planners.
    pub type_true_myopic_vi: Vec<f64>,
    /// Discounts of true myopic-γ planners inferred as myopic-VI planners.
    pub type_true_myopic_gamma: Vec<f64>,
}

impl Default for MisspecConfig {
    fn default() -> Self {
        let spec = |s: &str| s.parse().expect("valid default spec");
        Self {
            baseline: spec("boltzmann:10"),
            param_true: [
                "boltzmann:1",
                "illusion:0.1",
                "optimism:3.16",
                "prospect:1",
                "extremal:0.5",
                "myopic_gamma:0.9",
                "myopic_vi:5",
                "hyperbolic:1",
            ]
            .into_iter()
            .map(spec)
            .collect(),
            type_true_myopic_vi: vec![1.0, 2.0, 3.0, 5.0, 10.0, 20.0],
            type_true_myopic_gamma: vec![0.5, 0.7, 0.9, 0.95, 0.99],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub master_seed: u64,
    pub t_values: Vec<usize>,
    pub rollouts: usize,
    pub resamples: usize,
    pub eps_mode: EpsMode,
    pub smoothing_eps: f64,
    /// Planner kinds of the known-model and Boltzmann-assumed suites.
    pub kinds: Vec<PlannerKind>,
    pub environments: EnvironmentsConfig,
    pub planner: PlanOptions,
    pub grids: Grids,
    pub misspec: MisspecConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            t_values: vec![3, 15, 30],
            rollouts: 10,
            resamples: 1000,
            eps_mode: EpsMode::Smoothed,
            smoothing_eps: MISSPEC_EPS,
            kinds: PlannerKind::ALL.to_vec(),
            environments: EnvironmentsConfig::default(),
            planner: PlanOptions {
                tol: DEFAULT_TOL,
                max_iters: DEFAULT_MAX_ITERS,
                myopic_vi_discounted: false,
            },
            grids: Grids::default(),
            misspec: MisspecConfig::default(),
        }
    }
}

fn describe_ignored(path: &serde_ignored::Path) -> String {
    path.to_string()
}

impl SweepConfig {
    /// Parses TOML, reporting every unknown key and every invalid value.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_ignored::deserialize(de, |p| unknown.push(describe_ignored(&p)))
            .map_err(|e| Error::InvalidConfig(vec![e.to_string().trim().to_string()]))?;
        cfg.finish(unknown)
    }

    /// Parses JSON, reporting every unknown key and every invalid value.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_ignored::deserialize(&mut de, |p| unknown.push(describe_ignored(&p)))
            .map_err(|e| Error::InvalidConfig(vec![e.to_string()]))?;
        de.end()
            .map_err(|e| Error::InvalidConfig(vec![e.to_string()]))?;
        cfg.finish(unknown)
    }

    /// Parses by file extension (`.json`, anything else is TOML).
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(text),
            _ => Self::from_toml(text),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::parse(&text, path)?, text))
    }

    fn finish(self, unknown: Vec<String>) -> Result<Self> {
        let mut problems: Vec<String> = unknown
            .into_iter()
            .map(|k| format!("unknown key `{k}`"))
            .collect();
        problems.extend(self.problems());
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.t_values.is_empty() {
            out.push("t_values is empty".to_string());
        }
        if self.t_values.contains(&0) {
            out.push("t_values must be at least 1".to_string());
        }
        if self.rollouts == 0 {
            out.push("rollouts must be at least 1".to_string());
        }
        if self.resamples == 0 {
            out.push("resamples must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.smoothing_eps) {
            out.push(format!("smoothing_eps {} outside [0, 1)", self.smoothing_eps));
        }
        if self.kinds.is_empty() {
            out.push("kinds is empty".to_string());
        }
        if !(self.planner.tol > 0.0) {
            out.push("planner.tol must be positive".to_string());
        }
        if self.planner.max_iters == 0 {
            out.push("planner.max_iters must be at least 1".to_string());
        }
        for kind in PlannerKind::ALL.into_iter().skip(1) {
            let values = self.grids.values(kind);
            if values.is_empty() {
                out.push(format!("grids.{} is empty", kind.as_str()));
            }
            for &v in values {
                if PlannerSpec::new(kind, v).is_err() {
                    out.push(format!("grids.{}: invalid value {v}", kind.as_str()));
                }
            }
        }
        for (name, kind, values) in [
            ("type_true_myopic_vi", PlannerKind::MyopicVi, &self.misspec.type_true_myopic_vi),
            (
                "type_true_myopic_gamma",
                PlannerKind::MyopicGamma,
                &self.misspec.type_true_myopic_gamma,
            ),
        ] {
            for &v in values.iter() {
                if PlannerSpec::new(kind, v).is_err() {
                    out.push(format!("misspec.{name}: invalid value {v}"));
                }
            }
        }
        let env = &self.environments;
        let mut misplaced = |field: &str, present: bool| {
            if present {
                out.push(format!(
                    "environments.{field} does not apply to family `{}`",
                    match env.family {
                        EnvFamily::Random => "random",
                        EnvFamily::Gridworld => "gridworld",
                        EnvFamily::Files => "files",
                    }
                ));
            }
        };
        match env.family {
            EnvFamily::Random => {
                misplaced("map", env.map.is_some());
                misplaced("paths", env.paths.is_some());
            }
            EnvFamily::Gridworld => {
                misplaced("count", env.count.is_some());
                misplaced("seed", env.seed.is_some());
                misplaced("generator", env.generator.is_some());
                misplaced("paths", env.paths.is_some());
            }
            EnvFamily::Files => {
                misplaced("count", env.count.is_some());
                misplaced("seed", env.seed.is_some());
                misplaced("generator", env.generator.is_some());
                misplaced("map", env.map.is_some());
            }
        }
        match env.family {
            EnvFamily::Random if env.count == Some(0) => {
                out.push("environments.count must be at least 1".to_string())
            }
            EnvFamily::Files if env.paths.as_ref().map_or(true, |p| p.is_empty()) => {
                out.push("environments.paths is required for family `files`".to_string())
            }
            _ => {}
        }
        if let Some(g) = &env.generator {
            if g.successors_per_row == 0 || g.successors_per_row > g.num_states {
                out.push("environments.generator.successors_per_row must be in 1..=num_states".to_string());
            }
            if g.reward_states >= g.num_states {
                out.push("environments.generator.reward_states must be below num_states".to_string());
            }
            if g.num_actions == 0 {
                out.push("environments.generator.num_actions must be at least 1".to_string());
            }
            if !(0.0 < g.prob_low && g.prob_low <= g.prob_high && g.prob_high < 1.0) {
                out.push("environments.generator needs 0 < prob_low <= prob_high < 1".to_string());
            }
            if !(0.0..1.0).contains(&g.discount) {
                out.push("environments.generator.discount must be in [0, 1)".to_string());
            }
            let mut values = g.theta_values.clone();
            values.sort_by(f64::total_cmp);
            values.dedup();
            if values.is_empty() || values.len() != g.theta_values.len() {
                out.push("environments.generator.theta_values must be non-empty and distinct".to_string());
            }
        }
        out
    }

    /// Smoothing applied to an assumed model: none for stochastic models or
    /// when the model is the true planner, `smoothing_eps` otherwise in
    /// smoothed mode.
    pub fn eps_for(&self, true_spec: &PlannerSpec, model: &PlannerSpec) -> f64 {
        if self.eps_mode == EpsMode::PriorFallback
            || model.kind().is_stochastic()
            || model == true_spec
        {
            0.0
        } else {
            self.smoothing_eps
        }
    }

    /// Builds the environments with their ids. Relative paths resolve against `base_dir`.
    pub fn load_environments(&self, base_dir: &Path) -> Result<Vec<(u64, Environment)>> {
        let env = &self.environments;
        let resolve = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base_dir.join(p)
            }
        };
        let list = match env.family {
            EnvFamily::Random => random_suite(
                env.generator.as_ref().unwrap_or(&RandomMdpConfig::default()),
                env.count.unwrap_or(20),
                env.seed.unwrap_or(0),
            ),
            EnvFamily::Gridworld => {
                let spec = match &env.map {
                    None => default_grid_spec(),
                    Some(p) => {
                        let path = resolve(p);
                        let text =
                            std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                        parse_map(&text)?
                    }
                };
                vec![build_gridworld(&spec)?]
            }
            EnvFamily::Files => env
                .paths
                .iter()
                .flatten()
                .map(|p| Environment::load(resolve(p)))
                .collect::<Result<_>>()?,
        };
        Ok(list.into_iter().enumerate().map(|(i, e)| (i as u64, e)).collect())
    }
}
