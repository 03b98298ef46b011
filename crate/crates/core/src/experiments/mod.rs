//! Experiment suites: known-model sweeps, Boltzmann-assumed misspecification,
//! parameter misspecification and myopia-type misspecification.

mod aggregate;
mod config;
mod output;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::Environment;
use crate::error::{Error, Result};
use crate::inference::{expected_log_loss_at, AssumedModel, Condition, TrajectoryRecord};
use crate::planners::{PlannerKind, PlannerSpec, PolicyCache};

pub use aggregate::{
    aggregate, best_settings, bootstrap_sem, pair_with_model, AggregateRecord, Aggregator,
    PairedRecord,
};
pub use config::{EnvFamily, EnvironmentsConfig, EpsMode, Grids, MisspecConfig, SweepConfig};
pub use output::{
    read_trajectory_csv, run_sweep, write_csv, CsvSink, RunManifest, RunOptions, AGGREGATE_FILE,
    MANIFEST_FILE, PAIRED_FILE, TRAJECTORY_FILE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Known,
    BoltzmannMisspec,
    ParamMisspec,
    TypeMisspec,
}

impl SweepMode {
    pub const ALL: [SweepMode; 4] = [
        SweepMode::Known,
        SweepMode::BoltzmannMisspec,
        SweepMode::ParamMisspec,
        SweepMode::TypeMisspec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Known => "known",
            SweepMode::BoltzmannMisspec => "boltzmann-misspec",
            SweepMode::ParamMisspec => "param-misspec",
            SweepMode::TypeMisspec => "type-misspec",
        }
    }

    pub fn conditions(self, cfg: &SweepConfig) -> Vec<Condition> {
        match self {
            SweepMode::Known => known_conditions(cfg),
            SweepMode::BoltzmannMisspec => boltzmann_misspec_conditions(cfg),
            SweepMode::ParamMisspec => param_misspec_conditions(cfg),
            SweepMode::TypeMisspec => type_misspec_conditions(cfg),
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sweep mode `{s}`")))
    }
}

fn condition(cfg: &SweepConfig, true_spec: PlannerSpec, model: PlannerSpec) -> Condition {
    Condition {
        true_spec,
        model: AssumedModel::new(model, cfg.eps_for(&true_spec, &model)),
    }
}

fn true_specs(cfg: &SweepConfig) -> Vec<PlannerSpec> {
    cfg.kinds.iter().flat_map(|&k| cfg.grids.specs(k)).collect()
}

/// Every grid planner inferred with its own (exact, unsmoothed) model.
pub fn known_conditions(cfg: &SweepConfig) -> Vec<Condition> {
    true_specs(cfg)
        .into_iter()
        .map(|s| Condition {
            true_spec: s,
            model: AssumedModel::exact(s),
        })
        .collect()
}

/// Every grid planner under the correct model and under the baseline model.
pub fn boltzmann_misspec_conditions(cfg: &SweepConfig) -> Vec<Condition> {
    let baseline = cfg.misspec.baseline;
    true_specs(cfg)
        .into_iter()
        .flat_map(|s| {
            let correct = Condition {
                true_spec: s,
                model: AssumedModel::exact(s),
            };
            if s == baseline {
                vec![correct]
            } else {
                vec![correct, condition(cfg, s, baseline)]
            }
        })
        .collect()
}

fn with_baseline(cfg: &SweepConfig, true_spec: PlannerSpec, models: Vec<PlannerSpec>) -> Vec<Condition> {
    let baseline = cfg.misspec.baseline;
    let mut out: Vec<Condition> = models.into_iter().map(|m| condition(cfg, true_spec, m)).collect();
    if !out.iter().any(|c| c.model.spec == baseline) {
        out.push(condition(cfg, true_spec, baseline));
    }
    out
}

/// Each configured true planner under every grid value of its own kind, plus
/// the baseline model.
pub fn param_misspec_conditions(cfg: &SweepConfig) -> Vec<Condition> {
    cfg.misspec
        .param_true
        .iter()
        .flat_map(|&t| with_baseline(cfg, t, cfg.grids.specs(t.kind())))
        .collect()
}

/// True myopic-VI planners under the myopic-γ grid and true myopic-γ planners
/// under the myopic-VI grid, each with the baseline model.
pub fn type_misspec_conditions(cfg: &SweepConfig) -> Vec<Condition> {
    let crossed = |true_kind: PlannerKind, values: &[f64], model_kind: PlannerKind| {
        values
            .iter()
            .flat_map(|&v| {
                let t = PlannerSpec::new(true_kind, v).expect("validated");
                with_baseline(cfg, t, cfg.grids.specs(model_kind))
            })
            .collect::<Vec<_>>()
    };
    let mut out = crossed(
        PlannerKind::MyopicVi,
        &cfg.misspec.type_true_myopic_vi,
        PlannerKind::MyopicGamma,
    );
    out.extend(crossed(
        PlannerKind::MyopicGamma,
        &cfg.misspec.type_true_myopic_gamma,
        PlannerKind::MyopicVi,
    ));
    out
}

/// Receives trajectory records in canonical order.
pub trait RecordSink {
    fn push(&mut self, record: &TrajectoryRecord) -> Result<()>;
}

impl RecordSink for Aggregator {
    fn push(&mut self, record: &TrajectoryRecord) -> Result<()> {
        Aggregator::push(self, record);
        Ok(())
    }
}

impl RecordSink for Vec<TrajectoryRecord> {
    fn push(&mut self, record: &TrajectoryRecord) -> Result<()> {
        Vec::push(self, record.clone());
        Ok(())
    }
}

/// A (condition, environment) cell whose planners failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub env_id: u64,
    pub true_spec: PlannerSpec,
    pub model_spec: PlannerSpec,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: usize,
    pub infinite_records: usize,
    pub non_converged_records: usize,
    pub failures: Vec<CellFailure>,
}

/// Cells evaluated concurrently before their records are flushed.
const CELLS_PER_CHUNK: usize = 32;

/// Evaluates every condition on every environment.
///
/// Records reach the sinks ordered by condition, then environment, then T,
/// θ*, start state and rollout, whatever the degree of parallelism.
pub fn run_conditions(
    cfg: &SweepConfig,
    conditions: &[Condition],
    envs: &[(u64, Environment)],
    cache: &PolicyCache,
    sinks: &mut [&mut dyn RecordSink],
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let cells: Vec<(&Condition, &(u64, Environment))> = conditions
        .iter()
        .flat_map(|c| envs.iter().map(move |e| (c, e)))
        .collect();
    let mut outcome = SweepOutcome::default();
    for chunk in cells.chunks(CELLS_PER_CHUNK) {
        let results: Vec<Result<Vec<TrajectoryRecord>>> = chunk
            .par_iter()
            .map(|(c, (id, env))| {
                expected_log_loss_at(
                    c,
                    env,
                    *id,
                    &cfg.t_values,
                    cfg.rollouts,
                    cfg.master_seed,
                    &cfg.planner,
                    cache,
                )
            })
            .collect();
        for ((c, (id, _)), result) in chunk.iter().zip(results) {
            match result {
                Ok(records) => {
                    for r in &records {
                        for sink in sinks.iter_mut() {
                            sink.push(r)?;
                        }
                        outcome.infinite_records += r.infinite_flag as usize;
                        outcome.non_converged_records += !r.converged_flag as usize;
                    }
                    outcome.records += records.len();
                }
                Err(e) => outcome.failures.push(CellFailure {
                    env_id: *id,
                    true_spec: c.true_spec,
                    model_spec: c.model.spec,
                    error: e.to_string(),
                }),
            }
        }
    }
    Ok(outcome)
}

pub fn run_known_model_sweep(
    cfg: &SweepConfig,
    envs: &[(u64, Environment)],
    cache: &PolicyCache,
    sinks: &mut [&mut dyn RecordSink],
) -> Result<SweepOutcome> {
    run_conditions(cfg, &known_conditions(cfg), envs, cache, sinks)
}

pub fn run_boltzmann_misspec(
    cfg: &SweepConfig,
    envs: &[(u64, Environment)],
    cache: &PolicyCache,
    sinks: &mut [&mut dyn RecordSink],
) -> Result<SweepOutcome> {
    run_conditions(cfg, &boltzmann_misspec_conditions(cfg), envs, cache, sinks)
}

pub fn run_param_misspec(
    cfg: &SweepConfig,
    envs: &[(u64, Environment)],
    cache: &PolicyCache,
    sinks: &mut [&mut dyn RecordSink],
) -> Result<SweepOutcome> {
    run_conditions(cfg, &param_misspec_conditions(cfg), envs, cache, sinks)
}

pub fn run_type_misspec(
    cfg: &SweepConfig,
    envs: &[(u64, Environment)],
    cache: &PolicyCache,
    sinks: &mut [&mut dyn RecordSink],
) -> Result<SweepOutcome> {
    run_conditions(cfg, &type_misspec_conditions(cfg), envs, cache, sinks)
}
