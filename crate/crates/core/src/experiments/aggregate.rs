//! Per-condition means with environment-bootstrap standard errors.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::inference::TrajectoryRecord;
use crate::planners::PlannerKind;
use crate::rng::derive_seed;

/// Bootstrap standard error of the mean of `group_means`.
///
/// Groups are resampled with replacement `resamples` times; the spread of the
/// resampled mean-of-means is scaled by `sqrt(n / (n - 1))` so that it agrees
/// with the usual `s / sqrt(n)` instead of underestimating it for few groups.
pub fn bootstrap_sem(group_means: &[f64], resamples: usize, seed: u64) -> f64 {
    assert!(!group_means.is_empty(), "need at least one group");
    assert!(resamples >= 1);
    let n = group_means.len();
    if n == 1 || resamples == 1 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| group_means[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let mean = stats.iter().sum::<f64>() / resamples as f64;
    let var = stats.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    (var * n as f64 / (n - 1) as f64).sqrt()
}

/// One row of the aggregate CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub true_kind: PlannerKind,
    pub true_param: Option<f64>,
    pub model_kind: PlannerKind,
    pub model_param: Option<f64>,
    pub eps: f64,
    #[serde(rename = "T")]
    pub t: usize,
    /// Mean over environments of the per-environment mean (capped) log loss.
    pub mean_log_loss: f64,
    pub sem: f64,
    pub n: usize,
    pub n_envs: usize,
    pub infinite_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Key {
    true_kind: PlannerKind,
    true_param: Option<u64>,
    model_kind: PlannerKind,
    model_param: Option<u64>,
    eps: u64,
    t: usize,
}

impl Key {
    fn of(r: &TrajectoryRecord) -> Self {
        Self {
            true_kind: r.true_kind,
            true_param: r.true_param.map(f64::to_bits),
            model_kind: r.model_kind,
            model_param: r.model_param.map(f64::to_bits),
            eps: r.eps.to_bits(),
            t: r.t,
        }
    }

    fn seed(&self, master: u64) -> u64 {
        let opt = |x: Option<u64>| x.unwrap_or(u64::MAX);
        derive_seed(
            master,
            &[
                self.true_kind as u64,
                opt(self.true_param),
                self.model_kind as u64,
                opt(self.model_param),
                self.eps,
                self.t as u64,
            ],
        )
    }
}

#[derive(Clone, Debug, Default)]
struct Group {
    env_id: u64,
    sum: f64,
    count: usize,
    infinite: usize,
}

/// Streaming aggregation of trajectory records.
///
/// Conditions and environment groups keep first-appearance order and sums are
/// accumulated in record order, so aggregating a re-read CSV reproduces the
/// original aggregates bit for bit.
#[derive(Debug, Default)]
pub struct Aggregator {
    order: Vec<Key>,
    groups: HashMap<Key, Vec<Group>>,
}

impl Aggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &TrajectoryRecord) {
        let key = Key::of(record);
        let groups = self.groups.entry(key).or_insert_with(|| {
            self.order.push(key);
            Vec::new()
        });
        let group = match groups.iter_mut().rposition(|g| g.env_id == record.env_id) {
            Some(i) => &mut groups[i],
            None => {
                groups.push(Group {
                    env_id: record.env_id,
                    ..Group::default()
                });
                groups.last_mut().unwrap()
            }
        };
        group.sum += record.log_loss_nats;
        group.count += 1;
        group.infinite += record.infinite_flag as usize;
    }

    /// `(env_id, mean log loss)` per environment for the condition of `row`.
    pub fn group_means(&self, row: &AggregateRecord) -> Option<Vec<(u64, f64)>> {
        let key = Key {
            true_kind: row.true_kind,
            true_param: row.true_param.map(f64::to_bits),
            model_kind: row.model_kind,
            model_param: row.model_param.map(f64::to_bits),
            eps: row.eps.to_bits(),
            t: row.t,
        };
        let groups = self.groups.get(&key)?;
        Some(groups.iter().map(|g| (g.env_id, g.sum / g.count as f64)).collect())
    }

    /// Aggregate rows in first-appearance order.
    pub fn finish(&self, resamples: usize, seed: u64) -> Vec<AggregateRecord> {
        self.order
            .iter()
            .map(|key| {
                let groups = &self.groups[key];
                let means: Vec<f64> = groups.iter().map(|g| g.sum / g.count as f64).collect();
                let n: usize = groups.iter().map(|g| g.count).sum();
                let infinite: usize = groups.iter().map(|g| g.infinite).sum();
                AggregateRecord {
                    true_kind: key.true_kind,
                    true_param: key.true_param.map(f64::from_bits),
                    model_kind: key.model_kind,
                    model_param: key.model_param.map(f64::from_bits),
                    eps: f64::from_bits(key.eps),
                    t: key.t,
                    mean_log_loss: means.iter().sum::<f64>() / means.len() as f64,
                    sem: bootstrap_sem(&means, resamples, key.seed(seed)),
                    n,
                    n_envs: groups.len(),
                    infinite_fraction: infinite as f64 / n as f64,
                }
            })
            .collect()
    }
}

/// Aggregates a slice of records in one go.
pub fn aggregate(records: &[TrajectoryRecord], resamples: usize, seed: u64) -> Vec<AggregateRecord> {
    let mut agg = Aggregator::new();
    records.iter().for_each(|r| agg.push(r));
    agg.finish(resamples, seed)
}

/// Correct-model and misspecified-model results for one true planner and T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub true_kind: PlannerKind,
    pub true_param: Option<f64>,
    #[serde(rename = "T")]
    pub t: usize,
    pub correct_mean: f64,
    pub correct_sem: f64,
    pub misspec_model_kind: PlannerKind,
    pub misspec_model_param: Option<f64>,
    pub misspec_eps: f64,
    pub misspec_mean: f64,
    pub misspec_sem: f64,
    pub misspec_infinite_fraction: f64,
    pub n: usize,
}

/// Joins each correct-model row (model equals true planner) with the row of
/// the same true planner and T under `misspec_kind`/`misspec_param`.
pub fn pair_with_model(
    rows: &[AggregateRecord],
    misspec_kind: PlannerKind,
    misspec_param: Option<f64>,
) -> Vec<PairedRecord> {
    let is_model = |r: &AggregateRecord| {
        r.model_kind == misspec_kind
            && r.model_param.map(f64::to_bits) == misspec_param.map(f64::to_bits)
    };
    rows.iter()
        .filter(|r| r.is_correct_model())
        .filter_map(|c| {
            let m = rows.iter().find(|m| {
                is_model(m) && m.true_kind == c.true_kind && same(m.true_param, c.true_param) && m.t == c.t
            })?;
            Some(PairedRecord {
                true_kind: c.true_kind,
                true_param: c.true_param,
                t: c.t,
                correct_mean: c.mean_log_loss,
                correct_sem: c.sem,
                misspec_model_kind: m.model_kind,
                misspec_model_param: m.model_param,
                misspec_eps: m.eps,
                misspec_mean: m.mean_log_loss,
                misspec_sem: m.sem,
                misspec_infinite_fraction: m.infinite_fraction,
                n: c.n,
            })
        })
        .collect()
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    a.map(f64::to_bits) == b.map(f64::to_bits)
}

impl AggregateRecord {
    pub fn is_correct_model(&self) -> bool {
        self.true_kind == self.model_kind && same(self.true_param, self.model_param)
    }

    /// Whether this row's mean is below `other`'s by more than the larger of
    /// the two standard errors.
    pub fn beats(&self, other: &AggregateRecord) -> bool {
        other.mean_log_loss - self.mean_log_loss > self.sem.max(other.sem)
    }
}

/// Per kind, the correct-model grid value with the lowest mean at `t`
/// (first in grid order on ties).
pub fn best_settings(rows: &[AggregateRecord], t: usize) -> Vec<(PlannerKind, Option<f64>)> {
    let mut best: Vec<&AggregateRecord> = Vec::new();
    for r in rows.iter().filter(|r| r.t == t && r.is_correct_model()) {
        match best.iter_mut().find(|b| b.true_kind == r.true_kind) {
            Some(b) if r.mean_log_loss < b.mean_log_loss => *b = r,
            Some(_) => {}
            None => best.push(r),
        }
    }
    best.iter().map(|r| (r.true_kind, r.true_param)).collect()
}
