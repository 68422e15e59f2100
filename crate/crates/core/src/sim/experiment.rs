use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{run_shared, App, EntryRequest, RunConfig, SchedulerMode, SimError};
use crate::faults::FaultPlan;
use crate::index::{Dei, InstantiationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// RPCs were issued in task creation order.
    pub order_matched: bool,
    /// Full-index multiset equals the one from the first iteration.
    pub multiset_matches_first: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_rpcs: usize,
    pub pool_size: usize,
    pub iterations: usize,
    pub config: InstantiationConfig,
    pub order_matches: usize,
    pub match_fraction: f64,
    pub deterministic: bool,
    pub distinct_dei_multisets: usize,
    pub records: Vec<IterationRecord>,
}

/// Runs the bundled concurrent Hello/World app: `hello` spawns `n_rpcs`
/// tasks on a pool of `pool_size` threads, each calling `world` with its
/// creation number. Reports how often invocation order matched creation
/// order, and whether the index assignment under `config` was the same in
/// every iteration.
pub fn run_nondeterminism_experiment(
    n_rpcs: usize,
    pool_size: usize,
    iterations: usize,
    config: InstantiationConfig,
) -> Result<ExperimentReport, SimError> {
    let corpus = crate::corpus::bundled().map_err(|e| SimError::Internal(e.to_string()))?;
    let entry = corpus
        .get("hello-world-concurrency")
        .ok_or_else(|| SimError::Internal("bundled corpus lacks hello-world-concurrency".into()))?;
    run_experiment_with(&entry.app, &entry.entry, n_rpcs, pool_size, iterations, config)
}

pub(crate) fn run_experiment_with(
    app: &App,
    template: &EntryRequest,
    n_rpcs: usize,
    pool_size: usize,
    iterations: usize,
    config: InstantiationConfig,
) -> Result<ExperimentReport, SimError> {
    let app = std::sync::Arc::new(app.clone());
    let mut payload = Map::new();
    payload.insert("n".into(), Value::from(n_rpcs as u64));
    let entry = EntryRequest { payload, ..template.clone() };
    let run = RunConfig::default().with_config(config).with_scheduler(SchedulerMode::Threads { pool_size });
    let mut records = Vec::with_capacity(iterations);
    let mut multisets: BTreeSet<Vec<Dei>> = BTreeSet::new();
    let mut first: Option<Vec<Dei>> = None;
    for iteration in 0..iterations {
        let trace = run_shared(&app, &entry, &FaultPlan::empty(), &run)?;
        let mut invs: Vec<_> = trace.invocations().collect();
        invs.sort_by_key(|e| e.sequence_number);
        let ids: Vec<Option<i64>> = invs
            .iter()
            .map(|e| e.payload.as_ref().and_then(|p| p.arguments.first()).and_then(|a| a.value.as_i64()))
            .collect();
        let order_matched = ids.len() == n_rpcs && ids.iter().enumerate().all(|(i, id)| *id == Some(i as i64));
        let mut keys: Vec<Dei> = invs.iter().map(|e| e.key.clone()).collect();
        keys.sort();
        let multiset_matches_first = match &first {
            None => {
                first = Some(keys.clone());
                true
            }
            Some(f) => *f == keys,
        };
        multisets.insert(keys);
        records.push(IterationRecord { iteration, order_matched, multiset_matches_first });
    }
    let order_matches = records.iter().filter(|r| r.order_matched).count();
    Ok(ExperimentReport {
        n_rpcs,
        pool_size,
        iterations,
        config,
        order_matches,
        match_fraction: if iterations == 0 { 0.0 } else { order_matches as f64 / iterations as f64 },
        deterministic: multisets.len() <= 1,
        distinct_dei_multisets: multisets.len(),
        records,
    })
}
