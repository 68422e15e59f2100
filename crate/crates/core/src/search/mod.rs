//! Fault-space exploration over distributed execution indexes.

mod causal;
mod completeness;
mod graph;
mod reduction;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use causal::{CausalView, Node};
pub use completeness::{completeness_check, Violation, ViolationKind};
pub use graph::{reconstruct_graph, Edge, ServiceGraph, Witness};
pub use reduction::{dynamic_reduction, infer_view, Pruning};

use crate::faults::{FaultCatalog, FaultPlan, Outcome};
use crate::index::{Dei, InstantiationConfig, Signature};
use crate::sim::{run_shared, App, EntryRequest, ExecutionTrace, RunConfig, SimError, Warning};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("execution budget of {budget} exhausted with {pending} plans still queued")]
    BudgetExhausted { budget: usize, pending: usize, partial: Box<SearchReport> },
    #[error("no faults cataloged for {0}")]
    MissingCatalog(String),
}

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub run: RunConfig,
    pub reduction: bool,
    pub max_faults: Option<usize>,
    /// Maximum number of executions before giving up.
    pub budget: usize,
    /// Name recorded in the report.
    pub label: String,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            run: RunConfig::default(),
            reduction: false,
            max_faults: None,
            budget: 10_000,
            label: String::new(),
        }
    }
}

impl SearchOptions {
    pub fn with_config(mut self, config: InstantiationConfig) -> Self {
        self.run.config = config;
        self
    }

    pub fn with_reduction(mut self, on: bool) -> Self {
        self.reduction = on;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub plan: FaultPlan,
    pub outcome: Outcome,
    pub trace: ExecutionTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunedPlan {
    pub plan: FaultPlan,
    pub pruning: Pruning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredDei {
    pub dei: Dei,
    pub display: String,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub entry: String,
    pub config: InstantiationConfig,
    pub reduction: bool,
    pub max_faults: Option<usize>,
    pub total_executed: usize,
    pub discovered_deis: Vec<DiscoveredDei>,
    pub executions: Vec<ExecutionRecord>,
    pub pruned: Vec<PrunedPlan>,
    pub warnings: Vec<Warning>,
}

impl SearchReport {
    pub fn outcomes(&self) -> BTreeSet<Outcome> {
        self.executions.iter().map(|e| e.outcome.clone()).collect()
    }

    /// Views of the executed plans, in execution order.
    pub fn history(&self) -> Vec<(FaultPlan, CausalView)> {
        self.executions.iter().map(|e| (e.plan.clone(), CausalView::from_trace(&e.trace))).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Frontier {
    levels: BTreeMap<usize, VecDeque<FaultPlan>>,
    seen: HashSet<FaultPlan>,
}

impl Frontier {
    fn push(&mut self, plan: FaultPlan) {
        if self.seen.insert(plan.clone()) {
            self.levels.entry(plan.len()).or_default().push_back(plan);
        }
    }

    fn pop(&mut self) -> Option<FaultPlan> {
        let mut level = self.levels.first_entry()?;
        let plan = level.get_mut().pop_front();
        if level.get().is_empty() {
            level.remove();
        }
        plan
    }

    fn len(&self) -> usize {
        self.levels.values().map(VecDeque::len).sum()
    }
}

/// Breadth-first search by plan size. Each execution's trace yields the
/// next plans; see [`CausalView::extensions`].
pub fn explore(
    app: &App,
    entry: &EntryRequest,
    catalog: &FaultCatalog,
    options: &SearchOptions,
) -> Result<SearchReport, SearchError> {
    explore_shared(&Arc::new(app.clone()), entry, catalog, options)
}

pub fn explore_shared(
    app: &Arc<App>,
    entry: &EntryRequest,
    catalog: &FaultCatalog,
    options: &SearchOptions,
) -> Result<SearchReport, SearchError> {
    let config = options.run.config;
    let mut report = SearchReport {
        entry: options.label.clone(),
        config,
        reduction: options.reduction,
        max_faults: options.max_faults,
        total_executed: 0,
        discovered_deis: Vec::new(),
        executions: Vec::new(),
        pruned: Vec::new(),
        warnings: Vec::new(),
    };
    let mut discovered: BTreeMap<Dei, DiscoveredDei> = BTreeMap::new();
    let mut history: Vec<(FaultPlan, CausalView)> = Vec::new();
    let mut frontier = Frontier { levels: BTreeMap::new(), seen: HashSet::new() };
    frontier.push(FaultPlan::empty());

    while let Some(plan) = frontier.pop() {
        if options.reduction {
            if let Some(pruning) = dynamic_reduction(&plan, &history, config) {
                let view = infer_view(&pruning, &history).expect("witnesses come from history");
                for child in view.extensions(&plan, catalog, options.max_faults) {
                    frontier.push(child);
                }
                report.pruned.push(PrunedPlan { plan, pruning });
                continue;
            }
        }
        if report.total_executed >= options.budget {
            let pending = frontier.len() + 1;
            report.discovered_deis = discovered.into_values().collect();
            return Err(SearchError::BudgetExhausted { budget: options.budget, pending, partial: Box::new(report) });
        }
        let trace = run_shared(app, entry, &plan, &options.run)?;
        report.total_executed += 1;
        let view = CausalView::from_trace(&trace);
        for (ev, node) in trace.invocations().zip(&view.nodes) {
            let sig = node.signature.clone().expect("invocation events carry signatures");
            if catalog.faults_for(&sig).is_empty() {
                return Err(SearchError::MissingCatalog(sig.qualified_name()));
            }
            discovered.entry(node.key.clone()).or_insert_with(|| DiscoveredDei {
                dei: node.key.clone(),
                display: ev.display.clone(),
                signature: sig,
            });
        }
        for w in &trace.warnings {
            if !report.warnings.contains(w) {
                report.warnings.push(w.clone());
            }
        }
        for child in view.extensions(&plan, catalog, options.max_faults) {
            frontier.push(child);
        }
        report.executions.push(ExecutionRecord { plan: plan.clone(), outcome: trace.outcome.clone(), trace });
        history.push((plan, view));
    }
    report.discovered_deis = discovered.into_values().collect();
    Ok(report)
}

/// Number of executions without reduction, per config.
pub fn execution_counts(
    app: &Arc<App>,
    entry: &EntryRequest,
    catalog: &FaultCatalog,
    configs: &[InstantiationConfig],
    base: &SearchOptions,
) -> Result<BTreeMap<String, usize>, SearchError> {
    let mut out = BTreeMap::new();
    for &c in configs {
        let opts = base.clone().with_config(c).with_reduction(false);
        out.insert(c.to_string(), explore_shared(app, entry, catalog, &opts)?.total_executed);
    }
    Ok(out)
}
