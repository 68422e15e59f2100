//! Deterministic microservice simulator: declarative service programs
//! executed with index propagation, fault injection at call sites, and
//! line-delimited JSON traces.

mod engine;
pub mod experiment;
mod program;
mod sched;
mod trace;
mod value;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use engine::KEY_HEADER;
pub use experiment::{run_nondeterminism_experiment, ExperimentReport, IterationRecord};
pub use program::{App, AppSpec, CallStmt, Expr, Function, HelperStmt, SendStmt, ServiceProgram, Stmt};
pub use trace::{EntryRequest, EventKind, ExecutionTrace, RpcEvent, Warning, WarningKind};

use crate::faults::FaultPlan;
use crate::index::{decode, Dei, DenyList, InstantiationConfig, Metadata, INDEX_HEADER, PRELIMINARY_HEADER};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(String),
    #[error("invalid entry request: {0}")]
    InvalidEntry(String),
    #[error("argument error: {0}")]
    Arguments(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("step budget of {0} exceeded")]
    StepBudgetExceeded(u64),
    #[error("call depth exceeds {0}")]
    DepthExceeded(usize),
    #[error("malformed index metadata: {0}")]
    Metadata(String),
    #[error("send on a closed stream")]
    StreamClosed,
    #[error("stream finalized with {0} unacknowledged sends")]
    OutstandingSends(usize),
    #[error("no task can make progress")]
    Deadlock,
    #[error("task panicked: {0}")]
    TaskPanicked(String),
    #[error("stream rewrite failed: {0}")]
    Rewrite(String),
    #[error("malformed trace: {0}")]
    TraceFormat(String),
    #[error("execution aborted")]
    Aborted,
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulerMode {
    /// One task runs at a time; the seed picks the interleaving.
    Virtual,
    /// Spawned blocks run on a pool of real threads.
    Threads { pool_size: usize },
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub config: InstantiationConfig,
    pub scheduler: SchedulerMode,
    pub seed: u64,
    pub step_budget: u64,
    pub deny_list: DenyList,
    /// Time a task blocks in the client stub before its RPC is indexed,
    /// standing in for channel I/O. Only used with real threads, where it
    /// hands the CPU to other workers.
    pub stub_latency: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config: InstantiationConfig::FULL,
            scheduler: SchedulerMode::Virtual,
            seed: 0,
            step_budget: 200_000,
            deny_list: DenyList::default(),
            stub_latency: Duration::from_micros(20),
        }
    }
}

impl RunConfig {
    pub fn with_config(mut self, config: InstantiationConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scheduler(mut self, scheduler: SchedulerMode) -> Self {
        self.scheduler = scheduler;
        self
    }
}

/// Index context recovered from incoming request metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncomingContext {
    pub path: Dei,
    /// Set for stream messages: `path` is the stream's preliminary index
    /// and the receiver assigns the per-message count.
    pub preliminary: bool,
}

/// Reads the index header. A request without one is an entry request.
pub fn propagate_context(md: &Metadata) -> Result<IncomingContext, SimError> {
    let path = match md.get(INDEX_HEADER) {
        None => Dei::root(),
        Some(t) => decode(t).map_err(|e| SimError::Metadata(e.to_string()))?,
    };
    let preliminary = match md.get(PRELIMINARY_HEADER) {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => return Err(SimError::Metadata(format!("bad {PRELIMINARY_HEADER} value `{other}`"))),
    };
    Ok(IncomingContext { path, preliminary })
}

/// Runs one test execution of `entry` with `plan` injected.
pub fn run_execution(
    app: &App,
    entry: &EntryRequest,
    plan: &FaultPlan,
    run: &RunConfig,
) -> Result<ExecutionTrace, SimError> {
    engine::Exec::run(Arc::new(app.clone()), entry, plan, run)
}

/// Same as [`run_execution`] for callers that already share the app.
pub fn run_shared(
    app: &Arc<App>,
    entry: &EntryRequest,
    plan: &FaultPlan,
    run: &RunConfig,
) -> Result<ExecutionTrace, SimError> {
    engine::Exec::run(Arc::clone(app), entry, plan, run)
}
