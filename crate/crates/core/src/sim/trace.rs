use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::SimError;
use crate::faults::{FaultPlan, FaultSpec, Outcome};
use crate::index::{Dei, InstantiationConfig, InvocationPayload, Signature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Invocation,
    FaultInjected,
    Completion,
    StreamOpened,
    IndexRewritten,
}

/// One trace record. `dei` is the full index; `key` is the identifier under
/// the run's instantiation config, which is what fault plans match on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpcEvent {
    pub sequence_number: u64,
    pub kind: EventKind,
    /// Sequence number of the invocation a completion or fault belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpc: Option<u64>,
    pub dei: Dei,
    pub key: Dei,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preliminary_dei: Option<Dei>,
    pub caller: String,
    pub callee: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Signature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<InvocationPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack_lines: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultSpec>,
    /// Invocations whose outcome (or delivery, for ancestors) the issuing
    /// task had observed when this event happened.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub causal_deps: Vec<u64>,
    #[serde(default)]
    pub display: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    /// Concurrent invocations with identical signature, stack and payload:
    /// their counts depend on the schedule.
    DetectedAmbiguity,
    /// Distinct full indexes that share one identifier under a degraded
    /// config.
    IdentifierCollision,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub message: String,
    pub deis: Vec<Dei>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryRequest {
    pub service: String,
    pub method: String,
    #[serde(default)]
    pub payload: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub entry: EntryRequest,
    pub plan: FaultPlan,
    pub config: InstantiationConfig,
    pub scheduler: String,
    pub seed: u64,
    pub events: Vec<RpcEvent>,
    pub outcome: Outcome,
    pub warnings: Vec<Warning>,
}

#[allow(clippy::large_enum_variant)]
#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header { entry: EntryRequest, plan: FaultPlan, config: InstantiationConfig, scheduler: String, seed: u64 },
    Event(RpcEvent),
    Result { outcome: Outcome, warnings: Vec<Warning> },
}

impl ExecutionTrace {
    pub fn invocations(&self) -> impl Iterator<Item = &RpcEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Invocation)
    }

    pub fn faults(&self) -> impl Iterator<Item = &RpcEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::FaultInjected)
    }

    /// Invocation sequence numbers that had a fault injected.
    pub fn faulted_rpcs(&self) -> std::collections::BTreeSet<u64> {
        self.faults().filter_map(|e| e.rpc).collect()
    }

    pub fn completion_of(&self, rpc: u64) -> Option<&RpcEvent> {
        self.events
            .iter()
            .find(|e| e.rpc == Some(rpc) && matches!(e.kind, EventKind::Completion | EventKind::FaultInjected))
    }

    /// Line-delimited JSON: a header, one line per event, then the result.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Line::Header {
            entry: self.entry.clone(),
            plan: self.plan.clone(),
            config: self.config,
            scheduler: self.scheduler.clone(),
            seed: self.seed,
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for e in &self.events {
            writeln!(w, "{}", serde_json::to_string(&Line::Event(e.clone()))?)?;
        }
        let result = Line::Result { outcome: self.outcome.clone(), warnings: self.warnings.clone() };
        writeln!(w, "{}", serde_json::to_string(&result)?)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<ExecutionTrace, SimError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut result = None;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::TraceFormat(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line =
                serde_json::from_str(&line).map_err(|e| SimError::TraceFormat(format!("line {}: {e}", n + 1)))?;
            match rec {
                Line::Header { entry, plan, config, scheduler, seed } => {
                    header = Some((entry, plan, config, scheduler, seed))
                }
                Line::Event(e) => events.push(e),
                Line::Result { outcome, warnings } => result = Some((outcome, warnings)),
            }
        }
        let (entry, plan, config, scheduler, seed) =
            header.ok_or_else(|| SimError::TraceFormat("missing header record".into()))?;
        let (outcome, warnings) = result.ok_or_else(|| SimError::TraceFormat("missing result record".into()))?;
        Ok(ExecutionTrace { entry, plan, config, scheduler, seed, events, outcome, warnings })
    }
}
