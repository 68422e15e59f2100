//! Service dependency graph recovered from execution indexes alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::index::{Dei, Digest};
use crate::sim::ExecutionTrace;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Witness {
    pub dei: Dei,
    pub display: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub witnesses: Vec<Witness>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

impl ServiceGraph {
    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }
}

fn service_of(sig: Digest, dei_entry: &crate::index::DeiEntry, names: &BTreeMap<Digest, String>) -> Option<String> {
    match dei_entry.invocation.detail() {
        Some(d) => Some(d.signature.module_name.clone()),
        None => names.get(&sig).cloned(),
    }
}

/// Edges X -> Y where some index ends in a call into X followed by a call
/// into Y. Indexes of length one are calls made by the entry service.
pub fn reconstruct_graph(traces: &[ExecutionTrace]) -> ServiceGraph {
    let mut names: BTreeMap<Digest, String> = BTreeMap::new();
    for t in traces {
        for ev in t.invocations() {
            if let (Some(last), Some(sig)) = (ev.dei.last(), &ev.signature) {
                names.insert(last.invocation.signature, sig.module_name.clone());
            }
        }
    }
    let mut nodes = BTreeSet::new();
    let mut edges: BTreeMap<(String, String), BTreeSet<Witness>> = BTreeMap::new();
    for t in traces {
        nodes.insert(t.entry.service.clone());
        for ev in t.invocations() {
            let entries = ev.dei.entries();
            let Some(last) = entries.last() else { continue };
            let Some(to) = service_of(last.invocation.signature, last, &names) else { continue };
            let from = match entries.len() {
                1 => Some(t.entry.service.clone()),
                n => service_of(entries[n - 2].invocation.signature, &entries[n - 2], &names),
            };
            let Some(from) = from else { continue };
            nodes.insert(from.clone());
            nodes.insert(to.clone());
            edges.entry((from, to)).or_default().insert(Witness { dei: ev.dei.clone(), display: ev.dei.to_string() });
        }
    }
    ServiceGraph {
        nodes: nodes.into_iter().collect(),
        edges: edges.into_iter().map(|((from, to), w)| Edge { from, to, witnesses: w.into_iter().collect() }).collect(),
    }
}
