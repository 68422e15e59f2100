use std::collections::{BTreeMap, BTreeSet};

use crate::faults::{FaultCatalog, FaultPlan, Outcome};
use crate::index::{Dei, Signature};
use crate::sim::{EventKind, ExecutionTrace};

/// One RPC invocation as seen by the search.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub key: Dei,
    pub dei: Dei,
    pub signature: Option<Signature>,
    pub faulted: bool,
    pub outcome: Option<Outcome>,
    /// Indexes of nodes that causally precede this invocation.
    pub deps: BTreeSet<usize>,
}

/// Invocations of one (executed or inferred) execution with their causal
/// order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CausalView {
    pub nodes: Vec<Node>,
    pub outcome: Option<Outcome>,
}

impl CausalView {
    pub fn from_trace(trace: &ExecutionTrace) -> CausalView {
        let mut index_of = BTreeMap::new();
        let mut nodes = Vec::new();
        for ev in trace.invocations() {
            index_of.insert(ev.sequence_number, nodes.len());
            nodes.push(Node {
                key: ev.key.clone(),
                dei: ev.dei.clone(),
                signature: ev.signature.clone(),
                faulted: false,
                outcome: None,
                deps: ev.causal_deps.iter().filter_map(|s| index_of.get(s).copied()).collect(),
            });
        }
        for ev in &trace.events {
            if !matches!(ev.kind, EventKind::Completion | EventKind::FaultInjected) {
                continue;
            }
            if let Some(&i) = ev.rpc.and_then(|r| index_of.get(&r)) {
                nodes[i].faulted |= ev.kind == EventKind::FaultInjected;
                nodes[i].outcome = ev.outcome.clone();
            }
        }
        CausalView { nodes, outcome: Some(trace.outcome.clone()) }
    }

    pub fn faulted(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.faulted).map(|(i, _)| i)
    }

    /// Index of the only node with `key`, if exactly one exists.
    pub fn unique(&self, key: &Dei) -> Option<usize> {
        let mut it = self.nodes.iter().enumerate().filter(|(_, n)| &n.key == key).map(|(i, _)| i);
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }

    /// Plans that add one fault to `plan` on an invocation that is not
    /// faulted and does not causally precede any injected fault. Adding a
    /// fault that precedes an injected one would change what leads up to
    /// that fault, so the combination is reached from another plan or not
    /// at all.
    pub fn extensions(&self, plan: &FaultPlan, catalog: &FaultCatalog, max_faults: Option<usize>) -> Vec<FaultPlan> {
        if max_faults.is_some_and(|m| plan.len() >= m) {
            return Vec::new();
        }
        let faulted: Vec<usize> = self.faulted().collect();
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.faulted || plan.contains(&n.key) || !seen.insert(n.key.clone()) {
                continue;
            }
            if faulted.iter().any(|&f| self.nodes[f].deps.contains(&i)) {
                continue;
            }
            let Some(sig) = &n.signature else { continue };
            for fault in catalog.faults_for(sig) {
                out.push(plan.with(n.key.clone(), fault.clone()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::bundled;
    use crate::faults::FaultSpec;
    use crate::sim::{run_execution, RunConfig};

    #[test]
    fn no_extension_precedes_an_injected_fault() {
        let c = bundled().unwrap();
        let e = c.get("cinema-3").unwrap();
        let base = run_execution(&e.app, &e.entry, &FaultPlan::empty(), &RunConfig::default()).unwrap();
        let view = CausalView::from_trace(&base);
        assert_eq!(view.extensions(&FaultPlan::empty(), &e.catalog, None).len(), view.nodes.len());

        // Failing the first movie lookup: the booking call before it stays unfaulted.
        let m1 = view.nodes.iter().find(|n| n.signature.as_ref().unwrap().module_name == "movies").unwrap();
        let plan = FaultPlan::empty().with(m1.key.clone(), FaultSpec::connection_error());
        let t = run_execution(&e.app, &e.entry, &plan, &RunConfig::default()).unwrap();
        let v = CausalView::from_trace(&t);
        let kids = v.extensions(&plan, &e.catalog, None);
        assert!(kids.iter().all(|k| k.keys().all(|d| d
            .last()
            .unwrap()
            .invocation
            .detail()
            .unwrap()
            .signature
            .module_name
            == "movies")));
        assert!(v.extensions(&plan, &e.catalog, Some(1)).is_empty());
    }

    #[test]
    fn unique_requires_a_single_node() {
        let c = bundled().unwrap();
        let e = c.get("figure-2").unwrap();
        let run = RunConfig::default().with_config("no-stack".parse().unwrap());
        let t = run_execution(&e.app, &e.entry, &FaultPlan::empty(), &run).unwrap();
        let v = CausalView::from_trace(&t);
        assert_eq!(v.nodes.len(), 2);
        assert_ne!(v.nodes[0].key, v.nodes[1].key);
        assert_eq!(v.unique(&v.nodes[0].key), Some(0));
    }
}
