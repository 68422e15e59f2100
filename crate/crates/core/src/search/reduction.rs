//! Dynamic reduction by service encapsulation.
//!
//! A caller observes a nested failure only through the outcome of the
//! enclosing RPC. If history already shows what the enclosing RPC returns
//! under the candidate's nested faults, and also contains a run with the
//! candidate's other faults where the enclosing RPC returned exactly that,
//! the candidate adds nothing and is skipped. Its trace is inferred from
//! the two witnesses so the search can still extend it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::causal::{CausalView, Node};
use crate::faults::FaultPlan;
use crate::index::{Dei, InstantiationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pruning {
    /// The enclosing RPC whose outcome masks the nested faults.
    pub enclosing: Dei,
    /// Execution whose faults under `enclosing` equal the candidate's.
    pub fault_witness: usize,
    /// Execution with the candidate's other faults and the same outcome of
    /// `enclosing`.
    pub cover_witness: usize,
    pub reason: String,
}

fn split(plan: &FaultPlan, a: &Dei) -> (FaultPlan, FaultPlan) {
    let mut under = FaultPlan::empty();
    let mut rest = FaultPlan::empty();
    for (k, f) in plan.iter() {
        if a.is_strict_prefix_of(k) {
            under.insert(k.clone(), f.clone());
        } else {
            rest.insert(k.clone(), f.clone());
        }
    }
    (under, rest)
}

/// Returns why `candidate` is redundant given the executed `history`, or
/// `None` when equivalence can't be established. Only applies under the
/// full config: with masked components two requests to the enclosing RPC
/// may share an identifier and still differ.
pub fn dynamic_reduction(
    candidate: &FaultPlan,
    history: &[(FaultPlan, CausalView)],
    config: InstantiationConfig,
) -> Option<Pruning> {
    if candidate.len() < 2 || !config.is_full() {
        return None;
    }
    let mut ancestors: BTreeSet<Dei> = BTreeSet::new();
    for k in candidate.keys() {
        for len in 1..k.len() {
            ancestors.insert(k.prefix(len));
        }
    }
    for a in ancestors {
        if candidate.keys().any(|k| k.is_prefix_of(&a)) {
            continue;
        }
        let (nested, others) = split(candidate, &a);
        if nested.is_empty() || others.is_empty() {
            continue;
        }
        let Some((h1, o1)) = history.iter().enumerate().find_map(|(i, (plan, view))| {
            if split(plan, &a).0 != nested {
                return None;
            }
            let n = &view.nodes[view.unique(&a)?];
            (!n.faulted).then(|| n.outcome.clone()).flatten().map(|o| (i, o))
        }) else {
            continue;
        };
        let cover = history.iter().enumerate().find_map(|(j, (plan, view))| {
            let (under, rest) = split(&plan.without(&a), &a);
            if rest != others || under == nested {
                return None;
            }
            let n = &view.nodes[view.unique(&a)?];
            (n.outcome.as_ref() == Some(&o1)).then_some(j)
        });
        if let Some(h2) = cover {
            return Some(Pruning {
                reason: format!(
                    "faults under {a} surface at it as {o1:?}; execution #{h2} already covers the remaining faults with that outcome"
                ),
                enclosing: a,
                fault_witness: h1,
                cover_witness: h2,
            });
        }
    }
    None
}

/// Trace of the pruned candidate: the cover witness outside the enclosing
/// RPC, the fault witness inside it.
pub fn infer_view(p: &Pruning, history: &[(FaultPlan, CausalView)]) -> Option<CausalView> {
    let (_, inner) = history.get(p.fault_witness)?;
    let (_, outer) = history.get(p.cover_witness)?;
    let a = &p.enclosing;
    let a_in = inner.unique(a)?;
    let a_out = outer.unique(a)?;
    let inside = |n: &Node| a.is_strict_prefix_of(&n.key);

    let mut nodes = Vec::new();
    let mut outer_map = BTreeMap::new();
    for (i, n) in outer.nodes.iter().enumerate() {
        if !inside(n) {
            outer_map.insert(i, nodes.len());
            nodes.push(n.clone());
        }
    }
    let mut inner_map = BTreeMap::new();
    for (i, n) in inner.nodes.iter().enumerate() {
        if inside(n) {
            inner_map.insert(i, nodes.len());
            nodes.push(n.clone());
        }
    }
    let inside_ids: BTreeSet<usize> = inner_map.values().copied().collect();
    let a_new = outer_map[&a_out];
    let a_deps: BTreeSet<usize> = outer.nodes[a_out].deps.iter().filter_map(|d| outer_map.get(d).copied()).collect();
    for (&old, &new) in &outer_map {
        let mut deps: BTreeSet<usize> =
            outer.nodes[old].deps.iter().filter_map(|d| outer_map.get(d).copied()).collect();
        if old != a_out && outer.nodes[old].deps.contains(&a_out) {
            deps.extend(&inside_ids);
        }
        nodes[new].deps = deps;
    }
    for (&old, &new) in &inner_map {
        let mut deps: BTreeSet<usize> =
            inner.nodes[old].deps.iter().filter_map(|d| inner_map.get(d).copied()).collect();
        deps.extend(&a_deps);
        deps.insert(a_new);
        nodes[new].deps = deps;
    }
    nodes[a_new].faulted = false;
    nodes[a_new].outcome = inner.nodes[a_in].outcome.clone();
    Some(CausalView { nodes, outcome: outer.outcome.clone() })
}
