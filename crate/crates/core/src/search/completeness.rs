//! Post-hoc check that a search report covers the fault space it found.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::causal::CausalView;
use super::reduction::infer_view;
use super::SearchReport;
use crate::faults::{FaultCatalog, FaultPlan, FaultSpec};
use crate::index::Dei;
use crate::sim::EventKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingBaseline,
    DuplicatePlan,
    UndiscoveredDei,
    /// A plan reachable from some execution was neither run nor pruned.
    MissingPlan,
    /// A discovered identifier never had one of its faults injected.
    UncoveredFault,
    /// A combination of injected faults seen in the reference report has
    /// no counterpart here.
    MissedCombination,
    BadPruning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<FaultPlan>,
}

fn violation(kind: ViolationKind, message: String, plan: Option<FaultPlan>) -> Violation {
    Violation { kind, message, plan }
}

fn describe(plan: &FaultPlan) -> String {
    let parts: Vec<String> = plan.iter().map(|(k, f)| format!("{k} -> {}", f.name)).collect();
    format!("{{{}}}", parts.join(", "))
}

/// Full indexes that had a fault injected, with the fault.
fn injected(report: &SearchReport) -> Vec<BTreeSet<(Dei, FaultSpec)>> {
    report
        .executions
        .iter()
        .map(|e| {
            e.trace
                .events
                .iter()
                .filter(|ev| ev.kind == EventKind::FaultInjected)
                .filter_map(|ev| Some((ev.dei.clone(), ev.fault.clone()?)))
                .collect()
        })
        .collect()
}

/// Checks a report against its own traces and, when given, against a
/// reference report of the same request (normally under the full config).
/// An empty result means no violation was found.
pub fn completeness_check(
    report: &SearchReport,
    catalog: &FaultCatalog,
    reference: Option<&SearchReport>,
) -> Vec<Violation> {
    let mut out = Vec::new();

    if !report.executions.iter().any(|e| e.plan.is_empty()) {
        out.push(violation(ViolationKind::MissingBaseline, "no fault-free execution".into(), None));
    }

    let mut covered: BTreeSet<FaultPlan> = BTreeSet::new();
    for plan in report.executions.iter().map(|e| &e.plan).chain(report.pruned.iter().map(|p| &p.plan)) {
        if !covered.insert(plan.clone()) {
            out.push(violation(
                ViolationKind::DuplicatePlan,
                format!("plan {} appears twice", describe(plan)),
                Some(plan.clone()),
            ));
        }
    }

    let discovered: BTreeMap<&Dei, _> = report.discovered_deis.iter().map(|d| (&d.dei, &d.signature)).collect();
    let history = report.history();
    for (plan, view) in &history {
        for n in &view.nodes {
            if !discovered.contains_key(&n.key) {
                out.push(violation(
                    ViolationKind::UndiscoveredDei,
                    format!("{} observed under {} but not reported", n.key, describe(plan)),
                    Some(plan.clone()),
                ));
            }
        }
    }

    let mut views: Vec<(FaultPlan, CausalView)> = history.clone();
    for p in &report.pruned {
        match infer_view(&p.pruning, &history) {
            Some(v) => views.push((p.plan.clone(), v)),
            None => out.push(violation(
                ViolationKind::BadPruning,
                format!("pruned plan {} cites missing witnesses", describe(&p.plan)),
                Some(p.plan.clone()),
            )),
        }
    }
    let mut missing = BTreeSet::new();
    for (plan, view) in &views {
        for child in view.extensions(plan, catalog, report.max_faults) {
            if !covered.contains(&child) && missing.insert(child.clone()) {
                out.push(violation(
                    ViolationKind::MissingPlan,
                    format!("{} follows from {} but was not explored", describe(&child), describe(plan)),
                    Some(child),
                ));
            }
        }
    }

    // Identifiers seen only under plans already at the fault bound can't
    // be failed.
    let extendable: BTreeSet<&Dei> = views
        .iter()
        .filter(|(p, _)| report.max_faults.map_or(true, |m| p.len() < m))
        .flat_map(|(_, v)| v.nodes.iter().map(|n| &n.key))
        .collect();
    for (key, sig) in discovered.iter().filter(|(k, _)| extendable.contains(*k)) {
        for fault in catalog.faults_for(sig) {
            if !covered.iter().any(|p| p.get(key) == Some(fault)) {
                out.push(violation(
                    ViolationKind::UncoveredFault,
                    format!("{key} never received {}", fault.name),
                    None,
                ));
            }
        }
    }

    if let Some(reference) = reference {
        let ours = injected(report);
        for (set, rec) in injected(reference).into_iter().zip(&reference.executions) {
            if !ours.contains(&set) {
                out.push(violation(
                    ViolationKind::MissedCombination,
                    format!("reference plan {} has no equivalent execution", describe(&rec.plan)),
                    Some(rec.plan.clone()),
                ));
            }
        }
    }
    out
}
