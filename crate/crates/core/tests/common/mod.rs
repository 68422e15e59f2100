#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::Value;

use dexi::corpus::{parse_entry, CorpusEntry};
use dexi::faults::{FaultCatalog, FaultPlan, FaultSpec};
use dexi::index::{
    CallStackDigest, Dei, DenyList, Frame, InstantiationConfig, InvocationPayload, InvocationSignature, Param,
    Signature,
};
use dexi::sim::{run_shared, App, EntryRequest, EventKind, ExecutionTrace, RunConfig};

/// A calls B, C and D, tolerating each failure; B calls E and lets its
/// failure propagate.
pub const FIGURE_1: &str = r#"{
  "name": "figure-1",
  "description": "fan-out with one nested dependency",
  "app": {"services": [
    {"name": "A", "endpoints": {"handle": {"params": [], "body": [
      {"let": {"var": "out", "value": {"list": []}}},
      {"try": {"body": [{"call": {"service": "B", "method": "get", "args": {}, "line": 3, "bind": "b"}},
                        {"append": {"list": "out", "value": {"var": "b"}}}], "catch": []}},
      {"try": {"body": [{"call": {"service": "C", "method": "get", "args": {}, "line": 4, "bind": "c"}},
                        {"append": {"list": "out", "value": {"var": "c"}}}], "catch": []}},
      {"try": {"body": [{"call": {"service": "D", "method": "get", "args": {}, "line": 5, "bind": "d"}},
                        {"append": {"list": "out", "value": {"var": "d"}}}], "catch": []}},
      {"return": {"join": {"list": {"var": "out"}, "sep": ","}}}
    ]}}},
    {"name": "B", "endpoints": {"get": {"params": [], "body": [
      {"call": {"service": "E", "method": "get", "args": {}, "line": 12, "bind": "e"}},
      {"return": {"concat": [{"lit": "b+"}, {"var": "e"}]}}
    ]}}},
    {"name": "C", "endpoints": {"get": {"params": [], "body": [{"return": {"lit": "c"}}]}}},
    {"name": "D", "endpoints": {"get": {"params": [], "body": [{"return": {"lit": "d"}}]}}},
    {"name": "E", "endpoints": {"get": {"params": [], "body": [{"return": {"lit": "e"}}]}}}
  ]},
  "entry": {"service": "A", "method": "handle", "payload": {}},
  "expected_counts": {}
}"#;

pub fn figure_1() -> CorpusEntry {
    parse_entry(FIGURE_1, "figure-1").expect("fixture parses")
}

/// Per-invocation identifiers and whether each was failed, order-free.
pub type Canonical = Vec<(String, bool)>;

pub fn canonical(trace: &ExecutionTrace) -> Canonical {
    let faulted = trace.faulted_rpcs();
    let mut v: Canonical = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Invocation)
        .map(|e| (e.key.encode(), faulted.contains(&e.sequence_number)))
        .collect();
    v.sort();
    v
}

/// Runs every fault assignment over every identifier seen so far until no
/// run reveals a new identifier. Returns the distinct executions observed.
pub fn brute_force(
    app: &App,
    entry: &EntryRequest,
    catalog: &FaultCatalog,
    config: InstantiationConfig,
) -> BTreeSet<Canonical> {
    let app = Arc::new(app.clone());
    let run = RunConfig::default().with_config(config);
    let mut known: BTreeMap<Dei, Vec<FaultSpec>> = BTreeMap::new();
    let mut done: BTreeSet<FaultPlan> = BTreeSet::new();
    let mut seen = BTreeSet::new();
    loop {
        let keys: Vec<(Dei, Vec<FaultSpec>)> = known.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut plans = vec![FaultPlan::empty()];
        for (k, faults) in &keys {
            let mut next = Vec::new();
            for p in &plans {
                next.push(p.clone());
                for f in faults {
                    next.push(p.with(k.clone(), f.clone()));
                }
            }
            plans = next;
        }
        let before = known.len();
        for plan in plans {
            if !done.insert(plan.clone()) {
                continue;
            }
            let trace = run_shared(&app, entry, &plan, &run).expect("execution succeeds");
            for ev in trace.invocations() {
                let sig = ev.signature.as_ref().expect("signature recorded");
                known.entry(ev.key.clone()).or_insert_with(|| catalog.faults_for(sig).to_vec());
            }
            seen.insert(canonical(&trace));
        }
        if known.len() == before {
            return seen;
        }
    }
}

pub fn arb_signature() -> impl Strategy<Value = Signature> {
    (
        prop::sample::select(vec!["A", "B", "users", "bookings"]),
        prop::sample::select(vec!["echo", "get", "/"]),
        prop::collection::vec(prop::sample::select(vec!["s", "n", "id"]), 0..3),
    )
        .prop_map(|(m, f, ps)| {
            let params = ps.iter().enumerate().map(|(i, p)| Param::new(format!("{p}{i}"), "String")).collect();
            Signature::new(m, f, params).unwrap()
        })
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        (-1000i64..1000).prop_map(Value::from),
        "[a-zA-Z ,:|\\[\\]]{0,8}".prop_map(Value::from),
    ]
}

pub fn arb_invocation() -> impl Strategy<Value = InvocationSignature> {
    (arb_signature(), prop::collection::vec(arb_value(), 3), prop::collection::vec(1u32..40, 0..4)).prop_map(
        |(sig, vals, lines)| {
            let payload = InvocationPayload::new(sig.parameters.iter().map(|p| p.name.clone()).zip(vals));
            let frames: Vec<Frame> = lines.iter().map(|l| Frame::new(format!("a.svc:{l}"), "f")).collect();
            let stack = CallStackDigest::capture(&frames, &DenyList::default());
            InvocationSignature::new(sig, payload, stack).unwrap()
        },
    )
}

pub fn arb_dei() -> impl Strategy<Value = Dei> {
    prop::collection::vec((arb_invocation(), 1u32..6), 0..5)
        .prop_map(|entries| entries.into_iter().fold(Dei::root(), |d, (inv, c)| d.extend(inv, c).unwrap()))
}

pub fn arb_config() -> impl Strategy<Value = InstantiationConfig> {
    (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(p, s, c, path)| {
        InstantiationConfig::FULL.with_payload(p).with_callstack(s).with_count(c).with_path(path)
    })
}

pub mod laws {
    use std::collections::HashMap;

    use proptest::prelude::*;
    use proptest::test_runner::TestCaseError;

    use dexi::index::{decode, encode, CounterState, Dei, InstantiationConfig, InvocationSignature};

    pub fn round_trip(d: &Dei) -> Result<(), TestCaseError> {
        let text = encode(d);
        let back = decode(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, d);
        prop_assert_eq!(encode(&back), text);
        Ok(())
    }

    pub fn prefix(d: &Dei, cut: usize, more: &InvocationSignature, count: u32) -> Result<(), TestCaseError> {
        let p = d.prefix(cut);
        prop_assert!(d.is_prefix_of(d));
        prop_assert!(!d.is_strict_prefix_of(d));
        prop_assert!(p.is_prefix_of(d));
        prop_assert!(Dei::root().is_prefix_of(d));
        let longer = d.extend(more.clone(), count).unwrap();
        prop_assert!(d.is_strict_prefix_of(&longer));
        prop_assert!(p.is_prefix_of(&longer));
        prop_assert!(!longer.is_prefix_of(d));
        prop_assert_eq!(longer.parent(), Some(d.clone()));
        if d.is_prefix_of(&p) {
            prop_assert_eq!(&p, d);
        }
        Ok(())
    }

    pub fn projection(d: &Dei, a: InstantiationConfig, b: InstantiationConfig) -> Result<(), TestCaseError> {
        let once = a.project(d);
        prop_assert_eq!(a.project(&once), once.clone());
        prop_assert_eq!(InstantiationConfig::FULL.project(d), d.clone());
        prop_assert!(once.len() <= d.len());
        // Masking more only merges identifiers.
        let both = InstantiationConfig {
            include_payload: a.include_payload && b.include_payload,
            include_callstack: a.include_callstack && b.include_callstack,
            include_count: a.include_count && b.include_count,
            include_path: a.include_path && b.include_path,
        };
        prop_assert_eq!(both.project(&once), both.project(d));
        Ok(())
    }

    pub fn counter(calls: &[(usize, usize)], paths: &[Dei], invs: &[InvocationSignature]) -> Result<(), TestCaseError> {
        let state = CounterState::new();
        let mut expect: HashMap<(Dei, InvocationSignature), u32> = HashMap::new();
        for &(p, i) in calls {
            let (path, inv) = (&paths[p % paths.len()], &invs[i % invs.len()]);
            let want = expect.entry((path.clone(), inv.clone())).or_insert(0);
            *want += 1;
            prop_assert_eq!(state.counter_next(path, inv).get(), *want);
        }
        state.reset();
        if let Some(&(p, i)) = calls.first() {
            prop_assert_eq!(state.counter_next(&paths[p % paths.len()], &invs[i % invs.len()]).get(), 1);
        }
        Ok(())
    }
}
