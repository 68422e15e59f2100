use std::collections::BTreeSet;

use serde_json::{json, Map, Value};

use dexi::corpus::bundled;
use dexi::faults::{FaultPlan, FaultSpec, Outcome};
use dexi::index::{encode, Metadata, INDEX_HEADER, PRELIMINARY_HEADER};
use dexi::sim::{
    propagate_context, run_execution, App, EntryRequest, EventKind, ExecutionTrace, RunConfig, SchedulerMode, SimError,
    WarningKind,
};

fn app(v: Value) -> App {
    App::from_json(&v.to_string()).unwrap()
}

fn entry(service: &str, method: &str, payload: Value) -> EntryRequest {
    let payload: Map<String, Value> = serde_json::from_value(payload).unwrap();
    EntryRequest { service: service.into(), method: method.into(), payload }
}

fn baseline(app: &App, e: &EntryRequest) -> ExecutionTrace {
    run_execution(app, e, &FaultPlan::empty(), &RunConfig::default()).unwrap()
}

fn sorted_deis(t: &ExecutionTrace) -> Vec<String> {
    let mut v: Vec<String> = t.invocations().map(|e| e.dei.encode()).collect();
    v.sort();
    v
}

fn echo_service() -> Value {
    json!({"name": "B", "endpoints": {"echo": {"params": [{"name": "s", "type": "String"}], "body": [{"return": {"var": "s"}}]}}})
}

#[test]
fn helper_call_sites_separate_identical_rpcs() {
    let c = bundled().unwrap();
    let e = c.get("figure-2").unwrap();
    let t = baseline(&e.app, &e.entry);
    let stacks: Vec<Vec<u32>> = t.invocations().map(|ev| ev.stack_lines.clone().unwrap()).collect();
    assert_eq!(stacks, [vec![3, 10], vec![4, 10]]);
    assert!(t.invocations().all(|ev| ev.dei.last().unwrap().count.get() == 1));
}

#[test]
fn nested_paths_distinguish_the_same_site() {
    let c = bundled().unwrap();
    let e = c.get("figure-5").unwrap();
    let report = dexi::search::explore(&e.app, &e.entry, &e.catalog, &Default::default()).unwrap();
    let nested: BTreeSet<String> = report
        .executions
        .iter()
        .flat_map(|x| {
            x.trace.invocations().filter(|ev| ev.dei.len() == 2).map(|ev| ev.dei.to_string()).collect::<Vec<_>>()
        })
        .collect();
    assert!(nested.contains("[B.echo(World)^9|1 :: C.echo(World)^29|1]"), "{nested:?}");
    assert!(nested.contains("[B.echo(World)^19|1 :: C.echo(World)^29|1]"), "{nested:?}");
}

#[test]
fn callee_sees_the_caller_index() {
    let c = bundled().unwrap();
    for e in c.entries() {
        let t = baseline(&e.app, &e.entry);
        let invs: Vec<_> = t.invocations().collect();
        for ev in &invs {
            let parent = ev.dei.parent().unwrap();
            if parent.is_empty() {
                assert_eq!(ev.caller, e.entry.service, "{}", e.name);
            } else {
                let p = invs
                    .iter()
                    .find(|p| p.dei == parent)
                    .unwrap_or_else(|| panic!("{}: no parent for {}", e.name, ev.dei));
                assert_eq!(p.callee, ev.caller);
                assert!(ev.causal_deps.contains(&p.sequence_number));
            }
        }
    }
}

#[test]
fn faults_hit_exactly_the_planned_invocation() {
    let c = bundled().unwrap();
    let e = c.get("cinema-10").unwrap();
    let base = baseline(&e.app, &e.entry);
    for target in base.invocations() {
        let plan = FaultPlan::empty().with(target.key.clone(), FaultSpec::connection_error());
        let t = run_execution(&e.app, &e.entry, &plan, &RunConfig::default()).unwrap();
        let hit: Vec<_> = t.faults().map(|f| f.dei.clone()).collect();
        assert_eq!(hit, std::slice::from_ref(&target.dei));
        for ev in t.invocations().filter(|ev| ev.dei != target.dei) {
            assert!(t.completion_of(ev.sequence_number).unwrap().kind == EventKind::Completion);
        }
    }
}

#[test]
fn response_faults_return_a_value() {
    let a = app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": [
            {"call": {"service": "B", "method": "echo", "args": {"s": {"lit": "x"}}, "line": 2, "bind": "r"}},
            {"return": {"var": "r"}}
        ]}}},
        echo_service()
    ]}));
    let e = entry("A", "go", json!({}));
    let key = baseline(&a, &e).invocations().next().unwrap().key.clone();
    let spec = FaultSpec { name: "unavailable".into(), response: Some(json!({"code": 503})) };
    let t = run_execution(&a, &e, &FaultPlan::empty().with(key, spec), &RunConfig::default()).unwrap();
    assert_eq!(t.outcome, Outcome::Response(json!({"code": 503})));
}

#[test]
fn uncaught_errors_keep_their_name() {
    let c = bundled().unwrap();
    let e = c.get("cinema-10").unwrap();
    let base = baseline(&e.app, &e.entry);
    let nested = base.invocations().find(|ev| ev.dei.len() == 2).unwrap();
    let t = run_execution(
        &e.app,
        &e.entry,
        &FaultPlan::empty().with(nested.key.clone(), FaultSpec::connection_error()),
        &RunConfig::default(),
    )
    .unwrap();
    let parent = t.invocations().find(|ev| ev.dei == nested.dei.parent().unwrap()).unwrap();
    assert_eq!(
        t.completion_of(parent.sequence_number).unwrap().outcome,
        Some(Outcome::Error("connection-error".into()))
    );
}

#[test]
fn stream_messages_are_rewritten_to_final_indexes() {
    let c = bundled().unwrap();
    let e = c.get("figure-6-stream").unwrap();
    let t = baseline(&e.app, &e.entry);
    let rewrites: Vec<_> = t.events.iter().filter(|ev| ev.kind == EventKind::IndexRewritten).collect();
    assert_eq!(rewrites.len(), 2);
    let prelim_counts: BTreeSet<u32> =
        rewrites.iter().map(|r| r.preliminary_dei.as_ref().unwrap().last().unwrap().count.get()).collect();
    assert_eq!(prelim_counts.len(), 2);
    let finals: BTreeSet<String> = rewrites.iter().map(|r| r.dei.to_string()).collect();
    assert_eq!(finals, BTreeSet::from(["[B./(Hello)^6|1]".to_string(), "[B./(World)^6|1]".to_string()]));
    let opened = t.events.iter().find(|ev| ev.kind == EventKind::StreamOpened).unwrap();
    assert!(opened.dei.is_empty());
}

fn relay_app(streams: usize) -> App {
    // A opens `streams` streams to B from one site and sends one message
    // on each; B forwards every message to C.
    let mut body = vec![json!({"let": {"var": "rs", "value": {"list": []}}})];
    body.push(json!({"for": {"var": "i", "in": {"range": {"lit": streams}}, "body": [
        {"open_stream": {"service": "B", "method": "relay", "line": 4, "bind": "st"}},
        {"send": {"stream": {"var": "st"}, "args": {"s": {"lit": "ping"}}, "line": 5, "bind": "r"}},
        {"close_stream": {"stream": {"var": "st"}}},
        {"append": {"list": "rs", "value": {"var": "r"}}}
    ]}}));
    body.push(json!({"return": {"var": "rs"}}));
    app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": body}}},
        {"name": "B", "endpoints": {"relay": {"params": [{"name": "s", "type": "String"}], "body": [
            {"call": {"service": "C", "method": "echo", "args": {"s": {"var": "s"}}, "line": 9, "bind": "r"}},
            {"return": {"var": "r"}}
        ]}}},
        {"name": "C", "endpoints": {"echo": {"params": [{"name": "s", "type": "String"}], "body": [{"return": {"var": "s"}}]}}}
    ]}))
}

#[test]
fn downstream_calls_of_stream_messages_are_rewritten() {
    let a = relay_app(1);
    let t = baseline(&a, &entry("A", "go", json!({})));
    let prelims: Vec<_> = t.events.iter().filter_map(|ev| ev.preliminary_dei.clone()).collect();
    assert_eq!(prelims.len(), 1);
    let send = t.invocations().find(|ev| ev.dei.len() == 1).unwrap();
    let nested = t.invocations().find(|ev| ev.dei.len() == 2).unwrap();
    assert_eq!(nested.dei.parent().unwrap(), send.dei);
    for ev in t.events.iter().filter(|ev| ev.kind != EventKind::IndexRewritten) {
        assert!(ev.preliminary_dei.is_none());
        assert!(!prelims.iter().any(|p| p.is_prefix_of(&ev.dei)));
    }
}

#[test]
fn streams_from_one_site_get_distinct_preliminary_indexes() {
    let a = relay_app(2);
    let t = baseline(&a, &entry("A", "go", json!({})));
    let prelims: BTreeSet<_> = t.events.iter().filter_map(|ev| ev.preliminary_dei.clone()).collect();
    assert_eq!(prelims.len(), 2);
    let finals: Vec<u32> =
        t.invocations().filter(|ev| ev.dei.len() == 1).map(|ev| ev.dei.last().unwrap().count.get()).collect();
    assert_eq!(finals, [1, 2]);
}

#[test]
fn nested_calls_of_stream_messages_can_be_faulted() {
    let a = relay_app(1);
    let e = entry("A", "go", json!({}));
    let nested = baseline(&a, &e).invocations().find(|ev| ev.dei.len() == 2).unwrap().key.clone();
    let t = run_execution(
        &a,
        &e,
        &FaultPlan::empty().with(nested.clone(), FaultSpec::connection_error()),
        &RunConfig::default(),
    )
    .unwrap();
    assert_eq!(t.faults().map(|f| f.key.clone()).collect::<Vec<_>>(), [nested]);
}

#[test]
fn send_after_close_fails() {
    let a = app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": [
            {"open_stream": {"service": "B", "method": "echo", "line": 2, "bind": "st"}},
            {"close_stream": {"stream": {"var": "st"}}},
            {"send": {"stream": {"var": "st"}, "args": {"s": {"lit": "x"}}, "line": 4}}
        ]}}},
        echo_service()
    ]}));
    let r = run_execution(&a, &entry("A", "go", json!({})), &FaultPlan::empty(), &RunConfig::default());
    assert!(matches!(r, Err(SimError::StreamClosed)), "{r:?}");
}

#[test]
fn unclosed_streams_are_finalized() {
    let a = app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": [
            {"open_stream": {"service": "B", "method": "echo", "line": 2, "bind": "st"}},
            {"send": {"stream": {"var": "st"}, "args": {"s": {"lit": "x"}}, "line": 3, "bind": "r"}},
            {"return": {"var": "r"}}
        ]}}},
        echo_service()
    ]}));
    let t = baseline(&a, &entry("A", "go", json!({})));
    assert_eq!(t.events.iter().filter(|ev| ev.kind == EventKind::IndexRewritten).count(), 1);
    assert!(t.invocations().all(|ev| ev.preliminary_dei.is_none()));
}

#[test]
fn runaway_loops_hit_the_step_budget() {
    let a = app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": [{"while": {"cond": {"lit": true}, "body": [{"let": {"var": "x", "value": {"lit": 1}}}]}}]}}}
    ]}));
    let run = RunConfig { step_budget: 1000, ..RunConfig::default() };
    let r = run_execution(&a, &entry("A", "go", json!({})), &FaultPlan::empty(), &run);
    assert!(matches!(r, Err(SimError::StepBudgetExceeded(1000))), "{r:?}");
}

#[test]
fn unbounded_recursion_is_an_error() {
    let a = app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": [{"call": {"service": "A", "method": "go", "line": 1}}]}}}
    ]}));
    let r = run_execution(&a, &entry("A", "go", json!({})), &FaultPlan::empty(), &RunConfig::default());
    assert!(matches!(r, Err(SimError::DepthExceeded(_))), "{r:?}");
}

#[test]
fn concurrent_identical_calls_are_flagged() {
    let a = app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": [
            {"let": {"var": "fs", "value": {"list": []}}},
            {"for": {"var": "i", "in": {"range": {"lit": 2}}, "body": [
                {"spawn": {"bind": "f", "body": [{"call": {"service": "B", "method": "echo", "args": {"s": {"lit": "same"}}, "line": 5, "bind": "r"}}, {"return": {"var": "r"}}]}},
                {"append": {"list": "fs", "value": {"var": "f"}}}
            ]}},
            {"await_all": {"futures": {"var": "fs"}}}
        ]}}},
        echo_service()
    ]}));
    let t = baseline(&a, &entry("A", "go", json!({})));
    assert!(t.warnings.iter().any(|w| w.kind == WarningKind::DetectedAmbiguity), "{:?}", t.warnings);

    // The same calls made one after another are ordered by causality.
    let seq = app(json!({"services": [
        {"name": "A", "endpoints": {"go": {"body": [
            {"for": {"var": "i", "in": {"range": {"lit": 2}}, "body": [
                {"call": {"service": "B", "method": "echo", "args": {"s": {"lit": "same"}}, "line": 5}}
            ]}}
        ]}}},
        echo_service()
    ]}));
    assert!(baseline(&seq, &entry("A", "go", json!({}))).warnings.is_empty());
}

#[test]
fn masked_configs_report_collisions() {
    let c = bundled().unwrap();
    let e = c.get("cinema-3").unwrap();
    let run = RunConfig::default().with_config("no-count".parse().unwrap());
    let t = run_execution(&e.app, &e.entry, &FaultPlan::empty(), &run).unwrap();
    assert!(t.warnings.is_empty());
    // The retry only happens when the first attempt fails.
    let first = t.invocations().next().unwrap().key.clone();
    let t =
        run_execution(&e.app, &e.entry, &FaultPlan::empty().with(first, FaultSpec::connection_error()), &run).unwrap();
    assert!(t.warnings.iter().any(|w| w.kind == WarningKind::IdentifierCollision), "{:?}", t.warnings);
}

#[test]
fn context_comes_from_metadata() {
    assert!(propagate_context(&Metadata::new()).unwrap().path.is_empty());
    let c = bundled().unwrap();
    let e = c.get("figure-5").unwrap();
    let t = baseline(&e.app, &e.entry);
    let dei = t.invocations().last().unwrap().dei.clone();
    let mut md = Metadata::new();
    md.insert(INDEX_HEADER, encode(&dei));
    let ctx = propagate_context(&md).unwrap();
    assert_eq!(ctx.path, dei);
    assert!(!ctx.preliminary);
    md.insert(PRELIMINARY_HEADER, "true");
    assert!(propagate_context(&md).unwrap().preliminary);
    md.insert(PRELIMINARY_HEADER, "maybe");
    assert!(matches!(propagate_context(&md), Err(SimError::Metadata(_))));
    let mut bad = Metadata::new();
    bad.insert(INDEX_HEADER, "[nonsense");
    assert!(matches!(propagate_context(&bad), Err(SimError::Metadata(_))));
}

#[test]
fn traces_round_trip_through_jsonl() {
    let c = bundled().unwrap();
    for e in c.entries() {
        let t = baseline(&e.app, &e.entry);
        let text = t.to_jsonl();
        let back = ExecutionTrace::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, t, "{}", e.name);
        assert_eq!(back.to_jsonl(), text, "{}", e.name);
    }
    assert!(ExecutionTrace::read_jsonl("{\"record\": \"bogus\"}".as_bytes()).is_err());
}

#[test]
fn index_multisets_ignore_the_schedule() {
    let c = bundled().unwrap();
    for e in c.entries() {
        let want = sorted_deis(&baseline(&e.app, &e.entry));
        for seed in 1..8 {
            for scheduler in [SchedulerMode::Virtual, SchedulerMode::Threads { pool_size: 3 }] {
                let run = RunConfig::default().with_seed(seed).with_scheduler(scheduler);
                let t = run_execution(&e.app, &e.entry, &FaultPlan::empty(), &run).unwrap();
                assert_eq!(sorted_deis(&t), want, "{} seed {seed} {scheduler:?}", e.name);
            }
        }
    }
}

#[test]
fn virtual_runs_are_reproducible() {
    let c = bundled().unwrap();
    let e = c.get("figure-6-stream").unwrap();
    for seed in 0..5 {
        let run = RunConfig::default().with_seed(seed);
        let a = run_execution(&e.app, &e.entry, &FaultPlan::empty(), &run).unwrap().to_jsonl();
        let b = run_execution(&e.app, &e.entry, &FaultPlan::empty(), &run).unwrap().to_jsonl();
        assert_eq!(a, b);
    }
}

#[test]
fn unknown_entry_is_rejected() {
    let c = bundled().unwrap();
    let e = c.get("figure-2").unwrap();
    let bad = entry("A", "nope", json!({}));
    assert!(run_execution(&e.app, &bad, &FaultPlan::empty(), &RunConfig::default()).is_err());
}
