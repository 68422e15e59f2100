use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::Value;

use super::program::{App, CallStmt, Expr, SendStmt, Stmt};
use super::sched::{current_worker, Pool, VirtualScheduler};
use super::trace::{EntryRequest, EventKind, ExecutionTrace, RpcEvent, Warning, WarningKind};
use super::value::Val;
use super::{propagate_context, RunConfig, SchedulerMode, SimError};
use crate::faults::{FaultPlan, FaultSpec, Outcome};
use crate::index::{
    encode, CallStackDigest, CounterState, Dei, Digest, Frame, InvocationDetail, InvocationPayload,
    InvocationSignature, Metadata, Signature, INDEX_HEADER, PRELIMINARY_HEADER,
};

/// Header carrying the identifier under the active config when it differs
/// from the full index.
pub const KEY_HEADER: &str = "x-dexi-key";

const MAX_DEPTH: usize = 64;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Clone, Debug)]
pub(crate) enum Interrupt {
    Raise(String),
    Fatal(SimError),
}

impl From<SimError> for Interrupt {
    fn from(e: SimError) -> Self {
        Interrupt::Fatal(e)
    }
}

type Flowing<T> = Result<T, Interrupt>;

enum Flow {
    Next,
    Break,
    Return(Val),
}

type TaskResult = (Flowing<Val>, BTreeSet<u64>);

pub struct FutureCell {
    task: AtomicUsize,
    result: Mutex<Option<TaskResult>>,
    cv: Condvar,
}

impl FutureCell {
    fn done(&self) -> bool {
        lock(&self.result).is_some()
    }

    fn complete(&self, r: TaskResult) {
        *lock(&self.result) = Some(r);
        self.cv.notify_all();
    }

    fn park(&self, d: Duration) {
        let g = lock(&self.result);
        if g.is_none() {
            let _ = self.cv.wait_timeout(g, d);
        }
    }
}

pub struct StreamHandle {
    service: String,
    method: String,
    signature: Signature,
    path: Dei,
    key_path: Dei,
    prelim: Dei,
    key_prelim: Dei,
    in_flight: AtomicUsize,
    closed: AtomicBool,
    /// (message preliminary, final, key preliminary, key final)
    messages: Mutex<Vec<(Dei, Dei, Dei, Dei)>>,
}

enum Mode {
    Virtual(Box<VirtualScheduler>),
    Threads(Pool),
}

#[derive(Default)]
struct ExecState {
    next_seq: u64,
    events: Vec<RpcEvent>,
    warnings: Vec<Warning>,
    full_rewrites: Vec<(Dei, Dei)>,
    key_rewrites: Vec<(Dei, Dei)>,
    preliminaries: Vec<Dei>,
    site_history: HashMap<(Dei, InvocationSignature), Vec<u64>>,
    ambiguous_sites: HashSet<(Dei, InvocationSignature)>,
    key_owner: HashMap<Dei, Dei>,
    collided: HashSet<Dei>,
}

pub(crate) struct Exec {
    app: Arc<App>,
    plan: FaultPlan,
    run: RunConfig,
    counters: CounterState,
    key_counters: CounterState,
    state: Mutex<ExecState>,
    steps: AtomicU64,
    registry: Mutex<HashMap<(Digest, Digest, Digest), Arc<InvocationDetail>>>,
    mode: Mode,
    fatal: Mutex<Option<SimError>>,
    aborted: AtomicBool,
    threads: Mutex<Vec<JoinHandle<()>>>,
    futures: Mutex<Vec<Arc<FutureCell>>>,
    streams: Mutex<Vec<Arc<StreamHandle>>>,
}

struct Task {
    id: usize,
    deps: BTreeSet<u64>,
    runtime_frame: Frame,
}

#[derive(Clone)]
struct Scope {
    service: String,
    function: String,
    path: Dei,
    key_path: Dei,
    frames: Vec<Frame>,
    env: HashMap<String, Val>,
}

struct Assigned {
    seq: u64,
    event_index: usize,
    dei: Dei,
    key: Dei,
    fault: Option<FaultSpec>,
}

/// Replaces preliminary prefixes until none applies.
pub(crate) fn rewrite(dei: &Dei, table: &[(Dei, Dei)]) -> Dei {
    let mut cur = dei.clone();
    for _ in 0..=MAX_DEPTH {
        let best = table.iter().filter(|(from, _)| from.is_prefix_of(&cur)).max_by_key(|(from, _)| from.len());
        match best {
            Some((from, to)) => cur = cur.replace_prefix(from, to).expect("prefix checked"),
            None => break,
        }
    }
    cur
}

impl Exec {
    pub(crate) fn run(
        app: Arc<App>,
        entry: &EntryRequest,
        plan: &FaultPlan,
        run: &RunConfig,
    ) -> Result<ExecutionTrace, SimError> {
        let (mode, seed, label) = match run.scheduler {
            SchedulerMode::Virtual => {
                (Mode::Virtual(Box::new(VirtualScheduler::new(run.seed))), run.seed, "virtual".to_string())
            }
            SchedulerMode::Threads { pool_size } => {
                (Mode::Threads(Pool::new(pool_size)), run.seed, format!("threads:{pool_size}"))
            }
        };
        let exec = Arc::new(Exec {
            app,
            plan: plan.clone(),
            run: run.clone(),
            counters: CounterState::new(),
            key_counters: CounterState::new(),
            state: Mutex::new(ExecState::default()),
            steps: AtomicU64::new(0),
            registry: Mutex::new(HashMap::new()),
            mode,
            fatal: Mutex::new(None),
            aborted: AtomicBool::new(false),
            threads: Mutex::new(Vec::new()),
            futures: Mutex::new(Vec::new()),
            streams: Mutex::new(Vec::new()),
        });
        let mut task = Task {
            id: 0,
            deps: BTreeSet::new(),
            runtime_frame: Frame::new("runtime/dispatch.rs:1", "dexi::runtime::dispatch"),
        };
        let result = exec.invoke_entry(&mut task, entry);
        if let Err(Interrupt::Fatal(e)) = &result {
            exec.set_fatal(e.clone());
        }
        let drained = exec.drain_tasks(&mut task);
        if let Mode::Virtual(s) = &exec.mode {
            s.finish(0);
        }
        for h in lock(&exec.threads).drain(..) {
            let _ = h.join();
        }
        if let Mode::Threads(p) = &exec.mode {
            p.shutdown();
        }
        drained?;
        if let Some(e) = lock(&exec.fatal).clone() {
            return Err(e);
        }
        let outcome = match result {
            Ok(v) => Outcome::Response(v.to_json().unwrap_or(Value::Null)),
            Err(Interrupt::Raise(e)) => Outcome::Error(e),
            Err(Interrupt::Fatal(e)) => return Err(e),
        };
        let streams: Vec<Arc<StreamHandle>> = lock(&exec.streams).clone();
        for s in streams {
            if !s.closed.load(Ordering::SeqCst) {
                exec.close_stream(&s)?;
            }
        }
        let (events, warnings) = exec.finalize()?;
        Ok(ExecutionTrace {
            entry: entry.clone(),
            plan: plan.clone(),
            config: run.config,
            scheduler: label,
            seed,
            events,
            outcome,
            warnings,
        })
    }

    fn set_fatal(&self, e: SimError) {
        let mut f = lock(&self.fatal);
        if f.is_none() && e != SimError::Aborted {
            *f = Some(e);
        }
        self.aborted.store(true, Ordering::SeqCst);
    }

    /// Waits for spawned tasks that nobody awaited.
    fn drain_tasks(self: &Arc<Self>, task: &mut Task) -> Result<(), SimError> {
        loop {
            let pending: Vec<Arc<FutureCell>> = lock(&self.futures).iter().filter(|c| !c.done()).cloned().collect();
            if pending.is_empty() {
                return Ok(());
            }
            self.wait_cells(task, &pending).map_err(|e| match e {
                Interrupt::Fatal(e) => e,
                Interrupt::Raise(e) => SimError::Internal(e),
            })?;
        }
    }

    fn tick(&self) -> Flowing<()> {
        if self.aborted.load(Ordering::SeqCst) {
            return Err(Interrupt::Fatal(SimError::Aborted));
        }
        let n = self.steps.fetch_add(1, Ordering::SeqCst) + 1;
        if n > self.run.step_budget {
            let e = SimError::StepBudgetExceeded(self.run.step_budget);
            self.set_fatal(e.clone());
            return Err(Interrupt::Fatal(e));
        }
        Ok(())
    }

    fn yield_point(&self, task: &Task) {
        match &self.mode {
            Mode::Virtual(s) => s.yield_now(task.id),
            Mode::Threads(_) if self.run.stub_latency.is_zero() => std::thread::yield_now(),
            Mode::Threads(_) => std::thread::sleep(self.run.stub_latency),
        }
    }

    fn register(&self, inv: &InvocationSignature) {
        if let Some(d) = inv.detail_arc() {
            lock(&self.registry).entry(inv.key()).or_insert(d);
        }
    }

    fn resolve(&self, dei: &mut Dei) {
        let reg = lock(&self.registry);
        for e in dei.entries_mut() {
            if e.invocation.detail().is_none() {
                if let Some(d) = reg.get(&e.invocation.key()) {
                    e.invocation.attach(Arc::clone(d));
                }
            }
        }
    }

    fn key_inv(&self, inv: &InvocationSignature) -> InvocationSignature {
        let k = inv.masked(self.run.config.include_payload, self.run.config.include_callstack);
        self.register(&k);
        k
    }

    fn key_parent(&self, key_path: &Dei) -> Dei {
        if self.run.config.include_path {
            key_path.clone()
        } else {
            Dei::root()
        }
    }

    fn key_count(&self, parent: &Dei, kinv: &InvocationSignature) -> u32 {
        if self.run.config.include_count {
            self.key_counters.counter_next(parent, kinv).get()
        } else {
            1
        }
    }

    fn push_event(st: &mut ExecState, mut ev: RpcEvent) -> (u64, usize) {
        let seq = st.next_seq;
        st.next_seq += 1;
        ev.sequence_number = seq;
        st.events.push(ev);
        (seq, st.events.len() - 1)
    }

    fn blank_event(kind: EventKind, dei: Dei, key: Dei, caller: &str, callee: &str) -> RpcEvent {
        RpcEvent {
            sequence_number: 0,
            kind,
            rpc: None,
            display: dei.to_string(),
            dei,
            key,
            preliminary_dei: None,
            caller: caller.to_string(),
            callee: callee.to_string(),
            signature: None,
            payload: None,
            stack_lines: None,
            outcome: None,
            fault: None,
            causal_deps: Vec::new(),
        }
    }

    /// Assigns the full index and the config key of one invocation, records
    /// it, and decides whether it is faulted. Atomic across tasks.
    #[allow(clippy::too_many_arguments)]
    fn assign(
        &self,
        task: &Task,
        path: &Dei,
        key_path: &Dei,
        inv: &InvocationSignature,
        caller: &str,
        callee: &str,
        signature: &Signature,
        payload: &InvocationPayload,
    ) -> Assigned {
        let kinv = self.key_inv(inv);
        let mut st = lock(&self.state);
        let count = self.counters.counter_next(path, inv);
        let dei = path.extend(inv.clone(), count.get()).expect("positive count");
        let kparent = self.key_parent(key_path);
        let kcount = self.key_count(&kparent, &kinv);
        let key = kparent.extend(kinv, kcount).expect("positive count");
        let resolved = rewrite(&key, &st.key_rewrites);
        let fault = self.plan.get(&resolved).cloned();

        let site = (path.clone(), inv.clone());
        let earlier = st.site_history.get(&site).cloned().unwrap_or_default();
        if earlier.iter().any(|s| !task.deps.contains(s)) && st.ambiguous_sites.insert(site.clone()) {
            let deis = vec![dei.clone()];
            st.warnings.push(Warning {
                kind: WarningKind::DetectedAmbiguity,
                message: format!(
                    "concurrent invocations of {} with identical signature, stack and payload; counts depend on the schedule",
                    inv
                ),
                deis,
            });
        }
        let resolved_full = rewrite(&dei, &st.full_rewrites);
        if !self.run.config.is_full() {
            match st.key_owner.get(&resolved).cloned() {
                None => {
                    st.key_owner.insert(resolved.clone(), resolved_full.clone());
                }
                Some(owner) if owner != resolved_full && st.collided.insert(resolved.clone()) => {
                    st.warnings.push(Warning {
                        kind: WarningKind::IdentifierCollision,
                        message: format!("identifier {resolved} is shared by distinct invocations"),
                        deis: vec![owner, resolved_full.clone()],
                    });
                }
                Some(_) => {}
            }
        }

        let mut ev = Self::blank_event(EventKind::Invocation, dei.clone(), key.clone(), caller, callee);
        ev.signature = Some(signature.clone());
        ev.payload = Some(payload.clone());
        ev.stack_lines = inv.detail().map(|d| d.callstack.lines());
        ev.causal_deps = task.deps.iter().copied().collect();
        let (seq, event_index) = Self::push_event(&mut st, ev);
        st.site_history.entry(site).or_default().push(seq);
        if let Some(f) = &fault {
            let mut fe = Self::blank_event(EventKind::FaultInjected, dei.clone(), key.clone(), caller, callee);
            fe.rpc = Some(seq);
            fe.fault = Some(f.clone());
            fe.outcome = Some(f.outcome());
            Self::push_event(&mut st, fe);
        }
        Assigned { seq, event_index, dei, key, fault }
    }

    fn complete(&self, a: &Assigned, caller: &str, callee: &str, result: &Flowing<Val>) {
        let outcome = match result {
            Ok(v) => Outcome::Response(v.to_json().unwrap_or(Value::Null)),
            Err(Interrupt::Raise(e)) => Outcome::Error(e.clone()),
            Err(Interrupt::Fatal(_)) => return,
        };
        let mut ev = Self::blank_event(EventKind::Completion, a.dei.clone(), a.key.clone(), caller, callee);
        ev.rpc = Some(a.seq);
        ev.outcome = Some(outcome);
        Self::push_event(&mut lock(&self.state), ev);
    }

    fn fault_result(f: &FaultSpec) -> Flowing<Val> {
        match f.outcome() {
            Outcome::Error(e) => Err(Interrupt::Raise(e)),
            Outcome::Response(v) => Ok(Val::Json(v)),
        }
    }

    fn frames_at(&self, task: &Task, scope: &Scope, line: u32) -> CallStackDigest {
        let mut frames = Vec::with_capacity(scope.frames.len() + 2);
        frames.push(task.runtime_frame.clone());
        frames.extend(scope.frames.iter().cloned());
        frames.push(Frame::new(format!("{}:{line}", self.app.source_file(&scope.service)), scope.function.clone()));
        CallStackDigest::capture(&frames, &self.run.deny_list)
    }

    fn eval_args(
        &self,
        scope: &Scope,
        sig: &Signature,
        args: &BTreeMap<String, Expr>,
    ) -> Flowing<Vec<(String, Value)>> {
        let mut out = Vec::with_capacity(sig.parameters.len());
        for p in &sig.parameters {
            let e = args
                .get(&p.name)
                .ok_or_else(|| SimError::Arguments(format!("missing argument `{}` for {sig}", p.name)))?;
            let v = self
                .eval(scope, e)?
                .to_json()
                .ok_or_else(|| SimError::Type(format!("argument `{}` of {sig} is a handle", p.name)))?;
            out.push((p.name.clone(), v));
        }
        if args.len() != sig.parameters.len() {
            return Err(SimError::Arguments(format!("unexpected arguments for {sig}")).into());
        }
        Ok(out)
    }

    fn invoke_entry(self: &Arc<Self>, task: &mut Task, entry: &EntryRequest) -> Flowing<Val> {
        let sig = self.app.signature(&entry.service, &entry.method)?;
        let mut args = Vec::new();
        for p in &sig.parameters {
            let v = entry
                .payload
                .get(&p.name)
                .ok_or_else(|| SimError::InvalidEntry(format!("missing argument `{}` for {sig}", p.name)))?;
            args.push((p.name.clone(), v.clone()));
        }
        if entry.payload.len() != sig.parameters.len() {
            return Err(SimError::InvalidEntry(format!("unexpected arguments for {sig}")).into());
        }
        self.deliver(task, &entry.service, &entry.method, args, &Metadata::new(), None)
    }

    fn metadata(&self, index: &Dei, key: &Dei, preliminary: bool) -> Metadata {
        let mut md = Metadata::new();
        md.insert(INDEX_HEADER, encode(index));
        if !self.run.config.is_full() {
            md.insert(KEY_HEADER, encode(key));
        }
        if preliminary {
            md.insert(PRELIMINARY_HEADER, "true");
        }
        md
    }

    /// Server side of the fabric: recovers the index from metadata and runs
    /// the handler on the calling task.
    fn deliver(
        self: &Arc<Self>,
        task: &mut Task,
        service: &str,
        method: &str,
        args: Vec<(String, Value)>,
        md: &Metadata,
        stream: Option<(&StreamHandle, &Assigned)>,
    ) -> Flowing<Val> {
        let ctx = propagate_context(md)?;
        let mut path = ctx.path;
        self.resolve(&mut path);
        let mut key_path = match md.get(KEY_HEADER) {
            Some(t) => crate::index::decode(t).map_err(|e| SimError::Metadata(e.to_string()))?,
            None => path.clone(),
        };
        self.resolve(&mut key_path);
        if ctx.preliminary {
            let (handle, a) = stream.ok_or_else(|| SimError::Metadata("preliminary index outside a stream".into()))?;
            let (parent, last) = match (path.parent(), path.last()) {
                (Some(p), Some(l)) => (p, l.invocation.clone()),
                _ => return Err(SimError::Metadata("empty preliminary index".into()).into()),
            };
            let (kparent, klast) = match (key_path.parent(), key_path.last()) {
                (Some(p), Some(l)) => (p, l.invocation.clone()),
                _ => return Err(SimError::Metadata("empty preliminary key".into()).into()),
            };
            let mut st = lock(&self.state);
            let c = self.counters.counter_next(&parent, &last);
            let msg = parent.extend(last, c.get()).expect("positive count");
            let kc = self.key_count(&kparent, &klast);
            let kmsg = kparent.extend(klast, kc).expect("positive count");
            st.full_rewrites.push((msg.clone(), a.dei.clone()));
            st.key_rewrites.push((kmsg.clone(), a.key.clone()));
            st.preliminaries.push(msg.clone());
            st.events[a.event_index].preliminary_dei = Some(msg.clone());
            drop(st);
            lock(&handle.messages).push((msg.clone(), a.dei.clone(), kmsg.clone(), a.key.clone()));
            path = msg;
            key_path = kmsg;
        }
        if path.len() > MAX_DEPTH {
            return Err(SimError::DepthExceeded(MAX_DEPTH).into());
        }
        let f = self.app.endpoint(service, method)?;
        let mut env = HashMap::new();
        for (name, v) in args {
            env.insert(name, Val::Json(v));
        }
        let mut scope = Scope {
            service: service.to_string(),
            function: format!("{service}.{method}"),
            path,
            key_path,
            frames: Vec::new(),
            env,
        };
        let body = f.body.clone();
        let v = match self.exec_block(task, &mut scope, &body)? {
            Flow::Return(v) => v,
            Flow::Next | Flow::Break => Val::null(),
        };
        match v.to_json() {
            Some(j) => Ok(Val::Json(j)),
            None => Err(SimError::Type(format!("{service}.{method} returned a handle")).into()),
        }
    }

    fn call(self: &Arc<Self>, task: &mut Task, scope: &Scope, c: &CallStmt) -> Flowing<Val> {
        self.yield_point(task);
        let sig = self.app.signature(&c.service, &c.method)?;
        let args = self.eval_args(scope, &sig, &c.args)?;
        let payload = InvocationPayload::new(args.clone());
        let stack = self.frames_at(task, scope, c.line);
        let inv = InvocationSignature::new(sig.clone(), payload.clone(), stack)
            .map_err(|e| SimError::Arguments(e.to_string()))?;
        self.register(&inv);
        let a = self.assign(task, &scope.path, &scope.key_path, &inv, &scope.service, &c.service, &sig, &payload);
        task.deps.insert(a.seq);
        if let Some(f) = &a.fault {
            return Self::fault_result(f);
        }
        let md = self.metadata(&a.dei, &a.key, false);
        if matches!(self.mode, Mode::Threads(_)) {
            std::thread::yield_now();
        }
        let r = self.deliver(task, &c.service, &c.method, args, &md, None);
        self.complete(&a, &scope.service, &c.service, &r);
        r
    }

    fn open_stream(&self, task: &Task, scope: &Scope, service: &str, method: &str, line: u32) -> Flowing<Val> {
        self.yield_point(task);
        let sig = self.app.signature(service, method)?;
        let stack = self.frames_at(task, scope, line);
        let inv = InvocationSignature::unchecked(sig.clone(), InvocationPayload::empty(), stack);
        self.register(&inv);
        let kinv = self.key_inv(&inv);
        let mut st = lock(&self.state);
        let x = self.counters.counter_next(&scope.path, &inv);
        let prelim = scope.path.extend(inv, x.get()).expect("positive count");
        let kparent = self.key_parent(&scope.key_path);
        let kx = self.key_count(&kparent, &kinv);
        let key_prelim = kparent.extend(kinv, kx).expect("positive count");
        let mut ev = Self::blank_event(
            EventKind::StreamOpened,
            scope.path.clone(),
            scope.key_path.clone(),
            &scope.service,
            service,
        );
        ev.preliminary_dei = Some(prelim.clone());
        ev.signature = Some(sig.clone());
        ev.causal_deps = task.deps.iter().copied().collect();
        Self::push_event(&mut st, ev);
        st.preliminaries.push(prelim.clone());
        drop(st);
        let handle = Arc::new(StreamHandle {
            service: service.to_string(),
            method: method.to_string(),
            signature: sig,
            path: scope.path.clone(),
            key_path: scope.key_path.clone(),
            prelim,
            key_prelim,
            in_flight: AtomicUsize::new(0),
            closed: AtomicBool::new(false),
            messages: Mutex::new(Vec::new()),
        });
        lock(&self.streams).push(Arc::clone(&handle));
        Ok(Val::Stream(handle))
    }

    fn send(self: &Arc<Self>, task: &mut Task, scope: &Scope, s: &SendStmt) -> Flowing<Val> {
        self.yield_point(task);
        let handle = match self.eval(scope, &s.stream)? {
            Val::Stream(h) => h,
            _ => return Err(SimError::Type("send on a value that is not a stream".into()).into()),
        };
        if handle.closed.load(Ordering::SeqCst) {
            return Err(SimError::StreamClosed.into());
        }
        let sig = handle.signature.clone();
        let args = self.eval_args(scope, &sig, &s.args)?;
        let payload = InvocationPayload::new(args.clone());
        let stack = self.frames_at(task, scope, s.line);
        let inv = InvocationSignature::new(sig.clone(), payload.clone(), stack)
            .map_err(|e| SimError::Arguments(e.to_string()))?;
        self.register(&inv);
        let a =
            self.assign(task, &handle.path, &handle.key_path, &inv, &scope.service, &handle.service, &sig, &payload);
        task.deps.insert(a.seq);
        if let Some(f) = &a.fault {
            return Self::fault_result(f);
        }
        handle.in_flight.fetch_add(1, Ordering::SeqCst);
        let md = self.metadata(&handle.prelim, &handle.key_prelim, true);
        if matches!(self.mode, Mode::Threads(_)) {
            std::thread::yield_now();
        }
        let r = self.deliver(task, &handle.service, &handle.method, args, &md, Some((&handle, &a)));
        handle.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.complete(&a, &scope.service, &handle.service, &r);
        r
    }

    /// Records the preliminary-to-final pairs of a stream and rewrites every
    /// event recorded so far.
    fn close_stream(&self, handle: &StreamHandle) -> Result<(), SimError> {
        let n = handle.in_flight.load(Ordering::SeqCst);
        if n > 0 {
            return Err(SimError::OutstandingSends(n));
        }
        if handle.closed.swap(true, Ordering::SeqCst) {
            return Ok(());
        }
        let msgs = lock(&handle.messages).clone();
        let mut st = lock(&self.state);
        for (mp, fd, _kp, fk) in msgs {
            let mut ev = Self::blank_event(EventKind::IndexRewritten, fd, fk, "", &handle.service);
            ev.preliminary_dei = Some(mp);
            Self::push_event(&mut st, ev);
        }
        Self::apply_rewrites(&mut st);
        Ok(())
    }

    fn apply_rewrites(st: &mut ExecState) {
        let full = st.full_rewrites.clone();
        let keys = st.key_rewrites.clone();
        for ev in st.events.iter_mut() {
            ev.dei = rewrite(&ev.dei, &full);
            ev.key = rewrite(&ev.key, &keys);
            ev.display = ev.dei.to_string();
        }
    }

    fn finalize(&self) -> Result<(Vec<RpcEvent>, Vec<Warning>), SimError> {
        let mut st = lock(&self.state);
        Self::apply_rewrites(&mut st);
        for ev in st.events.iter_mut() {
            if ev.kind != EventKind::IndexRewritten {
                ev.preliminary_dei = None;
            }
        }
        let prelims = st.preliminaries.clone();
        for ev in &st.events {
            if prelims.iter().any(|p| p.is_prefix_of(&ev.dei)) {
                return Err(SimError::Rewrite(format!("preliminary index survives in {}", ev.dei)));
            }
        }
        Ok((std::mem::take(&mut st.events), std::mem::take(&mut st.warnings)))
    }

    fn spawn(self: &Arc<Self>, task: &mut Task, scope: &Scope, body: &[Stmt]) -> Flowing<Val> {
        let cell = Arc::new(FutureCell { task: AtomicUsize::new(0), result: Mutex::new(None), cv: Condvar::new() });
        let deps = task.deps.clone();
        let mut child_scope = scope.clone();
        child_scope.frames = Vec::new();
        child_scope.function = format!("{}$async", scope.function);
        let body: Vec<Stmt> = body.to_vec();
        lock(&self.futures).push(Arc::clone(&cell));
        let exec = Arc::clone(self);
        let c2 = Arc::clone(&cell);
        match &self.mode {
            Mode::Virtual(s) => {
                let id = s.register();
                cell.task.store(id, Ordering::SeqCst);
                let h = std::thread::Builder::new()
                    .stack_size(32 << 20)
                    .spawn(move || {
                        let Mode::Virtual(s) = &exec.mode else { unreachable!() };
                        s.wait_turn(id);
                        let frame = Frame::new("runtime/virtual.rs:1", format!("dexi::runtime::virtual::task#{id}"));
                        let r = exec.run_task(id, deps, frame, child_scope, &body);
                        c2.complete(r);
                        s.finish(id);
                    })
                    .map_err(|e| SimError::Internal(e.to_string()))?;
                lock(&self.threads).push(h);
                s.yield_now(task.id);
            }
            Mode::Threads(pool) => {
                pool.submit(Box::new(move || {
                    let w = current_worker().map(|w| w.to_string()).unwrap_or_else(|| "caller".into());
                    let frame = Frame::new("runtime/pool.rs:1", format!("dexi::runtime::pool::worker#{w}"));
                    let r = exec.run_task(0, deps, frame, child_scope, &body);
                    c2.complete(r);
                }));
            }
        }
        Ok(Val::Future(cell))
    }

    fn run_task(
        self: &Arc<Self>,
        id: usize,
        deps: BTreeSet<u64>,
        frame: Frame,
        mut scope: Scope,
        body: &[Stmt],
    ) -> TaskResult {
        let mut t = Task { id, deps, runtime_frame: frame };
        let r = catch_unwind(AssertUnwindSafe(|| self.exec_block(&mut t, &mut scope, body)));
        let r = match r {
            Ok(Ok(Flow::Return(v))) => Ok(v),
            Ok(Ok(_)) => Ok(Val::null()),
            Ok(Err(e)) => Err(e),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(Interrupt::Fatal(SimError::TaskPanicked(msg)))
            }
        };
        if let Err(Interrupt::Fatal(e)) = &r {
            self.set_fatal(e.clone());
        }
        (r, t.deps)
    }

    fn wait_cells(self: &Arc<Self>, task: &Task, cells: &[Arc<FutureCell>]) -> Flowing<()> {
        match &self.mode {
            Mode::Virtual(s) => {
                let ids: Vec<usize> = cells.iter().map(|c| c.task.load(Ordering::SeqCst)).collect();
                if !s.block_on(task.id, &ids) {
                    return Err(SimError::Deadlock.into());
                }
            }
            Mode::Threads(pool) => pool.help_until(
                || cells.iter().all(|c| c.done()),
                |d| {
                    if let Some(c) = cells.iter().find(|c| !c.done()) {
                        c.park(d)
                    }
                },
            ),
        }
        Ok(())
    }

    fn await_all(self: &Arc<Self>, task: &mut Task, scope: &Scope, futures: &Expr) -> Flowing<Val> {
        let items = self
            .eval(scope, futures)?
            .items()
            .ok_or_else(|| SimError::Type("await_all expects a list of futures".into()))?;
        let mut cells = Vec::with_capacity(items.len());
        for it in items {
            match it {
                Val::Future(c) => cells.push(c),
                _ => return Err(SimError::Type("await_all expects a list of futures".into()).into()),
            }
        }
        self.wait_cells(task, &cells)?;
        let mut values = Vec::with_capacity(cells.len());
        let mut failure: Option<Interrupt> = None;
        for c in &cells {
            let (r, deps) = lock(&c.result).clone().expect("awaited task finished");
            task.deps.extend(deps);
            match r {
                Ok(v) => values.push(v),
                Err(Interrupt::Fatal(e)) => failure = Some(Interrupt::Fatal(e)),
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(e);
                    }
                }
            }
        }
        match failure {
            Some(f) => Err(f),
            None => Ok(Val::List(values)),
        }
    }

    fn exec_block(self: &Arc<Self>, task: &mut Task, scope: &mut Scope, body: &[Stmt]) -> Flowing<Flow> {
        for st in body {
            self.tick()?;
            match self.exec_stmt(task, scope, st)? {
                Flow::Next => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Next)
    }

    fn bind(scope: &mut Scope, name: &Option<String>, v: Val) {
        if let Some(n) = name {
            scope.env.insert(n.clone(), v);
        }
    }

    fn exec_stmt(self: &Arc<Self>, task: &mut Task, scope: &mut Scope, st: &Stmt) -> Flowing<Flow> {
        match st {
            Stmt::Let { var, value } => {
                let v = self.eval(scope, value)?;
                scope.env.insert(var.clone(), v);
            }
            Stmt::Call(c) => {
                let v = self.call(task, scope, c)?;
                Self::bind(scope, &c.bind, v);
            }
            Stmt::Helper(h) => {
                let f = self
                    .app
                    .service(&scope.service)
                    .and_then(|s| s.helpers.get(&h.name))
                    .ok_or_else(|| SimError::UnknownEndpoint(format!("{}.{}", scope.service, h.name)))?;
                let mut env = HashMap::new();
                for p in &f.params {
                    let e = h
                        .args
                        .get(&p.name)
                        .ok_or_else(|| SimError::Arguments(format!("missing argument `{}` for {}", p.name, h.name)))?;
                    env.insert(p.name.clone(), self.eval(scope, e)?);
                }
                let mut frames = scope.frames.clone();
                frames.push(Frame::new(
                    format!("{}:{}", self.app.source_file(&scope.service), h.line),
                    scope.function.clone(),
                ));
                let mut inner = Scope {
                    service: scope.service.clone(),
                    function: format!("{}.{}", scope.service, h.name),
                    path: scope.path.clone(),
                    key_path: scope.key_path.clone(),
                    frames,
                    env,
                };
                let body = f.body.clone();
                let v = match self.exec_block(task, &mut inner, &body)? {
                    Flow::Return(v) => v,
                    _ => Val::null(),
                };
                Self::bind(scope, &h.bind, v);
            }
            Stmt::For { var, iter, body } => {
                let items =
                    self.eval(scope, iter)?.items().ok_or_else(|| SimError::Type("for expects a list".into()))?;
                for it in items {
                    scope.env.insert(var.clone(), it);
                    match self.exec_block(task, scope, body)? {
                        Flow::Next => {}
                        Flow::Break => break,
                        r @ Flow::Return(_) => return Ok(r),
                    }
                }
            }
            Stmt::While { cond, body } => loop {
                self.tick()?;
                if !self.eval(scope, cond)?.truthy() {
                    break;
                }
                match self.exec_block(task, scope, body)? {
                    Flow::Next => {}
                    Flow::Break => break,
                    r @ Flow::Return(_) => return Ok(r),
                }
            },
            Stmt::Break => return Ok(Flow::Break),
            Stmt::If { cond, then, otherwise } => {
                let branch = if self.eval(scope, cond)?.truthy() { then } else { otherwise };
                return self.exec_block(task, scope, branch);
            }
            Stmt::Try { body, catch, bind_error } => match self.exec_block(task, scope, body) {
                Err(Interrupt::Raise(e)) => {
                    if let Some(n) = bind_error {
                        let mut m = BTreeMap::new();
                        m.insert("error".to_string(), Val::Json(Value::String(e)));
                        scope.env.insert(n.clone(), Val::Map(m));
                    }
                    return self.exec_block(task, scope, catch);
                }
                other => return other,
            },
            Stmt::Spawn { bind, body } => {
                let f = self.spawn(task, scope, body)?;
                scope.env.insert(bind.clone(), f);
            }
            Stmt::AwaitAll { futures, bind } => {
                let v = self.await_all(task, scope, futures)?;
                Self::bind(scope, bind, v);
            }
            Stmt::Append { list, value } => {
                let v = self.eval(scope, value)?;
                let cur = scope.env.get(list).cloned().unwrap_or(Val::List(Vec::new()));
                let mut items = cur.items().ok_or_else(|| SimError::Type(format!("`{list}` is not a list")))?;
                items.push(v);
                scope.env.insert(list.clone(), Val::List(items));
            }
            Stmt::SetIndex { list, index, value } => {
                let i = self
                    .eval(scope, index)?
                    .as_i64()
                    .ok_or_else(|| SimError::Type("list index must be an integer".into()))?;
                let v = self.eval(scope, value)?;
                let cur = scope.env.get(list).cloned().ok_or_else(|| SimError::Unbound(list.clone()))?;
                let mut items = cur.items().ok_or_else(|| SimError::Type(format!("`{list}` is not a list")))?;
                let slot = usize::try_from(i)
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| SimError::Type(format!("index {i} out of range for `{list}`")))?;
                *slot = v;
                scope.env.insert(list.clone(), Val::List(items));
            }
            Stmt::OpenStream { service, method, line, bind } => {
                let h = self.open_stream(task, scope, service, method, *line)?;
                scope.env.insert(bind.clone(), h);
            }
            Stmt::Send(s) => {
                let v = self.send(task, scope, s)?;
                Self::bind(scope, &s.bind, v);
            }
            Stmt::CloseStream { stream } => match self.eval(scope, stream)? {
                Val::Stream(h) => self.close_stream(&h)?,
                _ => return Err(SimError::Type("close_stream on a value that is not a stream".into()).into()),
            },
            Stmt::Return(e) => return Ok(Flow::Return(self.eval(scope, e)?)),
            Stmt::Fail { error } => return Err(Interrupt::Raise(error.clone())),
        }
        Ok(Flow::Next)
    }

    fn eval(&self, scope: &Scope, e: &Expr) -> Flowing<Val> {
        Ok(match e {
            Expr::Lit(v) => Val::Json(v.clone()),
            Expr::Var(n) => scope.env.get(n).cloned().ok_or_else(|| SimError::Unbound(n.clone()))?,
            Expr::List(xs) => Val::List(xs.iter().map(|x| self.eval(scope, x)).collect::<Result<_, _>>()?),
            Expr::Map(m) => Val::Map(
                m.iter().map(|(k, x)| Ok((k.clone(), self.eval(scope, x)?))).collect::<Flowing<BTreeMap<_, _>>>()?,
            ),
            Expr::Concat(xs) => {
                let mut s = String::new();
                for x in xs {
                    s.push_str(&self.eval(scope, x)?.to_string());
                }
                Val::Json(Value::String(s))
            }
            Expr::Join { list, sep } => {
                let items =
                    self.eval(scope, list)?.items().ok_or_else(|| SimError::Type("join expects a list".into()))?;
                let parts: Vec<String> = items.iter().map(|v| v.to_string()).collect();
                Val::Json(Value::String(parts.join(sep)))
            }
            Expr::Get { from, key } => {
                let from = self.eval(scope, from)?;
                let key = self.eval(scope, key)?;
                match (&from, &key) {
                    (Val::Map(m), Val::Json(Value::String(k))) => m.get(k).cloned().unwrap_or_else(Val::null),
                    (Val::Json(Value::Object(m)), Val::Json(Value::String(k))) => {
                        Val::Json(m.get(k).cloned().unwrap_or(Value::Null))
                    }
                    _ => {
                        let items = from.items().ok_or_else(|| SimError::Type("get on a non-container".into()))?;
                        let i = key.as_i64().ok_or_else(|| SimError::Type("list index must be an integer".into()))?;
                        usize::try_from(i)
                            .ok()
                            .and_then(|i| items.get(i).cloned())
                            .ok_or_else(|| SimError::Type(format!("index {i} out of range")))?
                    }
                }
            }
            Expr::Len(x) => {
                let v = self.eval(scope, x)?;
                let n = match &v {
                    Val::Json(Value::String(s)) => s.chars().count(),
                    other => other.items().ok_or_else(|| SimError::Type("len of a non-list".into()))?.len(),
                };
                Val::Json(Value::from(n as u64))
            }
            Expr::Range(x) => {
                let n =
                    self.eval(scope, x)?.as_i64().ok_or_else(|| SimError::Type("range expects an integer".into()))?;
                Val::List((0..n.max(0)).map(|i| Val::Json(Value::from(i))).collect())
            }
            Expr::Eq(xs) => {
                if xs.len() != 2 {
                    return Err(SimError::Type("eq takes two operands".into()).into());
                }
                let a = self.eval(scope, &xs[0])?.to_json();
                let b = self.eval(scope, &xs[1])?.to_json();
                let same = match (a, b) {
                    (Some(a), Some(b)) => crate::index::canonical_bytes(&a) == crate::index::canonical_bytes(&b),
                    _ => false,
                };
                Val::Json(Value::Bool(same))
            }
            Expr::Not(x) => Val::Json(Value::Bool(!self.eval(scope, x)?.truthy())),
            Expr::Add(xs) => {
                let mut total: i64 = 0;
                for x in xs {
                    total +=
                        self.eval(scope, x)?.as_i64().ok_or_else(|| SimError::Type("add expects integers".into()))?;
                }
                Val::Json(Value::from(total))
            }
        })
    }
}
