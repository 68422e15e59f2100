//! Task scheduling. The virtual scheduler runs every task on its own OS
//! thread but lets exactly one of them proceed at a time, choosing the next
//! one with a seeded RNG at each yield point. The pool runs tasks on a
//! fixed number of real threads.

use std::cell::Cell;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
enum TaskState {
    Runnable,
    Blocked(Vec<usize>),
    Done,
}

struct VState {
    rng: ChaCha8Rng,
    current: usize,
    tasks: Vec<TaskState>,
}

pub(crate) struct VirtualScheduler {
    state: Mutex<VState>,
    cv: Condvar,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl VirtualScheduler {
    /// Task 0 is the calling thread and starts out running.
    pub(crate) fn new(seed: u64) -> Self {
        VirtualScheduler {
            state: Mutex::new(VState {
                rng: ChaCha8Rng::seed_from_u64(seed),
                current: 0,
                tasks: vec![TaskState::Runnable],
            }),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn register(&self) -> usize {
        let mut st = lock(&self.state);
        st.tasks.push(TaskState::Runnable);
        st.tasks.len() - 1
    }

    fn pick(st: &mut VState) -> Option<usize> {
        let done: Vec<bool> = st.tasks.iter().map(|t| *t == TaskState::Done).collect();
        for t in st.tasks.iter_mut() {
            if let TaskState::Blocked(ids) = t {
                if ids.iter().all(|&i| done[i]) {
                    *t = TaskState::Runnable;
                }
            }
        }
        let runnable: Vec<usize> =
            st.tasks.iter().enumerate().filter(|(_, t)| **t == TaskState::Runnable).map(|(i, _)| i).collect();
        if runnable.is_empty() {
            return None;
        }
        let i = st.rng.random_range(0..runnable.len());
        Some(runnable[i])
    }

    fn wait_for_turn<'a>(&'a self, mut st: MutexGuard<'a, VState>, me: usize) {
        while st.current != me {
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub(crate) fn wait_turn(&self, me: usize) {
        let st = lock(&self.state);
        self.wait_for_turn(st, me);
    }

    pub(crate) fn yield_now(&self, me: usize) {
        let mut st = lock(&self.state);
        let next = Self::pick(&mut st).unwrap_or(me);
        st.current = next;
        self.cv.notify_all();
        self.wait_for_turn(st, me);
    }

    /// Blocks `me` until every task in `ids` is done. Returns false if no
    /// task could make progress.
    pub(crate) fn block_on(&self, me: usize, ids: &[usize]) -> bool {
        let mut st = lock(&self.state);
        if ids.iter().all(|&i| st.tasks[i] == TaskState::Done) {
            return true;
        }
        st.tasks[me] = TaskState::Blocked(ids.to_vec());
        match Self::pick(&mut st) {
            Some(next) => {
                st.current = next;
                self.cv.notify_all();
                self.wait_for_turn(st, me);
                true
            }
            None => {
                st.tasks[me] = TaskState::Runnable;
                false
            }
        }
    }

    pub(crate) fn finish(&self, me: usize) {
        let mut st = lock(&self.state);
        st.tasks[me] = TaskState::Done;
        if let Some(next) = Self::pick(&mut st) {
            st.current = next;
        }
        self.cv.notify_all();
    }
}

type Job = Box<dyn FnOnce() + Send>;

struct PoolInner {
    queue: Mutex<VecDeque<Job>>,
    cv: Condvar,
    shutdown: AtomicBool,
}

thread_local! {
    static WORKER: Cell<Option<usize>> = const { Cell::new(None) };
}

/// Worker index of the current thread, if it belongs to a pool.
pub(crate) fn current_worker() -> Option<usize> {
    WORKER.with(|w| w.get())
}

pub(crate) struct Pool {
    inner: Arc<PoolInner>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Pool {
    pub(crate) fn new(size: usize) -> Pool {
        let inner = Arc::new(PoolInner {
            queue: Mutex::new(VecDeque::new()),
            cv: Condvar::new(),
            shutdown: AtomicBool::new(false),
        });
        let workers = (0..size.max(1))
            .map(|i| {
                let inner = Arc::clone(&inner);
                std::thread::Builder::new()
                    .name(format!("dexi-worker-{i}"))
                    .stack_size(32 << 20)
                    .spawn(move || {
                        WORKER.with(|w| w.set(Some(i)));
                        loop {
                            let job = {
                                let mut q = lock(&inner.queue);
                                loop {
                                    if let Some(j) = q.pop_front() {
                                        break Some(j);
                                    }
                                    if inner.shutdown.load(Ordering::SeqCst) {
                                        break None;
                                    }
                                    q = inner.cv.wait(q).unwrap_or_else(|e| e.into_inner());
                                }
                            };
                            match job {
                                Some(j) => j(),
                                None => return,
                            }
                        }
                    })
                    .expect("spawn pool worker")
            })
            .collect();
        Pool { inner, workers: Mutex::new(workers) }
    }

    pub(crate) fn submit(&self, job: Job) {
        lock(&self.inner.queue).push_back(job);
        self.inner.cv.notify_one();
    }

    pub(crate) fn try_pop(&self) -> Option<Job> {
        lock(&self.inner.queue).pop_front()
    }

    /// Runs queued jobs on the calling thread until `done` holds, so a
    /// worker that awaits can't starve the pool.
    pub(crate) fn help_until(&self, mut done: impl FnMut() -> bool, park: impl Fn(Duration)) {
        while !done() {
            match self.try_pop() {
                Some(j) => j(),
                None => park(Duration::from_millis(1)),
            }
        }
    }

    pub(crate) fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.cv.notify_all();
        for h in lock(&self.workers).drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        self.shutdown();
    }
}
