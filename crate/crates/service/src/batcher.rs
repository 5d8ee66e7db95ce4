//! Cross-request window batching.
//!
//! Requests hand their windows to a dispatcher thread. The dispatcher waits
//! until it has `max_batch_windows` windows or the oldest request has waited
//! `max_wait`, cuts the queued windows into batches with [`batch_plan`], and
//! runs each batch on the scorer pool. Rows are routed back to their request
//! in window order.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use spanguard_core::{Concurrency, ScorerError, SupportScorer, TokenizedExample, Window, WindowInput};
use tokio::sync::oneshot;

use crate::metrics::Metrics;

/// One window of one queued request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSlot {
    /// Position of the request in the queue.
    pub request: usize,
    pub window: usize,
}

/// Greedy batching of queued windows.
///
/// `queue[i]` is the window count of the i-th queued request, oldest first.
/// Windows are taken in queue order and, within a request, in window order;
/// every batch except possibly the last holds exactly `max_batch_windows`.
pub fn batch_plan(queue: &[usize], max_batch_windows: usize) -> Vec<Vec<BatchSlot>> {
    let cap = max_batch_windows.max(1);
    let mut batches = Vec::new();
    let mut current = Vec::with_capacity(cap);
    for (request, &n) in queue.iter().enumerate() {
        for window in 0..n {
            current.push(BatchSlot { request, window });
            if current.len() == cap {
                batches.push(std::mem::replace(&mut current, Vec::with_capacity(cap)));
            }
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

pub type Rows = Vec<Result<Vec<f64>, ScorerError>>;

struct Job {
    example: Arc<TokenizedExample>,
    windows: Arc<Vec<Window>>,
    reply: oneshot::Sender<Rows>,
    enqueued: Instant,
}

/// Per-request collection point for rows arriving from several batches.
struct Pending {
    example: Arc<TokenizedExample>,
    windows: Arc<Vec<Window>>,
    rows: Mutex<Vec<Option<Result<Vec<f64>, ScorerError>>>>,
    remaining: AtomicUsize,
    reply: Mutex<Option<oneshot::Sender<Rows>>>,
}

impl Pending {
    fn fill(&self, window: usize, row: Result<Vec<f64>, ScorerError>) {
        self.rows.lock().expect("rows lock")[window] = Some(row);
        if self.remaining.fetch_sub(1, Ordering::AcqRel) == 1 {
            let rows = std::mem::take(&mut *self.rows.lock().expect("rows lock"))
                .into_iter()
                .map(|r| r.expect("every window filled"))
                .collect();
            if let Some(tx) = self.reply.lock().expect("reply lock").take() {
                let _ = tx.send(rows);
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("batcher stopped")]
pub struct BatcherClosed;

pub struct Batcher {
    tx: Mutex<mpsc::Sender<Job>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatcherOptions {
    pub max_batch_windows: usize,
    pub max_wait: Duration,
    pub threads: usize,
}

impl Batcher {
    pub fn start(scorer: Arc<dyn SupportScorer>, options: BatcherOptions, metrics: Arc<Metrics>) -> Self {
        let threads = match scorer.concurrency() {
            Concurrency::Concurrent => options.threads.max(1),
            Concurrency::SingleFlight => 1,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("scorer-{i}"))
            .build()
            .expect("scorer thread pool");
        let (tx, rx) = mpsc::channel::<Job>();
        std::thread::Builder::new()
            .name("batcher".into())
            .spawn(move || dispatch_loop(rx, scorer, options, pool, metrics))
            .expect("batcher thread");
        Self { tx: Mutex::new(tx) }
    }

    /// Scores all `windows` of `example`; rows come back in window order.
    pub async fn score(
        &self,
        example: Arc<TokenizedExample>,
        windows: Arc<Vec<Window>>,
    ) -> Result<Rows, BatcherClosed> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let (reply, rx) = oneshot::channel();
        let job = Job {
            example,
            windows,
            reply,
            enqueued: Instant::now(),
        };
        self.tx
            .lock()
            .map_err(|_| BatcherClosed)?
            .send(job)
            .map_err(|_| BatcherClosed)?;
        rx.await.map_err(|_| BatcherClosed)
    }
}

fn dispatch_loop(
    rx: mpsc::Receiver<Job>,
    scorer: Arc<dyn SupportScorer>,
    options: BatcherOptions,
    pool: rayon::ThreadPool,
    metrics: Arc<Metrics>,
) {
    let cap = options.max_batch_windows.max(1);
    while let Ok(first) = rx.recv() {
        let deadline = first.enqueued + options.max_wait;
        let mut queued = first.windows.len();
        let mut jobs = vec![first];
        while queued < cap {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            match rx.recv_timeout(deadline - now) {
                Ok(job) => {
                    queued += job.windows.len();
                    jobs.push(job);
                }
                Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => break,
            }
        }

        let counts: Vec<usize> = jobs.iter().map(|j| j.windows.len()).collect();
        let pending: Vec<Arc<Pending>> = jobs
            .into_iter()
            .map(|j| {
                Arc::new(Pending {
                    rows: Mutex::new(vec![None; j.windows.len()]),
                    remaining: AtomicUsize::new(j.windows.len()),
                    example: j.example,
                    windows: j.windows,
                    reply: Mutex::new(Some(j.reply)),
                })
            })
            .collect();

        for batch in batch_plan(&counts, cap) {
            metrics.record_batch(batch.len());
            let members: Vec<(Arc<Pending>, usize)> = batch
                .iter()
                .map(|s| (pending[s.request].clone(), s.window))
                .collect();
            let scorer = scorer.clone();
            pool.spawn(move || run_batch(&*scorer, &members));
        }
    }
}

fn run_batch(scorer: &dyn SupportScorer, members: &[(Arc<Pending>, usize)]) {
    let inputs: Vec<WindowInput<'_>> = members
        .iter()
        .map(|(p, w)| WindowInput {
            example: &p.example,
            window: &p.windows[*w],
        })
        .collect();
    let results = catch_unwind(AssertUnwindSafe(|| scorer.score_batch(&inputs)))
        .unwrap_or_else(|_| vec![Err(ScorerError("scorer panicked".into())); inputs.len()]);
    let mut results = results.into_iter();
    for (p, w) in members {
        let row = results
            .next()
            .unwrap_or_else(|| Err(ScorerError("scorer returned too few rows".into())));
        p.fill(*w, row);
    }
}
