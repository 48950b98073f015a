use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::error::{LabError, Result};

/// Accumulators that can absorb another accumulator of the same kind.
///
/// Results are merged in replica order, so `merge` only needs to be
/// deterministic, not associative in floating point.
pub trait Merge {
    fn merge(&mut self, other: Self);
}

impl<T> Merge for Vec<T> {
    fn merge(&mut self, mut other: Self) {
        self.append(&mut other);
    }
}

impl<A: Merge, B: Merge> Merge for (A, B) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

impl<A: Merge, B: Merge, C: Merge> Merge for (A, B, C) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
        self.2.merge(other.2);
    }
}

pub const DEFAULT_CHUNK: u64 = 512;

/// Replica-parallel executor. Replicas are split into fixed-size chunks; each
/// chunk is folded sequentially and chunk results are merged in index order,
/// which makes the output independent of the number of workers.
#[derive(Clone, Copy, Debug)]
pub struct Exec {
    workers: usize,
    chunk: u64,
}

impl Default for Exec {
    fn default() -> Self {
        Exec::new(1)
    }
}

fn pool(workers: usize) -> Result<Arc<rayon::ThreadPool>> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    if let Some(p) = pools.get(&workers) {
        return Ok(p.clone());
    }
    let p = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("brw-lab-{i}"))
        .build()
        .map_err(|e| LabError::Unsupported(format!("thread pool: {e}")))?;
    let p = Arc::new(p);
    pools.insert(workers, p.clone());
    Ok(p)
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".into()
    }
}

impl Exec {
    pub fn new(workers: usize) -> Self {
        Exec {
            workers: workers.max(1),
            chunk: DEFAULT_CHUNK,
        }
    }

    /// Worker count from `BRW_LAB_WORKERS`, falling back to `default`.
    pub fn from_env(default: usize) -> Self {
        let w = std::env::var("BRW_LAB_WORKERS")
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(default);
        Exec::new(w)
    }

    pub fn with_chunk(mut self, chunk: u64) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn run<A, F>(&self, n: u64, f: F) -> Result<A>
    where
        A: Merge + Default + Send,
        F: Fn(u64, &mut A) -> Result<()> + Sync,
    {
        self.run_with_state(n, || (), |_, i, acc| f(i, acc))
    }

    /// Like [`Exec::run`] with per-chunk scratch state created by `init`.
    pub fn run_with_state<S, A, I, F>(&self, n: u64, init: I, f: F) -> Result<A>
    where
        A: Merge + Default + Send,
        I: Fn() -> S + Sync,
        F: Fn(&mut S, u64, &mut A) -> Result<()> + Sync,
    {
        let chunk = self.chunk;
        let n_chunks = n.div_ceil(chunk);
        let job = |c: u64| -> Result<A> {
            let mut state = init();
            let mut acc = A::default();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                match catch_unwind(AssertUnwindSafe(|| f(&mut state, i, &mut acc))) {
                    Ok(r) => r?,
                    Err(payload) => {
                        return Err(LabError::WorkerPanic {
                            replica: i,
                            message: panic_message(payload),
                        })
                    }
                }
            }
            Ok(acc)
        };
        let parts: Vec<Result<A>> = if self.workers == 1 || n_chunks <= 1 {
            (0..n_chunks).map(job).collect()
        } else {
            pool(self.workers)?.install(|| (0..n_chunks).into_par_iter().map(job).collect())
        };
        let mut out = A::default();
        for p in parts {
            out.merge(p?);
        }
        Ok(out)
    }

    /// Maps every replica to a value, preserving replica order.
    pub fn map<T, F>(&self, n: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync,
    {
        self.run(n, |i, acc: &mut Vec<T>| {
            acc.push(f(i)?);
            Ok(())
        })
    }
}
