//! Thread pool backing the accelerated backend.

use std::sync::OnceLock;

/// Environment variable capping accelerated-backend parallelism.
pub const THREADS_ENV: &str = "VOXELKIT_THREADS";

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Thread count the accelerated pool uses (read once, on first use).
pub fn accelerated_threads() -> usize {
    pool().current_num_threads()
}

fn configured_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(configured_threads())
            .thread_name(|i| format!("voxelkit-{i}"))
            .build()
            .expect("failed to build accelerated thread pool")
    })
}

/// Runs `f` inside the accelerated pool so nested rayon calls use it.
pub(crate) fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool().install(f)
}
