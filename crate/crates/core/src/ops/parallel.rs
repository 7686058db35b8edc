//! Worker count for the batch-item loops inside convolution.
//!
//! Work is cut into fixed blocks of items independent of the worker count,
//! and partial results are combined in block order, so results do not
//! depend on how many workers ran.

use core::ops::Range;

/// Batch items per block.
pub(crate) const BLOCK: usize = 8;

#[cfg(feature = "std")]
static THREADS: core::sync::atomic::AtomicUsize = core::sync::atomic::AtomicUsize::new(1);

/// Sets the number of workers used by convolution (at least 1). Without the
/// `std` feature everything runs on the calling thread.
pub fn set_threads(n: usize) {
    #[cfg(feature = "std")]
    THREADS.store(n.max(1), core::sync::atomic::Ordering::Relaxed);
    #[cfg(not(feature = "std"))]
    let _ = n;
}

pub fn threads() -> usize {
    #[cfg(feature = "std")]
    return THREADS.load(core::sync::atomic::Ordering::Relaxed);
    #[cfg(not(feature = "std"))]
    1
}

pub(crate) fn blocks(items: usize) -> impl Iterator<Item = Range<usize>> {
    (0..items.div_ceil(BLOCK)).map(move |b| b * BLOCK..((b + 1) * BLOCK).min(items))
}

/// Runs `work` once per task, spreading tasks over the workers.
pub(crate) fn run<W, F>(tasks: &mut [W], work: F)
where
    W: Send,
    F: Fn(&mut W) + Sync,
{
    let workers = threads().min(tasks.len());
    #[cfg(feature = "std")]
    if workers > 1 {
        let per = tasks.len().div_ceil(workers);
        std::thread::scope(|s| {
            let mut groups = tasks.chunks_mut(per);
            let first = groups.next();
            for g in groups {
                let work = &work;
                s.spawn(move || g.iter_mut().for_each(work));
            }
            if let Some(g) = first {
                g.iter_mut().for_each(&work);
            }
        });
        return;
    }
    let _ = workers;
    tasks.iter_mut().for_each(work);
}
