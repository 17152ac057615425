//! Heap accounting allocator.
//!
//! Counters are per thread, so measurements are not disturbed by whatever
//! other threads (for example a parallel test harness) allocate. Install it
//! in a binary with
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: vgda::membench::CountingAlloc = vgda::membench::CountingAlloc;
//! ```

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

pub struct CountingAlloc;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
    static BASE: Cell<isize> = const { Cell::new(0) };
    static LARGEST: Cell<usize> = const { Cell::new(0) };
    static CAP: Cell<usize> = const { Cell::new(usize::MAX) };
    static OVER: Cell<bool> = const { Cell::new(false) };
}

fn grow(bytes: usize) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + bytes as isize;
        live.set(now);
        let _ = PEAK.try_with(|p| {
            if now > p.get() {
                p.set(now);
            }
        });
        let base = BASE.try_with(Cell::get).unwrap_or(0);
        let cap = CAP.try_with(Cell::get).unwrap_or(usize::MAX);
        if now - base > cap as isize {
            let _ = OVER.try_with(|o| o.set(true));
        }
    });
    let _ = LARGEST.try_with(|l| {
        if bytes > l.get() {
            l.set(bytes);
        }
    });
}

fn shrink(bytes: usize) {
    let _ = LIVE.try_with(|live| live.set(live.get() - bytes as isize));
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        shrink(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            shrink(layout.size());
            grow(new_size);
        }
        p
    }
}

/// Counters relative to the last [`reset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AllocStats {
    /// Bytes allocated since the reset and not yet freed.
    pub live: usize,
    /// High-water mark of `live`.
    pub peak: usize,
    /// Largest single allocation.
    pub largest: usize,
}

/// Starts a new measurement window on this thread: the current live bytes
/// become the baseline and the high-water mark restarts from it.
pub fn reset() {
    let live = LIVE.with(Cell::get);
    BASE.with(|b| b.set(live));
    PEAK.with(|p| p.set(live));
    LARGEST.with(|l| l.set(0));
    OVER.with(|o| o.set(false));
}

pub fn stats() -> AllocStats {
    let base = BASE.with(Cell::get);
    AllocStats {
        live: (LIVE.with(Cell::get) - base).max(0) as usize,
        peak: (PEAK.with(Cell::get) - base).max(0) as usize,
        largest: LARGEST.with(Cell::get),
    }
}

/// Limits live bytes above the baseline; `None` removes the limit.
pub fn set_cap(cap: Option<usize>) {
    CAP.with(|c| c.set(cap.unwrap_or(usize::MAX)));
    OVER.with(|o| o.set(false));
}

/// `Some(cap)` once the cap has been exceeded in this window. Usable as a
/// tape guard.
pub fn cap_exceeded() -> Option<usize> {
    if OVER.with(Cell::get) {
        Some(CAP.with(Cell::get))
    } else {
        None
    }
}

/// Whether [`CountingAlloc`] is the global allocator of this process.
pub fn is_installed() -> bool {
    let before = LIVE.with(Cell::get);
    let probe = std::hint::black_box(Box::new([0u8; 64]));
    let after = LIVE.with(Cell::get);
    drop(probe);
    after != before
}
