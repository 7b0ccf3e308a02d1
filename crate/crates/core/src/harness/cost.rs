//! Wall time and peak resident memory of a piece of work.

use std::fs;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

/// Sampling period of the resident-set watcher (20 Hz).
const PERIOD: Duration = Duration::from_millis(50);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cost {
    pub wall_s: f64,
    /// Peak resident set in bytes; `None` where /proc is unavailable.
    pub peak_bytes: Option<u64>,
}

fn status_kib(field: &str) -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with(field))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Current resident set in bytes.
pub fn resident_bytes() -> Option<u64> {
    status_kib("VmRSS:").map(|k| k * 1024)
}

/// Peak resident set of the process so far, in bytes.
pub fn peak_resident_bytes() -> Option<u64> {
    status_kib("VmHWM:").map(|k| k * 1024)
}

/// Runs `f`, timing it and sampling the process's resident set at 20 Hz.
/// The kernel high-water mark is reset first where permitted, and folded
/// into the result so that spikes between samples are not missed. Memory
/// is process-wide: concurrent work inflates it.
pub fn measure_cost<R>(f: impl FnOnce() -> R) -> (R, Cost) {
    let reset = fs::write("/proc/self/clear_refs", "5").is_ok();
    let peak = Arc::new(AtomicU64::new(resident_bytes().unwrap_or(0)));
    let stop = Arc::new(AtomicBool::new(false));
    let watcher = {
        let (peak, stop) = (Arc::clone(&peak), Arc::clone(&stop));
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                if let Some(b) = resident_bytes() {
                    peak.fetch_max(b, Ordering::Relaxed);
                }
                thread::sleep(PERIOD);
            }
        })
    };
    let start = Instant::now();
    let out = f();
    let wall_s = start.elapsed().as_secs_f64();
    stop.store(true, Ordering::Relaxed);
    let _ = watcher.join();
    let sampled = peak.load(Ordering::Relaxed);
    let peak_bytes = match (resident_bytes(), reset.then(peak_resident_bytes).flatten()) {
        (None, _) => None,
        (Some(now), hwm) => Some(sampled.max(now).max(hwm.unwrap_or(0))),
    };
    (out, Cost { wall_s, peak_bytes })
}
