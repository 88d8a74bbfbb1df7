//! System-wide caps on live workers, in-memory requests and open leases.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::config::LimitsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resource {
    Workers,
    Requests,
    Leases,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Workers, Resource::Requests, Resource::Leases];

    pub fn reason(self) -> &'static str {
        match self {
            Resource::Workers => "max-workers",
            Resource::Requests => "max-requests",
            Resource::Leases => "max-leases",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rejected(pub Resource);

impl std::fmt::Display for Rejected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0.reason())
    }
}

impl std::error::Error for Rejected {}

#[derive(Debug)]
struct Counter {
    cap: usize,
    live: AtomicUsize,
    peak: AtomicUsize,
}

/// Live counters; cloning shares them.
#[derive(Debug, Clone)]
pub struct Limits {
    counters: Arc<[Counter; 3]>,
}

impl Limits {
    pub fn new(cfg: LimitsConfig) -> Limits {
        let counter = |cap| Counter { cap, live: AtomicUsize::new(0), peak: AtomicUsize::new(0) };
        Limits { counters: Arc::new([counter(cfg.max_workers), counter(cfg.max_requests), counter(cfg.max_leases)]) }
    }

    /// Takes one unit of `what`, or reports which cap is reached.
    pub fn admit(&self, what: Resource) -> Result<Permit, Rejected> {
        let c = &self.counters[what.slot()];
        let mut cur = c.live.load(Ordering::Relaxed);
        loop {
            if cur >= c.cap {
                return Err(Rejected(what));
            }
            match c.live.compare_exchange_weak(cur, cur + 1, Ordering::AcqRel, Ordering::Relaxed) {
                Ok(_) => break,
                Err(seen) => cur = seen,
            }
        }
        c.peak.fetch_max(cur + 1, Ordering::AcqRel);
        Ok(Permit { limits: self.clone(), what })
    }

    pub fn live(&self, what: Resource) -> usize {
        self.counters[what.slot()].live.load(Ordering::Acquire)
    }

    /// Highest value `live` ever reached.
    pub fn peak(&self, what: Resource) -> usize {
        self.counters[what.slot()].peak.load(Ordering::Acquire)
    }

    pub fn cap(&self, what: Resource) -> usize {
        self.counters[what.slot()].cap
    }
}

/// Released on drop.
#[derive(Debug)]
pub struct Permit {
    limits: Limits,
    what: Resource,
}

impl Permit {
    pub fn resource(&self) -> Resource {
        self.what
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        self.limits.counters[self.what.slot()].live.fetch_sub(1, Ordering::AcqRel);
    }
}
