//! Kill points: named places where a test can make the process "die".
//!
//! Every instrumented operation calls [`Faults::hit`]. When the configured hit
//! number is reached the call fails with [`Crashed`], and so does every later
//! call, so nothing more reaches the disk: callers propagate the error
//! untouched, which is how a process crash looks from the filesystem.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KillPoint {
    EnqueueCounter,
    EnqueueStaged,
    EnqueueCommitted,
    DequeueRenamed,
    DequeueLeaseTmp,
    DequeueLeased,
    AckRemoved,
    NackRetryUpdated,
    NackLeaseRemoved,
    NackDeadMoved,
    StationDequeued,
    StationDequeuedLogged,
    StationHandled,
    StationForwarded,
    StationEnqueuedLogged,
    StationBeforeAck,
    LbTornAppend,
    SubmitRegistered,
}

impl KillPoint {
    pub const ALL: [KillPoint; 18] = [
        KillPoint::EnqueueCounter,
        KillPoint::EnqueueStaged,
        KillPoint::EnqueueCommitted,
        KillPoint::DequeueRenamed,
        KillPoint::DequeueLeaseTmp,
        KillPoint::DequeueLeased,
        KillPoint::AckRemoved,
        KillPoint::NackRetryUpdated,
        KillPoint::NackLeaseRemoved,
        KillPoint::NackDeadMoved,
        KillPoint::StationDequeued,
        KillPoint::StationDequeuedLogged,
        KillPoint::StationHandled,
        KillPoint::StationForwarded,
        KillPoint::StationEnqueuedLogged,
        KillPoint::StationBeforeAck,
        KillPoint::LbTornAppend,
        KillPoint::SubmitRegistered,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("crashed at kill point {0:?}")]
pub struct Crashed(pub KillPoint);

#[derive(Debug, Default)]
pub struct Faults {
    hits: AtomicU64,
    /// 1-based hit number that crashes; 0 never crashes.
    crash_at: AtomicU64,
    crashed: AtomicBool,
    crashed_at: Mutex<Option<KillPoint>>,
    trail: Mutex<Vec<KillPoint>>,
}

impl Faults {
    pub fn none() -> Faults {
        Faults::default()
    }

    pub fn crash_at(hit: u64) -> Faults {
        let f = Faults::default();
        f.crash_at.store(hit, Ordering::SeqCst);
        f
    }

    pub fn hit(&self, point: KillPoint) -> Result<(), Crashed> {
        if self.crashed.load(Ordering::SeqCst) {
            return Err(Crashed(point));
        }
        let n = self.hits.fetch_add(1, Ordering::SeqCst) + 1;
        self.trail.lock().unwrap_or_else(|e| e.into_inner()).push(point);
        if n == self.crash_at.load(Ordering::SeqCst) {
            *self.crashed_at.lock().unwrap_or_else(|e| e.into_inner()) = Some(point);
            self.crashed.store(true, Ordering::SeqCst);
            return Err(Crashed(point));
        }
        Ok(())
    }

    /// Fails if the process already "died"; used before any side effect.
    pub fn check(&self) -> Result<(), Crashed> {
        if !self.crashed.load(Ordering::SeqCst) {
            return Ok(());
        }
        let at = *self.crashed_at.lock().unwrap_or_else(|e| e.into_inner());
        Err(Crashed(at.unwrap_or(KillPoint::LbTornAppend)))
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn has_crashed(&self) -> bool {
        self.crashed.load(Ordering::SeqCst)
    }

    /// Kill points passed so far, in order.
    pub fn trail(&self) -> Vec<KillPoint> {
        self.trail.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl fmt::Display for KillPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
