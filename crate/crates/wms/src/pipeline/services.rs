//! Worker pools and their supervisor.
//!
//! Workers are threads that serve at most `max_requests` entries and then
//! exit; the supervisor respawns them, restarts any whose heartbeat goes
//! stale, reclaims expired leases, aborts jobs left in `dead` without a
//! terminal event and purges old staged entries.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use wms_core::lb::{EventKind, JobId};
use wms_core::{Span, Timestamp};

use super::recover::RecoverAllReport;
use super::station::StepOutcome;
use super::{PipelineError, System};
use crate::clock::span_from_std;
use crate::lb::job_id_from_bytes;
use crate::limits::{Permit, Rejected, Resource};

pub(crate) const SUPERVISOR: &str = "supervisor";
const IDLE_SLEEP: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ward {
    Worker(String),
    Lease { queue: String, entry: String },
    Job(JobId),
}

impl fmt::Display for Ward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ward::Worker(id) => write!(f, "worker:{id}"),
            Ward::Lease { queue, entry } => write!(f, "lease:{queue}/{entry}"),
            Ward::Job(job) => write!(f, "job:{job}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryAction {
    RestartWorker,
    ReclaimLease,
    AbortJob,
}

impl RecoveryAction {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryAction::RestartWorker => "restart-worker",
            RecoveryAction::ReclaimLease => "reclaim-lease",
            RecoveryAction::AbortJob => "abort-job",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardianRecord {
    pub ward: Ward,
    pub guardian: String,
    pub last_heartbeat: Timestamp,
    pub action: RecoveryAction,
}

/// One record per live ward.
#[derive(Debug, Default)]
pub struct Registry {
    records: Mutex<BTreeMap<Ward, GuardianRecord>>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    fn map(&self) -> std::sync::MutexGuard<'_, BTreeMap<Ward, GuardianRecord>> {
        self.records.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn watch(&self, ward: Ward, guardian: &str, action: RecoveryAction, now: Timestamp) {
        let rec = GuardianRecord { ward: ward.clone(), guardian: guardian.into(), last_heartbeat: now, action };
        self.map().insert(ward, rec);
    }

    pub fn heartbeat(&self, ward: &Ward, now: Timestamp) {
        if let Some(r) = self.map().get_mut(ward) {
            r.last_heartbeat = r.last_heartbeat.max(now);
        }
    }

    pub fn release(&self, ward: &Ward) -> Option<GuardianRecord> {
        self.map().remove(ward)
    }

    pub fn records(&self) -> Vec<GuardianRecord> {
        self.map().values().cloned().collect()
    }

    /// Removes and returns every ward silent for longer than `threshold`, so
    /// each staleness episode is acted on once.
    pub fn take_stale(&self, now: Timestamp, threshold: Span) -> Vec<GuardianRecord> {
        let mut map = self.map();
        let stale: Vec<Ward> =
            map.values().filter(|r| now.saturating_since(r.last_heartbeat) > threshold).map(|r| r.ward.clone()).collect();
        stale.iter().filter_map(|w| map.remove(w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTaken {
    pub at: Timestamp,
    pub action: RecoveryAction,
    pub ward: Ward,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceReport {
    pub recovered: RecoverAllReport,
    pub actions: Vec<ActionTaken>,
    /// Requests served by each worker that ever ran.
    pub served: BTreeMap<String, u64>,
    pub peak_workers: usize,
    pub peak_requests: usize,
    pub peak_leases: usize,
}

enum WorkerExit {
    Retired,
    Stopped,
    Abandoned,
}

struct WorkerSlot {
    id: String,
    station: usize,
    retire: Arc<AtomicBool>,
    handle: JoinHandle<WorkerExit>,
}

struct Shared {
    sys: Arc<System>,
    registry: Registry,
    stop: AtomicBool,
    kills: AtomicUsize,
    next_worker: AtomicU64,
    actions: Mutex<Vec<ActionTaken>>,
    served: Mutex<BTreeMap<String, u64>>,
}

impl Shared {
    fn act(&self, action: RecoveryAction, ward: Ward, detail: &str) {
        let at = self.sys.clock().now();
        self.sys.runlog().log(SUPERVISOR, "-", &ward.to_string(), action.name(), detail);
        let mut actions = self.actions.lock().unwrap_or_else(|e| e.into_inner());
        actions.push(ActionTaken { at, action, ward, detail: detail.into() });
    }

    fn set_served(&self, worker: &str, n: u64) {
        self.served.lock().unwrap_or_else(|e| e.into_inner()).insert(worker.to_string(), n);
    }
}

/// Running worker pools plus the supervisor thread.
pub struct Services {
    shared: Arc<Shared>,
    supervisor: Option<JoinHandle<()>>,
    recovered: RecoverAllReport,
}

impl Services {
    /// Runs [`System::recover_all`], then starts the supervisor, which
    /// spawns the pools.
    pub fn start(sys: Arc<System>) -> Result<Services, PipelineError> {
        let recovered = sys.recover_all()?;
        let shared = Arc::new(Shared {
            sys,
            registry: Registry::new(),
            stop: AtomicBool::new(false),
            kills: AtomicUsize::new(0),
            next_worker: AtomicU64::new(1),
            actions: Mutex::new(Vec::new()),
            served: Mutex::new(BTreeMap::new()),
        });
        let s = shared.clone();
        let supervisor = thread::Builder::new().name(SUPERVISOR.into()).spawn(move || supervisor_main(&s))?;
        Ok(Services { shared, supervisor: Some(supervisor), recovered })
    }

    pub fn system(&self) -> &Arc<System> {
        &self.shared.sys
    }

    pub fn recovered(&self) -> RecoverAllReport {
        self.recovered
    }

    /// The next `n` dequeues make their worker vanish with the lease held.
    pub fn kill_workers(&self, n: usize) {
        self.shared.kills.fetch_add(n, Ordering::AcqRel);
    }

    pub fn pending_kills(&self) -> usize {
        self.shared.kills.load(Ordering::Acquire)
    }

    pub fn actions(&self) -> Vec<ActionTaken> {
        self.shared.actions.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn guardians(&self) -> Vec<GuardianRecord> {
        self.shared.registry.records()
    }

    /// True when no queue holds a ready or in-flight entry.
    pub fn is_idle(&self) -> Result<bool, PipelineError> {
        for q in self.shared.sys.queues() {
            if q.depth()?.live() > 0 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Waits until two consecutive polls find every queue empty.
    pub fn wait_idle(&self, timeout: Duration) -> Result<bool, PipelineError> {
        let until = Instant::now() + timeout;
        let mut quiet = 0;
        while Instant::now() < until {
            if self.is_idle()? {
                quiet += 1;
                if quiet >= 2 {
                    return Ok(true);
                }
            } else {
                quiet = 0;
            }
            thread::sleep(Duration::from_millis(10));
        }
        Ok(false)
    }

    /// Stops every worker and the supervisor and waits for them.
    pub fn stop(mut self) -> ServiceReport {
        self.shutdown();
        let limits = self.shared.sys.limits();
        ServiceReport {
            recovered: self.recovered,
            actions: self.actions(),
            served: self.shared.served.lock().unwrap_or_else(|e| e.into_inner()).clone(),
            peak_workers: limits.peak(Resource::Workers),
            peak_requests: limits.peak(Resource::Requests),
            peak_leases: limits.peak(Resource::Leases),
        }
    }

    fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(h) = self.supervisor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Services {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn spawn_worker(shared: &Arc<Shared>, station: usize) -> Result<WorkerSlot, Rejected> {
    let permit = shared.sys.limits().admit(Resource::Workers)?;
    let n = shared.next_worker.fetch_add(1, Ordering::AcqRel);
    let id = format!("{}-{n}", shared.sys.config().stations[station].name);
    let ward = Ward::Worker(id.clone());
    shared.registry.watch(ward, SUPERVISOR, RecoveryAction::RestartWorker, shared.sys.clock().now());
    let retire = Arc::new(AtomicBool::new(false));
    let (s, r, wid) = (shared.clone(), retire.clone(), id.clone());
    let handle = thread::Builder::new()
        .name(id.clone())
        .spawn(move || worker_main(&s, station, &wid, &r, permit))
        .expect("spawning a worker thread");
    Ok(WorkerSlot { id, station, retire, handle })
}

fn worker_main(shared: &Shared, station: usize, id: &str, retire: &AtomicBool, _permit: Permit) -> WorkerExit {
    let sys = &shared.sys;
    let name = &sys.config().stations[station].name;
    let max = sys.config().stations[station].max_requests;
    let ward = Ward::Worker(id.to_string());
    let abandon = || shared.kills.fetch_update(Ordering::AcqRel, Ordering::Acquire, |k| k.checked_sub(1)).is_ok();
    let mut served = 0u64;
    loop {
        if shared.stop.load(Ordering::Acquire) || retire.load(Ordering::Acquire) {
            return WorkerExit::Stopped;
        }
        shared.registry.heartbeat(&ward, sys.clock().now());
        if served >= max {
            sys.runlog().log(id, name, "-", "exit", &format!("served {served}"));
            return WorkerExit::Retired;
        }
        match sys.step_with(station, id, &abandon) {
            Ok(StepOutcome::Abandoned) => {
                shared.set_served(id, served + 1);
                return WorkerExit::Abandoned;
            }
            Ok(outcome) => {
                if outcome.took_request() {
                    served += 1;
                    shared.set_served(id, served);
                }
                if matches!(
                    outcome,
                    StepOutcome::Idle | StepOutcome::Throttled(_) | StepOutcome::Deferred | StepOutcome::Backpressure
                ) {
                    thread::sleep(IDLE_SLEEP);
                }
            }
            Err(e) => {
                sys.runlog().log(id, name, "-", "step", &format!("error: {e}"));
                thread::sleep(IDLE_SLEEP);
            }
        }
    }
}

struct Supervisor<'a> {
    shared: &'a Arc<Shared>,
    slots: Vec<WorkerSlot>,
    retiring: Vec<JoinHandle<WorkerExit>>,
    /// Dead entries by whether they are settled. A job found live next to a
    /// dead entry is aborted on the following pass, if the worker has not
    /// recorded it by then.
    dead_seen: BTreeMap<(usize, String), bool>,
}

fn supervisor_main(shared: &Arc<Shared>) {
    let mut sup = Supervisor { shared, slots: Vec::new(), retiring: Vec::new(), dead_seen: BTreeMap::new() };
    let interval = shared.sys.config().supervisor.interval;
    while !shared.stop.load(Ordering::Acquire) {
        if let Err(e) = sup.pass() {
            shared.sys.runlog().log(SUPERVISOR, "-", "-", "pass", &format!("error: {e}"));
        }
        thread::sleep(interval);
    }
    for slot in sup.slots.drain(..) {
        slot.retire.store(true, Ordering::Release);
        let _ = slot.handle.join();
        shared.registry.release(&Ward::Worker(slot.id));
    }
    for h in sup.retiring.drain(..) {
        let _ = h.join();
    }
}

impl Supervisor<'_> {
    fn pass(&mut self) -> Result<(), PipelineError> {
        let shared = self.shared;
        let sys = &shared.sys;

        let mut i = 0;
        while i < self.slots.len() {
            if !self.slots[i].handle.is_finished() {
                i += 1;
                continue;
            }
            let slot = self.slots.swap_remove(i);
            let ward = Ward::Worker(slot.id.clone());
            shared.registry.release(&ward);
            match slot.handle.join() {
                Ok(WorkerExit::Retired) | Ok(WorkerExit::Stopped) => {}
                Ok(WorkerExit::Abandoned) => shared.act(RecoveryAction::RestartWorker, ward, "exited holding a lease"),
                Err(_) => shared.act(RecoveryAction::RestartWorker, ward, "panicked"),
            }
        }

        let threshold = span_from_std(sys.config().heartbeat_threshold());
        for rec in shared.registry.take_stale(sys.clock().now(), threshold) {
            let Ward::Worker(id) = &rec.ward else { continue };
            if let Some(pos) = self.slots.iter().position(|s| &s.id == id) {
                let slot = self.slots.swap_remove(pos);
                slot.retire.store(true, Ordering::Release);
                self.retiring.push(slot.handle);
                shared.act(RecoveryAction::RestartWorker, rec.ward, "heartbeat stale");
            }
        }
        let (done, running): (Vec<_>, Vec<_>) = self.retiring.drain(..).partition(|h| h.is_finished());
        self.retiring = running;
        for h in done {
            let _ = h.join();
        }

        // one worker per station per round, so a tight global cap still
        // leaves every station at least one worker
        let stations = &sys.config().stations;
        let mut have: Vec<usize> =
            (0..stations.len()).map(|i| self.slots.iter().filter(|s| s.station == i).count()).collect();
        let widest = stations.iter().map(|s| s.pool).max().unwrap_or(0);
        'fill: for round in 0..widest {
            for (station, st) in stations.iter().enumerate() {
                if have[station] != round || round >= st.pool {
                    continue;
                }
                match spawn_worker(shared, station) {
                    Ok(slot) => {
                        self.slots.push(slot);
                        have[station] += 1;
                    }
                    Err(_) => break 'fill,
                }
            }
        }

        for q in sys.queues() {
            for entry in q.reclaim_expired()? {
                let ward = Ward::Lease { queue: q.name().to_string(), entry };
                shared.act(RecoveryAction::ReclaimLease, ward, "lease expired");
            }
        }

        for (i, q) in sys.queues().iter().enumerate() {
            for e in q.dead_entries()? {
                let key = (i, e.id.clone());
                let pending = match self.dead_seen.get(&key) {
                    Some(true) => continue,
                    Some(false) => true,
                    None => false,
                };
                let live_job = job_id_from_bytes(&e.payload)
                    .filter(|job| matches!(sys.lb().job_state(job), Ok(s) if !s.kind.is_terminal()));
                let Some(job) = live_job else {
                    self.dead_seen.insert(key, true);
                    continue;
                };
                if !pending {
                    self.dead_seen.insert(key, false);
                    continue;
                }
                let why = format!("retries exhausted at {}", q.name());
                sys.lb().record(&job, EventKind::Aborted(why), SUPERVISOR, 1)?;
                self.dead_seen.insert(key, true);
                shared.act(RecoveryAction::AbortJob, Ward::Job(job), "dead-lettered without a terminal event");
            }
            q.purge_stale_staging()?;
        }
        Ok(())
    }
}
