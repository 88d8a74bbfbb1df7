//! Durable bounded queues on the filesystem.
//!
//! ```text
//! <root>/<queue>/staging/<id>          written and flushed, not yet visible
//! <root>/<queue>/ready/<id>            committed, waiting for a consumer
//! <root>/<queue>/inflight/<id>         leased to a consumer
//! <root>/<queue>/inflight/<id>.lease   consumer|deadline|token
//! <root>/<queue>/dead/<id>             retries exhausted or cancelled
//! <root>/<queue>/counter               last entry number handed out
//! ```
//!
//! An entry file is a `<retry>|<created>` header line followed by the payload.
//! Every state change is a rename, so an entry is always in exactly one
//! directory. Capacity counts `ready` plus `inflight` and is checked under a
//! lock on the queue directory, which is also held by every move back into
//! `ready`.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::Rng;
use wms_core::{Span, Timestamp};

use crate::clock::{parse_rfc3339, to_rfc3339, Clock};
use crate::faults::{Crashed, Faults, KillPoint};
use crate::fsutil::{file_names, remove_if_exists, sync_dir, write_atomic, write_synced};

pub const DEFAULT_LEASE: Span = Span::from_secs(60);
pub const DEFAULT_STAGE_TTL: Span = Span::from_secs(600);
pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 20;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueConfig {
    pub name: String,
    /// Directory holding all queues; this queue lives in `<root>/<name>`.
    pub root: PathBuf,
    /// Maximum committed plus in-flight entries.
    pub capacity: usize,
    pub lease: Span,
    pub max_retries: u32,
    pub stage_ttl: Span,
    pub max_payload: usize,
}

impl QueueConfig {
    pub fn new(name: impl Into<String>, root: impl Into<PathBuf>, capacity: usize) -> QueueConfig {
        QueueConfig {
            name: name.into(),
            root: root.into(),
            capacity,
            lease: DEFAULT_LEASE,
            max_retries: DEFAULT_MAX_RETRIES,
            stage_ttl: DEFAULT_STAGE_TTL,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }

    pub fn validate(&self) -> Result<(), SpoolError> {
        let bad = |m: &str| Err(SpoolError::InvalidConfig(format!("queue {}: {m}", self.name)));
        if self.name.is_empty() || !self.name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
            return bad("name must be non-empty and use only [A-Za-z0-9_-]");
        }
        if self.capacity < 1 {
            return bad("capacity must be at least 1");
        }
        if self.lease.micros() <= 0 {
            return bad("lease duration must be positive");
        }
        if self.stage_ttl.micros() < 0 {
            return bad("stage ttl must not be negative");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpoolError {
    #[error("queue {queue} is full (capacity {capacity})")]
    QueueFull { queue: String, capacity: usize },
    #[error("payload of {size} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("stale lease on entry {0}")]
    StaleLease(String),
    #[error("invalid queue config: {0}")]
    InvalidConfig(String),
    #[error("corrupt spool file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("storage error: {0}")]
    Storage(#[from] io::Error),
    #[error(transparent)]
    Crashed(#[from] Crashed),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpoolEntry {
    pub id: String,
    pub payload: Vec<u8>,
    pub retry: u32,
    pub created: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lease {
    pub entry: String,
    pub consumer: String,
    pub deadline: Timestamp,
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NackMode {
    /// The handler failed: counts against `max_retries`.
    Failure,
    /// Downstream congestion: the entry goes back untouched.
    Backpressure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NackOutcome {
    Requeued { retry: u32 },
    DeadLettered { retry: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecoveryReport {
    /// Entries moved from `inflight` back to `ready`.
    pub reclaimed: usize,
    /// How many of those had an expired lease (the rest had none).
    pub expired_leases: usize,
    pub purged_staging: usize,
    /// Leftover lease and temporary files removed.
    pub stray_files: usize,
}

impl RecoveryReport {
    pub fn is_zero(&self) -> bool {
        *self == RecoveryReport::default()
    }

    pub fn add(&mut self, other: RecoveryReport) {
        self.reclaimed += other.reclaimed;
        self.expired_leases += other.expired_leases;
        self.purged_staging += other.purged_staging;
        self.stray_files += other.stray_files;
    }
}

impl fmt::Display for RecoveryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "reclaimed={} expired_leases={} purged_staging={} stray_files={}",
            self.reclaimed, self.expired_leases, self.purged_staging, self.stray_files
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Depth {
    pub staging: usize,
    pub ready: usize,
    pub inflight: usize,
    pub dead: usize,
}

impl Depth {
    /// What counts against capacity.
    pub fn live(&self) -> usize {
        self.ready + self.inflight
    }
}

fn is_entry_name(name: &str) -> bool {
    !name.contains('.')
}

fn encode_entry(retry: u32, created: Timestamp, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("{retry}|{}\n", to_rfc3339(created)).into_bytes();
    out.extend_from_slice(payload);
    out
}

fn decode_entry(id: &str, bytes: &[u8]) -> Option<SpoolEntry> {
    let nl = bytes.iter().position(|b| *b == b'\n')?;
    let header = std::str::from_utf8(&bytes[..nl]).ok()?;
    let (retry, created) = header.split_once('|')?;
    Some(SpoolEntry {
        id: id.to_string(),
        payload: bytes[nl + 1..].to_vec(),
        retry: retry.parse().ok()?,
        created: parse_rfc3339(created)?,
    })
}

fn not_found(e: &io::Error) -> bool {
    e.kind() == io::ErrorKind::NotFound
}

pub struct Queue {
    cfg: QueueConfig,
    dir: PathBuf,
    clock: Arc<dyn Clock>,
    faults: Arc<Faults>,
    /// Lease-less in-flight entries and when they were first noticed.
    unleased_since: Mutex<HashMap<String, Timestamp>>,
    /// Staged files without a readable header and when they were first noticed.
    unreadable_since: Mutex<HashMap<String, Timestamp>>,
}

impl fmt::Debug for Queue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Queue").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Queue {
    pub fn open(cfg: QueueConfig, clock: Arc<dyn Clock>, faults: Arc<Faults>) -> Result<Queue, SpoolError> {
        cfg.validate()?;
        let dir = cfg.root.join(&cfg.name);
        for sub in ["staging", "ready", "inflight", "dead"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        Ok(Queue {
            cfg,
            dir,
            clock,
            faults,
            unleased_since: Mutex::new(HashMap::new()),
            unreadable_since: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &QueueConfig {
        &self.cfg
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn sub(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn path(&self, sub: &str, id: &str) -> PathBuf {
        self.dir.join(sub).join(id)
    }

    fn lease_path(&self, id: &str) -> PathBuf {
        self.dir.join("inflight").join(format!("{id}.lease"))
    }

    fn lock(&self) -> io::Result<File> {
        let f = File::open(&self.dir)?;
        f.lock()?;
        Ok(f)
    }

    fn alive(&self) -> Result<(), SpoolError> {
        Ok(self.faults.check()?)
    }

    fn entry_ids(&self, sub: &str) -> io::Result<Vec<String>> {
        Ok(file_names(&self.sub(sub))?.into_iter().filter(|n| is_entry_name(n)).collect())
    }

    /// Entry counts per directory. An entry renamed from `ready` to
    /// `inflight` while the listing runs is counted once, not twice.
    pub fn depth(&self) -> Result<Depth, SpoolError> {
        let staging = self.entry_ids("staging")?.len();
        let ready = self.entry_ids("ready")?;
        let inflight = self.entry_ids("inflight")?.into_iter().filter(|id| ready.binary_search(id).is_err()).count();
        let dead = self.entry_ids("dead")?.len();
        Ok(Depth { staging, ready: ready.len(), inflight, dead })
    }

    fn next_counter(&self) -> Result<u64, SpoolError> {
        let path = self.sub("counter");
        let current = match fs::read_to_string(&path) {
            Ok(s) => s.trim().parse::<u64>().map_err(|e| SpoolError::Corrupt { path: path.clone(), reason: e.to_string() })?,
            Err(e) if not_found(&e) => 0,
            Err(e) => return Err(e.into()),
        };
        let next = current + 1;
        write_atomic(&path, format!("{next}\n").as_bytes())?;
        Ok(next)
    }

    /// Stages, flushes and commits `payload`; returns once it is visible in `ready`.
    pub fn enqueue(&self, payload: &[u8]) -> Result<String, SpoolError> {
        self.alive()?;
        if payload.len() > self.cfg.max_payload {
            return Err(SpoolError::PayloadTooLarge { size: payload.len(), max: self.cfg.max_payload });
        }
        let _guard = self.lock()?;
        // ready is listed before inflight: a concurrent dequeue can only be
        // counted twice, never missed, and moves back into ready take the lock
        let live = self.entry_ids("ready")?.len() + self.entry_ids("inflight")?.len();
        if live >= self.cfg.capacity {
            return Err(SpoolError::QueueFull { queue: self.cfg.name.clone(), capacity: self.cfg.capacity });
        }
        let n = self.next_counter()?;
        self.faults.hit(KillPoint::EnqueueCounter)?;

        let id = format!("{n:012}-{:08x}", rand::rng().random::<u32>());
        let staged = self.path("staging", &id);
        write_synced(&staged, &encode_entry(0, self.clock.now(), payload))?;
        self.faults.hit(KillPoint::EnqueueStaged)?;

        fs::rename(&staged, self.path("ready", &id))?;
        sync_dir(&self.sub("ready"))?;
        self.faults.hit(KillPoint::EnqueueCommitted)?;
        Ok(id)
    }

    /// Leases the oldest ready entry to `consumer`.
    pub fn dequeue(&self, consumer: &str) -> Result<Option<(SpoolEntry, Lease)>, SpoolError> {
        self.alive()?;
        let mut taken = None;
        for id in self.entry_ids("ready")? {
            match fs::rename(self.path("ready", &id), self.path("inflight", &id)) {
                Ok(()) => {
                    taken = Some(id);
                    break;
                }
                // another consumer won the rename
                Err(e) if not_found(&e) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        let Some(id) = taken else { return Ok(None) };
        self.faults.hit(KillPoint::DequeueRenamed)?;

        let lease = Lease {
            entry: id.clone(),
            consumer: consumer.to_string(),
            deadline: self.clock.now() + self.cfg.lease,
            token: format!("{:032x}", rand::rng().random::<u128>()),
        };
        let lease_path = self.lease_path(&id);
        let tmp = lease_path.with_extension("lease.tmp");
        write_synced(&tmp, format!("{}|{}|{}", lease.consumer, to_rfc3339(lease.deadline), lease.token).as_bytes())?;
        self.faults.hit(KillPoint::DequeueLeaseTmp)?;
        fs::rename(&tmp, &lease_path)?;
        self.faults.hit(KillPoint::DequeueLeased)?;

        let path = self.path("inflight", &id);
        let bytes = fs::read(&path)?;
        let entry = decode_entry(&id, &bytes).ok_or(SpoolError::Corrupt { path, reason: "bad entry header".into() })?;
        Ok(Some((entry, lease)))
    }

    fn read_lease(&self, id: &str) -> io::Result<Option<Lease>> {
        let text = match fs::read_to_string(self.lease_path(id)) {
            Ok(t) => t,
            Err(e) if not_found(&e) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut parts = text.trim_end().splitn(3, '|');
        let (Some(consumer), Some(deadline), Some(token)) = (parts.next(), parts.next(), parts.next()) else {
            return Ok(None);
        };
        let Some(deadline) = parse_rfc3339(deadline) else { return Ok(None) };
        Ok(Some(Lease { entry: id.to_string(), consumer: consumer.into(), deadline, token: token.into() }))
    }

    fn validate(&self, lease: &Lease) -> Result<(), SpoolError> {
        let stale = || SpoolError::StaleLease(lease.entry.clone());
        let current = self.read_lease(&lease.entry)?.ok_or_else(stale)?;
        if current.token != lease.token || self.clock.now() > current.deadline {
            return Err(stale());
        }
        if !self.path("inflight", &lease.entry).exists() {
            return Err(stale());
        }
        Ok(())
    }

    /// Consumer-side commit: the entry is gone for good.
    pub fn ack(&self, lease: &Lease) -> Result<(), SpoolError> {
        self.alive()?;
        self.validate(lease)?;
        match fs::remove_file(self.path("inflight", &lease.entry)) {
            Ok(()) => {}
            Err(e) if not_found(&e) => return Err(SpoolError::StaleLease(lease.entry.clone())),
            Err(e) => return Err(e.into()),
        }
        self.faults.hit(KillPoint::AckRemoved)?;
        remove_if_exists(&self.lease_path(&lease.entry))?;
        Ok(())
    }

    /// Rolls the entry back to `ready`, or to `dead` once retries run out.
    pub fn nack(&self, lease: &Lease, mode: NackMode) -> Result<NackOutcome, SpoolError> {
        self.alive()?;
        self.validate(lease)?;
        let id = &lease.entry;
        let path = self.path("inflight", id);
        let bytes = fs::read(&path)?;
        let entry = decode_entry(id, &bytes).ok_or(SpoolError::Corrupt { path: path.clone(), reason: "bad entry header".into() })?;
        let retry = match mode {
            NackMode::Failure => entry.retry + 1,
            NackMode::Backpressure => entry.retry,
        };
        if retry != entry.retry {
            let tmp = path.with_extension("tmp");
            write_synced(&tmp, &encode_entry(retry, entry.created, &entry.payload))?;
            fs::rename(&tmp, &path)?;
            self.faults.hit(KillPoint::NackRetryUpdated)?;
        }
        if retry > self.cfg.max_retries {
            fs::rename(&path, self.path("dead", id))?;
            sync_dir(&self.sub("dead"))?;
            self.faults.hit(KillPoint::NackDeadMoved)?;
            remove_if_exists(&self.lease_path(id))?;
            return Ok(NackOutcome::DeadLettered { retry });
        }
        let _guard = self.lock()?;
        remove_if_exists(&self.lease_path(id))?;
        self.faults.hit(KillPoint::NackLeaseRemoved)?;
        fs::rename(&path, self.path("ready", id))?;
        Ok(NackOutcome::Requeued { retry })
    }

    fn requeue_locked(&self, id: &str) -> io::Result<bool> {
        match fs::rename(self.path("inflight", id), self.path("ready", id)) {
            Ok(()) => {
                remove_if_exists(&self.lease_path(id))?;
                Ok(true)
            }
            Err(e) if not_found(&e) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// A staged file without a readable header may still be being written;
    /// only `at_startup` may drop it at once.
    fn purge_staging(&self, now: Timestamp, at_startup: bool) -> io::Result<usize> {
        let mut purged = 0;
        let names = file_names(&self.sub("staging"))?;
        let mut unreadable = self.unreadable_since.lock().unwrap_or_else(|e| e.into_inner());
        unreadable.retain(|id, _| names.contains(id));
        for id in names {
            let path = self.path("staging", &id);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if not_found(&e) => continue,
                Err(e) => return Err(e),
            };
            let expired = match decode_entry(&id, &bytes) {
                Some(e) => now.saturating_since(e.created) > self.cfg.stage_ttl,
                None if at_startup => true,
                None => {
                    let since = *unreadable.entry(id.clone()).or_insert(now);
                    now.saturating_since(since) > self.cfg.stage_ttl
                }
            };
            if expired && remove_if_exists(&path)? {
                purged += 1;
            }
        }
        Ok(purged)
    }

    /// Startup recovery; the caller guarantees no consumer or producer is running.
    ///
    /// Entries whose lease expired or never got written go back to `ready`,
    /// staged entries older than the stage ttl are dropped, leftover lease and
    /// temporary files are removed. Running it twice changes nothing the
    /// second time.
    pub fn recover(&self) -> Result<RecoveryReport, SpoolError> {
        self.alive()?;
        let _guard = self.lock()?;
        let now = self.clock.now();
        let mut report = RecoveryReport::default();

        if remove_if_exists(&self.sub("counter.tmp"))? {
            report.stray_files += 1;
        }
        let names = file_names(&self.sub("inflight"))?;
        for name in names.iter().filter(|n| n.ends_with(".tmp")) {
            if remove_if_exists(&self.path("inflight", name))? {
                report.stray_files += 1;
            }
        }
        for id in names.iter().filter(|n| is_entry_name(n)) {
            match self.read_lease(id)? {
                Some(l) if now <= l.deadline => {}
                Some(_) => {
                    if self.requeue_locked(id)? {
                        report.reclaimed += 1;
                        report.expired_leases += 1;
                    }
                }
                None => {
                    if self.requeue_locked(id)? {
                        report.reclaimed += 1;
                    }
                }
            }
        }
        for name in names.iter().filter(|n| n.ends_with(".lease")) {
            let id = name.trim_end_matches(".lease");
            if !self.path("inflight", id).exists() && remove_if_exists(&self.path("inflight", name))? {
                report.stray_files += 1;
            }
        }
        report.purged_staging = self.purge_staging(now, true)?;
        self.unleased_since.lock().unwrap_or_else(|e| e.into_inner()).clear();
        Ok(report)
    }

    /// Live counterpart of [`Queue::recover`] for the supervisor: reclaims
    /// expired leases, and lease-less entries once they have stayed so for a
    /// full lease period. Returns the reclaimed entry ids.
    pub fn reclaim_expired(&self) -> Result<Vec<String>, SpoolError> {
        self.alive()?;
        let now = self.clock.now();
        let mut reclaimed = Vec::new();
        let mut unleased = self.unleased_since.lock().unwrap_or_else(|e| e.into_inner());
        let ids = self.entry_ids("inflight")?;
        unleased.retain(|id, _| ids.contains(id));
        for id in ids {
            let due = match self.read_lease(&id)? {
                Some(l) => {
                    unleased.remove(&id);
                    now > l.deadline
                }
                None => {
                    let since = *unleased.entry(id.clone()).or_insert(now);
                    now.saturating_since(since) > self.cfg.lease
                }
            };
            if due {
                let _guard = self.lock()?;
                // re-check under the lock: the holder may have acked meanwhile
                let still_due = match self.read_lease(&id)? {
                    Some(l) => now > l.deadline,
                    None => true,
                };
                if still_due && self.requeue_locked(&id)? {
                    unleased.remove(&id);
                    reclaimed.push(id);
                }
            }
        }
        Ok(reclaimed)
    }

    /// Moves every in-flight entry back to `ready`, whatever its lease.
    /// Only valid when no consumer of this queue is alive.
    pub fn reclaim_all(&self) -> Result<usize, SpoolError> {
        self.alive()?;
        let _guard = self.lock()?;
        let mut n = 0;
        for id in self.entry_ids("inflight")? {
            if self.requeue_locked(&id)? {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Drops staged entries older than the stage ttl.
    pub fn purge_stale_staging(&self) -> Result<usize, SpoolError> {
        self.alive()?;
        Ok(self.purge_staging(self.clock.now(), false)?)
    }

    fn read_dir_entries(&self, sub: &str) -> Result<Vec<SpoolEntry>, SpoolError> {
        let mut out = Vec::new();
        for id in self.entry_ids(sub)? {
            let path = self.path(sub, &id);
            match fs::read(&path) {
                Ok(bytes) => {
                    if let Some(e) = decode_entry(&id, &bytes) {
                        out.push(e);
                    }
                }
                Err(e) if not_found(&e) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }

    pub fn ready_entries(&self) -> Result<Vec<SpoolEntry>, SpoolError> {
        self.read_dir_entries("ready")
    }

    pub fn inflight_entries(&self) -> Result<Vec<SpoolEntry>, SpoolError> {
        self.read_dir_entries("inflight")
    }

    pub fn dead_entries(&self) -> Result<Vec<SpoolEntry>, SpoolError> {
        self.read_dir_entries("dead")
    }

    /// Deletes a ready entry; false if it was not there.
    pub fn remove_ready(&self, id: &str) -> Result<bool, SpoolError> {
        self.alive()?;
        Ok(remove_if_exists(&self.path("ready", id))?)
    }

    /// Moves a ready entry to `dead`; false if it was not there.
    pub fn dead_letter_ready(&self, id: &str) -> Result<bool, SpoolError> {
        self.alive()?;
        match fs::rename(self.path("ready", id), self.path("dead", id)) {
            Ok(()) => Ok(true),
            Err(e) if not_found(&e) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    pub fn lease_of(&self, id: &str) -> Result<Option<Lease>, SpoolError> {
        Ok(self.read_lease(id)?)
    }
}
