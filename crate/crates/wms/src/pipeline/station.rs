//! One worker step and the four handlers.

use std::fs;
use std::time::Instant;

use wms_core::broker::{match_job, Choice};
use wms_core::jdl::parse_ad;
use wms_core::lb::{derive_state, Event, EventKind, JobId, JobState, StateKind};

use super::{PipelineError, System};
use crate::brokerio::{load_catalog, load_snapshot};
use crate::clock::{parse_rfc3339, to_rfc3339};
use crate::config::HandlerKind;
use crate::faults::KillPoint;
use crate::fsutil::write_atomic;
use crate::lb::job_id_from_bytes;
use crate::limits::Resource;
use crate::spool::{Lease, NackMode, NackOutcome, Queue, SpoolEntry, SpoolError};

// seq = attempt * SEQ_STRIDE + slot
pub(crate) const SEQ_STRIDE: u64 = 16;
pub(crate) const SLOT_DEQUEUED: u64 = 1;
pub(crate) const SLOT_REGISTERED: u64 = 2;
pub(crate) const SLOT_MATCHED: u64 = 3;
pub(crate) const SLOT_TRANSFERRED: u64 = 4;
pub(crate) const SLOT_RUNNING: u64 = 5;
pub(crate) const SLOT_ENQUEUED: u64 = 8;
pub(crate) const SLOT_DONE: u64 = 9;
pub(crate) const SLOT_ABORTED: u64 = 10;

pub(crate) const CE_SOURCE: &str = "ce";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// Nothing waiting.
    Idle,
    /// A system-wide cap refused the request before anything was dequeued.
    Throttled(Resource),
    /// Committed into the next queue and acked.
    Forwarded,
    /// The job reached a terminal state at this station.
    Finished(StateKind),
    /// The job was already terminal or further along; the entry was acked.
    Dropped,
    /// Not ready yet (stale snapshot, job still running); rolled back as is.
    Deferred,
    /// The next queue was full; rolled back without counting a retry.
    Backpressure,
    /// The handler failed or overran its timeout.
    Failed { retry: u32, dead: bool },
    /// The worker walked away holding the lease.
    Abandoned,
}

impl StepOutcome {
    /// Whether an entry was dequeued.
    pub fn took_request(&self) -> bool {
        !matches!(self, StepOutcome::Idle | StepOutcome::Throttled(_))
    }
}

enum Handled {
    Forward,
    Finished(StateKind),
    Defer(String),
    Fail(String),
}

fn ce_dir_name(resource: &str) -> String {
    resource.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

impl System {
    /// Processes at most one entry of `station`'s queue.
    pub fn step(&self, station: usize, worker: &str) -> Result<StepOutcome, PipelineError> {
        self.step_with(station, worker, &|| false)
    }

    /// Like [`System::step`]; `abandon` runs right after the dequeue, and
    /// returning true makes the worker vanish with the lease still held.
    pub fn step_with(&self, station: usize, worker: &str, abandon: &dyn Fn() -> bool) -> Result<StepOutcome, PipelineError> {
        let Ok(_request) = self.limits.admit(Resource::Requests) else {
            return Ok(StepOutcome::Throttled(Resource::Requests));
        };
        let Ok(_lease_permit) = self.limits.admit(Resource::Leases) else {
            return Ok(StepOutcome::Throttled(Resource::Leases));
        };
        let q = &self.queues[station];
        let name = q.name();
        let Some((entry, lease)) = q.dequeue(worker)? else {
            return Ok(StepOutcome::Idle);
        };
        self.faults.hit(KillPoint::StationDequeued)?;
        if abandon() {
            self.runlog.log(worker, name, &entry.id, "dequeue", "abandoned");
            return Ok(StepOutcome::Abandoned);
        }
        let result = self.process(station, worker, &entry, &lease);
        if let Err(e) = &result {
            if !matches!(e, PipelineError::Crashed(_)) {
                // hand the entry back now instead of after the lease runs out
                let outcome = match q.nack(&lease, NackMode::Failure) {
                    Ok(o) => format!("{o:?}"),
                    Err(n) => format!("nack failed: {n}"),
                };
                self.runlog.log(worker, name, &entry.id, "error", &format!("{e}; {outcome}"));
            }
        }
        result
    }

    fn process(&self, station: usize, worker: &str, entry: &SpoolEntry, lease: &Lease) -> Result<StepOutcome, PipelineError> {
        let q = &self.queues[station];
        let name = q.name();
        let log = |action: &str, outcome: &str| self.runlog.log(worker, name, &entry.id, action, outcome);

        let Some(job) = job_id_from_bytes(&entry.payload) else {
            self.ack(q, &lease, &log)?;
            log("drop", "unreadable payload");
            return Ok(StepOutcome::Dropped);
        };
        let events = match self.lb.job_events(&job) {
            Ok(ev) => ev,
            Err(crate::lb::LbError::UnknownJob(_)) => {
                self.ack(q, &lease, &log)?;
                log("drop", "unknown job");
                return Ok(StepOutcome::Dropped);
            }
            Err(e) => return Err(e.into()),
        };
        let state = derive_state(&events).expect("registered job has events");
        if state.kind.is_terminal() || self.superseded(&events, station) {
            self.ack(q, &lease, &log)?;
            log("drop", state.kind.name());
            return Ok(StepOutcome::Dropped);
        }

        let base = u64::from(entry.retry) * SEQ_STRIDE;
        self.lb.record(&job, EventKind::Dequeued(name.to_string()), name, base + SLOT_DEQUEUED)?;
        self.faults.hit(KillPoint::StationDequeuedLogged)?;

        let started = Instant::now();
        let handled = self.handle(station, &job, &state, entry.retry, base)?;
        self.faults.hit(KillPoint::StationHandled)?;
        let timeout = self.cfg.stations[station].timeout;
        if started.elapsed() > timeout {
            log("handle", &format!("timeout after {} ms", started.elapsed().as_millis()));
            return self.fail(q, &lease, &job, base, "timeout", &log);
        }

        match handled {
            Handled::Forward => {
                let next = &self.queues[station + 1];
                match next.enqueue(job.as_str().as_bytes()) {
                    Ok(_) => {}
                    Err(SpoolError::QueueFull { .. }) => {
                        q.nack(&lease, NackMode::Backpressure)?;
                        log("forward", &format!("{} full", next.name()));
                        return Ok(StepOutcome::Backpressure);
                    }
                    Err(e) => return Err(e.into()),
                }
                self.faults.hit(KillPoint::StationForwarded)?;
                self.lb.record(&job, EventKind::Enqueued(next.name().to_string()), name, base + SLOT_ENQUEUED)?;
                self.faults.hit(KillPoint::StationEnqueuedLogged)?;
                self.faults.hit(KillPoint::StationBeforeAck)?;
                self.ack(q, &lease, &log)?;
                log("forward", next.name());
                Ok(StepOutcome::Forwarded)
            }
            Handled::Finished(kind) => {
                self.faults.hit(KillPoint::StationBeforeAck)?;
                self.ack(q, &lease, &log)?;
                log("finish", kind.name());
                Ok(StepOutcome::Finished(kind))
            }
            Handled::Defer(reason) => {
                q.nack(&lease, NackMode::Backpressure)?;
                log("defer", &reason);
                Ok(StepOutcome::Deferred)
            }
            Handled::Fail(reason) => self.fail(q, &lease, &job, base, &reason, &log),
        }
    }

    fn ack(&self, q: &Queue, lease: &Lease, log: &dyn Fn(&str, &str)) -> Result<(), PipelineError> {
        match q.ack(lease) {
            Ok(()) => Ok(()),
            // reclaimed under us; whoever leases it next repeats the step harmlessly
            Err(SpoolError::StaleLease(_)) => {
                log("ack", "lease lost");
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn fail(
        &self,
        q: &Queue,
        lease: &Lease,
        job: &JobId,
        base: u64,
        reason: &str,
        log: &dyn Fn(&str, &str),
    ) -> Result<StepOutcome, PipelineError> {
        match q.nack(lease, NackMode::Failure) {
            Ok(NackOutcome::Requeued { retry }) => {
                log("nack", &format!("retry {retry}: {reason}"));
                Ok(StepOutcome::Failed { retry, dead: false })
            }
            Ok(NackOutcome::DeadLettered { retry }) => {
                let why = format!("retries exhausted at {}", q.name());
                self.lb.record(job, EventKind::Aborted(why), q.name(), base + SLOT_ABORTED)?;
                log("nack", &format!("dead after {retry}: {reason}"));
                Ok(StepOutcome::Failed { retry, dead: true })
            }
            Err(SpoolError::StaleLease(_)) => {
                log("nack", "lease lost");
                Ok(StepOutcome::Failed { retry: 0, dead: false })
            }
            Err(e) => Err(e.into()),
        }
    }

    /// True when the job was already committed into a later station.
    fn superseded(&self, events: &[Event], station: usize) -> bool {
        events.iter().any(|e| match &e.kind {
            EventKind::Enqueued(s) => self.station_index(s).is_some_and(|i| i > station),
            _ => false,
        })
    }

    fn injected_failure(&self, job: &JobId, station: usize, attempt: u32) -> bool {
        let rate = self.cfg.faults.failure_rate;
        if rate <= 0.0 {
            return false;
        }
        let key = format!("{}|{}|{}|{}", self.cfg.faults.seed, job, self.cfg.stations[station].name, attempt);
        f64::from(crc32fast::hash(key.as_bytes())) / 4_294_967_296.0 < rate
    }

    fn handle(&self, station: usize, job: &JobId, state: &JobState, attempt: u32, base: u64) -> Result<Handled, PipelineError> {
        if self.injected_failure(job, station, attempt) {
            return Ok(Handled::Fail("injected failure".into()));
        }
        let source = self.cfg.stations[station].name.as_str();
        match self.kind_of(station) {
            HandlerKind::Accept => {
                if let Err(e) = parse_ad(&self.lb.job_ad(job)?) {
                    self.lb.record(job, EventKind::Aborted(format!("invalid job description: {e}")), source, base + SLOT_ABORTED)?;
                    return Ok(Handled::Finished(StateKind::Aborted));
                }
                self.lb.record(job, EventKind::Registered, source, base + SLOT_REGISTERED)?;
                Ok(Handled::Forward)
            }
            HandlerKind::Match => {
                let ad = match parse_ad(&self.lb.job_ad(job)?) {
                    Ok(ad) => ad,
                    Err(e) => return Ok(Handled::Fail(e.to_string())),
                };
                let snapshot = match load_snapshot(&self.snapshot_path(), self.cfg.broker.ttl) {
                    Ok(s) => s,
                    Err(e) => return Ok(Handled::Fail(e.to_string())),
                };
                let catalog = match load_catalog(&self.catalog_path()) {
                    Ok(c) => c,
                    Err(e) => return Ok(Handled::Fail(e.to_string())),
                };
                let result = match match_job(job, &ad, &snapshot, &catalog, self.cfg.broker.policy, self.clock.now()) {
                    Ok(r) => r,
                    Err(stale) => return Ok(Handled::Defer(stale.to_string())),
                };
                for w in &result.warnings {
                    self.runlog.log("broker", source, job.as_str(), "rank", w);
                }
                match result.chosen {
                    Choice::Resource(ce) => {
                        self.lb.record(job, EventKind::Matched(ce), source, base + SLOT_MATCHED)?;
                        Ok(Handled::Forward)
                    }
                    Choice::NoMatch(reason) => {
                        self.lb.record(job, EventKind::Aborted(reason), source, base + SLOT_ABORTED)?;
                        Ok(Handled::Finished(StateKind::Aborted))
                    }
                }
            }
            HandlerKind::Submit => {
                let Some(ce) = state.resource.clone() else {
                    return Ok(Handled::Fail("no matched resource".into()));
                };
                self.lb.record(job, EventKind::Matched(ce.clone()), source, base + SLOT_MATCHED)?;
                let path = self.home.join("ce").join(ce_dir_name(&ce)).join(job.as_str());
                if !path.exists() {
                    fs::create_dir_all(path.parent().expect("ce path has a parent"))?;
                    let record = format!("{}|{}\n", to_rfc3339(self.clock.now()), self.cfg.ce.exit_code);
                    write_atomic(&path, record.as_bytes())?;
                }
                self.lb.record(job, EventKind::Transferred, source, base + SLOT_TRANSFERRED)?;
                self.lb.record(job, EventKind::Transferred, CE_SOURCE, base + SLOT_TRANSFERRED)?;
                self.lb.record(job, EventKind::Running, CE_SOURCE, base + SLOT_RUNNING)?;
                Ok(Handled::Forward)
            }
            HandlerKind::Monitor => {
                let Some(ce) = state.resource.clone() else {
                    return Ok(Handled::Fail("no matched resource".into()));
                };
                let path = self.home.join("ce").join(ce_dir_name(&ce)).join(job.as_str());
                let text = match fs::read_to_string(&path) {
                    Ok(t) => t,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        return Ok(Handled::Fail(format!("{ce} has no record of the job")));
                    }
                    Err(e) => return Err(e.into()),
                };
                let parsed = text.trim_end().split_once('|').and_then(|(t, c)| Some((parse_rfc3339(t)?, c.parse::<i32>().ok()?)));
                let Some((started, exit)) = parsed else {
                    return Ok(Handled::Fail(format!("{} is unreadable", path.display())));
                };
                let runtime = crate::clock::span_from_std(self.cfg.ce.runtime);
                if self.clock.now().saturating_since(started) < runtime {
                    return Ok(Handled::Defer("running".into()));
                }
                self.lb.record(job, EventKind::Running, source, base + SLOT_RUNNING)?;
                self.lb.record(job, EventKind::Done(exit), source, base + SLOT_DONE)?;
                self.lb.record(job, EventKind::Done(exit), CE_SOURCE, base + SLOT_DONE)?;
                Ok(Handled::Finished(StateKind::Done))
            }
        }
    }
}
