//! Startup recovery and the conservation audit.

use std::collections::BTreeMap;
use std::fmt;

use wms_core::lb::{EventKind, JobId, StateKind};

use super::{PipelineError, System};
use crate::lb::job_id_from_bytes;
use crate::spool::{RecoveryReport, SpoolError};

pub(crate) const RECOVER_SOURCE: &str = "recover";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecoverAllReport {
    pub spool: RecoveryReport,
    /// In-flight entries with a still-valid lease, taken back because no worker survives a restart.
    pub leases_reclaimed: usize,
    /// Extra copies of a job's entry; the most downstream one is kept.
    pub duplicates_removed: usize,
    /// Waiting entries of jobs that are already terminal.
    pub terminal_removed: usize,
    /// Entries naming no registered job, moved to `dead`.
    pub foreign_dead_lettered: usize,
    /// Jobs left in `dead` without a terminal event.
    pub jobs_aborted: usize,
    /// Live jobs that had no entry anywhere.
    pub jobs_requeued: usize,
}

impl RecoverAllReport {
    pub fn is_zero(&self) -> bool {
        *self == RecoverAllReport::default()
    }
}

impl fmt::Display for RecoverAllReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} leases_reclaimed={} duplicates_removed={} terminal_removed={} foreign_dead_lettered={} jobs_aborted={} jobs_requeued={}",
            self.spool,
            self.leases_reclaimed,
            self.duplicates_removed,
            self.terminal_removed,
            self.foreign_dead_lettered,
            self.jobs_aborted,
            self.jobs_requeued
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuditReport {
    pub jobs: usize,
    pub done: usize,
    pub aborted: usize,
    pub cancelled: usize,
    pub live: usize,
    /// Conservation breaches, one line per job.
    pub violations: Vec<String>,
    /// Jobs with more than one Done record from the same source, or Done records that disagree.
    pub duplicate_done: Vec<JobId>,
}

impl AuditReport {
    pub fn terminal(&self) -> usize {
        self.done + self.aborted + self.cancelled
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.duplicate_done.is_empty()
    }
}

#[derive(Debug, Default)]
struct Placement {
    /// (station, entry id) of ready or in-flight entries.
    live: Vec<(usize, String)>,
    dead: Vec<usize>,
}

impl System {
    fn placements(&self) -> Result<(BTreeMap<JobId, Placement>, Vec<(usize, String)>), PipelineError> {
        let mut by_job: BTreeMap<JobId, Placement> = BTreeMap::new();
        let mut foreign = Vec::new();
        for (i, q) in self.queues.iter().enumerate() {
            for entries in [q.ready_entries()?, q.inflight_entries()?] {
                for e in entries {
                    match job_id_from_bytes(&e.payload).filter(|j| self.lb.exists(j)) {
                        Some(j) => by_job.entry(j).or_default().live.push((i, e.id)),
                        None => foreign.push((i, e.id)),
                    }
                }
            }
            for e in q.dead_entries()? {
                if let Some(j) = job_id_from_bytes(&e.payload) {
                    by_job.entry(j).or_default().dead.push(i);
                }
            }
        }
        Ok((by_job, foreign))
    }

    /// Brings spool and LB back into agreement after a crash.
    ///
    /// Requires that no worker is running. Afterwards every registered job is
    /// either terminal with no live entry, or live with exactly one. A second
    /// call reports nothing.
    pub fn recover_all(&self) -> Result<RecoverAllReport, PipelineError> {
        let mut report = RecoverAllReport::default();
        for q in &self.queues {
            report.spool.add(q.recover()?);
            report.leases_reclaimed += q.reclaim_all()?;
        }
        let (mut by_job, foreign) = self.placements()?;
        for (i, id) in foreign {
            if self.queues[i].dead_letter_ready(&id)? {
                report.foreign_dead_lettered += 1;
            }
        }
        for job in self.lb.jobs()? {
            let place = by_job.remove(&job).unwrap_or_default();
            let mut terminal = self.lb.job_state(&job)?.kind.is_terminal();
            if !terminal {
                if let Some(&i) = place.dead.iter().max() {
                    let why = format!("retries exhausted at {}", self.queues[i].name());
                    self.lb.record(&job, EventKind::Aborted(why), RECOVER_SOURCE, 1)?;
                    report.jobs_aborted += 1;
                    terminal = true;
                }
            }
            if terminal {
                for (i, id) in &place.live {
                    if self.queues[*i].remove_ready(id)? {
                        report.terminal_removed += 1;
                    }
                }
                continue;
            }
            if place.live.is_empty() {
                let station = self
                    .lb
                    .job_events(&job)?
                    .iter()
                    .filter_map(|e| match &e.kind {
                        EventKind::Enqueued(s) => self.station_index(s),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(0);
                let q = &self.queues[station];
                match q.enqueue(job.as_str().as_bytes()) {
                    Ok(id) => {
                        self.runlog.log(RECOVER_SOURCE, q.name(), &id, "requeue", job.as_str());
                        report.jobs_requeued += 1;
                    }
                    Err(SpoolError::QueueFull { .. }) => {
                        let why = format!("{} full during recovery", q.name());
                        self.lb.record(&job, EventKind::Aborted(why), RECOVER_SOURCE, 1)?;
                        report.jobs_aborted += 1;
                    }
                    Err(e) => return Err(e.into()),
                }
                continue;
            }
            let mut live = place.live;
            live.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            for (i, id) in &live[1..] {
                if self.queues[*i].remove_ready(id)? {
                    report.duplicates_removed += 1;
                }
            }
        }
        Ok(report)
    }

    /// Checks conservation over every registered job. Meaningful only when no
    /// worker is mid-step.
    pub fn audit(&self) -> Result<AuditReport, PipelineError> {
        let (mut by_job, _) = self.placements()?;
        let mut report = AuditReport::default();
        for job in self.lb.jobs()? {
            report.jobs += 1;
            let place = by_job.remove(&job).unwrap_or_default();
            let events = self.lb.job_events(&job)?;
            let state = wms_core::lb::derive_state(&events).expect("registered job has events");
            match state.kind {
                StateKind::Done => report.done += 1,
                StateKind::Aborted => report.aborted += 1,
                StateKind::Cancelled => report.cancelled += 1,
                _ => report.live += 1,
            }
            let live = place.live.len();
            if state.kind.is_terminal() && live > 0 {
                report.violations.push(format!("{job}: {} but {live} live entries", state.kind));
            }
            if !state.kind.is_terminal() && live != 1 {
                report.violations.push(format!("{job}: {} with {live} live entries", state.kind));
            }
            if !state.kind.is_terminal() && !place.dead.is_empty() {
                report.violations.push(format!("{job}: {} but dead-lettered", state.kind));
            }
            let mut done: BTreeMap<&str, Vec<i32>> = BTreeMap::new();
            for e in &events {
                if let EventKind::Done(code) = e.kind {
                    done.entry(e.source.as_str()).or_default().push(code);
                }
            }
            let mut codes: Vec<i32> = done.values().flatten().copied().collect();
            codes.sort_unstable();
            codes.dedup();
            if done.values().any(|v| v.len() > 1) || codes.len() > 1 {
                report.duplicate_done.push(job);
            }
        }
        Ok(report)
    }
}
