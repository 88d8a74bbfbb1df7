//! The live chain accept → match → submit → monitor.
//!
//! Each station owns a spool queue of the same name whose entries carry a job
//! id. A worker leases an entry, runs the station's handler, commits the job
//! into the next queue and only then acks. Every effect a handler has is an LB
//! record with a deterministic identity, so re-running a step after a crash
//! or a lost lease adds nothing new.
//!
//! Home layout:
//!
//! ```text
//! <home>/lb/               event store
//! <home>/spool/<station>/  one queue per station
//! <home>/ce/<ce>/<job>     computing-element stub: `<start>|<exit-code>`
//! <home>/run.log           worker actions
//! ```

mod recover;
mod services;
mod station;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use wms_core::lb::{EventKind, JobId, JobState, StateKind};

use crate::clock::{Clock, SystemClock};
use crate::conf::ConfError;
use crate::config::{HandlerKind, ServiceConfig};
use crate::faults::{Crashed, Faults, KillPoint};
use crate::lb::{job_id_from_bytes, LbError, LbStore};
use crate::limits::Limits;
use crate::runlog::RunLog;
use crate::spool::{Queue, QueueConfig, SpoolError};

pub use recover::{AuditReport, RecoverAllReport};
pub use services::{ActionTaken, GuardianRecord, RecoveryAction, Registry, ServiceReport, Services, Ward};
pub use station::StepOutcome;

/// Source name used for events recorded on behalf of the user.
pub const UI_SOURCE: &str = "ui";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("invalid job description: {0}")]
    InvalidJob(String),
    #[error("queue {queue} is full (capacity {capacity}); job {job} aborted")]
    QueueFull { job: JobId, queue: String, capacity: usize },
    #[error("job {job} is already {state}")]
    AlreadyTerminal { job: JobId, state: StateKind },
    #[error(transparent)]
    Config(#[from] ConfError),
    #[error("lb: {0}")]
    Lb(LbError),
    #[error("spool: {0}")]
    Spool(SpoolError),
    #[error(transparent)]
    Crashed(#[from] Crashed),
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<LbError> for PipelineError {
    fn from(e: LbError) -> Self {
        match e {
            LbError::UnknownJob(j) => PipelineError::UnknownJob(j),
            LbError::InvalidAd(m) => PipelineError::InvalidJob(m),
            LbError::Crashed(c) => PipelineError::Crashed(c),
            e => PipelineError::Lb(e),
        }
    }
}

impl From<SpoolError> for PipelineError {
    fn from(e: SpoolError) -> Self {
        match e {
            SpoolError::Crashed(c) => PipelineError::Crashed(c),
            e => PipelineError::Spool(e),
        }
    }
}

impl PipelineError {
    /// True for errors caused by the caller rather than by the system.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            PipelineError::UnknownJob(_)
                | PipelineError::InvalidJob(_)
                | PipelineError::QueueFull { .. }
                | PipelineError::AlreadyTerminal { .. }
                | PipelineError::Config(_)
        )
    }
}

/// Everything a worker, the supervisor or the CLI needs, opened on one home.
pub struct System {
    home: PathBuf,
    cfg: ServiceConfig,
    clock: Arc<dyn Clock>,
    faults: Arc<Faults>,
    lb: LbStore,
    queues: Vec<Queue>,
    limits: Limits,
    runlog: RunLog,
}

impl System {
    pub fn open(home: &Path, cfg: ServiceConfig, clock: Arc<dyn Clock>, faults: Arc<Faults>) -> Result<System, PipelineError> {
        cfg.validate()?;
        let lb = LbStore::open(home, clock.clone(), faults.clone())?;
        let mut queues = Vec::with_capacity(cfg.stations.len());
        for st in &cfg.stations {
            let mut qc = QueueConfig::new(st.name.clone(), home.join("spool"), st.capacity);
            qc.lease = cfg.spool.lease;
            qc.stage_ttl = cfg.spool.stage_ttl;
            qc.max_retries = cfg.spool.max_retries;
            qc.max_payload = cfg.spool.max_payload;
            queues.push(Queue::open(qc, clock.clone(), faults.clone())?);
        }
        let runlog = RunLog::open(&home.join("run.log"), clock.clone())?;
        Ok(System {
            home: home.to_path_buf(),
            limits: Limits::new(cfg.limits),
            cfg,
            clock,
            faults,
            lb,
            queues,
            runlog,
        })
    }

    /// Wall clock, no fault injection.
    pub fn open_live(home: &Path, cfg: ServiceConfig) -> Result<System, PipelineError> {
        System::open(home, cfg, Arc::new(SystemClock), Arc::new(Faults::none()))
    }

    pub fn home(&self) -> &Path {
        &self.home
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn faults(&self) -> &Arc<Faults> {
        &self.faults
    }

    pub fn lb(&self) -> &LbStore {
        &self.lb
    }

    /// Station queues in chain order.
    pub fn queues(&self) -> &[Queue] {
        &self.queues
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn runlog(&self) -> &RunLog {
        &self.runlog
    }

    pub fn station_index(&self, name: &str) -> Option<usize> {
        self.cfg.stations.iter().position(|s| s.name == name)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.home.join(p)
        }
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.resolve(&self.cfg.broker.snapshot)
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.resolve(&self.cfg.broker.catalog)
    }

    /// Registers the job and commits it into the accept queue. The job stays
    /// Submitted until the accept station picks it up.
    ///
    /// A full accept queue aborts the freshly registered job and returns
    /// [`PipelineError::QueueFull`] naming it.
    pub fn submit(&self, jdl: &str) -> Result<JobId, PipelineError> {
        let job = self.lb.register_jdl(jdl)?;
        self.faults.hit(KillPoint::SubmitRegistered)?;
        let accept = &self.queues[0];
        match accept.enqueue(job.as_str().as_bytes()) {
            Ok(_) => {}
            Err(SpoolError::QueueFull { queue, capacity }) => {
                self.lb.record(&job, EventKind::Aborted("queue full".into()), UI_SOURCE, station::SLOT_ABORTED)?;
                return Err(PipelineError::QueueFull { job, queue, capacity });
            }
            Err(e) => return Err(e.into()),
        }
        Ok(job)
    }

    /// Records Cancelled and moves the job's waiting entries to `dead`.
    /// Returns how many entries were moved. An entry a worker holds right now
    /// is dropped by the next station that sees it.
    pub fn cancel(&self, job: &JobId) -> Result<usize, PipelineError> {
        let state = self.lb.job_state(job)?;
        match state.kind {
            StateKind::Cancelled => {}
            k if k.is_terminal() => return Err(PipelineError::AlreadyTerminal { job: job.clone(), state: k }),
            _ => {
                self.lb.record(job, EventKind::Cancelled, UI_SOURCE, 1)?;
            }
        }
        let mut moved = 0;
        for q in &self.queues {
            for e in q.ready_entries()? {
                if job_id_from_bytes(&e.payload).as_ref() == Some(job) && q.dead_letter_ready(&e.id)? {
                    moved += 1;
                }
            }
        }
        Ok(moved)
    }

    pub fn status(&self, job: &JobId) -> Result<JobState, PipelineError> {
        Ok(self.lb.job_state(job)?)
    }

    pub(crate) fn kind_of(&self, station: usize) -> HandlerKind {
        self.cfg.stations[station].kind
    }
}

/// `<jobid> <state> [detail]`.
pub fn status_line(job: &JobId, s: &JobState) -> String {
    let mut line = format!("{job} {}", s.kind);
    if let Some(code) = s.exit_code {
        line.push_str(&format!(" exit={code}"));
    }
    if let Some(r) = &s.resource {
        line.push_str(&format!(" resource={r}"));
    }
    if let Some(reason) = &s.reason {
        line.push_str(&format!(" reason={reason}"));
    }
    line
}
