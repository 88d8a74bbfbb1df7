//! Durable logging and bookkeeping: one append-only record file per job.
//!
//! Layout under `<home>/lb/`:
//!
//! ```text
//! index                      <jobid> <ad path>, one line per registration
//! jobs/<h1>/<h2>/<jobid>.log event records
//! jobs/<h1>/<h2>/<jobid>.jdl the ad exactly as submitted
//! ```
//!
//! Record line: `v1|<jobid>|<kind>|<arg>|<source>|<seq>|<rfc3339>|<crc32>` where
//! the checksum covers every byte before it, including the last `|`. A line
//! with a bad checksum (a write torn by a crash) is skipped on read.

use std::fs::{self, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use wms_core::jdl::{parse_ad, Ad, Role};
use wms_core::lb::{dedup_events, derive_state, Event, EventKind, JobId, JobState};

use crate::clock::{compact_utc, parse_rfc3339, to_rfc3339, Clock};
use crate::faults::{Crashed, Faults, KillPoint};
use crate::fsutil::{sync_dir, write_atomic};

pub const LB_SOURCE: &str = "lb";

#[derive(Debug, thiserror::Error)]
pub enum LbError {
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("invalid job description: {0}")]
    InvalidAd(String),
    #[error("invalid event source {0:?}")]
    InvalidSource(String),
    #[error("storage error: {0}")]
    Storage(#[from] io::Error),
    #[error(transparent)]
    Crashed(#[from] Crashed),
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '|' => out.push_str("%7C"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let code = rest.get(i + 1..i + 3)?;
        out.push(match code {
            "25" => '%',
            "7C" => '|',
            "0A" => '\n',
            "0D" => '\r',
            _ => return None,
        });
        rest = &rest[i + 3..];
    }
    out.push_str(rest);
    Some(out)
}

fn valid_source(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
}

/// The exact on-disk line for `e`, newline included.
pub fn encode_record(e: &Event) -> String {
    let body = format!(
        "v1|{}|{}|{}|{}|{}|{}|",
        e.job,
        e.kind.name(),
        escape(&e.kind.arg()),
        e.source,
        e.seq,
        to_rfc3339(e.timestamp)
    );
    let crc = crc32fast::hash(body.as_bytes());
    format!("{body}{crc:08x}\n")
}

/// Parses one line (without its newline); `None` for anything torn or foreign.
pub fn decode_record(line: &str) -> Option<Event> {
    let cut = line.rfind('|')? + 1;
    let (body, crc) = line.split_at(cut);
    if crc.len() != 8 || u32::from_str_radix(crc, 16).ok()? != crc32fast::hash(body.as_bytes()) {
        return None;
    }
    let fields: Vec<&str> = body[..body.len() - 1].split('|').collect();
    let [version, job, kind, arg, source, seq, ts] = fields.as_slice() else {
        return None;
    };
    if *version != "v1" {
        return None;
    }
    Some(Event {
        job: JobId::new(*job).ok()?,
        kind: EventKind::from_parts(kind, &unescape(arg)?)?,
        source: source.to_string(),
        seq: seq.parse().ok()?,
        timestamp: parse_rfc3339(ts)?,
    })
}

pub struct LbStore {
    root: PathBuf,
    clock: Arc<dyn Clock>,
    faults: Arc<Faults>,
    ids: Mutex<Option<StdRng>>,
}

impl LbStore {
    pub fn open(home: &Path, clock: Arc<dyn Clock>, faults: Arc<Faults>) -> Result<LbStore, LbError> {
        let root = home.join("lb");
        fs::create_dir_all(root.join("jobs"))?;
        Ok(LbStore { root, clock, faults, ids: Mutex::new(None) })
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn job_dir(&self, job: &str) -> PathBuf {
        let h = crc32fast::hash(job.as_bytes());
        self.root.join("jobs").join(format!("{:02x}", h >> 24)).join(format!("{:02x}", (h >> 16) & 0xff))
    }

    fn log_path(&self, job: &str) -> PathBuf {
        self.job_dir(job).join(format!("{job}.log"))
    }

    fn ad_path(&self, job: &str) -> PathBuf {
        self.job_dir(job).join(format!("{job}.jdl"))
    }

    /// Draws id suffixes from a seeded generator from now on, so a replayed
    /// run mints the same ids.
    pub fn seed_ids(&self, seed: u64) {
        *self.ids.lock().unwrap_or_else(|e| e.into_inner()) = Some(StdRng::seed_from_u64(seed));
    }

    fn mint(&self) -> JobId {
        let stamp = compact_utc(self.clock.now());
        loop {
            let suffix: u64 = match self.ids.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
                Some(rng) => rng.random(),
                None => rand::rng().random(),
            };
            let id = JobId::new(format!("wms-{stamp}-{suffix:016x}")).expect("minted ids are well formed");
            if !self.ad_path(id.as_str()).exists() {
                return id;
            }
        }
    }

    /// Registers the job described by `text`, stored byte for byte.
    pub fn register_jdl(&self, text: &str) -> Result<JobId, LbError> {
        let ad = parse_ad(text).map_err(|e| LbError::InvalidAd(e.to_string()))?;
        self.register_text(&ad, text)
    }

    pub fn register_job(&self, ad: &Ad) -> Result<JobId, LbError> {
        self.register_text(ad, &ad.to_string())
    }

    fn register_text(&self, ad: &Ad, text: &str) -> Result<JobId, LbError> {
        if ad.role() == Some(Role::Resource) {
            return Err(LbError::InvalidAd("a resource ad cannot be registered as a job".into()));
        }
        self.faults.check()?;
        let id = self.mint();
        let dir = self.job_dir(id.as_str());
        fs::create_dir_all(&dir)?;
        let ad_path = self.ad_path(id.as_str());
        write_atomic(&ad_path, text.as_bytes())?;

        let rel = ad_path.strip_prefix(&self.root).unwrap_or(&ad_path);
        let index = OpenOptions::new().create(true).append(true).open(self.root.join("index"))?;
        index.lock()?;
        (&index).write_all(format!("{} {}\n", id, rel.display()).as_bytes())?;
        index.sync_data()?;
        drop(index);

        let registered = Event {
            job: id.clone(),
            kind: EventKind::Registered,
            source: LB_SOURCE.into(),
            seq: 1,
            timestamp: self.clock.now(),
        };
        self.append(&registered, true)?;
        sync_dir(&dir)?;
        Ok(id)
    }

    /// Appends `e` unless an event with the same identity is already stored.
    /// Returns whether a new record was written.
    pub fn record_event(&self, e: &Event) -> Result<bool, LbError> {
        self.append(e, false)
    }

    /// Convenience wrapper stamping the event with the store's clock.
    pub fn record(&self, job: &JobId, kind: EventKind, source: &str, seq: u64) -> Result<bool, LbError> {
        self.record_event(&Event { job: job.clone(), kind, source: source.into(), seq, timestamp: self.clock.now() })
    }

    fn append(&self, e: &Event, registering: bool) -> Result<bool, LbError> {
        if !valid_source(&e.source) {
            return Err(LbError::InvalidSource(e.source.clone()));
        }
        self.faults.check()?;
        let path = self.log_path(e.job.as_str());
        let mut file = if registering {
            OpenOptions::new().create(true).read(true).append(true).open(&path)?
        } else {
            match OpenOptions::new().read(true).append(true).open(&path) {
                Ok(f) => f,
                Err(err) if err.kind() == io::ErrorKind::NotFound => return Err(LbError::UnknownJob(e.job.to_string())),
                Err(err) => return Err(err.into()),
            }
        };
        file.lock()?;
        let mut existing = String::new();
        file.read_to_string(&mut existing)?;
        let stored: Vec<Event> = existing.lines().filter_map(decode_record).collect();
        if !registering && !stored.iter().any(|s| s.kind == EventKind::Registered) {
            return Err(LbError::UnknownJob(e.job.to_string()));
        }
        let id = e.id();
        if stored.iter().any(|s| s.id() == id) {
            return Ok(false);
        }
        let mut line = encode_record(e);
        if !existing.is_empty() && !existing.ends_with('\n') {
            line.insert(0, '\n');
        }
        if let Err(crash) = self.faults.hit(KillPoint::LbTornAppend) {
            let half = line.len() / 2;
            file.write_all(&line.as_bytes()[..half])?;
            return Err(crash.into());
        }
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(true)
    }

    /// Stored events in arrival order, duplicates removed.
    pub fn job_events(&self, job: &JobId) -> Result<Vec<Event>, LbError> {
        let text = match fs::read_to_string(self.log_path(job.as_str())) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(LbError::UnknownJob(job.to_string())),
            Err(e) => return Err(e.into()),
        };
        let events: Vec<Event> = text.lines().filter_map(decode_record).filter(|e| e.job == *job).collect();
        if !events.iter().any(|e| e.kind == EventKind::Registered) {
            return Err(LbError::UnknownJob(job.to_string()));
        }
        Ok(dedup_events(&events))
    }

    pub fn job_state(&self, job: &JobId) -> Result<JobState, LbError> {
        let events = self.job_events(job)?;
        Ok(derive_state(&events).expect("a registered job has at least one event"))
    }

    pub fn exists(&self, job: &JobId) -> bool {
        self.job_events(job).is_ok()
    }

    /// The ad text exactly as registered.
    pub fn job_ad(&self, job: &JobId) -> Result<String, LbError> {
        if !self.exists(job) {
            return Err(LbError::UnknownJob(job.to_string()));
        }
        Ok(fs::read_to_string(self.ad_path(job.as_str()))?)
    }

    /// Every registered job, in registration order.
    pub fn jobs(&self) -> Result<Vec<JobId>, LbError> {
        let text = match fs::read_to_string(self.root.join("index")) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in text.lines() {
            let Some(id) = line.split(' ').next().and_then(|s| JobId::new(s).ok()) else { continue };
            if self.exists(&id) {
                out.push(id);
            }
        }
        Ok(out)
    }
}

/// Reads a job id from a text file such as a spool payload.
pub fn job_id_from_bytes(bytes: &[u8]) -> Option<JobId> {
    std::str::from_utf8(bytes).ok().and_then(|s| JobId::new(s.trim()).ok())
}
