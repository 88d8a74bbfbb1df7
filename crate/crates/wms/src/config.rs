//! Service configuration (`wms.conf`).
//!
//! ```text
//! [limits]
//! max_workers = 16        # live worker threads, all stations together
//! max_requests = 32       # request objects held in memory at once
//! max_leases = 32         # leases held at once
//!
//! [spool]
//! lease_ms = 60000
//! stage_ttl_ms = 600000
//! max_retries = 3
//! max_payload = 1048576
//!
//! [station.match]         # one section per station; kind defaults to the name
//! pool = 2
//! max_requests = 50       # requests a worker serves before it exits
//! timeout_ms = 10000
//! capacity = 100          # capacity of the station's input queue
//!
//! [broker]
//! policy = require-close-replica
//! snapshot = is/snapshot.is   # relative to WMS_HOME
//! catalog = is/catalog.rc
//! ttl_s = 600
//!
//! [faults]
//! failure_rate = 0.0      # injected handler failures
//! seed = 1
//!
//! [ce]
//! runtime_ms = 0
//! exit_code = 0
//!
//! [supervisor]
//! interval_ms = 50
//! heartbeat_ms = 30000    # defaults to three handler timeouts
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use wms_core::broker::DataPolicy;
use wms_core::Span;

use crate::conf::{self, ConfError, Section};
use crate::spool::{DEFAULT_LEASE, DEFAULT_MAX_PAYLOAD, DEFAULT_MAX_RETRIES, DEFAULT_STAGE_TTL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HandlerKind {
    Accept,
    Match,
    Submit,
    Monitor,
}

impl HandlerKind {
    /// Chain order.
    pub const ALL: [HandlerKind; 4] = [HandlerKind::Accept, HandlerKind::Match, HandlerKind::Submit, HandlerKind::Monitor];

    pub fn name(self) -> &'static str {
        match self {
            HandlerKind::Accept => "accept",
            HandlerKind::Match => "match",
            HandlerKind::Submit => "submit",
            HandlerKind::Monitor => "monitor",
        }
    }

    pub fn from_name(s: &str) -> Option<HandlerKind> {
        HandlerKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for HandlerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationConfig {
    /// Also the name of the station's input queue.
    pub name: String,
    pub kind: HandlerKind,
    pub pool: usize,
    pub max_requests: u64,
    pub timeout: Duration,
    pub capacity: usize,
}

impl StationConfig {
    pub fn new(kind: HandlerKind) -> StationConfig {
        StationConfig {
            name: kind.name().to_string(),
            kind,
            pool: 2,
            max_requests: 50,
            timeout: Duration::from_secs(10),
            capacity: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LimitsConfig {
    pub max_workers: usize,
    pub max_requests: usize,
    pub max_leases: usize,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        LimitsConfig { max_workers: 16, max_requests: 32, max_leases: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpoolSettings {
    pub lease: Span,
    pub stage_ttl: Span,
    pub max_retries: u32,
    pub max_payload: usize,
}

impl Default for SpoolSettings {
    fn default() -> Self {
        SpoolSettings {
            lease: DEFAULT_LEASE,
            stage_ttl: DEFAULT_STAGE_TTL,
            max_retries: DEFAULT_MAX_RETRIES,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerSettings {
    pub policy: DataPolicy,
    pub snapshot: PathBuf,
    pub catalog: PathBuf,
    pub ttl: Span,
}

impl Default for BrokerSettings {
    fn default() -> Self {
        BrokerSettings {
            policy: DataPolicy::default(),
            snapshot: PathBuf::from("is/snapshot.is"),
            catalog: PathBuf::from("is/catalog.rc"),
            ttl: Span::from_secs(600),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FaultSettings {
    pub failure_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CeSettings {
    pub runtime: Duration,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupervisorSettings {
    pub interval: Duration,
    /// `None` means three times the longest handler timeout.
    pub heartbeat: Option<Duration>,
}

impl Default for SupervisorSettings {
    fn default() -> Self {
        SupervisorSettings { interval: Duration::from_millis(50), heartbeat: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    /// In chain order: accept, match, submit, monitor.
    pub stations: Vec<StationConfig>,
    pub limits: LimitsConfig,
    pub spool: SpoolSettings,
    pub broker: BrokerSettings,
    pub faults: FaultSettings,
    pub ce: CeSettings,
    pub supervisor: SupervisorSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            stations: HandlerKind::ALL.into_iter().map(StationConfig::new).collect(),
            limits: LimitsConfig::default(),
            spool: SpoolSettings::default(),
            broker: BrokerSettings::default(),
            faults: FaultSettings::default(),
            ce: CeSettings::default(),
            supervisor: SupervisorSettings::default(),
        }
    }
}

fn millis(s: &Section, key: &str, default: Duration) -> Result<Duration, ConfError> {
    Ok(s.get::<u64>(key)?.map_or(default, Duration::from_millis))
}

fn span_ms(s: &Section, key: &str, default: Span) -> Result<Span, ConfError> {
    Ok(s.get::<i64>(key)?.map_or(default, Span::from_millis))
}

fn positive<T: PartialOrd + Default + Copy>(s: &Section, key: &str, v: T) -> Result<T, ConfError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(s.bad(key, "must be at least 1"))
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<ServiceConfig, ConfError> {
        let mut cfg = ServiceConfig::default();
        let mut stations: Vec<StationConfig> = Vec::new();
        for s in conf::parse(text)? {
            match s.name.as_str() {
                "limits" => {
                    let d = cfg.limits;
                    cfg.limits = LimitsConfig {
                        max_workers: positive(&s, "max_workers", s.get_or("max_workers", d.max_workers)?)?,
                        max_requests: positive(&s, "max_requests", s.get_or("max_requests", d.max_requests)?)?,
                        max_leases: positive(&s, "max_leases", s.get_or("max_leases", d.max_leases)?)?,
                    };
                }
                "spool" => {
                    let d = cfg.spool;
                    cfg.spool = SpoolSettings {
                        lease: span_ms(&s, "lease_ms", d.lease)?,
                        stage_ttl: span_ms(&s, "stage_ttl_ms", d.stage_ttl)?,
                        max_retries: s.get_or("max_retries", d.max_retries)?,
                        max_payload: s.get_or("max_payload", d.max_payload)?,
                    };
                    if cfg.spool.lease.micros() <= 0 {
                        return Err(s.bad("lease_ms", "must be positive"));
                    }
                }
                "broker" => {
                    if let Some(p) = s.raw("policy") {
                        cfg.broker.policy = DataPolicy::from_name(p)
                            .ok_or_else(|| s.bad("policy", "expected require-close-replica or ignore-data"))?;
                    }
                    if let Some(p) = s.raw("snapshot") {
                        cfg.broker.snapshot = PathBuf::from(p);
                    }
                    if let Some(p) = s.raw("catalog") {
                        cfg.broker.catalog = PathBuf::from(p);
                    }
                    if let Some(ttl) = s.get::<i64>("ttl_s")? {
                        cfg.broker.ttl = Span::from_secs(ttl);
                    }
                }
                "faults" => {
                    let rate = s.get_or("failure_rate", 0.0f64)?;
                    if !(0.0..=1.0).contains(&rate) {
                        return Err(s.bad("failure_rate", "must be within [0, 1]"));
                    }
                    cfg.faults = FaultSettings { failure_rate: rate, seed: s.get_or("seed", 0u64)? };
                }
                "ce" => {
                    cfg.ce = CeSettings {
                        runtime: millis(&s, "runtime_ms", Duration::ZERO)?,
                        exit_code: s.get_or("exit_code", 0i32)?,
                    };
                }
                "supervisor" => {
                    cfg.supervisor.interval = millis(&s, "interval_ms", cfg.supervisor.interval)?;
                    cfg.supervisor.heartbeat = s.get::<u64>("heartbeat_ms")?.map(Duration::from_millis);
                }
                name => {
                    let Some(station) = name.strip_prefix("station.") else {
                        return Err(ConfError::UnknownSection(name.to_string()));
                    };
                    let kind_name = s.raw("kind").unwrap_or(station);
                    let kind = HandlerKind::from_name(kind_name)
                        .ok_or_else(|| s.bad("kind", "expected accept, match, submit or monitor"))?;
                    let d = StationConfig::new(kind);
                    let st = StationConfig {
                        name: station.to_string(),
                        kind,
                        pool: positive(&s, "pool", s.get_or("pool", d.pool)?)?,
                        max_requests: positive(&s, "max_requests", s.get_or("max_requests", d.max_requests)?)?,
                        timeout: millis(&s, "timeout_ms", d.timeout)?,
                        capacity: positive(&s, "capacity", s.get_or("capacity", d.capacity)?)?,
                    };
                    if stations.iter().any(|o| o.kind == kind) {
                        return Err(ConfError::Invalid(format!("more than one {kind} station")));
                    }
                    stations.push(st);
                }
            }
            s.finish()?;
        }
        for st in stations {
            let slot = HandlerKind::ALL.iter().position(|k| *k == st.kind).expect("every kind has a slot");
            cfg.stations[slot] = st;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfError> {
        let kinds: Vec<HandlerKind> = self.stations.iter().map(|s| s.kind).collect();
        if kinds != HandlerKind::ALL {
            return Err(ConfError::Invalid("stations must form the chain accept, match, submit, monitor".into()));
        }
        for (i, a) in self.stations.iter().enumerate() {
            if a.name.is_empty() || !a.name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
                return Err(ConfError::Invalid(format!("station name {:?} must use only [A-Za-z0-9_-]", a.name)));
            }
            if self.stations[..i].iter().any(|b| b.name == a.name) {
                return Err(ConfError::Invalid(format!("station name {} used twice", a.name)));
            }
            if a.pool < 1 || a.max_requests < 1 || a.capacity < 1 {
                return Err(ConfError::Invalid(format!("station {}: pool, max_requests and capacity must be at least 1", a.name)));
            }
        }
        if self.limits.max_workers < self.stations.len() {
            return Err(ConfError::Invalid(format!(
                "max_workers {} leaves some of the {} stations without a worker",
                self.limits.max_workers,
                self.stations.len()
            )));
        }
        if self.limits.max_requests < 1 || self.limits.max_leases < 1 {
            return Err(ConfError::Invalid("max_requests and max_leases must be at least 1".into()));
        }
        Ok(())
    }

    /// Reads `path`; a missing file yields the defaults.
    pub fn load_or_default(path: &Path) -> Result<ServiceConfig, ConfError> {
        match std::fs::read_to_string(path) {
            Ok(text) => ServiceConfig::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ServiceConfig::default()),
            Err(e) => Err(ConfError::Invalid(format!("{}: {e}", path.display()))),
        }
    }

    pub fn heartbeat_threshold(&self) -> Duration {
        self.supervisor
            .heartbeat
            .unwrap_or_else(|| 3 * self.stations.iter().map(|s| s.timeout).max().unwrap_or(Duration::from_secs(10)))
    }

    pub fn station(&self, kind: HandlerKind) -> &StationConfig {
        self.stations.iter().find(|s| s.kind == kind).expect("validated chain")
    }
}
