//! Discrete-event model of the request pipeline as a tandem network of queues.
//!
//! Two non-linear effects can be switched on:
//!
//! * load coupling: every service time is drawn with the effective rate
//!   `mu / (1 + alpha * max(0, L - L0))`, where `L` is the number of jobs
//!   anywhere in the network (waiting or in service) when service starts;
//! * hard timeouts: a job whose sojourn at a station (wait + service)
//!   reaches that station's timeout fails on the spot and leaves the network.
//!
//! With `alpha = 0` and no timeouts the model is an ordinary Jackson tandem
//! network and the closed forms in [`theory`] apply.

mod engine;
mod experiment;
pub mod theory;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use engine::run_sim;
pub use experiment::{fig2_experiment, sweep, ComparisonReport, SweepParam, SweepRow, Verdict};
pub use theory::{mm1_theory, tandem_theory, Mm1};

#[derive(Debug, Clone, PartialEq)]
pub struct StationModel {
    pub name: String,
    /// Base service rate per server (jobs per unit time).
    pub service_rate: f64,
    pub servers: u32,
    /// Hard bound on the sojourn at this station; `None` is no timeout.
    pub timeout: Option<f64>,
    /// Maximum number of jobs *waiting* (not counting those in service); `None` is unbounded.
    pub capacity: Option<usize>,
}

impl StationModel {
    pub fn new(name: impl Into<String>, service_rate: f64) -> StationModel {
        StationModel { name: name.into(), service_rate, servers: 1, timeout: None, capacity: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadCoupling {
    pub alpha: f64,
    pub free_load: f64,
}

impl Default for LoadCoupling {
    fn default() -> Self {
        LoadCoupling { alpha: 0.0, free_load: 0.0 }
    }
}

impl LoadCoupling {
    pub fn effective_rate(&self, base: f64, load: usize) -> f64 {
        let excess = (load as f64 - self.free_load).max(0.0);
        base / (1.0 + self.alpha * excess)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Poisson arrival rate into the first station.
    pub arrival_rate: f64,
    pub stations: Vec<StationModel>,
    pub coupling: LoadCoupling,
    pub horizon: f64,
    /// Statistics are collected over `[warmup, horizon]` only.
    pub warmup: f64,
    pub seed: u64,
    pub record_trace: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad(format!("arrival rate must be finite and >= 0, got {}", self.arrival_rate));
        }
        if self.stations.is_empty() {
            return bad("at least one station is required".into());
        }
        for s in &self.stations {
            if !(s.service_rate > 0.0 && s.service_rate.is_finite()) {
                return bad(format!("station {}: service rate must be > 0", s.name));
            }
            if s.servers == 0 {
                return bad(format!("station {}: servers must be >= 1", s.name));
            }
            if let Some(t) = s.timeout {
                if !(t > 0.0) {
                    return bad(format!("station {}: timeout must be > 0", s.name));
                }
            }
        }
        if !(self.coupling.alpha >= 0.0 && self.coupling.alpha.is_finite()) || !(self.coupling.free_load >= 0.0) {
            return bad("coupling alpha and free load must be >= 0".into());
        }
        if !(self.warmup >= 0.0 && self.horizon > self.warmup && self.horizon.is_finite()) {
            return bad(format!("need horizon > warmup >= 0, got horizon {} warmup {}", self.horizon, self.warmup));
        }
        Ok(())
    }

    pub fn station_index(&self, name: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidConfig(String),
    UnstableRegime { arrival_rate: f64, service_rate: f64 },
    ConfigMismatch(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidConfig(m) => write!(f, "invalid simulation config: {m}"),
            SimError::UnstableRegime { arrival_rate, service_rate } => {
                write!(f, "unstable regime: arrival rate {arrival_rate} >= service rate {service_rate}")
            }
            SimError::ConfigMismatch(m) => write!(f, "config mismatch: {m}"),
        }
    }
}

impl core::error::Error for SimError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCause {
    Timeout,
    Capacity,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StationMetrics {
    pub name: String,
    /// Service completions inside the window.
    pub served: u64,
    pub timeouts: u64,
    pub rejections: u64,
    pub mean_sojourn: f64,
    pub p95_sojourn: f64,
    /// Time-averaged number waiting (excluding those in service).
    pub mean_queue_length: f64,
    /// Time-averaged number present (waiting + in service).
    pub mean_occupancy: f64,
}

impl StationMetrics {
    pub fn failures(&self, cause: FailureCause) -> u64 {
        match cause {
            FailureCause::Timeout => self.timeouts,
            FailureCause::Capacity => self.rejections,
        }
    }
}

/// Whole-run integer accounting, not restricted to the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunTotals {
    pub injected: u64,
    pub completed: u64,
    pub timed_out: u64,
    pub rejected: u64,
    pub in_flight: u64,
}

impl RunTotals {
    pub fn reconciles(&self) -> bool {
        self.injected == self.completed + self.timed_out + self.rejected + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimMetrics {
    pub window: f64,
    /// Departures of any kind (success, timeout, rejection) per unit time.
    pub throughput: f64,
    /// Successful departures per unit time.
    pub goodput: f64,
    /// Time-averaged number of jobs in the whole network.
    pub mean_load: f64,
    /// Mean end-to-end sojourn of successful jobs.
    pub mean_sojourn: f64,
    pub stations: Vec<StationMetrics>,
    pub totals: RunTotals,
}

impl SimMetrics {
    pub fn total_timeouts(&self) -> u64 {
        self.stations.iter().map(|s| s.timeouts).sum()
    }

    pub fn total_rejections(&self) -> u64 {
        self.stations.iter().map(|s| s.rejections).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arrive,
    Start,
    Depart,
    Timeout,
    Reject,
    Exit,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Arrive => "arrive",
            TraceKind::Start => "start",
            TraceKind::Depart => "depart",
            TraceKind::Timeout => "timeout",
            TraceKind::Reject => "reject",
            TraceKind::Exit => "exit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub job: u64,
    pub station: usize,
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOutput {
    pub metrics: SimMetrics,
    /// Empty unless `record_trace` was set.
    pub trace: Vec<TraceEvent>,
}
