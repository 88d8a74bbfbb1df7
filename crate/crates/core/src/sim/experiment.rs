use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{run_sim, SimConfig, SimError, SimMetrics, StationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Better,
    Equal,
    Worse,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Better => "better",
            Verdict::Equal => "equal",
            Verdict::Worse => "worse",
        }
    }
}

/// Paired baseline/variant runs where the variant speeds up one station.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub baseline: SimMetrics,
    pub variant: SimMetrics,
    /// Index of the station whose rate was raised; `None` when the configs are identical.
    pub raised_station: Option<usize>,
    pub factor: f64,
    /// Change in time-averaged queue length at the station right after the raised one.
    pub next_queue_buildup: f64,
    /// `(station, variant timeouts - baseline timeouts)` for every station after the raised one.
    pub downstream_timeout_delta: Vec<(usize, i64)>,
    /// Variant goodput divided by baseline goodput.
    pub goodput_ratio: f64,
    pub verdict: Verdict,
}

fn same_except_rate(a: &StationModel, b: &StationModel) -> bool {
    a.name == b.name && a.servers == b.servers && a.timeout == b.timeout && a.capacity == b.capacity
}

fn raised_station(baseline: &SimConfig, variant: &SimConfig) -> Result<Option<usize>, SimError> {
    let mismatch = |m: &str| Err(SimError::ConfigMismatch(m.into()));
    if baseline.arrival_rate != variant.arrival_rate {
        return mismatch("arrival rates differ");
    }
    if baseline.coupling != variant.coupling {
        return mismatch("load coupling differs");
    }
    if baseline.horizon != variant.horizon || baseline.warmup != variant.warmup || baseline.seed != variant.seed {
        return mismatch("run parameters (horizon, warmup, seed) differ");
    }
    if baseline.stations.len() != variant.stations.len() {
        return mismatch("station chains have different lengths");
    }
    let mut raised = None;
    for (i, (b, v)) in baseline.stations.iter().zip(&variant.stations).enumerate() {
        if !same_except_rate(b, v) {
            return Err(SimError::ConfigMismatch(format!("station {} differs in more than its service rate", b.name)));
        }
        if b.service_rate != v.service_rate {
            if v.service_rate < b.service_rate {
                return Err(SimError::ConfigMismatch(format!("station {} is slowed down, not raised", b.name)));
            }
            if raised.is_some() {
                return mismatch("more than one station's service rate differs");
            }
            raised = Some(i);
        }
    }
    Ok(raised)
}

/// Runs the bottleneck-removal experiment: same seed for both sides, so with
/// identical configs every delta is exactly zero.
pub fn fig2_experiment(baseline: &SimConfig, variant: &SimConfig) -> Result<ComparisonReport, SimError> {
    let raised = raised_station(baseline, variant)?;
    let base = run_sim(baseline)?.metrics;
    let var = run_sim(variant)?.metrics;

    let factor = raised.map_or(1.0, |i| variant.stations[i].service_rate / baseline.stations[i].service_rate);
    let next = raised.map(|i| i + 1).filter(|n| *n < baseline.stations.len());
    let next_queue_buildup = next.map_or(0.0, |n| var.stations[n].mean_queue_length - base.stations[n].mean_queue_length);
    let downstream_timeout_delta = match raised {
        Some(i) => ((i + 1)..baseline.stations.len())
            .map(|s| (s, var.stations[s].timeouts as i64 - base.stations[s].timeouts as i64))
            .collect(),
        None => Vec::new(),
    };
    let verdict = match var.goodput.partial_cmp(&base.goodput) {
        Some(core::cmp::Ordering::Greater) => Verdict::Better,
        Some(core::cmp::Ordering::Less) => Verdict::Worse,
        _ => Verdict::Equal,
    };
    let goodput_ratio = if base.goodput > 0.0 { var.goodput / base.goodput } else if var.goodput > 0.0 { f64::INFINITY } else { 1.0 };
    Ok(ComparisonReport {
        baseline: base,
        variant: var,
        raised_station: raised,
        factor,
        next_queue_buildup,
        downstream_timeout_delta,
        goodput_ratio,
        verdict,
    })
}

/// The knob a sweep turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepParam {
    ArrivalRate,
    ServiceRate(String),
    Alpha,
    /// A non-finite value removes the timeout.
    Timeout(String),
}

impl SweepParam {
    /// Accepts `lambda`, `alpha`, `mu.<station>` and `timeout.<station>`.
    pub fn parse(name: &str) -> Option<SweepParam> {
        match name {
            "lambda" | "arrival_rate" => Some(SweepParam::ArrivalRate),
            "alpha" => Some(SweepParam::Alpha),
            _ => {
                let (kind, station) = name.split_once('.')?;
                if station.is_empty() {
                    return None;
                }
                match kind {
                    "mu" | "service_rate" => Some(SweepParam::ServiceRate(station.into())),
                    "timeout" => Some(SweepParam::Timeout(station.into())),
                    _ => None,
                }
            }
        }
    }

    pub fn apply(&self, template: &SimConfig, value: f64) -> Result<SimConfig, SimError> {
        let mut cfg = template.clone();
        let station = |cfg: &mut SimConfig, name: &str| -> Result<usize, SimError> {
            cfg.station_index(name).ok_or_else(|| SimError::InvalidConfig(format!("no station named {name}")))
        };
        match self {
            SweepParam::ArrivalRate => cfg.arrival_rate = value,
            SweepParam::Alpha => cfg.coupling.alpha = value,
            SweepParam::ServiceRate(name) => {
                let i = station(&mut cfg, name)?;
                cfg.stations[i].service_rate = value;
            }
            SweepParam::Timeout(name) => {
                let i = station(&mut cfg, name)?;
                cfg.stations[i].timeout = value.is_finite().then_some(value);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepParam::ArrivalRate => f.write_str("lambda"),
            SweepParam::Alpha => f.write_str("alpha"),
            SweepParam::ServiceRate(s) => write!(f, "mu.{s}"),
            SweepParam::Timeout(s) => write!(f, "timeout.{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: SimMetrics,
}

/// One run per value, all with the template's seed. Every config is validated
/// before any run starts.
pub fn sweep(template: &SimConfig, param: &SweepParam, values: &[f64]) -> Result<Vec<SweepRow>, SimError> {
    let configs = values.iter().map(|v| param.apply(template, *v)).collect::<Result<Vec<_>, _>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(cfg, v)| Ok(SweepRow { value: *v, metrics: run_sim(cfg)?.metrics }))
        .collect()
}
