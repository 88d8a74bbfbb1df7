//! Experiment files for the simulator, and its CSV and trace output.
//!
//! ```text
//! [arrivals]
//! rate = 1.0
//!
//! [station.s1]        # chain order is file order
//! mu = 0.5
//! servers = 1
//! timeout = inf       # hard timeout on the sojourn at this station
//! capacity = 10       # waiting room; inf for unbounded
//!
//! [coupling]
//! alpha = 0.02
//! free_load = 10
//!
//! [run]
//! horizon = 5000
//! warmup = 500
//! seed = 42
//!
//! [experiment]        # optional: variant = baseline with one station sped up
//! raise = s1
//! factor = 4
//! ```

use std::io::Write;

use wms_core::sim::{ComparisonReport, LoadCoupling, SimConfig, SimMetrics, StationModel, SweepRow, TraceEvent};

use crate::conf::{self, ConfError};

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub station: String,
    pub factor: f64,
}

impl Experiment {
    pub fn variant(&self, baseline: &SimConfig) -> Result<SimConfig, ConfError> {
        let mut v = baseline.clone();
        let i = v
            .station_index(&self.station)
            .ok_or_else(|| ConfError::Invalid(format!("[experiment] raise: no station named {}", self.station)))?;
        v.stations[i].service_rate *= self.factor;
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFile {
    pub config: SimConfig,
    pub experiment: Option<Experiment>,
}

impl SimFile {
    /// The `[experiment]` pair, with the load coupling switched off on both sides.
    pub fn uncoupled(&self) -> SimFile {
        let mut out = self.clone();
        out.config.coupling.alpha = 0.0;
        out
    }

    pub fn pair(&self) -> Result<Option<(SimConfig, SimConfig)>, ConfError> {
        match &self.experiment {
            None => Ok(None),
            Some(e) => Ok(Some((self.config.clone(), e.variant(&self.config)?))),
        }
    }
}

fn cap(v: Option<f64>) -> Option<usize> {
    v.map(|c| c as usize)
}

pub fn parse_sim_config(text: &str) -> Result<SimFile, ConfError> {
    let mut rate = None;
    let mut stations = Vec::new();
    let mut coupling = LoadCoupling::default();
    let mut run = None;
    let mut experiment = None;
    for s in conf::parse(text)? {
        match s.name.as_str() {
            "arrivals" => rate = Some(s.get::<f64>("rate")?.ok_or_else(|| s.bad("rate", "required"))?),
            "coupling" => {
                coupling = LoadCoupling { alpha: s.get_or("alpha", 0.0)?, free_load: s.get_or("free_load", 0.0)? };
            }
            "run" => {
                let horizon = s.get::<f64>("horizon")?.ok_or_else(|| s.bad("horizon", "required"))?;
                run = Some((horizon, s.get_or("warmup", 0.0)?, s.get_or("seed", 1u64)?, s.get_or("trace", false)?));
            }
            "experiment" => {
                let station = s.raw("raise").ok_or_else(|| s.bad("raise", "required"))?.to_string();
                let factor = s.get_or("factor", 1.0f64)?;
                if !(factor.is_finite() && factor >= 1.0) {
                    return Err(s.bad("factor", "must be a finite number >= 1"));
                }
                experiment = Some(Experiment { station, factor });
            }
            name => {
                let Some(station) = name.strip_prefix("station.") else {
                    return Err(ConfError::UnknownSection(name.to_string()));
                };
                let mu = s.get::<f64>("mu")?.ok_or_else(|| s.bad("mu", "required"))?;
                let mut m = StationModel::new(station, mu);
                m.servers = s.get_or("servers", 1u32)?;
                m.timeout = s.bound("timeout")?;
                m.capacity = cap(s.bound("capacity")?);
                stations.push(m);
            }
        }
        s.finish()?;
    }
    let arrival_rate = rate.ok_or_else(|| ConfError::Invalid("missing [arrivals] section".into()))?;
    let (horizon, warmup, seed, record_trace) = run.ok_or_else(|| ConfError::Invalid("missing [run] section".into()))?;
    let config = SimConfig { arrival_rate, stations, coupling, horizon, warmup, seed, record_trace };
    config.validate().map_err(|e| ConfError::Invalid(e.to_string()))?;
    let file = SimFile { config, experiment };
    file.pair()?;
    Ok(file)
}

pub fn csv_header(cfg: &SimConfig) -> Vec<String> {
    let mut h: Vec<String> = ["param", "throughput", "goodput", "timeouts"].iter().map(|s| s.to_string()).collect();
    h.extend(cfg.stations.iter().map(|s| format!("mean_sojourn_{}", s.name)));
    h
}

fn row(param: &str, m: &SimMetrics) -> Vec<String> {
    let mut r = vec![param.to_string(), m.throughput.to_string(), m.goodput.to_string(), m.total_timeouts().to_string()];
    r.extend(m.stations.iter().map(|s| s.mean_sojourn.to_string()));
    r
}

/// One CSV row per `(param, metrics)`.
pub fn write_csv<W: Write>(out: W, cfg: &SimConfig, rows: &[(String, &SimMetrics)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(cfg))?;
    for (param, m) in rows {
        w.write_record(row(param, m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: W, cfg: &SimConfig, rows: &[SweepRow]) -> csv::Result<()> {
    let rows: Vec<(String, &SimMetrics)> = rows.iter().map(|r| (r.value.to_string(), &r.metrics)).collect();
    write_csv(out, cfg, &rows)
}

/// `t|job|station|event`, one line per event.
pub fn write_trace<W: Write>(mut out: W, cfg: &SimConfig, trace: &[TraceEvent]) -> std::io::Result<()> {
    for e in trace {
        let station = cfg.stations.get(e.station).map_or("-", |s| s.name.as_str());
        writeln!(out, "{}|{}|{}|{}", e.time, e.job, station, e.kind.name())?;
    }
    out.flush()
}

/// `key value` lines describing a baseline/variant comparison.
pub fn report_lines(cfg: &SimConfig, r: &ComparisonReport) -> Vec<String> {
    let name = |i: usize| cfg.stations[i].name.as_str();
    let mut out = vec![
        format!("raised {}", r.raised_station.map_or("-", name)),
        format!("factor {}", r.factor),
        format!("goodput_baseline {}", r.baseline.goodput),
        format!("goodput_variant {}", r.variant.goodput),
        format!("goodput_ratio {}", r.goodput_ratio),
        format!("next_queue_buildup {}", r.next_queue_buildup),
    ];
    for (i, d) in &r.downstream_timeout_delta {
        out.push(format!("timeout_delta {} {d:+}", name(*i)));
    }
    out.push(format!("verdict {}", r.verdict.name()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = "[arrivals]\nrate = 0.5\n[station.a]\nmu = 1\n[station.b]\nmu = 2\ntimeout = 4\ncapacity = inf\n\
                       [coupling]\nalpha = 0.1\nfree_load = 3\n[run]\nhorizon = 100\nwarmup = 10\nseed = 3\n\
                       [experiment]\nraise = a\nfactor = 4\n";

    #[test]
    fn parses_chain_in_file_order() {
        let f = parse_sim_config(CFG).unwrap();
        let c = &f.config;
        assert_eq!(c.stations.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(c.stations[1].timeout, Some(4.0));
        assert_eq!(c.stations[1].capacity, None);
        assert_eq!(c.coupling, LoadCoupling { alpha: 0.1, free_load: 3.0 });
        let (b, v) = f.pair().unwrap().unwrap();
        assert_eq!(v.stations[0].service_rate, 4.0 * b.stations[0].service_rate);
        assert_eq!(f.uncoupled().config.coupling.alpha, 0.0);
        assert_eq!(csv_header(c).join(","), "param,throughput,goodput,timeouts,mean_sojourn_a,mean_sojourn_b");
    }

    #[test]
    fn rejects_bad_files() {
        for bad in [
            "[run]\nhorizon = 10\n",
            "[arrivals]\nrate = 1\n",
            "[arrivals]\nrate = 1\n[run]\nhorizon = 10\n[station.a]\nmu = 1\nmue = 2\n",
            "[arrivals]\nrate = 1\n[run]\nhorizon = 10\n[station.a]\nmu = 0\n",
            "[arrivals]\nrate = 1\n[run]\nhorizon = 10\n[station.a]\nmu = 1\n[experiment]\nraise = z\n",
        ] {
            assert!(parse_sim_config(bad).is_err(), "{bad}");
        }
    }
}
