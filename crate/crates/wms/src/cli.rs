//! The `wms` command line.
//!
//! Exit status is 0 on success, 1 for a usage or user error (bad input file,
//! unknown job, full queue) and 2 for an internal failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::json;
use wms_core::broker::{match_job, Choice, DataPolicy};
use wms_core::jdl::parse_ad;
use wms_core::lb::{Event, JobId, JobState};
use wms_core::sim::{fig2_experiment, run_sim, sweep, SweepParam};
use wms_core::Span;

use crate::brokerio::{load_catalog, load_snapshot};
use crate::clock::{parse_rfc3339, to_rfc3339};
use crate::config::ServiceConfig;
use crate::lb::encode_record;
use crate::pipeline::{status_line, PipelineError, Services, System};
use crate::simio::{parse_sim_config, report_lines, write_csv, write_sweep_csv, write_trace};

#[derive(Debug, Parser)]
#[command(name = "wms", version, about = "Submit and track jobs, run the station pipeline, simulate it")]
pub struct Cli {
    /// Installation root holding the LB, spool and CE directories.
    #[arg(long, env = "WMS_HOME", default_value = "wms-home", global = true)]
    pub home: PathBuf,
    /// Service config [default: $WMS_HOME/wms.conf]; a missing file means all defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON lines instead of plain columns (status, events).
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a job and queue it for the accept station; prints its id.
    Submit { jdl: PathBuf },
    /// `<jobid> <state> [detail]` per job; every job when none is named.
    Status { jobs: Vec<String> },
    /// The job's LB records.
    Events { job: String },
    /// Record Cancelled and dead-letter the job's waiting entries.
    Cancel { job: String },
    /// Recover, then run the worker pools and the supervisor.
    RunServices {
        config: Option<PathBuf>,
        /// Stop once every queue is empty.
        #[arg(long)]
        until_idle: bool,
        /// Stop after this many seconds.
        #[arg(long)]
        max_secs: Option<u64>,
    },
    /// Startup recovery only.
    Recover { config: Option<PathBuf> },
    /// Run a simulation (a baseline/variant pair if the file has [experiment]) and write CSV.
    Sim {
        config: PathBuf,
        out: PathBuf,
        /// Also write the event trace (baseline run) as `t|job|station|event`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// One run per value of `param` (lambda, alpha, mu.<station>, timeout.<station>).
    Sweep {
        config: PathBuf,
        param: String,
        /// Comma-separated, e.g. 0.1,0.2,0.3 (inf allowed for timeouts).
        values: String,
        out: PathBuf,
    },
    /// Show the broker's decision for a job without touching any state.
    MatchDryRun {
        jdl: PathBuf,
        snapshot: PathBuf,
        catalog: PathBuf,
        /// require-close-replica or ignore-data.
        #[arg(long, default_value = "require-close-replica")]
        policy: String,
        /// Evaluation instant (RFC 3339) [default: the snapshot's taken-at].
        #[arg(long)]
        at: Option<String>,
        /// Snapshot time-to-live in seconds.
        #[arg(long, default_value_t = 600)]
        ttl_s: i64,
    },
}

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(CliError::User(m)) => {
            let _ = writeln!(err, "wms: {m}");
            1
        }
        Err(CliError::Internal(m)) => {
            let _ = writeln!(err, "wms: internal error: {m}");
            2
        }
    }
}

fn service_config(cli: &Cli, positional: Option<&PathBuf>) -> Result<ServiceConfig, CliError> {
    let path = positional.or(cli.config.as_ref()).cloned().unwrap_or_else(|| cli.home.join("wms.conf"));
    ServiceConfig::load_or_default(&path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn open(cli: &Cli, positional: Option<&PathBuf>) -> Result<System, CliError> {
    let cfg = service_config(cli, positional)?;
    Ok(System::open_live(&cli.home, cfg)?)
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn job_id(s: &str) -> Result<JobId, CliError> {
    JobId::new(s).map_err(|_| user(format!("unknown job {s}")))
}

fn state_json(job: &JobId, s: &JobState) -> serde_json::Value {
    json!({
        "job": job.as_str(),
        "state": s.kind.name(),
        "resource": s.resource,
        "exit_code": s.exit_code,
        "reason": s.reason,
    })
}

fn event_json(e: &Event) -> serde_json::Value {
    json!({
        "job": e.job.as_str(),
        "kind": e.kind.name(),
        "arg": e.kind.arg(),
        "source": e.source,
        "seq": e.seq,
        "timestamp": to_rfc3339(e.timestamp),
    })
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Submit { jdl } => {
            let text = read_input(jdl)?;
            let sys = open(cli, None)?;
            let job = sys.submit(&text)?;
            writeln!(out, "{job}").map_err(internal)?;
        }
        Command::Status { jobs } => {
            let sys = open(cli, None)?;
            let ids = if jobs.is_empty() {
                sys.lb().jobs().map_err(|e| internal(PipelineError::from(e)))?
            } else {
                jobs.iter().map(|j| job_id(j)).collect::<Result<_, _>>()?
            };
            for job in ids {
                let state = sys.status(&job)?;
                let line = if cli.json { state_json(&job, &state).to_string() } else { status_line(&job, &state) };
                writeln!(out, "{line}").map_err(internal)?;
            }
        }
        Command::Events { job } => {
            let sys = open(cli, None)?;
            let job = job_id(job)?;
            for e in sys.lb().job_events(&job).map_err(PipelineError::from)? {
                if cli.json {
                    writeln!(out, "{}", event_json(&e)).map_err(internal)?;
                } else {
                    write!(out, "{}", encode_record(&e)).map_err(internal)?;
                }
            }
        }
        Command::Cancel { job } => {
            let sys = open(cli, None)?;
            let job = job_id(job)?;
            let moved = sys.cancel(&job)?;
            let state = sys.status(&job)?;
            writeln!(out, "{} dead_lettered={moved}", status_line(&job, &state)).map_err(internal)?;
        }
        Command::RunServices { config, until_idle, max_secs } => {
            let sys = Arc::new(open(cli, config.as_ref())?);
            let services = Services::start(sys)?;
            writeln!(out, "recovered {}", services.recovered()).map_err(internal)?;
            let limit = Duration::from_secs(max_secs.unwrap_or(u64::MAX / 4));
            let idle = if *until_idle {
                services.wait_idle(limit)?
            } else {
                std::thread::sleep(limit);
                false
            };
            let report = services.stop();
            for a in &report.actions {
                writeln!(out, "action {} {} {}", a.action.name(), a.ward, a.detail).map_err(internal)?;
            }
            let served: u64 = report.served.values().sum();
            writeln!(out, "served {served} workers {}", report.served.len()).map_err(internal)?;
            if *until_idle && !idle {
                return Err(user(format!("queues still busy after {}s", limit.as_secs())));
            }
        }
        Command::Recover { config } => {
            let sys = open(cli, config.as_ref())?;
            let report = sys.recover_all()?;
            writeln!(out, "{report}").map_err(internal)?;
        }
        Command::Sim { config, out: csv_path, trace } => {
            let file = parse_sim_config(&read_input(config)?).map_err(|e| user(format!("{}: {e}", config.display())))?;
            let cfg = &file.config;
            let csv_out = fs::File::create(csv_path).map_err(|e| user(format!("{}: {e}", csv_path.display())))?;
            match file.pair().map_err(user)? {
                Some((base, variant)) => {
                    let r = fig2_experiment(&base, &variant).map_err(user)?;
                    let rows = [("baseline".to_string(), &r.baseline), ("variant".to_string(), &r.variant)];
                    write_csv(csv_out, cfg, &rows).map_err(internal)?;
                    for line in report_lines(cfg, &r) {
                        writeln!(out, "{line}").map_err(internal)?;
                    }
                }
                None => {
                    let mut c = cfg.clone();
                    c.record_trace |= trace.is_some();
                    let o = run_sim(&c).map_err(user)?;
                    write_csv(csv_out, cfg, &[("run".to_string(), &o.metrics)]).map_err(internal)?;
                }
            }
            if let Some(path) = trace {
                let mut c = cfg.clone();
                c.record_trace = true;
                let o = run_sim(&c).map_err(user)?;
                let f = fs::File::create(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
                write_trace(std::io::BufWriter::new(f), cfg, &o.trace).map_err(internal)?;
            }
        }
        Command::Sweep { config, param, values, out: csv_path } => {
            let file = parse_sim_config(&read_input(config)?).map_err(|e| user(format!("{}: {e}", config.display())))?;
            let p = SweepParam::parse(param).ok_or_else(|| user(format!("unknown sweep parameter {param}")))?;
            let values: Vec<f64> = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| v.parse::<f64>().map_err(|_| user(format!("not a number: {v}"))))
                .collect::<Result<_, _>>()?;
            let rows = sweep(&file.config, &p, &values).map_err(user)?;
            let f = fs::File::create(csv_path).map_err(|e| user(format!("{}: {e}", csv_path.display())))?;
            write_sweep_csv(f, &file.config, &rows).map_err(internal)?;
        }
        Command::MatchDryRun { jdl, snapshot, catalog, policy, at, ttl_s } => {
            let policy = DataPolicy::from_name(policy).ok_or_else(|| user(format!("unknown data policy {policy}")))?;
            let ad = parse_ad(&read_input(jdl)?).map_err(|e| user(format!("{}: {e}", jdl.display())))?;
            let snap = load_snapshot(snapshot, Span::from_secs(*ttl_s)).map_err(user)?;
            let cat = load_catalog(catalog).map_err(user)?;
            let now = match at {
                Some(t) => parse_rfc3339(t).ok_or_else(|| user(format!("--at: not an RFC 3339 time: {t}")))?,
                None => snap.taken_at,
            };
            let job = JobId::new("dry-run").expect("valid id");
            let r = match_job(&job, &ad, &snap, &cat, policy, now).map_err(user)?;
            for line in dry_run_table(&r) {
                writeln!(out, "{line}").map_err(internal)?;
            }
        }
    }
    Ok(())
}

/// Tab-separated: `chosen <ce>` or `nomatch <reason>`, then one
/// `candidate <ce> <rank>` per candidate best-first, then `warning <text>` lines.
pub fn dry_run_table(r: &wms_core::broker::MatchResult) -> Vec<String> {
    let mut lines = vec![match &r.chosen {
        Choice::Resource(ce) => format!("chosen\t{ce}"),
        Choice::NoMatch(reason) => format!("nomatch\t{reason}"),
    }];
    lines.extend(r.candidates.iter().map(|c| format!("candidate\t{}\t{}", c.resource, c.rank)));
    lines.extend(r.warnings.iter().map(|w| format!("warning\t{w}")));
    lines
}
