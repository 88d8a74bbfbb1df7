//! Worker action log: `ts|worker|station|entry|action|outcome`, one line per action.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::clock::{to_rfc3339, Clock};

fn field(s: &str) -> String {
    s.replace(['|', '\n', '\r'], " ")
}

pub struct RunLog {
    file: Option<Mutex<File>>,
    clock: Arc<dyn Clock>,
}

impl RunLog {
    /// Appends to `path`, creating it if needed.
    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> io::Result<RunLog> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLog { file: Some(Mutex::new(file)), clock })
    }

    pub fn disabled(clock: Arc<dyn Clock>) -> RunLog {
        RunLog { file: None, clock }
    }

    pub fn line(&self, worker: &str, station: &str, entry: &str, action: &str, outcome: &str) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}\n",
            to_rfc3339(self.clock.now()),
            field(worker),
            field(station),
            field(entry),
            field(action),
            field(outcome)
        )
    }

    /// Logging never fails the caller; a write error is dropped.
    pub fn log(&self, worker: &str, station: &str, entry: &str, action: &str, outcome: &str) {
        if let Some(file) = &self.file {
            let line = self.line(worker, station, entry, action, outcome);
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            let _ = f.write_all(line.as_bytes());
        }
    }
}

/// Splits a log line into its six fields.
pub fn parse_line(line: &str) -> Option<[&str; 6]> {
    let v: Vec<&str> = line.split('|').collect();
    v.try_into().ok()
}
