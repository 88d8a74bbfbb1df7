//! Wall-clock access behind a trait so tests can drive time by hand.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, SecondsFormat, Utc};
use wms_core::{Span, Timestamp};

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_micros(Utc::now().timestamp_micros())
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: Timestamp) -> ManualClock {
        ManualClock(AtomicI64::new(start.micros()))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t.micros(), Ordering::SeqCst);
    }

    pub fn advance(&self, by: Span) {
        self.0.fetch_add(by.micros(), Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_micros(self.0.load(Ordering::SeqCst))
    }
}

fn datetime(t: Timestamp) -> DateTime<Utc> {
    DateTime::from_timestamp_micros(t.micros()).unwrap_or(DateTime::UNIX_EPOCH)
}

/// `2002-03-04T05:06:07.000008Z`: always UTC, always microseconds.
pub fn to_rfc3339(t: Timestamp) -> String {
    datetime(t).to_rfc3339_opts(SecondsFormat::Micros, true)
}

pub fn parse_rfc3339(s: &str) -> Option<Timestamp> {
    DateTime::parse_from_rfc3339(s).ok().map(|d| Timestamp::from_micros(d.with_timezone(&Utc).timestamp_micros()))
}

/// `20020304T050607Z`, used inside job ids.
pub fn compact_utc(t: Timestamp) -> String {
    datetime(t).format("%Y%m%dT%H%M%SZ").to_string()
}

pub fn span_from_std(d: std::time::Duration) -> Span {
    Span(i64::try_from(d.as_micros()).unwrap_or(i64::MAX))
}
