//! Job lifecycle events and the state they fold into.
//!
//! The derived state only depends on the *set* of events (after removing
//! duplicates by identity), never on arrival order: the lifecycle states form
//! a chain and the state is the highest one witnessed, while the three terminal
//! kinds are resolved by the earliest terminal event.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobId(String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidJobId;

impl fmt::Display for InvalidJobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("job ids are non-empty and use only [A-Za-z0-9_-]")
    }
}

impl JobId {
    pub fn new(id: impl Into<String>) -> Result<JobId, InvalidJobId> {
        let id = id.into();
        let ok = !id.is_empty()
            && id.len() <= 128
            && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if ok {
            Ok(JobId(id))
        } else {
            Err(InvalidJobId)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl core::str::FromStr for JobId {
    type Err = InvalidJobId;

    fn from_str(s: &str) -> Result<JobId, InvalidJobId> {
        JobId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventKind {
    Registered,
    Enqueued(String),
    Dequeued(String),
    Matched(String),
    Transferred,
    Running,
    Done(i32),
    Aborted(String),
    Cancelled,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Registered => "Registered",
            EventKind::Enqueued(_) => "Enqueued",
            EventKind::Dequeued(_) => "Dequeued",
            EventKind::Matched(_) => "Matched",
            EventKind::Transferred => "Transferred",
            EventKind::Running => "Running",
            EventKind::Done(_) => "Done",
            EventKind::Aborted(_) => "Aborted",
            EventKind::Cancelled => "Cancelled",
        }
    }

    /// The payload written after the kind name; empty for kinds without one.
    pub fn arg(&self) -> String {
        match self {
            EventKind::Enqueued(s) | EventKind::Dequeued(s) | EventKind::Matched(s) | EventKind::Aborted(s) => {
                s.clone()
            }
            EventKind::Done(code) => code.to_string(),
            _ => String::new(),
        }
    }

    pub fn from_parts(name: &str, arg: &str) -> Option<EventKind> {
        Some(match name {
            "Registered" => EventKind::Registered,
            "Enqueued" => EventKind::Enqueued(arg.into()),
            "Dequeued" => EventKind::Dequeued(arg.into()),
            "Matched" => EventKind::Matched(arg.into()),
            "Transferred" => EventKind::Transferred,
            "Running" => EventKind::Running,
            "Done" => EventKind::Done(arg.parse().ok()?),
            "Aborted" => EventKind::Aborted(arg.into()),
            "Cancelled" => EventKind::Cancelled,
            _ => return None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::Done(_) | EventKind::Aborted(_) | EventKind::Cancelled)
    }

    /// Lifecycle state this event witnesses.
    pub fn state(&self) -> StateKind {
        match self {
            EventKind::Registered => StateKind::Submitted,
            EventKind::Enqueued(_) | EventKind::Dequeued(_) => StateKind::Waiting,
            EventKind::Matched(_) => StateKind::Matched,
            EventKind::Transferred => StateKind::Transferred,
            EventKind::Running => StateKind::Running,
            EventKind::Done(_) => StateKind::Done,
            EventKind::Aborted(_) => StateKind::Aborted,
            EventKind::Cancelled => StateKind::Cancelled,
        }
    }
}

/// `(job, source, seq)`: two events with the same identity are the same event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId {
    pub job: JobId,
    pub source: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    pub job: JobId,
    pub kind: EventKind,
    pub source: String,
    pub seq: u64,
    pub timestamp: Timestamp,
}

impl Event {
    pub fn id(&self) -> EventId {
        EventId { job: self.job.clone(), source: self.source.clone(), seq: self.seq }
    }

    fn terminal_order_key(&self) -> (Timestamp, &str, u64) {
        (self.timestamp, self.source.as_str(), self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateKind {
    Submitted,
    Waiting,
    Matched,
    Transferred,
    Running,
    Done,
    Aborted,
    Cancelled,
}

impl StateKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, StateKind::Done | StateKind::Aborted | StateKind::Cancelled)
    }

    pub fn name(self) -> &'static str {
        match self {
            StateKind::Submitted => "Submitted",
            StateKind::Waiting => "Waiting",
            StateKind::Matched => "Matched",
            StateKind::Transferred => "Transferred",
            StateKind::Running => "Running",
            StateKind::Done => "Done",
            StateKind::Aborted => "Aborted",
            StateKind::Cancelled => "Cancelled",
        }
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobState {
    pub kind: StateKind,
    /// The event that decided `kind`.
    pub last_event: Event,
    pub resource: Option<String>,
    pub exit_code: Option<i32>,
    pub reason: Option<String>,
}

/// Removes repeated identities, keeping the first occurrence.
pub fn dedup_events(events: &[Event]) -> Vec<Event> {
    let mut seen = BTreeSet::new();
    events.iter().filter(|e| seen.insert(e.id())).cloned().collect()
}

/// Folds an event set into the job's state; `None` for an empty set.
pub fn derive_state(events: &[Event]) -> Option<JobState> {
    let events = dedup_events(events);

    // Latest Matched by (timestamp, source, seq) so that re-matches resolve
    // identically whatever the arrival order.
    let resource = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Matched(r) => Some((e.terminal_order_key(), r)),
            _ => None,
        })
        .max_by(|a, b| a.0.cmp(&b.0))
        .map(|(_, r)| r.clone());

    let terminal = events
        .iter()
        .filter(|e| e.kind.is_terminal())
        .min_by(|a, b| a.terminal_order_key().cmp(&b.terminal_order_key()).then_with(|| a.kind.name().cmp(b.kind.name())));

    if let Some(t) = terminal {
        let (exit_code, reason) = match &t.kind {
            EventKind::Done(code) => (Some(*code), None),
            EventKind::Aborted(reason) => (None, Some(reason.clone())),
            _ => (None, None),
        };
        return Some(JobState { kind: t.kind.state(), last_event: t.clone(), resource, exit_code, reason });
    }

    let top = events.iter().max_by(|a, b| {
        a.kind
            .state()
            .cmp(&b.kind.state())
            .then_with(|| a.terminal_order_key().cmp(&b.terminal_order_key()))
    })?;
    Some(JobState { kind: top.kind.state(), last_event: top.clone(), resource, exit_code: None, reason: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job() -> JobId {
        JobId::new("wms-test-1").unwrap()
    }

    fn ev(kind: EventKind, source: &str, seq: u64, t: i64) -> Event {
        Event { job: job(), kind, source: source.into(), seq, timestamp: Timestamp(t) }
    }

    #[test]
    fn registered_only_is_submitted() {
        let s = derive_state(&[ev(EventKind::Registered, "lb", 1, 0)]).unwrap();
        assert_eq!(s.kind, StateKind::Submitted);
    }

    #[test]
    fn late_matched_does_not_regress() {
        let s = derive_state(&[
            ev(EventKind::Registered, "lb", 1, 0),
            ev(EventKind::Running, "ce", 5, 30),
            ev(EventKind::Matched("ce-a".into()), "match", 3, 10),
        ])
        .unwrap();
        assert_eq!(s.kind, StateKind::Running);
        assert_eq!(s.resource.as_deref(), Some("ce-a"));
    }

    #[test]
    fn first_terminal_wins() {
        let s = derive_state(&[
            ev(EventKind::Done(0), "monitor", 9, 50),
            ev(EventKind::Cancelled, "ui", 27, 40),
            ev(EventKind::Running, "ce", 5, 30),
        ])
        .unwrap();
        assert_eq!(s.kind, StateKind::Cancelled);
        let tie = derive_state(&[
            ev(EventKind::Aborted("x".into()), "b", 1, 40),
            ev(EventKind::Done(3), "a", 1, 40),
        ])
        .unwrap();
        assert_eq!(tie.kind, StateKind::Done);
        assert_eq!(tie.exit_code, Some(3));
    }

    #[test]
    fn terminal_absorbs_later_progress() {
        let s = derive_state(&[ev(EventKind::Aborted("no match".into()), "match", 10, 5), ev(EventKind::Running, "ce", 5, 6)])
            .unwrap();
        assert_eq!(s.kind, StateKind::Aborted);
        assert_eq!(s.reason.as_deref(), Some("no match"));
    }

    #[test]
    fn kind_round_trips_through_parts() {
        for k in [
            EventKind::Registered,
            EventKind::Enqueued("match".into()),
            EventKind::Done(-1),
            EventKind::Aborted("why".into()),
            EventKind::Cancelled,
        ] {
            assert_eq!(EventKind::from_parts(k.name(), &k.arg()), Some(k));
        }
        assert_eq!(EventKind::from_parts("Done", "x"), None);
    }

    #[test]
    fn job_id_validation() {
        assert!(JobId::new("wms-20261018T000000Z-ab12").is_ok());
        assert!(JobId::new("").is_err());
        assert!(JobId::new("a|b").is_err());
        assert!(JobId::new("../x").is_err());
    }
}
