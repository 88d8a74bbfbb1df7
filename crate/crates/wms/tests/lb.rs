mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wms::clock::{to_rfc3339, Clock, ManualClock};
use wms::faults::Faults;
use wms::lb::{decode_record, encode_record, LbError, LbStore};
use wms::pipeline::System;
use wms_core::lb::{derive_state, Event, EventKind, JobId, StateKind};
use wms_core::{Span, Timestamp};

use common::{drain, manual_system, write_is, HELLO, START};

fn store(home: &Path) -> (LbStore, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(START));
    let c: Arc<dyn Clock> = clock.clone();
    (LbStore::open(home, c, Arc::new(Faults::none())).unwrap(), clock)
}

fn ev(job: &JobId, kind: EventKind, source: &str, seq: u64) -> Event {
    Event { job: job.clone(), kind, source: source.into(), seq, timestamp: Timestamp(START.0 + seq as i64) }
}

fn log_lines(dir: &Path, out: &mut Vec<String>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            log_lines(&p, out);
        } else if p.extension().is_some_and(|x| x == "log") {
            out.extend(fs::read_to_string(&p).unwrap().lines().map(String::from));
        }
    }
}

#[test]
fn record_line_is_standard_crc32_over_the_body() {
    assert_eq!(crc32fast::hash(b"123456789"), 0xcbf4_3926);
    let job = JobId::new("wms-20260301T120000Z-00000000000000ab").unwrap();
    let e = Event {
        job: job.clone(),
        kind: EventKind::Aborted("a|b".into()),
        source: "match".into(),
        seq: 10,
        timestamp: Timestamp::from_secs(1_772_366_400),
    };
    let line = encode_record(&e);
    assert!(line.ends_with('\n'));
    let line = line.trim_end();
    let (body, crc) = line.split_at(line.len() - 8);
    assert!(body.starts_with(&format!("v1|{job}|Aborted|")));
    assert!(body.ends_with(&format!("|match|10|{}|", to_rfc3339(e.timestamp))));
    assert_eq!(u32::from_str_radix(crc, 16).unwrap(), crc32fast::hash(body.as_bytes()));
    assert_eq!(decode_record(line), Some(e));
    assert_eq!(decode_record(&line.replace("|10|", "|11|")), None);
}

#[test]
fn thousand_registrations_counted_by_independent_scan() {
    let dir = tempfile::tempdir().unwrap();
    let (lb, _) = store(dir.path());
    let ids: Vec<JobId> = (0..1000).map(|_| lb.register_jdl(HELLO).unwrap()).collect();
    let uniq: BTreeSet<&JobId> = ids.iter().collect();
    assert_eq!(uniq.len(), 1000);
    assert_eq!(lb.jobs().unwrap(), ids);

    let mut lines = Vec::new();
    log_lines(&dir.path().join("lb"), &mut lines);
    let mut registered = BTreeSet::new();
    for line in &lines {
        let (body, crc) = line.split_at(line.len() - 8);
        assert_eq!(u32::from_str_radix(crc, 16).unwrap(), crc32fast::hash(body.as_bytes()));
        let f: Vec<&str> = body.split('|').collect();
        if f[2] == "Registered" {
            assert!(registered.insert(f[1].to_string()), "second Registered for {}", f[1]);
        }
    }
    assert_eq!(registered.len(), 1000);
    assert!(ids.iter().all(|id| registered.contains(id.as_str())));
}

#[test]
fn identical_ads_get_distinct_ids_and_keep_their_text() {
    let dir = tempfile::tempdir().unwrap();
    let (lb, _) = store(dir.path());
    let a = lb.register_jdl(HELLO).unwrap();
    let b = lb.register_jdl(HELLO).unwrap();
    assert_ne!(a, b);
    assert_eq!(lb.job_ad(&a).unwrap(), HELLO);
    assert_eq!(lb.job_events(&a).unwrap().len(), 1);
    assert_eq!(lb.job_state(&a).unwrap().kind, StateKind::Submitted);
}

#[test]
fn unknown_jobs_and_bad_ads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (lb, _) = store(dir.path());
    let ghost = JobId::new("wms-20260301T120000Z-0000000000000001").unwrap();
    assert!(matches!(lb.job_state(&ghost), Err(LbError::UnknownJob(_))));
    assert!(matches!(lb.record(&ghost, EventKind::Running, "ce", 5), Err(LbError::UnknownJob(_))));
    assert!(matches!(lb.register_jdl("[ Executable = "), Err(LbError::InvalidAd(_))));
    assert!(lb.jobs().unwrap().is_empty());
}

#[test]
fn duplicates_store_once_and_interleavings_store_all() {
    let dir = tempfile::tempdir().unwrap();
    let (lb, _) = store(dir.path());
    let job = lb.register_jdl(HELLO).unwrap();
    let e = ev(&job, EventKind::Running, "ce", 5);
    assert!(lb.record_event(&e).unwrap());
    assert!(!lb.record_event(&e).unwrap());
    assert_eq!(lb.job_events(&job).unwrap().iter().filter(|x| **x == e).count(), 1);

    let other = lb.register_jdl(HELLO).unwrap();
    let stream = [("a", 1), ("b", 1), ("a", 2), ("b", 2), ("a", 3)];
    for (src, seq) in stream {
        lb.record_event(&ev(&other, EventKind::Dequeued("match".into()), src, seq)).unwrap();
    }
    let stored = lb.job_events(&other).unwrap();
    assert_eq!(stored.iter().filter(|e| matches!(e.kind, EventKind::Dequeued(_))).count(), 5);
}

#[test]
fn state_follows_precedence_not_arrival() {
    let dir = tempfile::tempdir().unwrap();
    let (lb, _) = store(dir.path());
    let job = lb.register_jdl(HELLO).unwrap();
    lb.record_event(&ev(&job, EventKind::Running, "ce", 5)).unwrap();
    lb.record_event(&ev(&job, EventKind::Matched("ce-a".into()), "match", 3)).unwrap();
    let s = lb.job_state(&job).unwrap();
    assert_eq!(s.kind, StateKind::Running);
    assert_eq!(s.resource.as_deref(), Some("ce-a"));
}

#[test]
fn redundant_lossy_stream_derives_the_lossless_state() {
    let dir = tempfile::tempdir().unwrap();
    let (lb, _) = store(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let lossless = lb.register_jdl(HELLO).unwrap();
        let lossy = lb.register_jdl(HELLO).unwrap();
        let milestones = |job: &JobId| {
            vec![
                ev(job, EventKind::Registered, "accept", 2),
                ev(job, EventKind::Matched("ce-a".into()), "match", 3),
                ev(job, EventKind::Transferred, "submit", 4),
                ev(job, EventKind::Running, "ce", 5),
                ev(job, EventKind::Done(0), "monitor", 9),
            ]
        };
        for e in milestones(&lossless) {
            lb.record_event(&e).unwrap();
        }
        let mut copies = Vec::new();
        for e in milestones(&lossy) {
            copies.push(e.clone());
            if !rng.random_bool(0.1) {
                copies.push(e);
            }
        }
        copies.shuffle(&mut rng);
        for e in &copies {
            lb.record_event(e).unwrap();
        }
        let (a, b) = (lb.job_state(&lossless).unwrap(), lb.job_state(&lossy).unwrap());
        assert_eq!((a.kind, a.resource, a.exit_code), (b.kind, b.resource, b.exit_code));
    }
}

#[test]
fn concurrent_writers_never_interleave_records() {
    let dir = tempfile::tempdir().unwrap();
    let (lb, _) = store(dir.path());
    let job = lb.register_jdl(HELLO).unwrap();
    thread::scope(|s| {
        for w in 0..8 {
            let (lb, job) = (&lb, &job);
            s.spawn(move || {
                for i in 0..50 {
                    lb.record(job, EventKind::Dequeued("match".into()), &format!("w{w}"), i).unwrap();
                }
            });
        }
    });
    let mut lines = Vec::new();
    log_lines(&dir.path().join("lb"), &mut lines);
    assert_eq!(lines.len(), 401);
    assert!(lines.iter().all(|l| decode_record(l).is_some()));
    assert_eq!(lb.job_events(&job).unwrap().len(), 401);
}

#[test]
fn torn_tail_is_ignored_and_next_append_starts_clean() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(START));
    let c: Arc<dyn Clock> = clock.clone();
    let lb = LbStore::open(dir.path(), c.clone(), Arc::new(Faults::crash_at(1))).unwrap();
    let job = {
        let plain = LbStore::open(dir.path(), c.clone(), Arc::new(Faults::none())).unwrap();
        plain.register_jdl(HELLO).unwrap()
    };
    assert!(lb.record(&job, EventKind::Running, "ce", 5).is_err());
    let lb = LbStore::open(dir.path(), c, Arc::new(Faults::none())).unwrap();
    assert_eq!(lb.job_state(&job).unwrap().kind, StateKind::Submitted);
    lb.record(&job, EventKind::Running, "ce", 5).unwrap();
    assert_eq!(lb.job_state(&job).unwrap().kind, StateKind::Running);
}

#[test]
fn state_is_answerable_from_the_log_alone() {
    let dir = tempfile::tempdir().unwrap();
    let home = dir.path();
    write_is(home, START);
    let mut cfg = wms::config::ServiceConfig::default();
    cfg.ce.runtime = std::time::Duration::ZERO;
    let (sys, clock) = manual_system(home, cfg.clone(), Faults::none());
    let job = sys.submit(HELLO).unwrap();
    let cancelled = sys.submit(HELLO).unwrap();
    sys.cancel(&cancelled).unwrap();
    drain(&sys);
    drop(sys);

    fs::remove_dir_all(home.join("spool")).unwrap();
    fs::remove_dir_all(home.join("ce")).unwrap();
    fs::remove_dir_all(home.join("is")).unwrap();
    clock.advance(Span::from_secs(1));

    let c: Arc<dyn Clock> = clock;
    let lb = LbStore::open(home, c.clone(), Arc::new(Faults::none())).unwrap();
    let s = lb.job_state(&job).unwrap();
    assert_eq!((s.kind, s.resource.as_deref(), s.exit_code), (StateKind::Done, Some("ce-a"), Some(0)));
    assert_eq!(lb.job_state(&cancelled).unwrap().kind, StateKind::Cancelled);
    let events = lb.job_events(&job).unwrap();
    assert_eq!(derive_state(&events).unwrap(), s);

    let reopened = System::open(home, cfg, c, Arc::new(Faults::none())).unwrap();
    assert_eq!(reopened.status(&job).unwrap().kind, StateKind::Done);
}
