use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use wms::clock::{to_rfc3339, Clock, ManualClock};
use wms::faults::Faults;
use wms::spool::{Lease, NackMode, NackOutcome, Queue, QueueConfig, SpoolError};
use wms_core::{Span, Timestamp};

const START: Timestamp = Timestamp::from_secs(1_790_000_000);

fn open(root: &Path, capacity: usize, clock: &Arc<ManualClock>, faults: Faults) -> Queue {
    open_with(root, capacity, clock, Arc::new(faults))
}

fn open_with(root: &Path, capacity: usize, clock: &Arc<ManualClock>, faults: Arc<Faults>) -> Queue {
    let mut cfg = QueueConfig::new("q", root, capacity);
    cfg.max_retries = 1;
    cfg.lease = Span::from_secs(30);
    cfg.stage_ttl = Span::from_secs(60);
    let clock: Arc<dyn Clock> = clock.clone();
    Queue::open(cfg, clock, faults).unwrap()
}

fn system_queue(root: &Path, capacity: usize) -> Queue {
    let cfg = QueueConfig::new("q", root, capacity);
    Queue::open(cfg, Arc::new(wms::clock::SystemClock), Arc::new(Faults::none())).unwrap()
}

#[test]
fn eight_consumers_drain_each_entry_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let q = system_queue(dir.path(), 200);
    for i in 0..200 {
        q.enqueue(format!("n{i}").as_bytes()).unwrap();
    }
    let got: Vec<Vec<String>> = thread::scope(|s| {
        let hs: Vec<_> = (0..8)
            .map(|w| {
                let q = &q;
                s.spawn(move || {
                    let mut mine = Vec::new();
                    while let Some((e, lease)) = q.dequeue(&format!("w{w}")).unwrap() {
                        q.ack(&lease).unwrap();
                        mine.push(String::from_utf8(e.payload).unwrap());
                    }
                    mine
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let all: Vec<String> = got.into_iter().flatten().collect();
    assert_eq!(all.len(), 200);
    let uniq: BTreeSet<&String> = all.iter().collect();
    assert_eq!(uniq.len(), 200);
    assert_eq!(q.depth().unwrap().live(), 0);
}

#[test]
fn concurrent_producers_never_exceed_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let q = system_queue(dir.path(), 100);
    let accepted: usize = thread::scope(|s| {
        let hs: Vec<_> = (0..8)
            .map(|w| {
                let q = &q;
                s.spawn(move || {
                    let mut ok = 0;
                    for i in 0..50 {
                        match q.enqueue(format!("{w}-{i}").as_bytes()) {
                            Ok(_) => ok += 1,
                            Err(SpoolError::QueueFull { capacity, .. }) => assert_eq!(capacity, 100),
                            Err(e) => panic!("{e}"),
                        }
                    }
                    ok
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert_eq!(accepted, 100);
    assert_eq!(q.depth().unwrap().ready, 100);
}

#[test]
fn fifo_capacity_and_stale_ack() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(START));
    let q = open(dir.path(), 2, &clock, Faults::none());
    q.enqueue(b"a").unwrap();
    q.enqueue(b"b").unwrap();
    assert!(matches!(q.enqueue(b"c"), Err(SpoolError::QueueFull { capacity: 2, .. })));

    let (e, lease) = q.dequeue("w").unwrap().unwrap();
    assert_eq!(e.payload, b"a");
    q.ack(&lease).unwrap();
    assert!(matches!(q.ack(&lease), Err(SpoolError::StaleLease(_))));

    let (e, lease) = q.dequeue("w").unwrap().unwrap();
    assert_eq!(e.payload, b"b");
    clock.advance(Span::from_secs(31));
    assert!(matches!(q.ack(&lease), Err(SpoolError::StaleLease(_))));
    let r = q.recover().unwrap();
    assert_eq!((r.reclaimed, r.expired_leases), (1, 1));
    assert_eq!(q.ready_entries().unwrap()[0].payload, b"b");
    assert!(q.dequeue("w").unwrap().is_some());
    assert!(q.dequeue("w").unwrap().is_none());
}

#[test]
fn failures_count_up_to_the_dead_letter() {
    let dir = tempfile::tempdir().unwrap();
    let q = system_queue(dir.path(), 10);
    q.enqueue(b"job").unwrap();
    let mut seen = Vec::new();
    let mut outcomes = Vec::new();
    for _ in 0..4 {
        let (e, lease) = q.dequeue("w").unwrap().unwrap();
        seen.push(e.retry);
        outcomes.push(q.nack(&lease, NackMode::Failure).unwrap());
    }
    assert_eq!(seen, [0, 1, 2, 3]);
    assert!(seen.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(outcomes[3], NackOutcome::DeadLettered { retry: 4 });
    assert!(q.dequeue("w").unwrap().is_none());
    assert_eq!(q.dead_entries().unwrap().len(), 1);
}

#[test]
fn backpressure_keeps_the_retry_count() {
    let dir = tempfile::tempdir().unwrap();
    let q = system_queue(dir.path(), 10);
    q.enqueue(b"job").unwrap();
    for _ in 0..10 {
        let (e, lease) = q.dequeue("w").unwrap().unwrap();
        assert_eq!(e.retry, 0);
        q.nack(&lease, NackMode::Backpressure).unwrap();
    }
}

#[test]
fn recover_after_clean_shutdown_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(START));
    {
        let q = open(dir.path(), 5, &clock, Faults::none());
        q.enqueue(b"x").unwrap();
        let (_, l) = q.dequeue("w").unwrap().unwrap();
        q.ack(&l).unwrap();
        q.enqueue(b"y").unwrap();
    }
    let q = open(dir.path(), 5, &clock, Faults::none());
    assert!(q.recover().unwrap().is_zero());
    assert_eq!(q.depth().unwrap().ready, 1);
}

#[derive(Default)]
struct Tally {
    committed: BTreeSet<String>,
    /// Acks that were attempted; the last may have crashed half way.
    acking: BTreeSet<String>,
    acked: BTreeSet<String>,
}

/// A fixed op script; stops at the first error, which only a crash may cause.
fn script(q: &Queue, t: &mut Tally) -> Result<(), SpoolError> {
    let enq = |q: &Queue, t: &mut Tally, p: &str| -> Result<(), SpoolError> {
        q.enqueue(p.as_bytes())?;
        t.committed.insert(p.to_string());
        Ok(())
    };
    let deq = |q: &Queue| -> Result<(String, Lease), SpoolError> {
        let (e, l) = q.dequeue("w")?.expect("script only dequeues from a non-empty queue");
        Ok((String::from_utf8(e.payload).unwrap(), l))
    };
    enq(q, t, "p0")?;
    enq(q, t, "p1")?;
    enq(q, t, "p2")?;
    let (p, l) = deq(q)?;
    t.acking.insert(p.clone());
    q.ack(&l)?;
    t.acked.insert(p);
    let (_, l) = deq(q)?;
    q.nack(&l, NackMode::Failure)?;
    let (_, l) = deq(q)?;
    q.nack(&l, NackMode::Backpressure)?;
    let (_, l) = deq(q)?;
    q.nack(&l, NackMode::Failure)?;
    enq(q, t, "p3")?;
    let (p, l) = deq(q)?;
    t.acking.insert(p.clone());
    q.ack(&l)?;
    t.acked.insert(p);
    let _held = deq(q)?;
    enq(q, t, "p4")?;
    Ok(())
}

fn placements(q: &Queue) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for e in q.ready_entries().unwrap().into_iter().chain(q.inflight_entries().unwrap()).chain(q.dead_entries().unwrap()) {
        *m.entry(String::from_utf8(e.payload).unwrap()).or_insert(0) += 1;
    }
    m
}

#[test]
fn every_kill_point_leaves_each_entry_in_one_place() {
    let clean_hits = {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(START));
        let faults = Arc::new(Faults::none());
        let q = open_with(dir.path(), 10, &clock, faults.clone());
        let mut t = Tally::default();
        script(&q, &mut t).unwrap();
        assert_eq!(t.acked.len(), 2);
        let p = placements(&q);
        assert_eq!(p.keys().cloned().collect::<BTreeSet<_>>(), ["p1", "p3", "p4"].map(String::from).into());
        faults.hits()
    };
    assert!(clean_hits > 20, "{clean_hits}");

    for k in 1..=clean_hits {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(START));
        let mut t = Tally::default();
        {
            let q = open(dir.path(), 10, &clock, Faults::crash_at(k));
            let err = script(&q, &mut t).unwrap_err();
            assert!(matches!(err, SpoolError::Crashed(_)), "k={k}: {err}");
        }
        clock.advance(Span::from_secs(120));
        let q = open(dir.path(), 10, &clock, Faults::none());
        q.recover().unwrap();
        let p = placements(&q);
        for (payload, n) in &p {
            assert_eq!(*n, 1, "k={k}: {payload} stored {n} times");
        }
        for c in t.committed.difference(&t.acking) {
            assert!(p.contains_key(c), "k={k}: committed {c} lost");
        }
        for a in &t.acked {
            assert!(!p.contains_key(a), "k={k}: acked {a} came back");
        }
        let d = q.depth().unwrap();
        assert_eq!((d.staging, d.inflight), (0, 0), "k={k}");
        assert!(q.recover().unwrap().is_zero(), "k={k}");
    }
}

#[test]
fn stray_staging_files_are_purged_after_ttl() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(START));
    let q = open(dir.path(), 5, &clock, Faults::none());
    fs::write(q.dir().join("staging").join("99"), format!("0|{}\nhalf", to_rfc3339(START))).unwrap();
    assert_eq!(q.purge_stale_staging().unwrap(), 0);
    clock.advance(Span::from_secs(61));
    assert_eq!(q.purge_stale_staging().unwrap(), 1);
    assert_eq!(q.depth().unwrap().staging, 0);
}
