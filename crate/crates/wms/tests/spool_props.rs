use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use wms::clock::{Clock, ManualClock};
use wms::faults::Faults;
use wms::spool::{Lease, NackMode, NackOutcome, Queue, QueueConfig, SpoolError};
use wms_core::{Span, Timestamp};

#[derive(Debug, Clone)]
enum Op {
    Enqueue,
    Dequeue,
    Ack(usize),
    Nack(usize, bool),
    Advance(u8),
    Reclaim,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::Enqueue),
        3 => Just(Op::Dequeue),
        2 => any::<usize>().prop_map(Op::Ack),
        2 => (any::<usize>(), any::<bool>()).prop_map(|(i, f)| Op::Nack(i, f)),
        1 => (1u8..40).prop_map(Op::Advance),
        1 => Just(Op::Reclaim),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Where {
    Queued,
    Dead,
    Gone,
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn every_entry_lives_in_exactly_one_place(ops in prop::collection::vec(op(), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(Timestamp::from_secs(1_000)));
        let mut cfg = QueueConfig::new("q", dir.path(), 4);
        cfg.lease = Span::from_secs(30);
        cfg.max_retries = 2;
        let q = Queue::open(cfg, clock.clone() as Arc<dyn Clock>, Arc::new(Faults::none())).unwrap();

        let mut model: BTreeMap<String, Where> = BTreeMap::new();
        let mut retries: BTreeMap<String, u32> = BTreeMap::new();
        let mut held: Vec<(String, Lease)> = Vec::new();
        let mut n = 0;
        for op in ops {
            match op {
                Op::Enqueue => {
                    n += 1;
                    let p = format!("p{n}");
                    match q.enqueue(p.as_bytes()) {
                        Ok(_) => { model.insert(p, Where::Queued); }
                        Err(SpoolError::QueueFull { .. }) => {
                            prop_assert!(q.depth().unwrap().live() >= 4);
                        }
                        Err(e) => return Err(TestCaseError::fail(e.to_string())),
                    }
                }
                Op::Dequeue => {
                    if let Some((e, lease)) = q.dequeue("w").unwrap() {
                        let p = String::from_utf8(e.payload).unwrap();
                        let last = retries.insert(p.clone(), e.retry).unwrap_or(0);
                        prop_assert!(e.retry >= last);
                        held.push((p, lease));
                    }
                }
                Op::Ack(i) if !held.is_empty() => {
                    let (p, lease) = held.remove(i % held.len());
                    if q.ack(&lease).is_ok() {
                        model.insert(p, Where::Gone);
                    }
                }
                Op::Nack(i, failure) if !held.is_empty() => {
                    let (p, lease) = held.remove(i % held.len());
                    let mode = if failure { NackMode::Failure } else { NackMode::Backpressure };
                    if let Ok(NackOutcome::DeadLettered { .. }) = q.nack(&lease, mode) {
                        model.insert(p, Where::Dead);
                    }
                }
                Op::Advance(s) => clock.advance(Span::from_secs(i64::from(s))),
                Op::Reclaim => { q.reclaim_expired().unwrap(); }
                _ => {}
            }

            let d = q.depth().unwrap();
            prop_assert!(d.live() <= 4);
            let mut seen: BTreeMap<String, Where> = BTreeMap::new();
            for e in q.ready_entries().unwrap().into_iter().chain(q.inflight_entries().unwrap()) {
                let p = String::from_utf8(e.payload).unwrap();
                prop_assert!(seen.insert(p, Where::Queued).is_none());
            }
            for e in q.dead_entries().unwrap() {
                let p = String::from_utf8(e.payload).unwrap();
                prop_assert!(seen.insert(p, Where::Dead).is_none());
            }
            let expected: BTreeMap<String, Where> =
                model.iter().filter(|(_, w)| **w != Where::Gone).map(|(k, w)| (k.clone(), *w)).collect();
            prop_assert_eq!(seen, expected);
        }
    }
}
