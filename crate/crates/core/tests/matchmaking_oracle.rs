mod support;

use support::Instance;
use wms_core::jdl::{match_ads, parse_ad, parse_ads, rank_detailed};

#[test]
fn five_by_eight_match_matrix() {
    for seed in 0..40 {
        let inst = Instance::random(seed, 5, 8);
        let ces = parse_ads(&inst.snapshot_jdl()).unwrap();
        for j in 0..5 {
            let job = parse_ad(&inst.job_jdl(j)).unwrap();
            let got: Vec<bool> = ces.iter().map(|ce| match_ads(&job, ce)).collect();
            let want: Vec<bool> = inst.ces.iter().map(|ce| inst.matches(j, ce)).collect();
            assert_eq!(got, want, "seed {seed} job {j}\n{}\n{}", inst.job_jdl(j), inst.snapshot_jdl());
        }
    }
}

#[test]
fn rank_values_and_ordering() {
    for seed in 100..140 {
        let inst = Instance::random(seed, 5, 8);
        let ces = parse_ads(&inst.snapshot_jdl()).unwrap();
        for j in 0..5 {
            let job = parse_ad(&inst.job_jdl(j)).unwrap();
            for (ad, ce) in ces.iter().zip(&inst.ces) {
                let got = rank_detailed(&job, ad);
                match inst.rank(j, ce) {
                    Some(r) => {
                        assert_eq!(got.value, r, "seed {seed} job {j} {}", ce.id);
                        assert!(got.warning.is_none());
                    }
                    None => {
                        assert_eq!(got.value, 0.0);
                        assert!(got.warning.is_some());
                    }
                }
            }
        }
    }
}

#[test]
fn free_minus_queue_ordering_over_eight_resources() {
    let job = parse_ad("[Rank = other.FreeCPUs - other.QueueLength]").unwrap();
    let table = [(7, 2), (3, 0), (0, 4), (12, 9), (5, 5), (8, 1), (1, 0), (6, 6)];
    let ads: Vec<_> = table
        .iter()
        .enumerate()
        .map(|(i, (f, q))| parse_ad(&format!("[Id = \"ce-{i}\"; FreeCPUs = {f}; QueueLength = {q}]")).unwrap())
        .collect();
    let mut got: Vec<(usize, f64)> = ads.iter().enumerate().map(|(i, a)| (i, wms_core::jdl::rank(&job, a))).collect();
    got.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut want: Vec<(usize, i64)> = table.iter().enumerate().map(|(i, (f, q))| (i, f - q)).collect();
    want.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), want.iter().map(|w| w.0).collect::<Vec<_>>());
    for ((_, g), (_, w)) in got.iter().zip(&want) {
        assert_eq!(*g, *w as f64);
    }
}
