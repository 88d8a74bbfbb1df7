use wms_core::sim::{
    fig2_experiment, mm1_theory, run_sim, sweep, tandem_theory, LoadCoupling, SimConfig, StationModel, SweepParam, Verdict,
};

fn single(lambda: f64, mu: f64, horizon: f64, warmup: f64, seed: u64) -> SimConfig {
    SimConfig {
        arrival_rate: lambda,
        stations: vec![StationModel::new("s1", mu)],
        coupling: LoadCoupling::default(),
        horizon,
        warmup,
        seed,
        record_trace: false,
    }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs()
}

#[test]
fn mm1_matches_closed_form() {
    let theory = mm1_theory(0.5, 1.0).unwrap();
    let m = run_sim(&single(0.5, 1.0, 200_000.0, 10_000.0, 7)).unwrap().metrics;
    assert!(within(m.mean_load, theory.mean_in_system, 0.05), "L = {}", m.mean_load);
    assert!(within(m.stations[0].mean_sojourn, theory.mean_sojourn, 0.05), "W = {}", m.stations[0].mean_sojourn);
    assert!(within(m.throughput, 0.5, 0.02));
    assert_eq!(m.throughput, m.goodput);
    assert!(m.totals.reconciles());
}

#[test]
fn two_seeds_agree_and_one_seed_repeats() {
    let mut cfg = single(0.5, 1.0, 200_000.0, 10_000.0, 11);
    let a = run_sim(&cfg).unwrap().metrics;
    cfg.seed = 12;
    let b = run_sim(&cfg).unwrap().metrics;
    assert!(within(a.mean_load, b.mean_load, 0.03), "{} vs {}", a.mean_load, b.mean_load);
    assert!(within(a.mean_sojourn, b.mean_sojourn, 0.03));
    assert!(within(a.throughput, b.throughput, 0.03));

    let mut cfg = single(0.7, 1.0, 2_000.0, 100.0, 5);
    cfg.record_trace = true;
    let x = run_sim(&cfg).unwrap();
    let y = run_sim(&cfg).unwrap();
    assert!(!x.trace.is_empty());
    assert_eq!(x, y);
}

#[test]
fn tandem_matches_product_form() {
    let rates = [1.0, 0.8, 1.5];
    let cfg = SimConfig {
        arrival_rate: 0.4,
        stations: rates.iter().enumerate().map(|(i, mu)| StationModel::new(format!("s{}", i + 1), *mu)).collect(),
        coupling: LoadCoupling::default(),
        horizon: 200_000.0,
        warmup: 10_000.0,
        seed: 3,
        record_trace: false,
    };
    let m = run_sim(&cfg).unwrap().metrics;
    let theory = tandem_theory(0.4, &rates).unwrap();
    for (s, t) in m.stations.iter().zip(&theory) {
        assert!(within(s.mean_sojourn, t.mean_sojourn, 0.05), "{}: {} vs {}", s.name, s.mean_sojourn, t.mean_sojourn);
        assert!(within(s.mean_occupancy, t.mean_in_system, 0.05));
    }
    let total: f64 = theory.iter().map(|t| t.mean_sojourn).sum();
    assert!(within(m.mean_sojourn, total, 0.05));
}

#[test]
fn lambda_sweep_is_monotone() {
    let values: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let rows = sweep(&single(0.1, 1.0, 50_000.0, 2_000.0, 21), &SweepParam::ArrivalRate, &values).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].metrics.mean_load > w[0].metrics.mean_load, "{} -> {}", w[0].value, w[1].value);
    }
    for r in &rows {
        let t = mm1_theory(r.value, 1.0).unwrap();
        assert!(within(r.metrics.mean_load, t.mean_in_system, 0.25), "lambda {}", r.value);
    }
}

fn coupled_chain() -> SimConfig {
    let mut s3 = StationModel::new("s3", 2.0);
    s3.timeout = Some(5.0);
    SimConfig {
        arrival_rate: 0.7,
        stations: vec![StationModel::new("s1", 1.0), StationModel::new("s2", 0.9), s3],
        coupling: LoadCoupling { alpha: 0.0, free_load: 2.0 },
        horizon: 20_000.0,
        warmup: 1_000.0,
        seed: 8,
        record_trace: false,
    }
}

#[test]
fn alpha_sweep_goodput_does_not_increase() {
    let rows = sweep(&coupled_chain(), &SweepParam::Alpha, &[0.0, 0.01, 0.1]).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].metrics.goodput <= w[0].metrics.goodput, "alpha {} -> {}", w[0].value, w[1].value);
    }
    assert!(rows[2].metrics.goodput < rows[0].metrics.goodput);
}

#[test]
fn timeouts_fire_when_sojourn_tail_exceeds_the_bound() {
    let mut cfg = single(0.9, 1.0, 20_000.0, 1_000.0, 2);
    let free = run_sim(&cfg).unwrap().metrics;
    let t = free.stations[0].p95_sojourn / 2.0;
    cfg.stations[0].timeout = Some(t);
    let m = run_sim(&cfg).unwrap().metrics;
    assert!(m.stations[0].timeouts > 0);
    assert!(m.goodput < m.throughput);
    assert!(m.totals.reconciles());
}

#[test]
fn conservation_holds_under_every_failure_mode() {
    for seed in 0..20 {
        let mut cfg = coupled_chain();
        cfg.seed = seed;
        cfg.coupling.alpha = 0.05;
        cfg.stations[0].capacity = Some(3);
        cfg.stations[1].timeout = Some(4.0);
        cfg.stations[2].servers = 2;
        cfg.horizon = 3_000.0;
        let m = run_sim(&cfg).unwrap().metrics;
        assert!(m.totals.reconciles(), "{:?}", m.totals);
        assert!(m.goodput <= m.throughput + 1e-12);
        assert!(m.throughput <= cfg.arrival_rate * 1.1);
    }
}

#[test]
fn classical_bottleneck_removal_helps_without_coupling() {
    let base = SimConfig {
        arrival_rate: 0.5,
        stations: vec![StationModel::new("s1", 0.6), StationModel::new("s2", 1.0), StationModel::new("s3", 1.2)],
        coupling: LoadCoupling::default(),
        horizon: 50_000.0,
        warmup: 2_000.0,
        seed: 99,
        record_trace: false,
    };
    let mut variant = base.clone();
    variant.stations[0].service_rate *= 4.0;
    let r = fig2_experiment(&base, &variant).unwrap();
    assert_eq!(r.raised_station, Some(0));
    assert!(r.variant.goodput >= r.baseline.goodput * 0.98);
    assert!(r.variant.mean_sojourn < r.baseline.mean_sojourn);
    assert_ne!(r.verdict, Verdict::Worse);
}
