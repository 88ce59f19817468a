use std::f64::consts::TAU;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::RoadGraph;
use crate::ingest::windows_from_series;

fn m(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

#[test]
fn rmse_examples() {
    let a = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    assert_eq!(rmse(&a.map(|v| v - 1.0), &a).unwrap(), 1.0);
    let r = rmse(&m(&[vec![0.0, 0.0]]), &m(&[vec![1.0, 2.0]])).unwrap();
    assert!((r - 2.5f64.sqrt()).abs() < 1e-15);
    assert!((r - 1.5811).abs() < 1e-4);
    let err = rmse(&a, &m(&[vec![1.0, 2.0]])).unwrap_err().to_string();
    assert!(err.contains("(2, 2)") && err.contains("(1, 2)"), "{err}");
}

#[test]
fn ha_constant_series() {
    let h = Matrix::filled(3, 10, 7.0);
    assert_eq!(ha_forecast(&h, 4, 5).unwrap(), Matrix::filled(3, 5, 7.0));
}

#[test]
fn ha_phase_mean() {
    // two periods of length 3; phase 0 holds 2 then 4
    let h = m(&[vec![2.0, 0.0, 0.0, 4.0, 0.0, 0.0]]);
    let p = ha_forecast(&h, 3, 1).unwrap();
    assert_eq!(p.get(0, 0), 3.0);
}

#[test]
fn ha_exact_on_periodic_series() {
    let period = 6;
    let full = Matrix::from_fn(2, 30, |i, t| (i * 10 + t % period) as f64);
    let history = full.col_range(0, 20).unwrap();
    let future = full.col_range(20, 26).unwrap();
    let pred = ha_forecast(&history, period, 6).unwrap();
    assert_eq!(rmse(&pred, &future).unwrap(), 0.0);
}

#[test]
fn ha_needs_a_full_period() {
    let err = ha_forecast(&Matrix::zeros(2, 3), 4, 1).unwrap_err();
    assert!(matches!(
        err,
        Error::InsufficientHistory { needed: 4, have: 3 }
    ));
}

#[test]
fn ha_rmse_uses_history_before_each_window() {
    let period = 4;
    let series = Matrix::from_fn(2, 24, |i, t| (i + t % period) as f64);
    let ws = windows_from_series(&series, 4, 2, 3).unwrap();
    assert_eq!(ha_rmse(&series, &ws, period).unwrap(), 0.0);
    let short = windows_from_series(&series, 2, 2, 1).unwrap();
    assert!(ha_rmse(&series, &short, period).is_err());
    assert!(ha_rmse(&series, &[], period).is_err());
}

proptest! {
    #[test]
    fn ha_invariant_under_appending_a_period(
        period in 2usize..8,
        reps in 1usize..4,
        seed in any::<u64>(),
        d_out in 1usize..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern: Vec<f64> = (0..period).map(|_| rng.random_range(0.0..50.0f64).round()).collect();
        let h = Matrix::from_fn(1, period * reps, |_, t| pattern[t % period]);
        let h2 = Matrix::from_fn(1, period * (reps + 1), |_, t| pattern[t % period]);
        prop_assert_eq!(ha_forecast(&h, period, d_out).unwrap(), ha_forecast(&h2, period, d_out).unwrap());
    }

    #[test]
    fn rmse_is_nonnegative_and_zero_only_on_equality(
        a in proptest::collection::vec(-100.0f64..100.0, 1..20),
        i in any::<prop::sample::Index>(),
        bump in 1e-6f64..10.0,
    ) {
        let x = Matrix::new(1, a.len(), a.clone()).unwrap();
        prop_assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        let mut b = a.clone();
        b[i.index(a.len())] += bump;
        let y = Matrix::new(1, b.len(), b).unwrap();
        prop_assert!(rmse(&x, &y).unwrap() > 0.0);
    }
}

fn ring(n: usize) -> RoadGraph {
    let pairs: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    RoadGraph::from_index_edges((0..n).map(|i| format!("r{i}")).collect(), &pairs).unwrap()
}

#[test]
fn noiseless_uncoupled_series_is_rounded_wave_plus_trend() {
    let g = ring(5);
    let cfg = SynthConfig {
        buckets: 100,
        period: 24,
        noise_std: 0.0,
        alpha: 0.0,
        base_range: (30.0, 30.0),
        amp_range: (10.0, 10.0),
        slope: 0.05,
        phase_range: (0.0, TAU),
        seed: 3,
        ..SynthConfig::default()
    };
    let fm = generate_synthetic(&g, &cfg).unwrap();
    // recover each node's phase from the generator's own draw order
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let phase: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..TAU)).collect();
    for i in 0..5 {
        for t in 0..100 {
            let expect = (30.0 + 10.0 * (TAU * t as f64 / 24.0 + phase[i]).sin() + 0.05 * t as f64)
                .round()
                .max(0.0);
            assert_eq!(fm.values().get(i, t), expect);
        }
    }
    assert_eq!(fm.road_ids()[0], "r0");
}

#[test]
fn synthetic_is_deterministic_nonnegative_integer() {
    let g = RoadGraph::random_connected(20, 3.0, &mut ChaCha8Rng::seed_from_u64(1));
    let cfg = SynthConfig {
        buckets: 600,
        noise_std: 6.0,
        base_range: (0.0, 5.0),
        seed: 9,
        ..SynthConfig::default()
    };
    let a = generate_synthetic(&g, &cfg).unwrap();
    let b = generate_synthetic(&g, &cfg).unwrap();
    assert_eq!(a, b);
    let v = a.values().data();
    assert!(v
        .iter()
        .all(|&x| x >= 0.0 && x.fract() == 0.0 && x.is_sign_positive()));
    assert!(v.contains(&0.0));
    let c = generate_synthetic(&g, &SynthConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synthetic_config_is_validated() {
    let g = ring(3);
    for bad in [
        SynthConfig {
            period: 1,
            ..SynthConfig::default()
        },
        SynthConfig {
            noise_std: -1.0,
            ..SynthConfig::default()
        },
        SynthConfig {
            amp_range: (5.0, 1.0),
            ..SynthConfig::default()
        },
        SynthConfig {
            buckets: 0,
            ..SynthConfig::default()
        },
    ] {
        assert!(matches!(
            generate_synthetic(&g, &bad),
            Err(Error::Config(_))
        ));
    }
}

#[test]
fn coupling_makes_neighbors_more_correlated() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = RoadGraph::random_connected(60, 4.0, &mut rng);
    let cfg = SynthConfig {
        buckets: 2 * 288,
        alpha: 0.5,
        seed: 11,
        ..SynthConfig::default()
    };
    let fm = generate_synthetic(&g, &cfg).unwrap();
    let series = |i: usize| fm.values().row(i).to_vec();
    let edges: Vec<_> = g.edges().iter().copied().collect();
    let mut adjacent = 0.0;
    for _ in 0..100 {
        let (a, b) = edges[rng.random_range(0..edges.len())];
        adjacent += pearson(&series(a), &series(b));
    }
    let mut distant = 0.0;
    let mut k = 0;
    while k < 100 {
        let (a, b) = (rng.random_range(0..60), rng.random_range(0..60));
        if a != b && !g.edges().contains(&(a.min(b), a.max(b))) {
            distant += pearson(&series(a), &series(b));
            k += 1;
        }
    }
    assert!(
        adjacent / 100.0 > distant / 100.0,
        "{} vs {}",
        adjacent / 100.0,
        distant / 100.0
    );
}

#[test]
fn pearson_basics() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&a, &a) - 1.0).abs() < 1e-15);
    assert!((pearson(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    assert_eq!(pearson(&a, &[1.0; 4]), 0.0);
}

#[test]
fn slope_fit_recovers_power_laws() {
    let xs = [500.0, 1000.0, 2000.0, 4000.0];
    let sq: Vec<f64> = xs.iter().map(|x| 3e-6 * x * x).collect();
    let lin: Vec<f64> = xs.iter().map(|x| 0.2 * x).collect();
    assert!((loglog_slope(&xs, &sq).unwrap() - 2.0).abs() < 1e-12);
    assert!((loglog_slope(&xs, &lin).unwrap() - 1.0).abs() < 1e-12);
    assert!(loglog_slope(&xs, &[1.0, 2.0]).is_err());
    assert!(loglog_slope(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    assert!(loglog_slope(&[1.0, 2.0], &[0.0, 2.0]).is_err());
}

#[test]
fn small_benchmark_runs_and_formats() {
    let opts = BenchOptions {
        min_rep_ms: 0.1,
        ..BenchOptions::default()
    };
    let rs = benchmark_layer(&[40, 80], 5, 5, &opts).unwrap();
    assert_eq!(rs.len(), 2);
    assert!(rs
        .iter()
        .all(|r| r.dense_ms > 0.0 && r.sampled_ms > 0.0 && r.reps == 5));
    assert!(rs[1].peak_alloc_estimate > rs[0].peak_alloc_estimate);
    let csv = bench_csv(&rs);
    assert!(csv.starts_with("n,t_l,dense_ms,sampled_ms,ratio\n40,5,"));
    assert_eq!(csv.lines().count(), 3);
    let plot = plot_data(&rs);
    assert_eq!(plot.split("\n\n\n").count(), 3);
    let train = benchmark_layer(
        &[40],
        5,
        5,
        &BenchOptions {
            train_step: true,
            ..opts.clone()
        },
    )
    .unwrap();
    assert!(train[0].dense_ms > 0.0);
    assert!(benchmark_layer(&[40], 5, 4, &opts).is_err());
    assert!(benchmark_layer(&[3], 5, 5, &opts).is_err());
}
