//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after reporting so the workspace test run completes; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fastgcrnn::evalbench::{
    benchmark_layer, generate_synthetic, ha_rmse, loglog_slope, BenchOptions, SynthConfig,
};
use fastgcrnn::graph::{
    importance_distribution, normalize_adjacency, NormAdj, RoadGraph, SamplerDist, SamplerMode,
};
use fastgcrnn::ingest::{
    build_flow_matrix, parse_gps_records, parse_time, prepare_dataset, ForecastDataset, Interval,
    WindowSpec,
};
use fastgcrnn::layers::{
    fastgcn_sample_forward, gcn_dense_forward, DrawSource, GcnLayer, SampleDraw,
};
use fastgcrnn::model::{
    evaluate_rmse, loss, loss_grad, train, DrawScope, FastGcrnnModel, ModelConfig, Teacher,
    TrainConfig,
};
use fastgcrnn::numerics::{finite_diff_grad, max_relative_error, Activation, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn mc_mean(
    na: &NormAdj,
    h: &Matrix,
    layer: &GcnLayer,
    dist: &SamplerDist,
    draws: usize,
    seed: u64,
) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, first) = gcn_dense_forward(na, h, layer).unwrap();
    let mut acc = Matrix::zeros(first.pre_activation().rows(), first.pre_activation().cols());
    for _ in 0..draws {
        let draw = SampleDraw::from_dist(0, dist, &mut rng);
        let (_, c) = fastgcn_sample_forward(na, h, layer, &draw).unwrap();
        acc.add_assign(c.pre_activation()).unwrap();
    }
    acc.scale(1.0 / draws as f64)
}

fn unbiasedness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = RoadGraph::random_connected(20, 4.0, &mut rng);
    let na = normalize_adjacency(&g);
    let h = random_matrix(20, 4, &mut rng);
    let layer = GcnLayer::init(4, 4, Activation::Relu, &mut rng);
    let (_, dense) = gcn_dense_forward(&na, &h, &layer).unwrap();
    let mut errs = Vec::new();
    for mode in [SamplerMode::Uniform, SamplerMode::Importance] {
        let dist = SamplerDist::for_mode(mode, &na)
            .with_samples(vec![4])
            .unwrap();
        let mean = mc_mean(&na, &h, &layer, &dist, 100_000, 11);
        errs.push(mean.rel_error(dense.pre_activation()).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        errs.iter().all(|&e| e < 0.01) && secs < 60.0,
        format!(
            "relative Frobenius error uniform {:.4}%, importance {:.4}% (limit 1%), {secs:.1} s",
            100.0 * errs[0],
            100.0 * errs[1]
        ),
    )
}

fn variance_reduction() -> Verdict {
    let pairs: Vec<(usize, usize)> = (1..20).map(|leaf| (0, leaf)).collect();
    let g =
        RoadGraph::from_index_edges((0..20).map(|i| format!("s{i}")).collect(), &pairs).unwrap();
    let na = normalize_adjacency(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let degrees = g.degrees();
    let h = Matrix::from_fn(20, 2, |u, _| {
        rng.random_range(0.0..1.0) * (degrees[u] + 1) as f64
    });
    let layer = GcnLayer::init(2, 3, Activation::Linear, &mut rng);
    let variance = |mode: SamplerMode| {
        let dist = SamplerDist::for_mode(mode, &na)
            .with_samples(vec![4])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let mut sum = Matrix::zeros(20, 3);
        let mut sq = Matrix::zeros(20, 3);
        for _ in 0..draws {
            let draw = SampleDraw::from_dist(0, &dist, &mut rng);
            let (_, c) = fastgcn_sample_forward(&na, &h, &layer, &draw).unwrap();
            sum.add_assign(c.pre_activation()).unwrap();
            sq.add_assign(&c.pre_activation().map(|v| v * v)).unwrap();
        }
        let k = draws as f64;
        let var = Matrix::from_fn(20, 3, |i, j| sq.get(i, j) / k - (sum.get(i, j) / k).powi(2));
        var.sum() / var.len() as f64
    };
    let (imp, uni) = (
        variance(SamplerMode::Importance),
        variance(SamplerMode::Uniform),
    );
    verdict(
        imp < uni,
        format!(
            "mean per-entry variance importance {imp:.5} vs uniform {uni:.5} (ratio {:.4})",
            imp / uni
        ),
    )
}

fn small_config(d_in: usize, d_out: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        d_in,
        d_out,
        hidden,
        spatial_hidden: 3,
        spatial_out: 3,
        activations: [Activation::Tanh, Activation::Tanh],
        tie_spatial: false,
    }
}

fn nosample_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = RoadGraph::random_connected(12, 3.0, &mut rng);
    let na = normalize_adjacency(&g);
    let cfg = ModelConfig {
        activations: [Activation::Relu, Activation::Tanh],
        ..small_config(6, 4, 8)
    };
    let m = FastGcrnnModel::init(cfg, importance_distribution(&na), &mut rng).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_matrix(12, 6, &mut rng).scale(3.0);
        let sampled = m.predict(&na, &x).unwrap();
        let dense = m.predict_dense(&na, &x).unwrap();
        worst = worst.max(sampled.rel_error(&dense).unwrap());
    }
    verdict(
        worst <= 1e-12,
        format!("max relative error {worst:.3e} over 50 inputs (limit 1e-12)"),
    )
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (seed, tie, teach) in [(1u64, false, false), (2, false, true), (3, true, false)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = RoadGraph::random_connected(5, 3.0, &mut rng);
        let na = normalize_adjacency(&g);
        let cfg = ModelConfig {
            tie_spatial: tie,
            ..small_config(3, 2, 4)
        };
        let dist = importance_distribution(&na)
            .with_samples(vec![3, 4])
            .unwrap();
        let mut m = FastGcrnnModel::init(cfg, dist.clone(), &mut rng).unwrap();
        let x = random_matrix(5, 3, &mut rng);
        let y = random_matrix(5, 2, &mut rng);
        let teacher = Teacher {
            frames: y.clone(),
            use_frame: vec![teach],
        };
        let mut draw_rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let trace = m
            .forward(
                &na,
                &x,
                Some(&teacher),
                &mut DrawSource::fresh(&dist, &mut draw_rng),
            )
            .unwrap();
        let draws = trace.draws();
        m.zero_grads();
        m.backward(&na, &trace, &loss_grad(&trace.pred, &y).unwrap())
            .unwrap();
        let analytic: Vec<f64> = m
            .params()
            .iter()
            .flat_map(|p| p.grad.data().to_vec())
            .collect();
        let theta: Vec<f64> = m
            .params()
            .iter()
            .flat_map(|p| p.value.data().to_vec())
            .collect();
        let numeric = finite_diff_grad(
            |th| {
                let mut mm = m.clone();
                let mut off = 0;
                for p in mm.params_mut() {
                    let len = p.value.len();
                    p.value.data_mut().copy_from_slice(&th[off..off + len]);
                    off += len;
                }
                let tr = mm
                    .forward(&na, &x, Some(&teacher), &mut DrawSource::replay(&draws))
                    .unwrap();
                loss(&tr.pred, &y).unwrap()
            },
            &theta,
            1e-5,
        )
        .unwrap();
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-6));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.3e} over all parameters (limit 1e-4), {secs:.1} s"),
    )
}

struct ForecastSetup {
    na: NormAdj,
    data: ForecastDataset,
    test: ForecastDataset,
    ha: f64,
}

fn forecast_setup() -> ForecastSetup {
    let g = RoadGraph::random_connected(50, 4.0, &mut ChaCha8Rng::seed_from_u64(1));
    let fm = generate_synthetic(&g, &SynthConfig::default()).unwrap();
    let spec = WindowSpec {
        d_in: 12,
        d_out: 12,
        stride: 4,
        normalize: true,
    };
    let data = prepare_dataset(fm.values(), spec).unwrap();
    let test = prepare_dataset(fm.values(), WindowSpec { stride: 1, ..spec }).unwrap();
    let ha = ha_rmse(fm.values(), &test.test_raw, 288).unwrap();
    ForecastSetup {
        na: normalize_adjacency(&g),
        data,
        test,
        ha,
    }
}

const FORECAST_EPOCHS: usize = 15;

fn train_and_score(s: &ForecastSetup, t: usize) -> (f64, f64) {
    let start = Instant::now();
    let cfg = ModelConfig {
        hidden: 16,
        spatial_hidden: 8,
        spatial_out: 8,
        ..ModelConfig::default()
    };
    let mut m = FastGcrnnModel::init(
        cfg,
        SamplerDist::uniform(50),
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    let tc = TrainConfig {
        epochs: FORECAST_EPOCHS,
        learning_rate: 3e-3,
        batch_size: 16,
        sampler: SamplerMode::Importance,
        t_per_layer: vec![t, t],
        draw_scope: DrawScope::Step,
        seed: 3,
        ..TrainConfig::default()
    };
    train(&mut m, &s.na, &s.data, &tc).unwrap();
    let r = evaluate_rmse(&m, &s.na, &s.test.test, &s.test.test_raw, &s.test.scaler).unwrap();
    (r, start.elapsed().as_secs_f64())
}

fn forecast_quality(s: &ForecastSetup, t5: (f64, f64)) -> Verdict {
    let (r, secs) = t5;
    verdict(
        r < s.ha && secs < 300.0,
        format!(
            "test RMSE {r:.4} vs HA {:.4}, t_l = 5, {FORECAST_EPOCHS} epochs, {secs:.1} s",
            s.ha
        ),
    )
}

fn sampling_insensitivity(s: &ForecastSetup, t5: (f64, f64)) -> Verdict {
    let mut results = Vec::new();
    for t in [2usize, 5, 10, 25] {
        let r = if t == 5 {
            t5.0
        } else {
            train_and_score(s, t).0
        };
        results.push((t, r));
    }
    let best = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let spread = (worst - best) / best;
    let listing: Vec<String> = results
        .iter()
        .map(|(t, r)| format!("t={t}: {r:.4}"))
        .collect();
    verdict(
        spread < 0.20,
        format!(
            "{}; spread {:.1}% of best (limit 20%)",
            listing.join(", "),
            100.0 * spread
        ),
    )
}

fn complexity_scaling() -> Verdict {
    let start = Instant::now();
    let sizes = [500usize, 1000, 2000, 4000];
    let rs = benchmark_layer(&sizes, 5, 5, &BenchOptions::default()).unwrap();
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let dense = loglog_slope(&xs, &rs.iter().map(|r| r.dense_ms).collect::<Vec<_>>()).unwrap();
    let sampled = loglog_slope(&xs, &rs.iter().map(|r| r.sampled_ms).collect::<Vec<_>>()).unwrap();
    let ratios: Vec<f64> = rs.iter().map(|r| r.ratio()).collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let secs = start.elapsed().as_secs_f64();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    verdict(
        dense >= 1.7 && sampled <= 1.3 && decreasing && secs < 300.0,
        format!(
            "slope dense {dense:.3} (>= 1.7), sampled {sampled:.3} (<= 1.3), ratios [{}], {secs:.1} s",
            shown.join(", ")
        ),
    )
}

const FIXTURE: &str = "\
road_id,car_id,time
A,c1,2015-01-01 08:00:05
A,c2,2015-01-01 08:02:00
A,c1,2015-01-01 08:04:59
B,c1,2015-01-01 08:05:00
B,c3,2015-01-01 08:06:30
C,c2,2015-01-01 08:07:00
C,c4,2015-01-01 08:11:00
A,c3,2015-01-01 08:12:00
B,c2,2015-01-01 08:14:59
C,c1,2015-01-01 08:10:00
A,c5,2015-01-01 08:01:00
B,c5,2015-01-01 08:20:00
";

fn ingest_conformance() -> Verdict {
    let (records, parsed) = parse_gps_records(FIXTURE.as_bytes()).unwrap();
    let roads: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let begin = parse_time("2015-01-01 08:00:00").unwrap();
    let (fm, summary) =
        build_flow_matrix(records, &roads, begin, Interval::FIVE_MINUTES, 3).unwrap();
    let expected = Matrix::from_rows(&[
        vec![3.0, 0.0, 1.0],
        vec![0.0, 2.0, 1.0],
        vec![0.0, 1.0, 2.0],
    ])
    .unwrap();
    let pass = parsed.lines_read == 12
        && parsed.malformed == 0
        && fm.values() == &expected
        && summary.records == 12
        && summary.duplicates == 1
        && summary.out_of_horizon == 1
        && summary.counted == 10;
    verdict(pass, format!("flow {:?}; {summary}", fm.values().to_rows()))
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fastgcrnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let setup_ok = cli(
        root.path(),
        &[
            "build-graph",
            "--random",
            "12",
            "--seed",
            "1",
            "--out",
            "g.txt",
        ],
    ) && cli(
        root.path(),
        &[
            "synth",
            "--graph",
            "g.txt",
            "--buckets",
            "600",
            "--period",
            "48",
            "--out",
            "f.csv",
        ],
    );
    if !setup_ok {
        return verdict(false, "could not prepare graph and flow inputs".into());
    }
    for run in ["a", "b"] {
        let ckpt = format!("{run}.ckpt");
        let ok = cli(
            root.path(),
            &[
                "train",
                "--graph",
                "g.txt",
                "--flow",
                "f.csv",
                "--checkpoint",
                &ckpt,
                "--seed",
                "7",
                "--epochs",
                "3",
                "--hidden",
                "8",
                "--spatial-hidden",
                "4",
                "--spatial-out",
                "4",
                "--stride",
                "4",
            ],
        );
        if !ok {
            return verdict(false, format!("train run {run} failed"));
        }
    }
    let read = |name: &str| fs::read(root.path().join(name)).unwrap_or_default();
    let same_hist = read("a.ckpt.history.csv") == read("b.ckpt.history.csv")
        && !read("a.ckpt.history.csv").is_empty();
    let same_ckpt = read("a.ckpt") == read("b.ckpt") && !read("a.ckpt").is_empty();
    verdict(
        same_hist && same_ckpt,
        format!("loss histories identical: {same_hist}, checkpoints identical: {same_ckpt}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!("criterion {id} [{name}]: {tag} ({})", v.detail);
    };
    report(1, "estimator unbiasedness", unbiasedness());
    report(2, "variance reduction", variance_reduction());
    report(3, "unsampled equivalence", nosample_equivalence());
    report(4, "gradient correctness", gradient_check());
    let setup = forecast_setup();
    let t5 = train_and_score(&setup, 5);
    report(5, "forecast beats HA", forecast_quality(&setup, t5));
    report(6, "complexity scaling", complexity_scaling());
    report(7, "ingest conformance", ingest_conformance());
    report(
        8,
        "sampling-size insensitivity",
        sampling_insensitivity(&setup, t5),
    );
    report(9, "determinism", determinism());
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
