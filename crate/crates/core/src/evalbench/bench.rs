use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{importance_distribution, normalize_adjacency, NormAdj, RoadGraph, SamplerDist};
use crate::layers::{
    fastgcn_sample_forward, gcn_backward, gcn_dense_forward, GcnLayer, SampleDraw,
};
use crate::model::Adam;
use crate::numerics::{Activation, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub n: usize,
    pub t_l: usize,
    pub reps: usize,
    /// Median wall-clock milliseconds per call.
    pub dense_ms: f64,
    pub sampled_ms: f64,
    /// Bytes held by the dense path's adjacency and activations.
    pub peak_alloc_estimate: usize,
}

impl BenchResult {
    pub fn ratio(&self) -> f64 {
        self.sampled_ms / self.dense_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchOptions {
    pub feature_dim: usize,
    pub out_dim: usize,
    pub avg_degree: f64,
    /// Time forward + backward + optimizer update instead of forward only.
    pub train_step: bool,
    /// Each timed repetition loops until at least this long.
    pub min_rep_ms: f64,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            out_dim: 16,
            avg_degree: 4.0,
            train_step: false,
            min_rep_ms: 2.0,
            seed: 0,
        }
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Median milliseconds per call of `f`, with the per-repetition loop count
/// calibrated so one repetition lasts at least `min_ms`.
fn time_ms(reps: usize, min_ms: f64, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let start = Instant::now();
    f()?;
    let once = start.elapsed().as_secs_f64() * 1e3;
    let inner = ((min_ms / once.max(1e-6)).ceil() as usize).clamp(1, 100_000);
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        samples.push(start.elapsed().as_secs_f64() * 1e3 / inner as f64);
    }
    Ok(median(&mut samples))
}

struct Fixture {
    na: NormAdj,
    dist: SamplerDist,
    h: Matrix,
    layer: GcnLayer,
    upstream: Matrix,
}

fn fixture(n: usize, t_l: usize, opts: &BenchOptions, rng: &mut ChaCha8Rng) -> Result<Fixture> {
    let g = RoadGraph::random_connected(n, opts.avg_degree, rng);
    let na = normalize_adjacency(&g);
    let dist = importance_distribution(&na).with_samples(vec![t_l])?;
    let h = Matrix::from_fn(n, opts.feature_dim, |_, _| rng.random_range(-1.0..1.0));
    let layer = GcnLayer::init(opts.feature_dim, opts.out_dim, Activation::Relu, rng);
    let upstream = Matrix::from_fn(n, opts.out_dim, |_, _| rng.random_range(-1.0..1.0));
    Ok(Fixture {
        na,
        dist,
        h,
        layer,
        upstream,
    })
}

/// Times the dense layer against the sampled layer (fresh importance draw
/// per call) on random graphs of each size.
pub fn benchmark_layer(
    n_list: &[usize],
    t_l: usize,
    reps: usize,
    opts: &BenchOptions,
) -> Result<Vec<BenchResult>> {
    if reps < 5 {
        return Err(Error::Config(format!(
            "benchmark needs at least 5 repetitions, got {reps}"
        )));
    }
    if t_l == 0 {
        return Err(Error::Config("t_l must be >= 1".into()));
    }
    if let Some(&n) = n_list.iter().find(|&&n| n < t_l) {
        return Err(Error::Config(format!(
            "graph size {n} is below t_l = {t_l}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let fx = fixture(n, t_l, opts, &mut rng)?;
        let mut layer = fx.layer.clone();
        let mut adam = Adam::new(1e-3);
        let dense_ms = time_ms(reps, opts.min_rep_ms, || {
            let (out, cache) = gcn_dense_forward(&fx.na, &fx.h, &layer)?;
            if opts.train_step {
                layer.weight.zero_grad();
                gcn_backward(&mut layer, &fx.na, &cache, &fx.upstream, false)?;
                adam.step(&mut [&mut layer.weight])?;
            }
            black_box(out);
            Ok(())
        })?;
        let mut layer = fx.layer.clone();
        let mut adam = Adam::new(1e-3);
        let mut draw_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ n as u64);
        let sampled_ms = time_ms(reps, opts.min_rep_ms, || {
            let draw = SampleDraw::from_dist(0, &fx.dist, &mut draw_rng);
            let (out, cache) = fastgcn_sample_forward(&fx.na, &fx.h, &layer, &draw)?;
            if opts.train_step {
                layer.weight.zero_grad();
                gcn_backward(&mut layer, &fx.na, &cache, &fx.upstream, false)?;
                adam.step(&mut [&mut layer.weight])?;
            }
            black_box(out);
            Ok(())
        })?;
        let f = std::mem::size_of::<f64>();
        let peak_alloc_estimate = f * (n * n + 2 * n * opts.feature_dim + 3 * n * opts.out_dim);
        out.push(BenchResult {
            n,
            t_l,
            reps,
            dense_ms,
            sampled_ms,
            peak_alloc_estimate,
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input(format!(
            "slope fit needs two or more paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Numeric(
            "log-log fit needs strictly positive values".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("all x values are equal".into()));
    }
    Ok(sxy / sxx)
}

pub fn bench_csv(results: &[BenchResult]) -> String {
    let mut s = String::from("n,t_l,dense_ms,sampled_ms,ratio\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6}",
            r.n,
            r.t_l,
            r.dense_ms,
            r.sampled_ms,
            r.ratio()
        );
    }
    s
}

type Curve = (&'static str, fn(&BenchResult) -> f64);

/// One two-column block per curve, separated by blank lines.
pub fn plot_data(results: &[BenchResult]) -> String {
    let mut s = String::new();
    let curves: [Curve; 3] = [
        ("dense_ms", |r| r.dense_ms),
        ("sampled_ms", |r| r.sampled_ms),
        ("ratio", BenchResult::ratio),
    ];
    for (i, (name, f)) in curves.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# {name}");
        let _ = writeln!(s, "# n {name}");
        for r in results {
            let _ = writeln!(s, "{} {:.6}", r.n, f(r));
        }
    }
    s
}
