use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{importance_distribution, normalize_adjacency, RoadGraph, SamplerMode};
use crate::numerics::{finite_diff_grad, max_relative_error, Param};

const FD_EPS: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> RoadGraph {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    RoadGraph::from_index_edges(ids(n), &pairs).unwrap()
}

fn star(leaves: usize) -> RoadGraph {
    let pairs: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
    RoadGraph::from_index_edges(ids(leaves + 1), &pairs).unwrap()
}

/// Â·H·W by explicit summation, independent of `Matrix::matmul`.
fn naive_propagation(a: &Matrix, h: &Matrix, w: &Matrix) -> Matrix {
    let n = a.rows();
    Matrix::from_fn(n, w.cols(), |v, k| {
        let mut s = 0.0;
        for u in 0..n {
            for d in 0..h.cols() {
                s += a.get(v, u) * h.get(u, d) * w.get(d, k);
            }
        }
        s
    })
}

#[test]
fn dense_identity_graph_passes_features_through() {
    let g = RoadGraph::from_index_edges(ids(4), &[]).unwrap();
    let na = normalize_adjacency(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = random_matrix(4, 3, &mut rng);
    let layer = GcnLayer::new(Matrix::identity(3), Activation::Linear);
    let (out, _) = gcn_dense_forward(&na, &h, &layer).unwrap();
    assert_eq!(out, h);
}

#[test]
fn dense_two_node_average() {
    let g = RoadGraph::from_index_edges(ids(2), &[(0, 1)]).unwrap();
    let na = normalize_adjacency(&g);
    let h = Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
    let layer = GcnLayer::new(Matrix::identity(1), Activation::Linear);
    let (out, _) = gcn_dense_forward(&na, &h, &layer).unwrap();
    assert_eq!(out.data(), &[3.0, 3.0]);
}

#[test]
fn dense_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_graph(6, 0.4, &mut rng);
    let na = normalize_adjacency(&g);
    let h = random_matrix(6, 3, &mut rng);
    let w = random_matrix(3, 2, &mut rng);
    let layer = GcnLayer::new(w.clone(), Activation::Linear);
    let (out, _) = gcn_dense_forward(&na, &h, &layer).unwrap();
    let oracle = naive_propagation(na.a_hat(), &h, &w);
    assert!(out.rel_error(&oracle).unwrap() < 1e-12);

    let relu = GcnLayer::new(w, Activation::Relu);
    let (out, _) = gcn_dense_forward(&na, &h, &relu).unwrap();
    assert!(out.rel_error(&oracle.map(|v| v.max(0.0))).unwrap() < 1e-12);
}

#[test]
fn dense_shape_errors() {
    let na = normalize_adjacency(&star(3));
    let layer = GcnLayer::new(Matrix::identity(2), Activation::Linear);
    assert!(matches!(
        gcn_dense_forward(&na, &Matrix::zeros(4, 3), &layer),
        Err(Error::Shape { .. })
    ));
    assert!(gcn_dense_forward(&na, &Matrix::zeros(3, 2), &layer).is_err());
}

#[test]
fn sampled_rejects_bad_draws() {
    let na = normalize_adjacency(&star(3));
    let layer = GcnLayer::new(Matrix::identity(1), Activation::Linear);
    let h = Matrix::zeros(4, 1);
    let oob = SampleDraw {
        layer: 0,
        indices: vec![9],
        probs_used: vec![0.5],
        exhaustive: false,
    };
    assert!(matches!(
        fastgcn_sample_forward(&na, &h, &layer, &oob),
        Err(Error::OutOfRange { .. })
    ));
    let zero = SampleDraw {
        layer: 0,
        indices: vec![1],
        probs_used: vec![0.0],
        exhaustive: false,
    };
    assert!(matches!(
        fastgcn_sample_forward(&na, &h, &layer, &zero),
        Err(Error::Numeric(_))
    ));
}

#[test]
fn single_node_single_sample_is_exact() {
    let na = normalize_adjacency(&RoadGraph::from_index_edges(ids(1), &[]).unwrap());
    let dist = SamplerDist::uniform(1).with_samples(vec![1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_matrix(1, 3, &mut rng);
    let layer = GcnLayer::init(3, 2, Activation::Tanh, &mut rng);
    let draw = SampleDraw::from_dist(0, &dist, &mut rng);
    let (sampled, _) = fastgcn_sample_forward(&na, &h, &layer, &draw).unwrap();
    let (dense, _) = gcn_dense_forward(&na, &h, &layer).unwrap();
    assert_eq!(sampled, dense);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exhaustive_equals_dense(seed in any::<u64>(), n in 1usize..25, d in 1usize..5, d2 in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(n, 0.2, &mut rng);
        let na = normalize_adjacency(&g);
        let h = random_matrix(n, d, &mut rng);
        let layer = GcnLayer::init(d, d2, Activation::Relu, &mut rng);
        let (dense, _) = gcn_dense_forward(&na, &h, &layer).unwrap();
        let (exh, _) = fastgcn_sample_forward(&na, &h, &layer, &SampleDraw::exhaustive(0, n)).unwrap();
        prop_assert!(exh.rel_error(&dense).unwrap() <= 1e-12);
    }

    #[test]
    fn gru_state_stays_bounded(seed in any::<u64>(), scale in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cell = GruCell::init(3, 4, &mut rng);
        for p in cell.params_mut() {
            p.value = p.value.scale(scale);
        }
        let x = random_matrix(5, 3, &mut rng).scale(10.0);
        let h_prev = random_matrix(5, 4, &mut rng).scale(scale);
        let (h, _) = gru_cell_forward(&x, &h_prev, &cell).unwrap();
        prop_assert!(h.max_abs() <= h_prev.max_abs().max(1.0) + 1e-15);
    }
}

/// Empirical mean of the sampled pre-activation over `draws` fresh samples.
fn monte_carlo_mean(
    na: &NormAdj,
    h: &Matrix,
    layer: &GcnLayer,
    dist: &SamplerDist,
    draws: usize,
    seed: u64,
) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Matrix::zeros(h.rows(), layer.out_dim());
    for _ in 0..draws {
        let draw = SampleDraw::from_dist(0, dist, &mut rng);
        let (_, cache) = fastgcn_sample_forward(na, h, layer, &draw).unwrap();
        acc.add_assign(cache.pre_activation()).unwrap();
    }
    acc.scale(1.0 / draws as f64)
}

#[test]
fn sampled_estimator_is_unbiased_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let g = random_graph(20, 0.2, &mut rng);
    let na = normalize_adjacency(&g);
    let h = random_matrix(20, 3, &mut rng);
    let layer = GcnLayer::init(3, 4, Activation::Relu, &mut rng);
    let (_, dense) = gcn_dense_forward(&na, &h, &layer).unwrap();
    for mode in [SamplerMode::Uniform, SamplerMode::Importance] {
        let dist = SamplerDist::for_mode(mode, &na)
            .with_samples(vec![4])
            .unwrap();
        let mean = monte_carlo_mean(&na, &h, &layer, &dist, 100_000, 77);
        let err = mean.rel_error(dense.pre_activation()).unwrap();
        assert!(err < 0.01, "{mode}: relative error {err}");
    }
}

#[test]
fn estimator_error_halves_when_samples_quadruple() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = random_graph(30, 0.15, &mut rng);
    let na = normalize_adjacency(&g);
    let h = random_matrix(30, 2, &mut rng);
    let layer = GcnLayer::init(2, 3, Activation::Linear, &mut rng);
    let (exact, _) = gcn_dense_forward(&na, &h, &layer).unwrap();
    let mean_err = |t: usize| {
        let dist = importance_distribution(&na).with_samples(vec![t]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let reps = 4000;
        (0..reps)
            .map(|_| {
                let draw = SampleDraw::from_dist(0, &dist, &mut rng);
                let (est, _) = fastgcn_sample_forward(&na, &h, &layer, &draw).unwrap();
                est.sub(&exact).unwrap().frobenius_norm()
            })
            .sum::<f64>()
            / reps as f64
    };
    let ratio = mean_err(16) / mean_err(4);
    assert!((0.35..=0.70).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn importance_sampling_reduces_variance_on_star() {
    // 1 hub + 19 leaves; road flow scales with connectivity, so the hub row is heavy
    let g = star(19);
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
        let var = Matrix::from_fn(20, 3, |i, j| {
            let m = sum.get(i, j) / k;
            sq.get(i, j) / k - m * m
        });
        var.sum() / var.len() as f64
    };
    let (imp, uni) = (
        variance(SamplerMode::Importance),
        variance(SamplerMode::Uniform),
    );
    assert!(imp < uni, "importance {imp} vs uniform {uni}");
}

#[test]
fn spatial_identity_graph_is_identity() {
    let na = normalize_adjacency(&RoadGraph::from_index_edges(ids(5), &[]).unwrap());
    let ex = SpatialExtractor::new(
        GcnLayer::new(Matrix::identity(1), Activation::Linear),
        GcnLayer::new(Matrix::identity(1), Activation::Linear),
    )
    .unwrap();
    let x = Matrix::from_fn(5, 1, |i, _| i as f64 * 1.5 - 2.0);
    for mut source in [DrawSource::Dense, DrawSource::Exhaustive] {
        let (out, _) = ex.forward(&na, &x, &mut source).unwrap();
        assert_eq!(out, x);
    }
}

#[test]
fn spatial_chain_must_match() {
    let a = GcnLayer::new(Matrix::zeros(1, 3), Activation::Relu);
    let b = GcnLayer::new(Matrix::zeros(2, 1), Activation::Relu);
    assert!(SpatialExtractor::new(a, b).is_err());
}

#[test]
fn spatial_exhaustive_equals_stacked_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(15, 0.2, &mut rng);
    let na = normalize_adjacency(&g);
    let ex = SpatialExtractor::init(1, 6, 4, [Activation::Relu, Activation::Tanh], &mut rng);
    let x = random_matrix(15, 1, &mut rng);
    let (h1, _) = gcn_dense_forward(&na, &x, &ex.layers[0]).unwrap();
    let (h2, _) = gcn_dense_forward(&na, &h1, &ex.layers[1]).unwrap();
    let (out, cache) = ex.forward(&na, &x, &mut DrawSource::Exhaustive).unwrap();
    assert!(out.rel_error(&h2).unwrap() <= 1e-12);
    assert_eq!(cache.draws().count(), 2);
}

#[test]
fn spatial_first_layer_pre_activation_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = random_graph(12, 0.3, &mut rng);
    let na = normalize_adjacency(&g);
    let ex = SpatialExtractor::init(1, 4, 3, [Activation::Relu, Activation::Relu], &mut rng);
    let x = random_matrix(12, 1, &mut rng);
    let dist = importance_distribution(&na)
        .with_samples(vec![4, 4])
        .unwrap();
    let (_, dense) = ex.forward(&na, &x, &mut DrawSource::Dense).unwrap();
    let mut acc = Matrix::zeros(12, 4);
    let reps = 100_000;
    let mut draw_rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..reps {
        let mut src = DrawSource::fresh(&dist, &mut draw_rng);
        let (_, c) = ex.forward(&na, &x, &mut src).unwrap();
        acc.add_assign(c.layers[0].pre_activation()).unwrap();
    }
    let err = acc
        .scale(1.0 / reps as f64)
        .rel_error(dense.layers[0].pre_activation())
        .unwrap();
    assert!(err < 0.02, "layer-1 relative error {err}");
    // the free-function form draws independently for each layer
    let out = spatial_extractor_forward(&na, &x, &ex, &dist, &mut draw_rng).unwrap();
    assert_eq!(out.shape(), (12, 3));
}

#[test]
fn gru_zero_weights_halve_state() {
    let cell = GruCell::zeros(2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_matrix(4, 2, &mut rng);
    let h_prev = random_matrix(4, 3, &mut rng);
    let (h, _) = gru_cell_forward(&x, &h_prev, &cell).unwrap();
    assert_eq!(h, h_prev.scale(0.5));
    let (h0, _) = gru_cell_forward(&x, &Matrix::zeros(4, 3), &cell).unwrap();
    assert!(h0.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gru_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut cell = GruCell::init(2, 3, &mut rng);
    for b in [&mut cell.b_z, &mut cell.b_r, &mut cell.b_h] {
        b.value = random_matrix(1, 3, &mut rng);
    }
    let x = random_matrix(1, 2, &mut rng);
    let h_prev = random_matrix(1, 3, &mut rng);
    let (h, _) = gru_cell_forward(&x, &h_prev, &cell).unwrap();

    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let lin = |w: &Param, u: &Param, b: &Param, hh: &[f64], j: usize| {
        let mut s = b.value.get(0, j);
        for i in 0..2 {
            s += x.get(0, i) * w.value.get(i, j);
        }
        for i in 0..3 {
            s += hh[i] * u.value.get(i, j);
        }
        s
    };
    let hp = h_prev.row(0).to_vec();
    let z: Vec<f64> = (0..3)
        .map(|j| sig(lin(&cell.w_z, &cell.u_z, &cell.b_z, &hp, j)))
        .collect();
    let r: Vec<f64> = (0..3)
        .map(|j| sig(lin(&cell.w_r, &cell.u_r, &cell.b_r, &hp, j)))
        .collect();
    let rh: Vec<f64> = (0..3).map(|j| r[j] * hp[j]).collect();
    for j in 0..3 {
        let c = lin(&cell.w_h, &cell.u_h, &cell.b_h, &rh, j).tanh();
        let expect = (1.0 - z[j]) * hp[j] + z[j] * c;
        assert!((h.get(0, j) - expect).abs() < 1e-12);
    }
}

#[test]
fn gru_shape_errors() {
    let cell = GruCell::zeros(2, 3);
    assert!(gru_cell_forward(&Matrix::zeros(4, 3), &Matrix::zeros(4, 3), &cell).is_err());
    assert!(gru_cell_forward(&Matrix::zeros(4, 2), &Matrix::zeros(5, 3), &cell).is_err());
    assert!(cell.check().is_ok());
}

/// Weighted-sum probe so every output entry carries a distinct gradient.
fn probe_loss(out: &Matrix, probe: &Matrix) -> f64 {
    out.hadamard(probe).unwrap().sum()
}

fn flatten(ms: &[&Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().iter().copied()).collect()
}

fn unflatten_into(theta: &[f64], ms: &mut [&mut Matrix]) {
    let mut off = 0;
    for m in ms.iter_mut() {
        let len = m.len();
        m.data_mut().copy_from_slice(&theta[off..off + len]);
        off += len;
    }
}

#[test]
fn gru_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut cell = GruCell::init(2, 3, &mut rng);
    for b in [&mut cell.b_z, &mut cell.b_r, &mut cell.b_h] {
        b.value = random_matrix(1, 3, &mut rng).scale(0.5);
    }
    let x = random_matrix(2, 2, &mut rng);
    let h_prev = random_matrix(2, 3, &mut rng);
    let probe = random_matrix(2, 3, &mut rng);

    let (h, cache) = gru_cell_forward(&x, &h_prev, &cell).unwrap();
    let (dx, dh) = gru_cell_backward(&mut cell, &cache, &probe).unwrap();
    let _ = h;

    // parameters, then x, then h_prev
    let mut analytic: Vec<f64> = cell
        .params()
        .iter()
        .flat_map(|p| p.grad.data().to_vec())
        .collect();
    analytic.extend_from_slice(dx.data());
    analytic.extend_from_slice(dh.data());
    let mut theta: Vec<f64> = cell
        .params()
        .iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect();
    theta.extend_from_slice(x.data());
    theta.extend_from_slice(h_prev.data());

    let base = cell.clone();
    let numeric = finite_diff_grad(
        |th| {
            let mut c = base.clone();
            let (mut xx, mut hh) = (x.clone(), h_prev.clone());
            let mut slots: Vec<&mut Matrix> =
                c.params_mut().into_iter().map(|p| &mut p.value).collect();
            slots.push(&mut xx);
            slots.push(&mut hh);
            unflatten_into(th, &mut slots);
            let (out, _) = gru_cell_forward(&xx, &hh, &c).unwrap();
            probe_loss(&out, &probe)
        },
        &theta,
        FD_EPS,
    )
    .unwrap();
    let err = max_relative_error(&analytic, &numeric, FD_FLOOR);
    assert!(err < 1e-4, "max relative error {err}");
}

fn check_gcn_layer_gradient(sampled: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(if sampled { 14 } else { 15 });
    let g = random_graph(8, 0.35, &mut rng);
    let na = normalize_adjacency(&g);
    let mut layer = GcnLayer::init(3, 2, Activation::Tanh, &mut rng);
    let h = random_matrix(8, 3, &mut rng);
    let probe = random_matrix(8, 2, &mut rng);
    let dist = importance_distribution(&na).with_samples(vec![5]).unwrap();
    let draw = SampleDraw::from_dist(0, &dist, &mut rng);
    let forward = |l: &GcnLayer, hh: &Matrix| {
        if sampled {
            fastgcn_sample_forward(&na, hh, l, &draw).unwrap()
        } else {
            gcn_dense_forward(&na, hh, l).unwrap()
        }
    };
    let (_, cache) = forward(&layer, &h);
    let dh = gcn_backward(&mut layer, &na, &cache, &probe, true)
        .unwrap()
        .unwrap();
    let mut analytic = layer.weight.grad.data().to_vec();
    analytic.extend_from_slice(dh.data());
    let theta = flatten(&[&layer.weight.value, &h]);
    let numeric = finite_diff_grad(
        |th| {
            let mut l = layer.clone();
            let mut hh = h.clone();
            unflatten_into(th, &mut [&mut l.weight.value, &mut hh]);
            probe_loss(&forward(&l, &hh).0, &probe)
        },
        &theta,
        FD_EPS,
    )
    .unwrap();
    let err = max_relative_error(&analytic, &numeric, FD_FLOOR);
    assert!(err < 1e-4, "sampled={sampled}: max relative error {err}");
}

#[test]
fn dense_layer_backward_matches_finite_differences() {
    check_gcn_layer_gradient(false);
}

#[test]
fn sampled_layer_backward_matches_finite_differences_with_frozen_draw() {
    check_gcn_layer_gradient(true);
}

#[test]
fn spatial_backward_matches_finite_differences_with_frozen_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let g = random_graph(9, 0.3, &mut rng);
    let na = normalize_adjacency(&g);
    let mut ex = SpatialExtractor::init(1, 4, 3, [Activation::Tanh, Activation::Sigmoid], &mut rng);
    let x = random_matrix(9, 1, &mut rng);
    let probe = random_matrix(9, 3, &mut rng);
    let dist = importance_distribution(&na)
        .with_samples(vec![4, 6])
        .unwrap();
    let mut draw_rng = ChaCha8Rng::seed_from_u64(17);
    let (_, cache) = ex
        .forward(&na, &x, &mut DrawSource::fresh(&dist, &mut draw_rng))
        .unwrap();
    let draws: Vec<SampleDraw> = cache.draws().cloned().collect();
    assert_eq!(
        draws.iter().map(SampleDraw::t).collect::<Vec<_>>(),
        vec![4, 6]
    );
    let dx = ex.backward(&na, &cache, &probe, true).unwrap().unwrap();
    let mut analytic = flatten(&[&ex.layers[0].weight.grad, &ex.layers[1].weight.grad]);
    analytic.extend_from_slice(dx.data());
    let theta = flatten(&[&ex.layers[0].weight.value, &ex.layers[1].weight.value, &x]);
    let numeric = finite_diff_grad(
        |th| {
            let mut e = ex.clone();
            let mut xx = x.clone();
            let [a, b] = &mut e.layers;
            unflatten_into(th, &mut [&mut a.weight.value, &mut b.weight.value, &mut xx]);
            let (out, _) = e
                .forward(&na, &xx, &mut DrawSource::replay(&draws))
                .unwrap();
            probe_loss(&out, &probe)
        },
        &theta,
        FD_EPS,
    )
    .unwrap();
    let err = max_relative_error(&analytic, &numeric, FD_FLOOR);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn linear_input_gradient_is_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let g = random_graph(7, 0.4, &mut rng);
    let na = normalize_adjacency(&g);
    let mut layer = GcnLayer::new(Matrix::identity(2), Activation::Linear);
    let h = random_matrix(7, 2, &mut rng);
    let (_, cache) = gcn_dense_forward(&na, &h, &layer).unwrap();
    let ones = Matrix::filled(7, 2, 1.0);
    let dh = gcn_backward(&mut layer, &na, &cache, &ones, true)
        .unwrap()
        .unwrap();
    let col_sums = na.a_hat().column_sums();
    for u in 0..7 {
        for k in 0..2 {
            assert!((dh.get(u, k) - col_sums.get(0, u)).abs() < 1e-14);
        }
    }
}

#[test]
fn backward_rejects_mismatched_cache() {
    let na = normalize_adjacency(&star(2));
    let layer = GcnLayer::new(Matrix::identity(1), Activation::Linear);
    let (_, cache) = gcn_dense_forward(&na, &Matrix::zeros(3, 1), &layer).unwrap();
    let mut wider = GcnLayer::new(Matrix::zeros(2, 1), Activation::Linear);
    assert!(matches!(
        gcn_backward(&mut wider, &na, &cache, &Matrix::zeros(3, 1), true),
        Err(Error::MissingCache(_))
    ));
    let mut other = GruCell::zeros(3, 2);
    let (_, gcache) = gru_cell_forward(
        &Matrix::zeros(2, 2),
        &Matrix::zeros(2, 2),
        &GruCell::zeros(2, 2),
    )
    .unwrap();
    assert!(gru_cell_backward(&mut other, &gcache, &Matrix::zeros(2, 2)).is_err());
}

#[test]
fn replay_exhaustion_is_an_error() {
    let na = normalize_adjacency(&star(2));
    let ex = SpatialExtractor::init(
        1,
        2,
        2,
        [Activation::Relu, Activation::Relu],
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let one = vec![SampleDraw::exhaustive(0, 3)];
    assert!(ex
        .forward(&na, &Matrix::zeros(3, 1), &mut DrawSource::replay(&one))
        .is_err());
}
