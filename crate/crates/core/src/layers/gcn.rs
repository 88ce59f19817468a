use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NormAdj, SamplerDist};
use crate::numerics::{apply_activation, Activation, Matrix, Param};

/// One graph convolution: `σ(Â · H · W)` or its sampled estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub weight: Param,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new(weight: Matrix, activation: Activation) -> Self {
        Self {
            weight: Param::new(weight),
            activation,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::xavier(in_dim, out_dim, rng),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }
}

/// Node indices drawn for one layer, with the probabilities they were drawn at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub layer: usize,
    pub indices: Vec<usize>,
    pub probs_used: Vec<f64>,
    pub exhaustive: bool,
}

impl SampleDraw {
    /// Every node exactly once, in index order, each at probability `1/n`.
    pub fn exhaustive(layer: usize, n: usize) -> Self {
        Self {
            layer,
            indices: (0..n).collect(),
            probs_used: vec![1.0 / n as f64; n],
            exhaustive: true,
        }
    }

    pub fn from_dist<R: Rng + ?Sized>(layer: usize, dist: &SamplerDist, rng: &mut R) -> Self {
        let indices = dist.draw(dist.samples_for(layer), rng);
        let probs_used = indices.iter().map(|&u| dist.prob(u)).collect();
        Self {
            layer,
            indices,
            probs_used,
            exhaustive: false,
        }
    }

    pub fn t(&self) -> usize {
        self.indices.len()
    }

    /// Per-draw weights `1 / (t · q(u_j))`; exactly 1 for exhaustive draws.
    fn weights(&self) -> Vec<f64> {
        if self.exhaustive {
            return vec![1.0; self.t()];
        }
        let t = self.t() as f64;
        self.probs_used.iter().map(|&q| 1.0 / (t * q)).collect()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.indices.is_empty() || self.indices.len() != self.probs_used.len() {
            return Err(Error::Input(format!(
                "draw for layer {} has {} indices and {} probabilities",
                self.layer,
                self.indices.len(),
                self.probs_used.len()
            )));
        }
        if let Some(&u) = self.indices.iter().find(|&&u| u >= n) {
            return Err(Error::OutOfRange {
                what: "sampled node",
                detail: format!("index {u} in a graph of {n} nodes"),
            });
        }
        if let Some(j) = self.probs_used.iter().position(|&q| !(q > 0.0)) {
            return Err(Error::Numeric(format!(
                "zero sampling probability at drawn node {}",
                self.indices[j]
            )));
        }
        Ok(())
    }
}

/// Where each layer's node sample comes from.
pub enum DrawSource<'a> {
    /// Full `Â · H · W` product, no sampling at all.
    Dense,
    /// Sampled code path with every node drawn once.
    Exhaustive,
    Fresh {
        dist: &'a SamplerDist,
        rng: &'a mut dyn RngCore,
    },
    /// The same draw for every call at a given layer index.
    Fixed { draws: &'a [SampleDraw] },
    /// Replays previously recorded draws in order.
    Replay {
        draws: &'a [SampleDraw],
        cursor: usize,
    },
}

impl<'a> DrawSource<'a> {
    pub fn fresh(dist: &'a SamplerDist, rng: &'a mut dyn RngCore) -> Self {
        DrawSource::Fresh { dist, rng }
    }

    pub fn fixed(draws: &'a [SampleDraw]) -> Self {
        DrawSource::Fixed { draws }
    }

    pub fn replay(draws: &'a [SampleDraw]) -> Self {
        DrawSource::Replay { draws, cursor: 0 }
    }

    /// `None` means use the dense product.
    pub fn next_draw(&mut self, layer: usize, n: usize) -> Result<Option<SampleDraw>> {
        match self {
            DrawSource::Dense => Ok(None),
            DrawSource::Exhaustive => Ok(Some(SampleDraw::exhaustive(layer, n))),
            DrawSource::Fresh { dist, rng } => {
                if dist.n() != n {
                    return Err(Error::Input(format!(
                        "sampler covers {} nodes, graph has {n}",
                        dist.n()
                    )));
                }
                Ok(Some(SampleDraw::from_dist(layer, dist, &mut **rng)))
            }
            DrawSource::Fixed { draws } => draws
                .get(layer)
                .cloned()
                .map(Some)
                .ok_or_else(|| Error::Input(format!("no fixed draw for layer {layer}"))),
            DrawSource::Replay { draws, cursor } => {
                let d = draws.get(*cursor).cloned().ok_or_else(|| {
                    Error::Input(format!("replay ran out of draws after {cursor}"))
                })?;
                *cursor += 1;
                Ok(Some(d))
            }
        }
    }
}

/// Values the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct GcnCache {
    input: Matrix,
    pre: Matrix,
    sampled: Option<SampledTerms>,
}

#[derive(Debug, Clone)]
struct SampledTerms {
    draw: SampleDraw,
    weights: Vec<f64>,
    /// `H[u_j, :] / (t · q(u_j))`, one row per draw
    support: Matrix,
    /// `Â[:, u_j]` side by side
    a_cols: Matrix,
}

impl GcnCache {
    pub fn pre_activation(&self) -> &Matrix {
        &self.pre
    }

    pub fn draw(&self) -> Option<&SampleDraw> {
        self.sampled.as_ref().map(|s| &s.draw)
    }
}

fn check_shapes(na: &NormAdj, h: &Matrix, layer: &GcnLayer) -> Result<()> {
    if h.rows() != na.n() {
        return Err(Error::shape(
            "gcn input rows vs graph",
            h.shape(),
            na.a_hat().shape(),
        ));
    }
    if h.cols() != layer.in_dim() {
        return Err(Error::shape(
            "gcn input vs weight",
            h.shape(),
            layer.weight.value.shape(),
        ));
    }
    Ok(())
}

/// `σ(Â · (H · W))` over the whole graph.
pub fn gcn_dense_forward(na: &NormAdj, h: &Matrix, layer: &GcnLayer) -> Result<(Matrix, GcnCache)> {
    check_shapes(na, h, layer)?;
    let pre = na.a_hat().matmul(&h.matmul(&layer.weight.value)?)?;
    let out = apply_activation(layer.activation, &pre);
    Ok((
        out,
        GcnCache {
            input: h.clone(),
            pre,
            sampled: None,
        },
    ))
}

/// Monte-Carlo estimate shared by every output node:
/// `pre[v] = (1/t) Σⱼ Â[v, uⱼ] · H[uⱼ] · W / q(uⱼ)`.
pub fn fastgcn_sample_forward(
    na: &NormAdj,
    h: &Matrix,
    layer: &GcnLayer,
    draw: &SampleDraw,
) -> Result<(Matrix, GcnCache)> {
    check_shapes(na, h, layer)?;
    draw.validate(na.n())?;
    let weights = draw.weights();
    let mut support = h.gather_rows(&draw.indices)?;
    for (j, &w) in weights.iter().enumerate() {
        for v in support.row_mut(j) {
            *v *= w;
        }
    }
    let a_cols = na.a_hat().gather_cols(&draw.indices)?;
    let pre = a_cols.matmul(&support.matmul(&layer.weight.value)?)?;
    let out = apply_activation(layer.activation, &pre);
    Ok((
        out,
        GcnCache {
            input: h.clone(),
            pre,
            sampled: Some(SampledTerms {
                draw: draw.clone(),
                weights,
                support,
                a_cols,
            }),
        },
    ))
}

/// Dense or sampled forward depending on what `source` hands out.
pub fn gcn_forward(
    na: &NormAdj,
    h: &Matrix,
    layer: &GcnLayer,
    layer_index: usize,
    source: &mut DrawSource<'_>,
) -> Result<(Matrix, GcnCache)> {
    match source.next_draw(layer_index, na.n())? {
        None => gcn_dense_forward(na, h, layer),
        Some(draw) => fastgcn_sample_forward(na, h, layer, &draw),
    }
}

/// Accumulates `∂L/∂W` into `layer.weight.grad`; returns `∂L/∂H` when asked.
/// Sampled layers route gradients only through the drawn rows, with the same
/// `1/(t·q)` weights as the forward pass.
pub fn gcn_backward(
    layer: &mut GcnLayer,
    na: &NormAdj,
    cache: &GcnCache,
    d_out: &Matrix,
    need_input_grad: bool,
) -> Result<Option<Matrix>> {
    if d_out.shape() != cache.pre.shape() {
        return Err(Error::shape(
            "gcn_backward upstream",
            d_out.shape(),
            cache.pre.shape(),
        ));
    }
    if cache.input.cols() != layer.in_dim() || cache.pre.cols() != layer.out_dim() {
        return Err(Error::MissingCache(
            "gcn layer shape differs from cached forward",
        ));
    }
    let act = layer.activation;
    let d_pre = Matrix::from_fn(d_out.rows(), d_out.cols(), |r, c| {
        d_out.get(r, c) * act.derivative(cache.pre.get(r, c))
    });
    match &cache.sampled {
        None => {
            let g = na.a_hat().t_matmul(&d_pre)?;
            layer.weight.accumulate(&cache.input.t_matmul(&g)?)?;
            if need_input_grad {
                Ok(Some(g.matmul_t(&layer.weight.value)?))
            } else {
                Ok(None)
            }
        }
        Some(s) => {
            let d_m = s.a_cols.t_matmul(&d_pre)?;
            layer.weight.accumulate(&s.support.t_matmul(&d_m)?)?;
            if !need_input_grad {
                return Ok(None);
            }
            let d_support = d_m.matmul_t(&layer.weight.value)?;
            let mut d_h = Matrix::zeros(cache.input.rows(), cache.input.cols());
            for (j, (&u, &w)) in s.draw.indices.iter().zip(&s.weights).enumerate() {
                for (dst, &g) in d_h.row_mut(u).iter_mut().zip(d_support.row(j)) {
                    *dst += w * g;
                }
            }
            Ok(Some(d_h))
        }
    }
}
