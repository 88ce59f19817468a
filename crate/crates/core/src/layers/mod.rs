//! Forward and backward kernels: graph convolution (dense and sampled), the
//! two-layer spatial extractor, and the GRU cell.

mod gcn;
mod gru;

pub use gcn::{
    fastgcn_sample_forward, gcn_backward, gcn_dense_forward, gcn_forward, DrawSource, GcnCache,
    GcnLayer, SampleDraw,
};
pub use gru::{gru_cell_backward, gru_cell_forward, GruCache, GruCell};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::graph::{NormAdj, SamplerDist};
use crate::numerics::{Activation, Matrix};

/// Two stacked graph convolutions, each with its own node sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialExtractor {
    pub layers: [GcnLayer; 2],
}

#[derive(Debug, Clone)]
pub struct SpatialCache {
    pub layers: [GcnCache; 2],
}

impl SpatialCache {
    pub fn draws(&self) -> impl Iterator<Item = &SampleDraw> {
        self.layers.iter().filter_map(GcnCache::draw)
    }
}

impl SpatialExtractor {
    pub fn new(first: GcnLayer, second: GcnLayer) -> Result<Self> {
        if first.out_dim() != second.in_dim() {
            return Err(Error::shape(
                "spatial extractor layer chain",
                first.weight.value.shape(),
                second.weight.value.shape(),
            ));
        }
        Ok(Self {
            layers: [first, second],
        })
    }

    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        activations: [Activation; 2],
        rng: &mut R,
    ) -> Self {
        Self {
            layers: [
                GcnLayer::init(in_dim, hidden, activations[0], rng),
                GcnLayer::init(hidden, out_dim, activations[1], rng),
            ],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[1].out_dim()
    }

    pub fn forward(
        &self,
        na: &NormAdj,
        x: &Matrix,
        source: &mut DrawSource<'_>,
    ) -> Result<(Matrix, SpatialCache)> {
        let (h1, c1) = gcn_forward(na, x, &self.layers[0], 0, source)?;
        let (h2, c2) = gcn_forward(na, &h1, &self.layers[1], 1, source)?;
        Ok((h2, SpatialCache { layers: [c1, c2] }))
    }

    pub fn backward(
        &mut self,
        na: &NormAdj,
        cache: &SpatialCache,
        d_out: &Matrix,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        let [first, second] = &mut self.layers;
        let d_h1 = gcn_backward(second, na, &cache.layers[1], d_out, true)?
            .ok_or(Error::MissingCache("second layer input gradient"))?;
        gcn_backward(first, na, &cache.layers[0], &d_h1, need_input_grad)
    }
}

/// Sampled two-layer forward with fresh independent draws per layer.
pub fn spatial_extractor_forward(
    na: &NormAdj,
    x_t: &Matrix,
    params: &SpatialExtractor,
    dist: &SamplerDist,
    rng: &mut dyn RngCore,
) -> Result<Matrix> {
    let mut source = DrawSource::fresh(dist, rng);
    params.forward(na, x_t, &mut source).map(|(out, _)| out)
}

#[cfg(test)]
mod tests;
