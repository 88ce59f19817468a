//! Encoder-decoder forecaster: per-frame spatial extraction feeding GRU cells,
//! a shared linear readout, training, and checkpoints.

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use train::{
    clip_global_norm, evaluate_rmse, train, train_with, Adam, DrawScope, EpochRecord, TrainConfig,
    TrainHistory,
};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NormAdj, SamplerDist};
use crate::layers::{
    gru_cell_backward, gru_cell_forward, DrawSource, GruCache, GruCell, SampleDraw, SpatialCache,
    SpatialExtractor,
};
use crate::numerics::{Activation, Matrix, Param};

/// Architecture hyper-parameters. Node inputs carry one feature (the flow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub hidden: usize,
    pub spatial_hidden: usize,
    pub spatial_out: usize,
    pub activations: [Activation; 2],
    /// Share one spatial extractor between encoder and decoder.
    pub tie_spatial: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 12,
            d_out: 12,
            hidden: 64,
            spatial_hidden: 16,
            spatial_out: 16,
            activations: [Activation::Relu, Activation::Relu],
            tie_spatial: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_in", self.d_in),
            ("d_out", self.d_out),
            ("hidden", self.hidden),
            ("spatial_hidden", self.spatial_hidden),
            ("spatial_out", self.spatial_out),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be >= 1")));
        }
        Ok(())
    }
}

/// Final encoder hidden state, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub c: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastGcrnnModel {
    pub config: ModelConfig,
    pub enc_spatial: SpatialExtractor,
    /// `None` when the decoder reuses the encoder's extractor.
    pub dec_spatial: Option<SpatialExtractor>,
    pub enc_gru: GruCell,
    pub dec_gru: GruCell,
    pub readout: Param,
    pub sampler: SamplerDist,
}

/// Ground-truth decoder frames and, per step after the first, whether to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub frames: Matrix,
    /// `use_frame[k]` decides the input of decoder step `k + 1`.
    pub use_frame: Vec<bool>,
}

impl Teacher {
    pub fn always(frames: &Matrix) -> Self {
        Self {
            frames: frames.clone(),
            use_frame: vec![true; frames.cols().saturating_sub(1)],
        }
    }

    /// Flips one coin per decoder step. Returns `None` when `ratio == 0`.
    pub fn sample<R: Rng + ?Sized>(
        frames: Option<&Matrix>,
        d_out: usize,
        ratio: f64,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "teacher forcing ratio {ratio} outside [0, 1]"
            )));
        }
        if ratio == 0.0 {
            return Ok(None);
        }
        let frames = frames.ok_or_else(|| {
            Error::Input(format!("teacher forcing ratio {ratio} needs target frames"))
        })?;
        let use_frame = (1..d_out).map(|_| rng.random::<f64>() < ratio).collect();
        Ok(Some(Self {
            frames: frames.clone(),
            use_frame,
        }))
    }
}

/// Where a decoder step took its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepInput {
    LastObserved,
    Teacher(usize),
    Prediction(usize),
}

#[derive(Debug, Clone)]
pub struct EncodeStep {
    spatial: SpatialCache,
    gru: GruCache,
}

#[derive(Debug, Clone)]
pub struct DecodeStep {
    pub input: Matrix,
    pub source: StepInput,
    spatial: SpatialCache,
    gru: GruCache,
    h: Matrix,
}

/// Everything recorded by one forward pass, enough to run backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub context: Context,
    pub pred: Matrix,
    pub encoder: Vec<EncodeStep>,
    pub decoder: Vec<DecodeStep>,
}

impl ForwardTrace {
    /// Every node sample taken, in forward order.
    pub fn draws(&self) -> Vec<SampleDraw> {
        let enc = self.encoder.iter().map(|s| &s.spatial);
        let dec = self.decoder.iter().map(|s| &s.spatial);
        enc.chain(dec).flat_map(|c| c.draws().cloned()).collect()
    }
}

impl FastGcrnnModel {
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        sampler: SamplerDist,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (sh, so, acts) = (
            config.spatial_hidden,
            config.spatial_out,
            config.activations,
        );
        let enc_spatial = SpatialExtractor::init(1, sh, so, acts, rng);
        let dec_spatial = if config.tie_spatial {
            None
        } else {
            Some(SpatialExtractor::init(1, sh, so, acts, rng))
        };
        let enc_gru = GruCell::init(so, config.hidden, rng);
        let dec_gru = GruCell::init(so, config.hidden, rng);
        let readout = Param::xavier(config.hidden, 1, rng);
        Ok(Self {
            config,
            enc_spatial,
            dec_spatial,
            enc_gru,
            dec_gru,
            readout,
            sampler,
        })
    }

    /// Same shapes as [`init`](Self::init) with every weight and bias zero.
    pub fn zeros(config: ModelConfig, sampler: SamplerDist) -> Result<Self> {
        let mut m = Self::init(config, sampler, &mut ChaCha8Rng::seed_from_u64(0))?;
        for p in m.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn n_nodes(&self) -> usize {
        self.sampler.n()
    }

    pub fn dec_spatial(&self) -> &SpatialExtractor {
        self.dec_spatial.as_ref().unwrap_or(&self.enc_spatial)
    }

    /// Parameter names in the fixed order used by checkpoints and the optimizer.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut spatial = |side: &str| {
            for l in 0..2 {
                names.push(format!("{side}.gcn{l}.weight"));
            }
        };
        spatial("enc");
        if self.dec_spatial.is_some() {
            spatial("dec");
        }
        for side in ["enc", "dec"] {
            for p in [
                "w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h",
            ] {
                names.push(format!("{side}.gru.{p}"));
            }
        }
        names.push("readout".into());
        names
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut ps: Vec<&Param> = self.enc_spatial.layers.iter().map(|l| &l.weight).collect();
        if let Some(d) = &self.dec_spatial {
            ps.extend(d.layers.iter().map(|l| &l.weight));
        }
        ps.extend(self.enc_gru.params());
        ps.extend(self.dec_gru.params());
        ps.push(&self.readout);
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = self
            .enc_spatial
            .layers
            .iter_mut()
            .map(|l| &mut l.weight)
            .collect();
        if let Some(d) = &mut self.dec_spatial {
            ps.extend(d.layers.iter_mut().map(|l| &mut l.weight));
        }
        ps.extend(self.enc_gru.params_mut());
        ps.extend(self.dec_gru.params_mut());
        ps.push(&mut self.readout);
        ps
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, na: &NormAdj, x: &Matrix) -> Result<()> {
        if na.n() != self.n_nodes() {
            return Err(Error::shape(
                "graph vs model sampler",
                na.a_hat().shape(),
                (self.n_nodes(), self.n_nodes()),
            ));
        }
        if x.shape() != (na.n(), self.config.d_in) {
            return Err(Error::shape(
                "input window",
                x.shape(),
                (na.n(), self.config.d_in),
            ));
        }
        Ok(())
    }

    pub fn encode(
        &self,
        na: &NormAdj,
        x: &Matrix,
        source: &mut DrawSource<'_>,
    ) -> Result<(Context, Vec<EncodeStep>)> {
        self.check_input(na, x)?;
        let mut h = Matrix::zeros(na.n(), self.config.hidden);
        let mut steps = Vec::with_capacity(self.config.d_in);
        for t in 0..self.config.d_in {
            let (z, spatial) = self.enc_spatial.forward(na, &x.column(t), source)?;
            let (h_next, gru) = gru_cell_forward(&z, &h, &self.enc_gru)?;
            steps.push(EncodeStep { spatial, gru });
            h = h_next;
        }
        Ok((Context { c: h }, steps))
    }

    pub fn decode(
        &self,
        na: &NormAdj,
        context: &Context,
        last_frame: &Matrix,
        teacher: Option<&Teacher>,
        source: &mut DrawSource<'_>,
    ) -> Result<(Matrix, Vec<DecodeStep>)> {
        let n = na.n();
        let d_out = self.config.d_out;
        if context.c.shape() != (n, self.config.hidden) {
            return Err(Error::shape(
                "decoder context",
                context.c.shape(),
                (n, self.config.hidden),
            ));
        }
        if last_frame.shape() != (n, 1) {
            return Err(Error::shape(
                "decoder first input",
                last_frame.shape(),
                (n, 1),
            ));
        }
        if let Some(t) = teacher {
            if t.frames.shape() != (n, d_out) {
                return Err(Error::shape("teacher frames", t.frames.shape(), (n, d_out)));
            }
        }
        let mut pred = Matrix::zeros(n, d_out);
        let mut h = context.c.clone();
        let mut steps = Vec::with_capacity(d_out);
        for k in 0..d_out {
            let (input, src) = if k == 0 {
                (last_frame.clone(), StepInput::LastObserved)
            } else {
                match teacher {
                    Some(t) if t.use_frame.get(k - 1).copied().unwrap_or(false) => {
                        (t.frames.column(k - 1), StepInput::Teacher(k - 1))
                    }
                    _ => (pred.column(k - 1), StepInput::Prediction(k - 1)),
                }
            };
            let (z, spatial) = self.dec_spatial().forward(na, &input, source)?;
            let (h_next, gru) = gru_cell_forward(&z, &h, &self.dec_gru)?;
            let y = h_next.matmul(&self.readout.value)?;
            pred.set_column(k, &y)?;
            steps.push(DecodeStep {
                input,
                source: src,
                spatial,
                gru,
                h: h_next.clone(),
            });
            h = h_next;
        }
        Ok((pred, steps))
    }

    pub fn forward(
        &self,
        na: &NormAdj,
        x: &Matrix,
        teacher: Option<&Teacher>,
        source: &mut DrawSource<'_>,
    ) -> Result<ForwardTrace> {
        let (context, encoder) = self.encode(na, x, source)?;
        let last = x.column(self.config.d_in - 1);
        let (pred, decoder) = self.decode(na, &context, &last, teacher, source)?;
        Ok(ForwardTrace {
            context,
            pred,
            encoder,
            decoder,
        })
    }

    /// Like [`forward`](Self::forward) with separate draw sources for the
    /// encoder and decoder extractors.
    pub fn forward_split(
        &self,
        na: &NormAdj,
        x: &Matrix,
        teacher: Option<&Teacher>,
        enc: &mut DrawSource<'_>,
        dec: &mut DrawSource<'_>,
    ) -> Result<ForwardTrace> {
        let (context, encoder) = self.encode(na, x, enc)?;
        let last = x.column(self.config.d_in - 1);
        let (pred, decoder) = self.decode(na, &context, &last, teacher, dec)?;
        Ok(ForwardTrace {
            context,
            pred,
            encoder,
            decoder,
        })
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂pred`, including the paths through
    /// predictions fed back as decoder inputs.
    pub fn backward(&mut self, na: &NormAdj, trace: &ForwardTrace, d_pred: &Matrix) -> Result<()> {
        if d_pred.shape() != trace.pred.shape() {
            return Err(Error::shape(
                "backward upstream",
                d_pred.shape(),
                trace.pred.shape(),
            ));
        }
        if trace.decoder.len() != self.config.d_out || trace.encoder.len() != self.config.d_in {
            return Err(Error::MissingCache(
                "trace length differs from model horizon",
            ));
        }
        let n = d_pred.rows();
        let mut d_pred = d_pred.clone();
        let mut d_h = Matrix::zeros(n, self.config.hidden);
        for (k, step) in trace.decoder.iter().enumerate().rev() {
            let dy = d_pred.column(k);
            self.readout.accumulate(&step.h.t_matmul(&dy)?)?;
            d_h.add_assign(&dy.matmul_t(&self.readout.value)?)?;
            let (d_z, d_prev) = gru_cell_backward(&mut self.dec_gru, &step.gru, &d_h)?;
            let feedback = match step.source {
                StepInput::Prediction(j) => Some(j),
                _ => None,
            };
            let spatial = match &mut self.dec_spatial {
                Some(d) => d,
                None => &mut self.enc_spatial,
            };
            let d_in = spatial.backward(na, &step.spatial, &d_z, feedback.is_some())?;
            if let (Some(j), Some(g)) = (feedback, d_in) {
                let mut col = d_pred.column(j);
                col.add_assign(&g)?;
                d_pred.set_column(j, &col)?;
            }
            d_h = d_prev;
        }
        for step in trace.encoder.iter().rev() {
            let (d_z, d_prev) = gru_cell_backward(&mut self.enc_gru, &step.gru, &d_h)?;
            self.enc_spatial.backward(na, &step.spatial, &d_z, false)?;
            d_h = d_prev;
        }
        Ok(())
    }

    /// Forecast with the exhaustive sampler, so the output is reproducible.
    pub fn predict(&self, na: &NormAdj, x: &Matrix) -> Result<Matrix> {
        self.predict_with(na, x, &mut DrawSource::Exhaustive)
    }

    /// Forecast with fresh node samples from the model's sampler.
    pub fn predict_sampled(
        &self,
        na: &NormAdj,
        x: &Matrix,
        rng: &mut dyn RngCore,
    ) -> Result<Matrix> {
        self.predict_with(na, x, &mut DrawSource::fresh(&self.sampler, rng))
    }

    /// Unsampled reference path: every convolution uses the full `Â` product.
    pub fn predict_dense(&self, na: &NormAdj, x: &Matrix) -> Result<Matrix> {
        self.predict_with(na, x, &mut DrawSource::Dense)
    }

    pub fn predict_with(
        &self,
        na: &NormAdj,
        x: &Matrix,
        source: &mut DrawSource<'_>,
    ) -> Result<Matrix> {
        Ok(self.forward(na, x, None, source)?.pred)
    }
}

/// Mean squared error over all entries.
pub fn loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    let diff = pred.sub(target)?;
    if diff.is_empty() {
        return Err(Error::EmptyDataset("loss over zero entries".into()));
    }
    Ok(diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

/// `∂ loss / ∂ pred`.
pub fn loss_grad(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    let diff = pred.sub(target)?;
    let k = 2.0 / diff.len().max(1) as f64;
    Ok(diff.scale(k))
}
