use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, loss_grad, FastGcrnnModel, Teacher};
use crate::error::{Error, Result};
use crate::graph::{NormAdj, SamplerDist, SamplerMode, DEFAULT_SAMPLES_PER_LAYER};
use crate::ingest::{ForecastDataset, ForecastWindow, Scaler};
use crate::layers::{DrawSource, SampleDraw};
use crate::numerics::{Matrix, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub teacher_forcing: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub sampler: SamplerMode,
    pub t_per_layer: Vec<usize>,
    pub draw_scope: DrawScope,
    /// Train through the exhaustive sampler instead of fresh draws.
    pub exhaustive_train: bool,
    /// Update only the readout; everything else stays frozen.
    pub readout_only: bool,
    /// Restore the parameters of the epoch with the lowest validation RMSE.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 16,
            teacher_forcing: 0.5,
            clip_norm: 5.0,
            seed: 0,
            sampler: SamplerMode::Importance,
            t_per_layer: DEFAULT_SAMPLES_PER_LAYER.to_vec(),
            draw_scope: DrawScope::Step,
            exhaustive_train: false,
            readout_only: false,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return bad(format!(
                "teacher_forcing must lie in [0, 1], got {}",
                self.teacher_forcing
            ));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be > 0, got {}", self.clip_norm));
        }
        if self.t_per_layer.is_empty() || self.t_per_layer.contains(&0) {
            return bad(format!(
                "t_per_layer entries must be >= 1, got {:?}",
                self.t_per_layer
            ));
        }
        Ok(())
    }
}

/// How long one set of node samples is reused during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawScope {
    /// Fresh draws at every convolution call.
    Step,
    /// One draw per extractor layer for a whole window.
    Window,
    /// One draw per extractor layer for a whole optimizer step.
    Batch,
}

impl std::str::FromStr for DrawScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "step" => Ok(DrawScope::Step),
            "window" => Ok(DrawScope::Window),
            "batch" => Ok(DrawScope::Batch),
            other => Err(Error::Config(format!(
                "unknown draw scope '{other}' (expected step, window or batch)"
            ))),
        }
    }
}

impl std::fmt::Display for DrawScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DrawScope::Step => "step",
            DrawScope::Window => "window",
            DrawScope::Batch => "batch",
        })
    }
}

/// Encoder layers 0 and 1, then decoder layers 0 and 1.
fn draw_set<R: rand::Rng + ?Sized>(dist: &SamplerDist, rng: &mut R) -> Vec<SampleDraw> {
    (0..4)
        .map(|i| SampleDraw::from_dist(i % 2, dist, rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean normalized-space MSE over the epoch's optimizer steps.
    pub train_loss: f64,
    /// RMSE in raw counts on the validation windows.
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Input(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.grad.shape() != m.shape() {
                return Err(Error::shape("adam state", m.shape(), p.grad.shape()));
            }
            let grads = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &g) in grads.iter().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
            }
            let lr = self.lr;
            let eps = self.eps;
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                *w -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}

/// RMSE in raw units: predictions are inverse-transformed before comparison
/// with the untransformed targets.
pub fn evaluate_rmse(
    model: &FastGcrnnModel,
    na: &NormAdj,
    windows: &[ForecastWindow],
    raw: &[ForecastWindow],
    scaler: &Scaler,
) -> Result<f64> {
    if windows.is_empty() || windows.len() != raw.len() {
        return Err(Error::EmptyDataset(format!(
            "{} normalized vs {} raw evaluation windows",
            windows.len(),
            raw.len()
        )));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for (w, r) in windows.iter().zip(raw) {
        let pred = scaler.inverse(&model.predict(na, &w.x)?)?;
        let diff = pred.sub(&r.y)?;
        sq += diff.data().iter().map(|d| d * d).sum::<f64>();
        count += diff.len();
    }
    Ok((sq / count as f64).sqrt())
}

pub fn train(
    model: &mut FastGcrnnModel,
    na: &NormAdj,
    data: &ForecastDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(model, na, data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut FastGcrnnModel,
    na: &NormAdj,
    data: &ForecastDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset("no training windows".into()));
    }
    model.sampler = SamplerDist::for_mode(cfg.sampler, na).with_samples(cfg.t_per_layer.clone())?;
    let sampler = model.sampler.clone();
    let d_out = model.config.d_out;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, FastGcrnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            let mut shared = Vec::new();
            if !cfg.exhaustive_train && cfg.draw_scope == DrawScope::Batch {
                shared = draw_set(&sampler, &mut rng);
            }
            for &i in batch {
                let w = &data.train[i];
                let teacher = Teacher::sample(Some(&w.y), d_out, cfg.teacher_forcing, &mut rng)?;
                if !cfg.exhaustive_train && cfg.draw_scope == DrawScope::Window {
                    shared = draw_set(&sampler, &mut rng);
                }
                let t = teacher.as_ref();
                let trace = match (cfg.exhaustive_train, cfg.draw_scope) {
                    (true, _) => model.forward(na, &w.x, t, &mut DrawSource::Exhaustive)?,
                    (false, DrawScope::Step) => {
                        model.forward(na, &w.x, t, &mut DrawSource::fresh(&sampler, &mut rng))?
                    }
                    (false, _) => model.forward_split(
                        na,
                        &w.x,
                        t,
                        &mut DrawSource::fixed(&shared[..2]),
                        &mut DrawSource::fixed(&shared[2..]),
                    )?,
                };
                let l = loss(&trace.pred, &w.y)?;
                if !l.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, step {}",
                        step + 1
                    )));
                }
                batch_loss += l * scale;
                model.backward(na, &trace, &loss_grad(&trace.pred, &w.y)?.scale(scale))?;
            }
            let mut params = model.params_mut();
            if cfg.readout_only {
                let last = params.len() - 1;
                for p in &mut params[..last] {
                    p.zero_grad();
                }
            }
            clip_global_norm(&mut params, cfg.clip_norm);
            adam.step(&mut params)?;
            loss_sum += batch_loss;
            steps += 1;
        }
        let val_rmse = if data.val.is_empty() {
            None
        } else {
            Some(evaluate_rmse(
                model,
                na,
                &data.val,
                &data.val_raw,
                &data.scaler,
            )?)
        };
        let record = EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / steps as f64,
            val_rmse,
        };
        on_epoch(&record);
        if let Some(v) = val_rmse {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        history.epochs.push(record);
    }
    if let (true, Some((_, m))) = (cfg.keep_best, best) {
        *model = m;
    }
    model.zero_grads();
    Ok(history)
}
