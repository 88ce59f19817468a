use std::f64::consts::TAU;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RoadGraph;
use crate::ingest::{parse_time, FlowMatrix, Interval};
use crate::numerics::Matrix;

/// Timestamp of bucket 0 in generated flow matrices.
pub const SYNTH_BEGIN: &str = "2020-01-06 00:00:00";

/// Per-road flow generator: daily wave, linear trend, neighbor coupling,
/// Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of buckets `T`.
    pub buckets: usize,
    pub period: usize,
    pub amp_range: (f64, f64),
    pub base_range: (f64, f64),
    /// Per-road phase offsets are drawn uniformly from this range (radians).
    pub phase_range: (f64, f64),
    pub slope: f64,
    pub noise_std: f64,
    /// Weight of the neighbors' previous noiseless mean.
    pub alpha: f64,
    pub interval: Interval,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            buckets: 20 * 288,
            period: 288,
            amp_range: (5.0, 20.0),
            base_range: (10.0, 40.0),
            phase_range: (0.0, 0.5),
            slope: 0.001,
            noise_std: 2.0,
            alpha: 0.3,
            interval: Interval::FIVE_MINUTES,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.period < 2 {
            return bad(format!("period must be >= 2, got {}", self.period));
        }
        if self.buckets == 0 {
            return bad("buckets must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            ));
        }
        for (name, (lo, hi)) in [
            ("amp_range", self.amp_range),
            ("base_range", self.base_range),
            ("phase_range", self.phase_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!(
                    "{name} must be an ordered finite pair, got ({lo}, {hi})"
                ));
            }
        }
        if !(self.slope.is_finite() && self.alpha.is_finite()) {
            return bad("slope and alpha must be finite".into());
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// `flow(i, t) = max(0, round(base_i + amp_i·sin(2πt/period + φ_i) + slope·t
/// + α·mean_{j ~ i} s_j(t−1) + noise))`, where `s` is the noiseless value.
pub fn generate_synthetic(g: &RoadGraph, cfg: &SynthConfig) -> Result<FlowMatrix> {
    cfg.validate()?;
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: Vec<f64> = (0..n).map(|_| uniform(&mut rng, cfg.base_range)).collect();
    let amp: Vec<f64> = (0..n).map(|_| uniform(&mut rng, cfg.amp_range)).collect();
    let phase: Vec<f64> = (0..n).map(|_| uniform(&mut rng, cfg.phase_range)).collect();
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i)).collect();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;

    let mut prev = vec![0.0; n];
    let mut clean = vec![0.0; n];
    let mut values = Matrix::zeros(n, cfg.buckets);
    for t in 0..cfg.buckets {
        let tf = t as f64;
        for i in 0..n {
            let spatial = if t == 0 || neighbors[i].is_empty() {
                0.0
            } else {
                neighbors[i].iter().map(|&j| prev[j]).sum::<f64>() / neighbors[i].len() as f64
            };
            clean[i] = base[i]
                + amp[i] * (TAU * tf / cfg.period as f64 + phase[i]).sin()
                + cfg.slope * tf
                + cfg.alpha * spatial;
        }
        for i in 0..n {
            let e = if cfg.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let v = (clean[i] + e).round();
            values.set(i, t, if v > 0.0 { v } else { 0.0 });
        }
        std::mem::swap(&mut prev, &mut clean);
    }
    let begin: NaiveDateTime = parse_time(SYNTH_BEGIN)?;
    FlowMatrix::new(g.node_ids().to_vec(), values, begin, cfg.interval)
}
