//! Metrics, the historical-average baseline, synthetic traffic, and timing.

mod bench;
mod synth;

pub use bench::{bench_csv, benchmark_layer, loglog_slope, plot_data, BenchOptions, BenchResult};
pub use synth::{generate_synthetic, SynthConfig, SYNTH_BEGIN};

use crate::error::{Error, Result};
use crate::ingest::ForecastWindow;
use crate::numerics::Matrix;

/// Root of the mean squared error over all entries.
pub fn rmse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    let diff = pred.sub(target)?;
    if diff.is_empty() {
        return Err(Error::EmptyDataset("rmse over zero entries".into()));
    }
    Ok((diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64).sqrt())
}

/// Historical average: bucket `T + k` is forecast as the mean of every
/// history value sharing its phase `(T + k) mod period`.
pub fn ha_forecast(history: &Matrix, period: usize, d_out: usize) -> Result<Matrix> {
    if period == 0 {
        return Err(Error::Input("period must be >= 1".into()));
    }
    let t = history.cols();
    if t < period {
        return Err(Error::InsufficientHistory {
            needed: period,
            have: t,
        });
    }
    Ok(Matrix::from_fn(history.rows(), d_out, |i, k| {
        let phase = (t + k) % period;
        let row = history.row(i);
        let vals: Vec<f64> = row.iter().skip(phase).step_by(period).copied().collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }))
}

/// HA RMSE over raw windows, each forecast from all buckets before its
/// targets. `series` is the full raw flow matrix the windows index into.
pub fn ha_rmse(series: &Matrix, windows: &[ForecastWindow], period: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset("no windows to evaluate HA on".into()));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for w in windows {
        let end = w.t0 + w.x.cols();
        let pred = ha_forecast(&series.col_range(0, end)?, period, w.y.cols())?;
        let diff = pred.sub(&w.y)?;
        sq += diff.data().iter().map(|d| d * d).sum::<f64>();
        count += diff.len();
    }
    Ok((sq / count as f64).sqrt())
}

/// Pearson correlation of two equal-length series; 0 when either is flat.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests;
