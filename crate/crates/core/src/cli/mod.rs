//! Command-line front end: `fastgcrnn <command> [flags]`.

mod config;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::graph::SamplerMode;
use crate::ingest::Interval;
use crate::model::DrawScope;
use crate::numerics::Activation;

pub use config::{BenchConfig, IngestConfig, PathsConfig, RunConfig, WindowConfig};

#[derive(Debug, Parser)]
#[command(
    name = "fastgcrnn",
    version,
    about = "Road traffic flow forecasting with sampled graph convolutions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate GPS records into a per-road flow matrix.
    Preprocess(PreprocessArgs),
    /// Build a road graph from an edge list, segment geometry or a random generator.
    BuildGraph(BuildGraphArgs),
    /// Degree histogram of a graph and summary statistics of a flow matrix.
    Stats(StatsArgs),
    /// Generate a synthetic flow matrix on a graph.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Forecast the buckets after a window of observed flow.
    Predict(PredictArgs),
    /// RMSE of predictions against targets, or of a checkpoint against the historical average.
    Evaluate(EvaluateArgs),
    /// Time dense against sampled graph convolutions over graph sizes.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run config; flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    /// GPS record CSV with header `road_id,car_id,time`.
    #[arg(long, value_name = "FILE")]
    pub records: Option<PathBuf>,
    /// Graph file fixing the road order; without it roads are sorted by id.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Bucket width such as 5m or 30m.
    #[arg(long)]
    pub interval: Option<Interval>,
    /// Start of bucket 0, `YYYY-MM-DD HH:MM:SS`.
    #[arg(long)]
    pub begin: Option<String>,
    /// Number of buckets; later records are dropped and counted.
    #[arg(long)]
    pub buckets: Option<usize>,
    /// Output flow matrix CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["edges", "segments", "random"])))]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub common: Common,
    /// Edge list `road_a,road_b`, optionally preceded by `#node road_id` lines.
    #[arg(long, value_name = "FILE")]
    pub edges: Option<PathBuf>,
    /// Segment CSV with header `road_id,x1,y1,x2,y2`; roads sharing an endpoint are joined.
    #[arg(long, value_name = "FILE")]
    pub segments: Option<PathBuf>,
    /// Endpoint snapping distance for --segments.
    #[arg(long, default_value_t = crate::graph::DEFAULT_SNAP_TOLERANCE)]
    pub tolerance: f64,
    /// Generate a connected random graph with this many roads.
    #[arg(long, value_name = "N")]
    pub random: Option<usize>,
    /// Target mean degree for --random.
    #[arg(long, default_value_t = 4.0)]
    pub avg_degree: f64,
    /// Output graph file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Graph file.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Optional flow matrix to summarize.
    #[arg(long, value_name = "FILE")]
    pub flow: Option<PathBuf>,
    /// Write the degree histogram CSV here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Graph file whose roads receive series.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Number of buckets.
    #[arg(long)]
    pub buckets: Option<usize>,
    /// Buckets per cycle of the daily wave.
    #[arg(long)]
    pub period: Option<usize>,
    /// Trend added per bucket.
    #[arg(long)]
    pub slope: Option<f64>,
    /// Standard deviation of the Gaussian noise.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Weight of the neighbors' previous values.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bucket width written to the output metadata.
    #[arg(long)]
    pub interval: Option<Interval>,
    /// Output flow matrix CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    /// Input window length in buckets.
    #[arg(long)]
    pub d_in: Option<usize>,
    /// Forecast horizon in buckets.
    #[arg(long)]
    pub d_out: Option<usize>,
    /// GRU hidden size.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Width of the first graph convolution.
    #[arg(long)]
    pub spatial_hidden: Option<usize>,
    /// Width of the second graph convolution.
    #[arg(long)]
    pub spatial_out: Option<usize>,
    /// Activations of the two graph convolutions, e.g. relu,relu.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub activations: Option<Vec<Activation>>,
    /// Share the spatial extractor between encoder and decoder.
    #[arg(long)]
    pub tie_spatial: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Graph file.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Flow matrix CSV.
    #[arg(long, value_name = "FILE")]
    pub flow: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Loss history CSV; defaults to `<checkpoint>.history.csv`.
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam step size.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Windows per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Probability of feeding the true frame to the decoder.
    #[arg(long)]
    pub teacher_forcing: Option<f64>,
    /// Global gradient norm limit.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Node sampling distribution: uniform or importance.
    #[arg(long)]
    pub sampler: Option<SamplerMode>,
    /// Nodes drawn per graph convolution, e.g. 5,5.
    #[arg(long, value_delimiter = ',')]
    pub t_per_layer: Option<Vec<usize>>,
    /// How long one draw is reused: step, window or batch.
    #[arg(long)]
    pub draw_scope: Option<DrawScope>,
    /// Train on the full adjacency instead of sampled nodes.
    #[arg(long)]
    pub exhaustive_train: bool,
    /// Keep the final parameters instead of the best validation epoch.
    #[arg(long)]
    pub keep_last: bool,
    /// Distance in buckets between consecutive training windows.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Train on raw counts instead of per-road z-scores.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Graph file with the checkpoint's roads.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Flow matrix holding the observed window.
    #[arg(long, value_name = "FILE")]
    pub flow: Option<PathBuf>,
    /// First bucket of the observed window; defaults to the last full window.
    #[arg(long)]
    pub at: Option<usize>,
    /// Use fresh node samples (seeded) instead of the full adjacency.
    #[arg(long)]
    pub sampled: bool,
    /// Output forecast CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["pred", "checkpoint"])))]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Forecast CSV to score.
    #[arg(long, value_name = "FILE", requires = "target")]
    pub pred: Option<PathBuf>,
    /// Target forecast CSV or flow matrix.
    #[arg(long, value_name = "FILE")]
    pub target: Option<PathBuf>,
    /// Checkpoint to score on the test split against the historical average.
    #[arg(long, value_name = "FILE", requires_all = ["graph", "flow"])]
    pub checkpoint: Option<PathBuf>,
    /// Graph file for --checkpoint.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    /// Flow matrix for --checkpoint.
    #[arg(long, value_name = "FILE")]
    pub flow: Option<PathBuf>,
    /// Historical-average period in buckets; defaults to one day.
    #[arg(long)]
    pub period: Option<usize>,
    /// Write a JSON report here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: Common,
    /// Graph sizes, e.g. 500,1000,2000,4000.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Nodes drawn by the sampled layer.
    #[arg(long)]
    pub t_l: Option<usize>,
    /// Timed repetitions per size (median reported, at least 5).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Time forward, backward and an optimizer update.
    #[arg(long)]
    pub train_step: bool,
    /// Input feature width.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Mean degree of the random graphs.
    #[arg(long)]
    pub avg_degree: Option<f64>,
    /// Output timing CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Output plot data (one block per curve).
    #[arg(long, value_name = "FILE")]
    pub plot: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run::run(cli.command) {
        Ok(()) => 0,
        Err(run::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("see 'fastgcrnn --help'");
            2
        }
        Err(run::Failure::Runtime(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
