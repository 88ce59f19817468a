use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::config::RunConfig;
use super::*;
use crate::error::{Error, Result};
use crate::evalbench::{
    bench_csv, benchmark_layer, generate_synthetic, ha_rmse, loglog_slope, plot_data, rmse,
};
use crate::fsutil::write_atomic;
use crate::graph::{degree_histogram, normalize_adjacency, RoadGraph, RoadSegment};
use crate::ingest::{
    bucketize, build_flow_matrix, format_time, parse_time, read_gps_records, windows_from_series,
    FlowMatrix,
};
use crate::model::{evaluate_rmse, train_with, Checkpoint, FastGcrnnModel};
use crate::numerics::Matrix;
use crate::SamplerDist;

pub(super) enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage<T>(msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

pub(super) fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Preprocess(a) => preprocess(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::Stats(a) => stats(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn load_config(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) if !p.exists() => {
            return usage(format!("config file {} does not exist", p.display()))
        }
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    Ok(cfg)
}

fn pick(flag: &Option<PathBuf>, from_config: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| from_config.clone())
}

fn required(path: Option<PathBuf>, flag: &str) -> std::result::Result<PathBuf, Failure> {
    match path {
        Some(p) => Ok(p),
        None => usage(format!(
            "--{flag} is required (or set it under [paths] in --config)"
        )),
    }
}

/// Every input must exist before any work starts.
fn check_inputs(paths: &[&Path]) -> Outcome {
    for p in paths {
        if !p.is_file() {
            return Err(Error::Input(format!("input file {} does not exist", p.display())).into());
        }
    }
    Ok(())
}

fn announce(command: &str, cfg: &RunConfig) {
    println!("command: {command}");
    println!("seed: {}", cfg.seed.unwrap_or(0));
    println!("effective config:");
    for line in cfg.to_toml().lines() {
        println!("  {line}");
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Effective config, seed and versions, written beside `out`.
fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    summary: serde_json::Value,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "seed": cfg.seed.unwrap_or(0),
        "version": env!("CARGO_PKG_VERSION"),
        "output": out.display().to_string(),
        "config": cfg,
        "summary": summary,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&manifest_path(out), format!("{text}\n").as_bytes())
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn earliest_bucket_start(t: &NaiveDateTime, secs: u64) -> NaiveDateTime {
    let since_midnight = t.num_seconds_from_midnight() as u64;
    let floored = since_midnight - since_midnight % secs;
    t.date().and_hms_opt(0, 0, 0).expect("midnight exists")
        + chrono::Duration::seconds(floored as i64)
}

fn preprocess(a: PreprocessArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    if let Some(i) = a.interval {
        cfg.ingest.interval = i;
    }
    if a.begin.is_some() {
        cfg.ingest.begin = a.begin.clone();
    }
    if a.buckets.is_some() {
        cfg.ingest.buckets = a.buckets;
    }
    cfg.paths.records = pick(&a.records, &cfg.paths.records);
    cfg.paths.graph = pick(&a.graph, &cfg.paths.graph);
    cfg.paths.out = pick(&a.out, &cfg.paths.out);
    let records_path = required(cfg.paths.records.clone(), "records")?;
    let out = required(cfg.paths.out.clone(), "out")?;
    let mut inputs = vec![records_path.as_path()];
    if let Some(g) = &cfg.paths.graph {
        inputs.push(g);
    }
    check_inputs(&inputs)?;
    announce("preprocess", &cfg);

    let (records, parsed) = read_gps_records(&records_path)?;
    let roads: Vec<String> = match &cfg.paths.graph {
        Some(g) => RoadGraph::read_graph_file(g)?.node_ids().to_vec(),
        None => records
            .iter()
            .map(|r| r.road_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let interval = cfg.ingest.interval;
    let begin = match &cfg.ingest.begin {
        Some(s) => parse_time(s)?,
        None => {
            let first = records
                .iter()
                .map(|r| r.time)
                .min()
                .ok_or_else(|| Error::EmptyDataset("no valid records and no --begin".into()))?;
            earliest_bucket_start(&first, interval.secs())
        }
    };
    let buckets = match cfg.ingest.buckets {
        Some(b) => b,
        None => match records.iter().map(|r| r.time).max() {
            Some(last) if last >= begin => bucketize(&last, &begin, interval)? + 1,
            _ => {
                return Err(
                    Error::EmptyDataset("no records at or after the start time".into()).into(),
                )
            }
        },
    };
    let (fm, summary) = build_flow_matrix(records, &roads, begin, interval, buckets)?;
    write_atomic(&out, fm.to_csv_string().as_bytes())?;
    let skipped =
        parsed.malformed + summary.unknown_road + summary.before_begin + summary.out_of_horizon;
    println!(
        "read {} records, skipped {} (malformed {}, unknown road {}, before start {}, past horizon {}), duplicates {}, counted {}",
        parsed.lines_read,
        skipped,
        parsed.malformed,
        summary.unknown_road,
        summary.before_begin,
        summary.out_of_horizon,
        summary.duplicates,
        summary.counted
    );
    println!(
        "wrote {} roads x {} buckets from {} to {}",
        fm.n(),
        fm.t(),
        format_time(&begin),
        out.display()
    );
    write_manifest(
        &out,
        "preprocess",
        &cfg,
        json!({"parse": to_json(&parsed), "ingest": to_json(&summary), "begin": format_time(&begin), "buckets": buckets}),
    )?;
    Ok(())
}

fn read_segments(path: &Path) -> Result<Vec<RoadSegment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["road_id", "x1", "y1", "x2", "y2"] {
        return Err(Error::Input(format!(
            "segment header must be 'road_id,x1,y1,x2,y2', got '{}'",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            row.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("column {} is not a finite number", k + 1)))
        };
        let id = row.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(bad("empty road_id".into()));
        }
        out.push(RoadSegment::new(id, (num(1)?, num(2)?), (num(3)?, num(4)?)));
    }
    Ok(out)
}

fn build_graph(a: BuildGraphArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    cfg.paths.out = pick(&a.out, &cfg.paths.out);
    let out = required(cfg.paths.out.clone(), "out")?;
    let inputs: Vec<&Path> = a
        .edges
        .iter()
        .chain(&a.segments)
        .map(PathBuf::as_path)
        .collect();
    check_inputs(&inputs)?;
    announce("build-graph", &cfg);
    let g = if let Some(p) = &a.edges {
        RoadGraph::read_graph_file(p)?
    } else if let Some(p) = &a.segments {
        RoadGraph::from_segments(&read_segments(p)?, a.tolerance)?
    } else {
        let n = a.random.unwrap_or(0);
        if n == 0 || !(a.avg_degree >= 0.0 && a.avg_degree.is_finite()) {
            return usage("--random needs a positive size and a finite, nonnegative --avg-degree");
        }
        RoadGraph::random_connected(
            n,
            a.avg_degree,
            &mut ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0)),
        )
    };
    write_atomic(&out, g.to_graph_text().as_bytes())?;
    println!(
        "wrote graph with {} roads and {} edges to {}",
        g.n(),
        g.edges().len(),
        out.display()
    );
    write_manifest(
        &out,
        "build-graph",
        &cfg,
        json!({"roads": g.n(), "edges": g.edges().len()}),
    )?;
    Ok(())
}

fn stats(a: StatsArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    cfg.paths.graph = pick(&a.graph, &cfg.paths.graph);
    cfg.paths.flow = pick(&a.flow, &cfg.paths.flow);
    cfg.paths.out = pick(&a.out, &cfg.paths.out);
    let graph = required(cfg.paths.graph.clone(), "graph")?;
    let mut inputs = vec![graph.as_path()];
    if let Some(f) = &cfg.paths.flow {
        inputs.push(f);
    }
    check_inputs(&inputs)?;
    announce("stats", &cfg);
    let g = RoadGraph::read_graph_file(&graph)?;
    let hist = degree_histogram(&g);
    let mean = g.degrees().iter().sum::<usize>() as f64 / g.n().max(1) as f64;
    println!(
        "roads {} edges {} mean degree {:.3}",
        g.n(),
        g.edges().len(),
        mean
    );
    print!("{}", hist.to_csv());
    let mut summary = json!({"roads": g.n(), "edges": g.edges().len(), "mean_degree": mean});
    if let Some(f) = &cfg.paths.flow {
        let fm = FlowMatrix::read_csv(f)?;
        let v = fm.values().data();
        let total: f64 = v.iter().sum();
        let max = v.iter().copied().fold(0.0, f64::max);
        let zeros = v.iter().filter(|&&x| x == 0.0).count();
        let mean_flow = total / v.len().max(1) as f64;
        let zero_share = zeros as f64 / v.len().max(1) as f64;
        println!(
            "flow: roads {} buckets {} interval {} total {} mean {:.4} max {} zero share {:.4}",
            fm.n(),
            fm.t(),
            fm.interval(),
            total,
            mean_flow,
            max,
            zero_share
        );
        summary["flow"] = json!({"roads": fm.n(), "buckets": fm.t(), "total": total, "mean": mean_flow, "max": max, "zero_share": zero_share});
    }
    if let Some(out) = &cfg.paths.out {
        write_atomic(out, hist.to_csv().as_bytes())?;
        write_manifest(out, "stats", &cfg, summary)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    let s = &mut cfg.synth;
    if let Some(v) = a.buckets {
        s.buckets = v;
    }
    if let Some(v) = a.period {
        s.period = v;
    }
    if let Some(v) = a.slope {
        s.slope = v;
    }
    if let Some(v) = a.noise_std {
        s.noise_std = v;
    }
    if let Some(v) = a.alpha {
        s.alpha = v;
    }
    if let Some(v) = a.interval {
        s.interval = v;
    }
    if let Some(seed) = cfg.seed {
        cfg.synth.seed = seed;
    }
    cfg.seed = Some(cfg.synth.seed);
    cfg.paths.graph = pick(&a.graph, &cfg.paths.graph);
    cfg.paths.out = pick(&a.out, &cfg.paths.out);
    let graph = required(cfg.paths.graph.clone(), "graph")?;
    let out = required(cfg.paths.out.clone(), "out")?;
    check_inputs(&[&graph])?;
    cfg.synth
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    announce("synth", &cfg);
    let g = RoadGraph::read_graph_file(&graph)?;
    let fm = generate_synthetic(&g, &cfg.synth)?;
    write_atomic(&out, fm.to_csv_string().as_bytes())?;
    println!(
        "wrote {} roads x {} buckets to {}",
        fm.n(),
        fm.t(),
        out.display()
    );
    write_manifest(
        &out,
        "synth",
        &cfg,
        json!({"roads": fm.n(), "buckets": fm.t()}),
    )?;
    Ok(())
}

/// Flow rows in graph order; the two must cover the same roads.
fn aligned_flow(g: &RoadGraph, flow: &Path) -> Result<FlowMatrix> {
    FlowMatrix::read_csv(flow)?.reordered(g.node_ids())
}

fn apply_model_flags(cfg: &mut RunConfig, m: &ModelFlags) {
    let mc = &mut cfg.model;
    if let Some(v) = m.d_in {
        mc.d_in = v;
    }
    if let Some(v) = m.d_out {
        mc.d_out = v;
    }
    if let Some(v) = m.hidden {
        mc.hidden = v;
    }
    if let Some(v) = m.spatial_hidden {
        mc.spatial_hidden = v;
    }
    if let Some(v) = m.spatial_out {
        mc.spatial_out = v;
    }
    if let Some(v) = &m.activations {
        mc.activations = [v[0], v[1]];
    }
    if m.tie_spatial {
        mc.tie_spatial = true;
    }
}

fn history_csv(h: &crate::model::TrainHistory) -> String {
    let mut s = String::from("epoch,steps,train_loss,val_rmse\n");
    for e in &h.epochs {
        let val = e.val_rmse.map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{:?},{}", e.epoch, e.steps, e.train_loss, val);
    }
    s
}

fn train(a: TrainArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    apply_model_flags(&mut cfg, &a.model);
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.teacher_forcing {
        t.teacher_forcing = v;
    }
    if let Some(v) = a.clip_norm {
        t.clip_norm = v;
    }
    if let Some(v) = a.sampler {
        t.sampler = v;
    }
    if let Some(v) = &a.t_per_layer {
        t.t_per_layer = v.clone();
    }
    if let Some(v) = a.draw_scope {
        t.draw_scope = v;
    }
    if a.exhaustive_train {
        t.exhaustive_train = true;
    }
    if a.keep_last {
        t.keep_best = false;
    }
    if let Some(seed) = cfg.seed {
        cfg.train.seed = seed;
    }
    cfg.seed = Some(cfg.train.seed);
    if let Some(v) = a.stride {
        cfg.window.stride = v;
    }
    if a.no_normalize {
        cfg.window.normalize = false;
    }
    cfg.paths.graph = pick(&a.graph, &cfg.paths.graph);
    cfg.paths.flow = pick(&a.flow, &cfg.paths.flow);
    cfg.paths.checkpoint = pick(&a.checkpoint, &cfg.paths.checkpoint);
    let graph = required(cfg.paths.graph.clone(), "graph")?;
    let flow = required(cfg.paths.flow.clone(), "flow")?;
    let ckpt_path = required(cfg.paths.checkpoint.clone(), "checkpoint")?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut s = ckpt_path.as_os_str().to_os_string();
        s.push(".history.csv");
        PathBuf::from(s)
    });
    check_inputs(&[&graph, &flow])?;
    cfg.model
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.train
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if cfg.window.stride == 0 {
        return usage("--stride must be >= 1");
    }
    announce("train", &cfg);

    let g = RoadGraph::read_graph_file(&graph)?;
    let fm = aligned_flow(&g, &flow)?;
    let na = normalize_adjacency(&g);
    let data = crate::ingest::prepare_dataset(fm.values(), cfg.window.spec(&cfg.model))?;
    println!(
        "windows: train {} val {} test {}",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    init_rng.set_stream(1);
    let mut model = FastGcrnnModel::init(
        cfg.model.clone(),
        SamplerDist::uniform(g.n()),
        &mut init_rng,
    )?;
    println!("parameters: {}", model.num_parameters());
    let history = train_with(&mut model, &na, &data, &cfg.train, |e| {
        let val = e
            .val_rmse
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "epoch {} steps {} loss {:.6} val_rmse {}",
            e.epoch, e.steps, e.train_loss, val
        );
    })?;
    let test_rmse = if data.test.is_empty() {
        None
    } else {
        Some(evaluate_rmse(
            &model,
            &na,
            &data.test,
            &data.test_raw,
            &data.scaler,
        )?)
    };
    if let Some(r) = test_rmse {
        println!("test rmse {r:.6}");
    }
    let ckpt = Checkpoint {
        model,
        scaler: data.scaler.clone(),
        road_ids: g.node_ids().to_vec(),
        train: Some(cfg.train.clone()),
    };
    ckpt.save(&ckpt_path)?;
    write_atomic(&history_path, history_csv(&history).as_bytes())?;
    println!(
        "wrote {} and {}",
        ckpt_path.display(),
        history_path.display()
    );
    write_manifest(
        &ckpt_path,
        "train",
        &cfg,
        json!({
            "history": history_path.display().to_string(),
            "best_epoch": history.best_epoch,
            "final_train_loss": history.epochs.last().map(|e| e.train_loss),
            "test_rmse": test_rmse,
        }),
    )?;
    Ok(())
}

fn load_checkpoint_for(g: &RoadGraph, path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.road_ids != g.node_ids() {
        return Err(Error::Input(format!(
            "checkpoint was trained on {} roads that differ from the graph's {} roads",
            ckpt.road_ids.len(),
            g.n()
        )));
    }
    Ok(ckpt)
}

/// `road_id,step1,...,stepK` with full-precision values.
fn forecast_csv(ids: &[String], m: &Matrix) -> String {
    let mut s = String::from("road_id");
    for k in 1..=m.cols() {
        let _ = write!(s, ",step{k}");
    }
    s.push('\n');
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        for v in m.row(i) {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}

/// Reads a forecast CSV, or a flow matrix when the file starts with `#begin=`.
fn read_table(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with("#begin=") {
        let fm = FlowMatrix::parse_csv(&text).map_err(|(line, msg)| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })?;
        return Ok((fm.road_ids().to_vec(), fm.values().clone()));
    }
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut parts = line.split(',').map(str::trim);
        ids.push(parts.next().unwrap_or("").to_string());
        let row = parts
            .map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("non-numeric or non-finite value".into()))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(bad(format!(
                    "row has {} values, expected {}",
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no rows",
            path.display()
        )));
    }
    Ok((ids, Matrix::from_rows(&rows)?))
}

fn predict(a: PredictArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    cfg.paths.checkpoint = pick(&a.checkpoint, &cfg.paths.checkpoint);
    cfg.paths.graph = pick(&a.graph, &cfg.paths.graph);
    cfg.paths.flow = pick(&a.flow, &cfg.paths.flow);
    cfg.paths.out = pick(&a.out, &cfg.paths.out);
    let ckpt_path = required(cfg.paths.checkpoint.clone(), "checkpoint")?;
    let graph = required(cfg.paths.graph.clone(), "graph")?;
    let flow = required(cfg.paths.flow.clone(), "flow")?;
    let out = required(cfg.paths.out.clone(), "out")?;
    check_inputs(&[&ckpt_path, &graph, &flow])?;
    announce("predict", &cfg);

    let g = RoadGraph::read_graph_file(&graph)?;
    let ckpt = load_checkpoint_for(&g, &ckpt_path)?;
    let fm = aligned_flow(&g, &flow)?;
    let na = normalize_adjacency(&g);
    let d_in = ckpt.model.config.d_in;
    if fm.t() < d_in {
        return Err(Error::InsufficientHistory {
            needed: d_in,
            have: fm.t(),
        }
        .into());
    }
    let t0 = a.at.unwrap_or(fm.t() - d_in);
    if t0 + d_in > fm.t() {
        return Err(Error::OutOfRange {
            what: "window start",
            detail: format!(
                "--at {t0} needs buckets up to {} but the flow has {}",
                t0 + d_in,
                fm.t()
            ),
        }
        .into());
    }
    let x = ckpt
        .scaler
        .transform(&fm.values().col_range(t0, t0 + d_in)?)?;
    let pred = if a.sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));
        ckpt.model.predict_sampled(&na, &x, &mut rng)?
    } else {
        ckpt.model.predict(&na, &x)?
    };
    let pred = ckpt.scaler.inverse(&pred)?;
    write_atomic(&out, forecast_csv(g.node_ids(), &pred).as_bytes())?;
    println!(
        "forecast buckets {}..{} for {} roads written to {}",
        t0 + d_in,
        t0 + d_in + pred.cols(),
        pred.rows(),
        out.display()
    );
    write_manifest(
        &out,
        "predict",
        &cfg,
        json!({"window_start": t0, "first_forecast_bucket": t0 + d_in, "sampled": a.sampled}),
    )?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    cfg.paths.out = pick(&a.out, &cfg.paths.out);
    let report = if let (Some(pred), Some(target)) = (&a.pred, &a.target) {
        check_inputs(&[pred, target])?;
        announce("evaluate", &cfg);
        let (pid, p) = read_table(pred)?;
        let (tid, t) = read_table(target)?;
        let r = rmse(&p, &t)?;
        if pid != tid {
            println!(
                "warning: road ids differ between prediction and target; rows compared by position"
            );
        }
        println!("rmse {r:.6} over {} entries", p.len());
        json!({"rmse": r, "rows": p.rows(), "cols": p.cols()})
    } else {
        let ckpt_path = required(a.checkpoint.clone(), "checkpoint")?;
        let graph = required(pick(&a.graph, &cfg.paths.graph), "graph")?;
        let flow = required(pick(&a.flow, &cfg.paths.flow), "flow")?;
        check_inputs(&[&ckpt_path, &graph, &flow])?;
        announce("evaluate", &cfg);
        let g = RoadGraph::read_graph_file(&graph)?;
        let ckpt = load_checkpoint_for(&g, &ckpt_path)?;
        let fm = aligned_flow(&g, &flow)?;
        let na = normalize_adjacency(&g);
        let period = match a.period {
            Some(p) => p,
            None => (86_400 / fm.interval().secs()).max(1) as usize,
        };
        let mc = &ckpt.model.config;
        let split = crate::ingest::chronological_split(fm.t());
        let test_series = fm.values().col_range(split.test.start, split.test.end)?;
        let mut raw = windows_from_series(&test_series, mc.d_in, mc.d_out, 1)?;
        for w in &mut raw {
            w.t0 += split.test.start;
        }
        let normed = raw
            .iter()
            .map(|w| ckpt.scaler.transform_window(w))
            .collect::<Result<Vec<_>>>()?;
        let model_rmse = evaluate_rmse(&ckpt.model, &na, &normed, &raw, &ckpt.scaler)?;
        let ha = ha_rmse(fm.values(), &raw, period)?;
        println!("test windows {} period {period}", raw.len());
        println!("model rmse {model_rmse:.6}");
        println!("ha rmse {ha:.6}");
        json!({"model_rmse": model_rmse, "ha_rmse": ha, "windows": raw.len(), "period": period})
    };
    if let Some(out) = &cfg.paths.out {
        let text =
            serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
        write_atomic(out, format!("{text}\n").as_bytes())?;
        write_manifest(out, "evaluate", &cfg, report)?;
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    let b = &mut cfg.bench;
    if let Some(v) = &a.sizes {
        b.sizes = v.clone();
    }
    if let Some(v) = a.t_l {
        b.t_l = v;
    }
    if let Some(v) = a.reps {
        b.reps = v;
    }
    if a.train_step {
        b.options.train_step = true;
    }
    if let Some(v) = a.feature_dim {
        b.options.feature_dim = v;
    }
    if let Some(v) = a.avg_degree {
        b.options.avg_degree = v;
    }
    if let Some(seed) = cfg.seed {
        cfg.bench.options.seed = seed;
    }
    cfg.seed = Some(cfg.bench.options.seed);
    cfg.paths.out = pick(&a.out, &cfg.paths.out);
    if cfg.bench.sizes.is_empty() {
        return usage("--sizes needs at least one graph size");
    }
    announce("benchmark", &cfg);
    let b = &cfg.bench;
    let results = benchmark_layer(&b.sizes, b.t_l, b.reps, &b.options)?;
    let csv = bench_csv(&results);
    print!("{csv}");
    let xs: Vec<f64> = results.iter().map(|r| r.n as f64).collect();
    let mut summary = json!({"results": to_json(&results)});
    if xs.len() >= 2 {
        let dense = loglog_slope(&xs, &results.iter().map(|r| r.dense_ms).collect::<Vec<_>>())?;
        let sampled = loglog_slope(
            &xs,
            &results.iter().map(|r| r.sampled_ms).collect::<Vec<_>>(),
        )?;
        println!("log-log slope: dense {dense:.3} sampled {sampled:.3}");
        summary["dense_slope"] = json!(dense);
        summary["sampled_slope"] = json!(sampled);
    }
    if let Some(out) = &cfg.paths.out {
        write_atomic(out, csv.as_bytes())?;
        write_manifest(out, "benchmark", &cfg, summary)?;
    }
    if let Some(plot) = &a.plot {
        write_atomic(plot, plot_data(&results).as_bytes())?;
    }
    Ok(())
}
