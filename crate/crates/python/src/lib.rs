//! Python bindings: graphs, flow matrices, training and forecasting.

use std::path::PathBuf;

use fastgcrnn::evalbench::{generate_synthetic, ha_forecast, SynthConfig};
use fastgcrnn::graph::{normalize_adjacency, NormAdj, RoadGraph, SamplerDist, SamplerMode};
use fastgcrnn::ingest::{
    build_flow_matrix, parse_gps_records, parse_time, prepare_dataset, Interval, WindowSpec,
};
use fastgcrnn::model::{Checkpoint, DrawScope, FastGcrnnModel, ModelConfig, TrainConfig};
use fastgcrnn::numerics::Matrix;
use fastgcrnn::FlowMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: fastgcrnn::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn interval(s: &str) -> PyResult<Interval> {
    s.parse().map_err(err)
}

/// Road graph: roads are nodes, shared intersections are edges.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: RoadGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(node_ids: Vec<String>, edges: Vec<(String, String)>) -> PyResult<Self> {
        let inner = RoadGraph::from_edges(node_ids, &edges).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n, avg_degree = 4.0, seed = 0))]
    fn random(n: usize, avg_degree: f64, seed: u64) -> Self {
        let inner =
            RoadGraph::random_connected(n, avg_degree, &mut ChaCha8Rng::seed_from_u64(seed));
        Self { inner }
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RoadGraph::read_graph_file(&path).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn node_ids(&self) -> Vec<String> {
        self.inner.node_ids().to_vec()
    }

    fn edges(&self) -> Vec<(String, String)> {
        let ids = self.inner.node_ids();
        self.inner
            .edges()
            .iter()
            .map(|&(a, b)| (ids[a].clone(), ids[b].clone()))
            .collect()
    }

    fn degrees(&self) -> Vec<usize> {
        self.inner.degrees()
    }

    /// `D̃^(-1/2) (A + I) D̃^(-1/2)` as nested lists.
    fn normalized_adjacency(&self) -> Vec<Vec<f64>> {
        normalize_adjacency(&self.inner).a_hat().to_rows()
    }

    fn to_text(&self) -> String {
        self.inner.to_graph_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n={}, edges={})",
            self.inner.n(),
            self.inner.edges().len()
        )
    }
}

/// Per-road vehicle counts, one row per road.
#[pyclass(name = "Flow", frozen)]
struct PyFlow {
    inner: FlowMatrix,
}

#[pymethods]
impl PyFlow {
    #[new]
    #[pyo3(signature = (road_ids, values, begin, interval = "5m"))]
    fn new(
        road_ids: Vec<String>,
        values: Vec<Vec<f64>>,
        begin: &str,
        interval: &str,
    ) -> PyResult<Self> {
        let m = to_matrix(values)?;
        let begin = parse_time(begin).map_err(err)?;
        let inner = FlowMatrix::new(road_ids, m, begin, self::interval(interval)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: FlowMatrix::read_csv(&path).map_err(err)?,
        })
    }

    #[getter]
    fn road_ids(&self) -> Vec<String> {
        self.inner.road_ids().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.values().to_rows()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n(), self.inner.t())
    }

    #[getter]
    fn interval_s(&self) -> u64 {
        self.inner.interval().secs()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    fn __repr__(&self) -> String {
        format!("Flow(roads={}, buckets={})", self.inner.n(), self.inner.t())
    }
}

/// Counts distinct cars per road and bucket from `road_id,car_id,time` CSV text.
#[pyfunction]
#[pyo3(signature = (records_csv, roads, begin, buckets, interval = "5m"))]
fn preprocess<'py>(
    py: Python<'py>,
    records_csv: &str,
    roads: Vec<String>,
    begin: &str,
    buckets: usize,
    interval: &str,
) -> PyResult<(PyFlow, Bound<'py, PyDict>)> {
    let (records, parsed) = parse_gps_records(records_csv.as_bytes()).map_err(err)?;
    let begin = parse_time(begin).map_err(err)?;
    let (fm, s) = build_flow_matrix(records, &roads, begin, self::interval(interval)?, buckets)
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("lines_read", parsed.lines_read)?;
    d.set_item("malformed", parsed.malformed)?;
    d.set_item("unknown_road", s.unknown_road)?;
    d.set_item("before_begin", s.before_begin)?;
    d.set_item("out_of_horizon", s.out_of_horizon)?;
    d.set_item("duplicates", s.duplicates)?;
    d.set_item("counted", s.counted)?;
    Ok((PyFlow { inner: fm }, d))
}

/// Synthetic flow with the generator defaults unless overridden.
#[pyfunction]
#[pyo3(signature = (graph, buckets = 5760, period = 288, noise_std = 2.0, alpha = 0.3, slope = 0.001, seed = 0))]
fn synthetic(
    graph: &PyGraph,
    buckets: usize,
    period: usize,
    noise_std: f64,
    alpha: f64,
    slope: f64,
    seed: u64,
) -> PyResult<PyFlow> {
    let cfg = SynthConfig {
        buckets,
        period,
        noise_std,
        alpha,
        slope,
        seed,
        ..SynthConfig::default()
    };
    Ok(PyFlow {
        inner: generate_synthetic(&graph.inner, &cfg).map_err(err)?,
    })
}

#[pyfunction]
fn rmse(pred: Vec<Vec<f64>>, target: Vec<Vec<f64>>) -> PyResult<f64> {
    fastgcrnn::evalbench::rmse(&to_matrix(pred)?, &to_matrix(target)?).map_err(err)
}

/// Same-phase historical average for the `d_out` buckets after `history`.
#[pyfunction]
fn historical_average(
    history: Vec<Vec<f64>>,
    period: usize,
    d_out: usize,
) -> PyResult<Vec<Vec<f64>>> {
    Ok(ha_forecast(&to_matrix(history)?, period, d_out)
        .map_err(err)?
        .to_rows())
}

#[pyfunction]
#[pyo3(signature = (time, begin, interval = "5m"))]
fn bucketize(time: &str, begin: &str, interval: &str) -> PyResult<usize> {
    let t = parse_time(time).map_err(err)?;
    let b = parse_time(begin).map_err(err)?;
    fastgcrnn::ingest::bucketize(&t, &b, self::interval(interval)?).map_err(err)
}

/// Encoder-decoder forecaster bound to one graph.
#[pyclass(name = "Model")]
struct PyModel {
    ckpt: Checkpoint,
    na: NormAdj,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (graph, d_in = 12, d_out = 12, hidden = 64, spatial_hidden = 16, spatial_out = 16, seed = 0))]
    fn new(
        graph: &PyGraph,
        d_in: usize,
        d_out: usize,
        hidden: usize,
        spatial_hidden: usize,
        spatial_out: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            d_in,
            d_out,
            hidden,
            spatial_hidden,
            spatial_out,
            ..ModelConfig::default()
        };
        let g = &graph.inner;
        let model = FastGcrnnModel::init(
            config,
            SamplerDist::uniform(g.n()),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .map_err(err)?;
        Ok(Self {
            ckpt: Checkpoint {
                model,
                scaler: fastgcrnn::ingest::Scaler::identity(g.n()),
                road_ids: g.node_ids().to_vec(),
                train: None,
            },
            na: normalize_adjacency(g),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, graph: &PyGraph) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(err)?;
        if ckpt.road_ids != graph.inner.node_ids() {
            return Err(PyValueError::new_err(
                "checkpoint roads differ from the graph's roads",
            ));
        }
        Ok(Self {
            ckpt,
            na: normalize_adjacency(&graph.inner),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.ckpt.model.num_parameters()
    }

    /// Trains on a flow matrix with the graph's road order; returns one dict per epoch.
    #[pyo3(signature = (
        flow, epochs = 10, learning_rate = 1e-3, batch_size = 16, teacher_forcing = 0.5,
        t_per_layer = vec![5, 5], sampler = "importance", draw_scope = "step", stride = 1, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        flow: &PyFlow,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        teacher_forcing: f64,
        t_per_layer: Vec<usize>,
        sampler: &str,
        draw_scope: &str,
        stride: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let fm = flow.inner.reordered(&self.ckpt.road_ids).map_err(err)?;
        let mc = &self.ckpt.model.config;
        let spec = WindowSpec {
            d_in: mc.d_in,
            d_out: mc.d_out,
            stride,
            normalize: true,
        };
        let data = prepare_dataset(fm.values(), spec).map_err(err)?;
        let cfg = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            teacher_forcing,
            t_per_layer,
            sampler: sampler.parse::<SamplerMode>().map_err(err)?,
            draw_scope: draw_scope.parse::<DrawScope>().map_err(err)?,
            seed,
            ..TrainConfig::default()
        };
        let history =
            fastgcrnn::model::train(&mut self.ckpt.model, &self.na, &data, &cfg).map_err(err)?;
        self.ckpt.scaler = data.scaler;
        self.ckpt.train = Some(cfg);
        history
            .epochs
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("epoch", e.epoch)?;
                d.set_item("train_loss", e.train_loss)?;
                d.set_item("val_rmse", e.val_rmse)?;
                Ok(d)
            })
            .collect()
    }

    /// Forecast in raw counts from an `n × d_in` window of raw counts.
    #[pyo3(signature = (window, sampled = false, seed = 0))]
    fn predict(&self, window: Vec<Vec<f64>>, sampled: bool, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let x = self
            .ckpt
            .scaler
            .transform(&to_matrix(window)?)
            .map_err(err)?;
        let m = &self.ckpt.model;
        let pred = if sampled {
            m.predict_sampled(&self.na, &x, &mut ChaCha8Rng::seed_from_u64(seed))
        } else {
            m.predict(&self.na, &x)
        }
        .map_err(err)?;
        Ok(self.ckpt.scaler.inverse(&pred).map_err(err)?.to_rows())
    }
}

#[pymodule]
fn fastgcrnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyFlow>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(historical_average, m)?)?;
    m.add_function(wrap_pyfunction!(bucketize, m)?)?;
    Ok(())
}
