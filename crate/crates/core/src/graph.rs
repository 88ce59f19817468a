//! Road-dual graphs: roads become nodes, shared intersections become edges.
//!
//! Also home to the symmetric normalization `D̃^(-1/2) (A + I) D̃^(-1/2)`, the
//! node-sampling distributions used by the sampled convolution, and degree
//! statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Default endpoint snapping tolerance, in coordinate units.
pub const DEFAULT_SNAP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub road_id: String,
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl RoadSegment {
    pub fn new(road_id: impl Into<String>, a: (f64, f64), b: (f64, f64)) -> Self {
        Self {
            road_id: road_id.into(),
            a,
            b,
        }
    }
}

/// Either road geometry or an explicit road-to-road adjacency list.
#[derive(Debug, Clone)]
pub enum RoadInput {
    Segments {
        segments: Vec<RoadSegment>,
        tolerance: f64,
    },
    Edges {
        node_ids: Vec<String>,
        edges: Vec<(String, String)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Matrix,
}

pub fn build_road_graph(input: RoadInput) -> Result<RoadGraph> {
    match input {
        RoadInput::Segments {
            segments,
            tolerance,
        } => RoadGraph::from_segments(&segments, tolerance),
        RoadInput::Edges { node_ids, edges } => RoadGraph::from_edges(node_ids, &edges),
    }
}

impl RoadGraph {
    /// Builds from index pairs; `{i, j}` and `{j, i}` are the same edge.
    pub fn from_index_edges(node_ids: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let n = node_ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, id) in node_ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::Input(format!("node {i} has an empty road_id")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate road_id '{id}'")));
            }
        }
        let mut edges = BTreeSet::new();
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::OutOfRange {
                    what: "node index",
                    detail: format!("edge ({a}, {b}) in a graph of {n} nodes"),
                });
            }
            if a == b {
                return Err(Error::Input(format!("self edge on road '{}'", node_ids[a])));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = Matrix::zeros(n, n);
        for &(a, b) in &edges {
            adjacency.set(a, b, 1.0);
            adjacency.set(b, a, 1.0);
        }
        Ok(Self {
            node_ids,
            index,
            edges,
            adjacency,
        })
    }

    pub fn from_edges(node_ids: Vec<String>, edges: &[(String, String)]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = node_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut pairs = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let ia = *lookup
                .get(a.as_str())
                .ok_or_else(|| Error::Input(format!("edge references unknown road_id '{a}'")))?;
            let ib = *lookup
                .get(b.as_str())
                .ok_or_else(|| Error::Input(format!("edge references unknown road_id '{b}'")))?;
            pairs.push((ia, ib));
        }
        Self::from_index_edges(node_ids, &pairs)
    }

    /// Two roads are adjacent when any endpoint of one lies within
    /// `tolerance` of an endpoint of the other. Nodes are ordered by road_id.
    pub fn from_segments(segments: &[RoadSegment], tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0) {
            return Err(Error::Input(format!(
                "snapping tolerance must be >= 0, got {tolerance}"
            )));
        }
        let mut sorted: Vec<&RoadSegment> = segments.iter().collect();
        sorted.sort_by(|x, y| x.road_id.cmp(&y.road_id));
        for s in &sorted {
            let coords = [s.a.0, s.a.1, s.b.0, s.b.1];
            if coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::Input(format!(
                    "road '{}' has a non-finite coordinate",
                    s.road_id
                )));
            }
        }
        let close = |p: (f64, f64), q: (f64, f64)| {
            let (dx, dy) = (p.0 - q.0, p.1 - q.1);
            (dx * dx + dy * dy).sqrt() <= tolerance
        };
        let mut pairs = Vec::new();
        for i in 0..sorted.len() {
            for j in i + 1..sorted.len() {
                let (s, t) = (sorted[i], sorted[j]);
                let touches = [s.a, s.b].iter().any(|&p| close(p, t.a) || close(p, t.b));
                if touches {
                    pairs.push((i, j));
                }
            }
        }
        let ids = sorted.iter().map(|s| s.road_id.clone()).collect();
        Self::from_index_edges(ids, &pairs)
    }

    /// A ring backbone plus random chords, giving mean degree close to
    /// `avg_degree` (at least 2). Node ids are `"0"`, `"1"`, ...
    pub fn random_connected<R: Rng + ?Sized>(n: usize, avg_degree: f64, rng: &mut R) -> Self {
        let ids = (0..n).map(|i| i.to_string()).collect();
        let mut edges = BTreeSet::new();
        if n >= 3 {
            for i in 0..n {
                let j = (i + 1) % n;
                edges.insert((i.min(j), i.max(j)));
            }
        } else if n == 2 {
            edges.insert((0, 1));
        }
        let max_edges = n * n.saturating_sub(1) / 2;
        let target = ((n as f64 * avg_degree / 2.0).round() as usize).min(max_edges);
        while edges.len() < target {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let pairs: Vec<_> = edges.into_iter().collect();
        Self::from_index_edges(ids, &pairs).expect("generated edges are in range")
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn index_of(&self, road_id: &str) -> Option<usize> {
        self.index.get(road_id).copied()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.row(i).iter().filter(|&&v| v != 0.0).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n()];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&j| self.adjacency.get(i, j) != 0.0)
            .collect()
    }

    /// Manifest lines `#node <road_id>` followed by one `a,b` line per edge.
    pub fn to_graph_text(&self) -> String {
        let mut out = String::new();
        for id in &self.node_ids {
            let _ = writeln!(out, "#node {id}");
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{},{}", self.node_ids[a], self.node_ids[b]);
        }
        out
    }

    pub fn read_graph_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_graph_text(&text).map_err(|(line, msg)| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })
    }

    /// Parses the edge-list format. Edge endpoints missing from the manifest
    /// are appended as nodes in first-seen order.
    pub fn parse_graph_text(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut ids: Vec<String> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#node") {
                let id = rest.trim();
                if id.is_empty() {
                    return Err((lineno, "node line without road_id".into()));
                }
                if seen.insert(id.to_string(), ids.len()).is_some() {
                    return Err((lineno, format!("duplicate road_id '{id}'")));
                }
                ids.push(id.to_string());
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (a, b) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => (a, b),
                _ => return Err((lineno, format!("expected 'road_a,road_b', got '{line}'"))),
            };
            let mut idx = |id: &str| {
                *seen.entry(id.to_string()).or_insert_with(|| {
                    ids.push(id.to_string());
                    ids.len() - 1
                })
            };
            let (ia, ib) = (idx(a), idx(b));
            if ia == ib {
                return Err((lineno, format!("self edge on road '{a}'")));
            }
            pairs.push((ia, ib));
        }
        Self::from_index_edges(ids, &pairs).map_err(|e| (0, e.to_string()))
    }
}

/// `Â = D̃^(-1/2) (A + I) D̃^(-1/2)` with `D̃ᵢ = 1 + deg(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    a_hat: Matrix,
}

impl NormAdj {
    pub fn n(&self) -> usize {
        self.a_hat.rows()
    }

    pub fn a_hat(&self) -> &Matrix {
        &self.a_hat
    }

    /// Wraps a precomputed square propagation matrix.
    pub fn from_matrix(a_hat: Matrix) -> Result<Self> {
        if a_hat.rows() != a_hat.cols() {
            return Err(Error::shape(
                "NormAdj::from_matrix",
                a_hat.shape(),
                a_hat.shape(),
            ));
        }
        Ok(Self { a_hat })
    }
}

pub fn normalize_adjacency(g: &RoadGraph) -> NormAdj {
    let n = g.n();
    let d: Vec<f64> = g.degrees().iter().map(|&d| (d + 1) as f64).collect();
    let mut a_hat = Matrix::zeros(n, n);
    for i in 0..n {
        a_hat.set(i, i, 1.0 / d[i]);
    }
    for &(a, b) in g.edges() {
        let w = 1.0 / (d[a] * d[b]).sqrt();
        a_hat.set(a, b, w);
        a_hat.set(b, a, w);
    }
    NormAdj { a_hat }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Uniform,
    Importance,
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(SamplerMode::Uniform),
            "importance" => Ok(SamplerMode::Importance),
            other => Err(Error::Input(format!(
                "unknown sampler mode '{other}' (expected uniform|importance)"
            ))),
        }
    }
}

impl std::fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerMode::Uniform => "uniform",
            SamplerMode::Importance => "importance",
        })
    }
}

/// Node sampling probabilities plus per-layer sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerDist {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    mode: SamplerMode,
    t_per_layer: Vec<usize>,
}

pub const DEFAULT_SAMPLES_PER_LAYER: [usize; 2] = [5, 5];

impl SamplerDist {
    pub fn new(probs: Vec<f64>, mode: SamplerMode, t_per_layer: Vec<usize>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Input("sampling distribution over zero nodes".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Input(
                "sampling probabilities must be finite and >= 0".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!(
                "sampling probabilities sum to {total}, not 1"
            )));
        }
        check_samples(&t_per_layer)?;
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            probs,
            cdf,
            mode,
            t_per_layer,
        })
    }

    pub fn uniform(n: usize) -> Self {
        let p = 1.0 / n.max(1) as f64;
        let mut probs = vec![p; n.max(1)];
        // keep the sum within tolerance for awkward n
        let drift: f64 = 1.0 - probs.iter().sum::<f64>();
        probs[0] += drift;
        Self::new(
            probs,
            SamplerMode::Uniform,
            DEFAULT_SAMPLES_PER_LAYER.to_vec(),
        )
        .expect("uniform distribution is valid")
    }

    pub fn for_mode(mode: SamplerMode, na: &NormAdj) -> Self {
        match mode {
            SamplerMode::Uniform => Self::uniform(na.n()),
            SamplerMode::Importance => importance_distribution(na),
        }
    }

    pub fn with_samples(mut self, t_per_layer: Vec<usize>) -> Result<Self> {
        check_samples(&t_per_layer)?;
        self.t_per_layer = t_per_layer;
        Ok(self)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, u: usize) -> f64 {
        self.probs[u]
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn t_per_layer(&self) -> &[usize] {
        &self.t_per_layer
    }

    /// Sample count for `layer`; the last entry repeats for deeper layers.
    pub fn samples_for(&self, layer: usize) -> usize {
        self.t_per_layer
            .get(layer)
            .or(self.t_per_layer.last())
            .copied()
            .unwrap_or(1)
    }

    /// `t` i.i.d. node indices, drawn with replacement.
    pub fn draw<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Vec<usize> {
        let last = self.probs.len() - 1;
        (0..t)
            .map(|_| {
                let u: f64 = rng.random();
                self.cdf.partition_point(|&c| c <= u).min(last)
            })
            .collect()
    }
}

fn check_samples(t_per_layer: &[usize]) -> Result<()> {
    if t_per_layer.is_empty() || t_per_layer.contains(&0) {
        return Err(Error::Input(format!(
            "every layer needs at least one sample, got {t_per_layer:?}"
        )));
    }
    Ok(())
}

/// `q(u) ∝ ‖Â[:, u]‖²`, the variance-minimizing layer-wise distribution.
pub fn importance_distribution(na: &NormAdj) -> SamplerDist {
    let a = na.a_hat();
    let n = na.n();
    let mut norms = vec![0.0; n];
    for r in 0..n {
        for (acc, v) in norms.iter_mut().zip(a.row(r)) {
            *acc += v * v;
        }
    }
    let total: f64 = norms.iter().sum();
    let probs: Vec<f64> = norms.iter().map(|v| v / total).collect();
    let mut dist = SamplerDist::new(
        probs.clone(),
        SamplerMode::Importance,
        DEFAULT_SAMPLES_PER_LAYER.to_vec(),
    );
    if dist.is_err() {
        // renormalize once more when rounding pushed the sum past tolerance
        let s: f64 = probs.iter().sum();
        dist = SamplerDist::new(
            probs.iter().map(|p| p / s).collect(),
            SamplerMode::Importance,
            DEFAULT_SAMPLES_PER_LAYER.to_vec(),
        );
    }
    dist.expect("column norms are positive")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeHistogram {
    pub n: usize,
    /// degree → node count
    pub counts: BTreeMap<usize, usize>,
    /// (degree, fraction of nodes with degree ≤ that value), ascending
    pub cumulative: Vec<(usize, f64)>,
}

impl DegreeHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree,count,cumulative_share\n");
        for ((d, c), (_, share)) in self.counts.iter().zip(&self.cumulative) {
            let _ = writeln!(out, "{d},{c},{share:.6}");
        }
        out
    }

    /// Fraction of nodes with degree strictly below `d`.
    pub fn share_below(&self, d: usize) -> f64 {
        let below: usize = self.counts.range(..d).map(|(_, c)| c).sum();
        below as f64 / self.n.max(1) as f64
    }
}

/// Degree counts on the raw adjacency (self-loops excluded).
pub fn degree_histogram(g: &RoadGraph) -> DegreeHistogram {
    let mut counts = BTreeMap::new();
    for d in g.degrees() {
        *counts.entry(d).or_insert(0) += 1;
    }
    let n = g.n();
    let mut running = 0;
    let cumulative = counts
        .iter()
        .map(|(&d, &c)| {
            running += c;
            (d, running as f64 / n.max(1) as f64)
        })
        .collect();
    DegreeHistogram {
        n,
        counts,
        cumulative,
    }
}
