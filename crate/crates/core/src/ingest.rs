//! From pre-mapped GPS records to per-road flow time series and supervised
//! forecast windows.
//!
//! Records are `road_id,car_id,time` rows. Each car contributes at most one
//! count per (road, time bucket); buckets nobody visited stay at zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

pub fn parse_time(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIME_FORMAT)
        .map_err(|e| Error::Input(format!("bad timestamp '{s}': {e}")))
}

pub fn format_time(t: &NaiveDateTime) -> String {
    t.format(TIME_FORMAT).to_string()
}

/// Bucket width in whole seconds. Parses `5m`, `30m`, `300s`, `1h` or a bare
/// number of seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Interval(u64);

impl Interval {
    pub const FIVE_MINUTES: Interval = Interval(300);
    pub const THIRTY_MINUTES: Interval = Interval(1800);

    pub fn from_secs(secs: u64) -> Result<Self> {
        if secs == 0 {
            return Err(Error::Input("interval must be positive".into()));
        }
        Ok(Interval(secs))
    }

    pub fn secs(self) -> u64 {
        self.0
    }
}

impl Default for Interval {
    fn default() -> Self {
        Interval::FIVE_MINUTES
    }
}

impl FromStr for Interval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (digits, mult) = match s.char_indices().last() {
            Some((i, 's')) => (&s[..i], 1),
            Some((i, 'm')) => (&s[..i], 60),
            Some((i, 'h')) => (&s[..i], 3600),
            _ => (s, 1),
        };
        let v: u64 = digits
            .parse()
            .map_err(|_| Error::Input(format!("bad interval '{s}' (try 5m or 30m)")))?;
        Interval::from_secs(v * mult)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(3600) {
            write!(f, "{}h", self.0 / 3600)
        } else if self.0.is_multiple_of(60) {
            write!(f, "{}m", self.0 / 60)
        } else {
            write!(f, "{}s", self.0)
        }
    }
}

impl TryFrom<String> for Interval {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Interval> for String {
    fn from(i: Interval) -> String {
        i.to_string()
    }
}

/// `floor((t − begin) / interval)`.
pub fn bucketize(t: &NaiveDateTime, begin: &NaiveDateTime, interval: Interval) -> Result<usize> {
    let delta = (*t - *begin).num_seconds();
    if delta < 0 {
        return Err(Error::OutOfRange {
            what: "timestamp",
            detail: format!(
                "{} precedes begin time {}",
                format_time(t),
                format_time(begin)
            ),
        });
    }
    Ok((delta as u64 / interval.secs()) as usize)
}

/// Buckets needed to cover `[begin, end)`: `ceil(span / interval)`.
pub fn bucket_count(begin: &NaiveDateTime, end: &NaiveDateTime, interval: Interval) -> usize {
    let span = (*end - *begin).num_seconds().max(0) as u64;
    span.div_ceil(interval.secs()) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GpsRecord {
    pub road_id: String,
    pub car_id: String,
    pub time: NaiveDateTime,
}

impl GpsRecord {
    pub fn new(road_id: &str, car_id: &str, time: &str) -> Result<Self> {
        if road_id.trim().is_empty() || car_id.trim().is_empty() {
            return Err(Error::Input("road_id and car_id must be nonempty".into()));
        }
        Ok(Self {
            road_id: road_id.trim().to_string(),
            car_id: car_id.trim().to_string(),
            time: parse_time(time)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseSummary {
    pub lines_read: usize,
    pub malformed: usize,
}

/// Reads `road_id,car_id,time` CSV. Malformed rows are skipped and counted.
pub fn parse_gps_records<R: Read>(reader: R) -> Result<(Vec<GpsRecord>, ParseSummary)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Input(format!("cannot read record header: {e}")))?
        .clone();
    let expected = ["road_id", "car_id", "time"];
    if header.len() != 3 || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Input(format!(
            "record header must be 'road_id,car_id,time', got '{}'",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    let mut summary = ParseSummary::default();
    for row in rdr.records() {
        summary.lines_read += 1;
        let parsed = row
            .ok()
            .filter(|r| r.len() == 3)
            .and_then(|r| GpsRecord::new(&r[0], &r[1], &r[2]).ok());
        match parsed {
            Some(rec) => out.push(rec),
            None => summary.malformed += 1,
        }
    }
    Ok((out, summary))
}

pub fn read_gps_records(path: &Path) -> Result<(Vec<GpsRecord>, ParseSummary)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_gps_records(f)
}

/// Per-road vehicle counts, `n × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    road_ids: Vec<String>,
    road_index: HashMap<String, usize>,
    values: Matrix,
    begin: NaiveDateTime,
    interval: Interval,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub records: usize,
    pub unknown_road: usize,
    pub before_begin: usize,
    pub out_of_horizon: usize,
    pub duplicates: usize,
    pub counted: usize,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "records={} counted={} duplicates={} unknown_road={} before_begin={} out_of_horizon={}",
            self.records,
            self.counted,
            self.duplicates,
            self.unknown_road,
            self.before_begin,
            self.out_of_horizon
        )
    }
}

impl FlowMatrix {
    pub fn new(
        road_ids: Vec<String>,
        values: Matrix,
        begin: NaiveDateTime,
        interval: Interval,
    ) -> Result<Self> {
        if values.rows() != road_ids.len() {
            return Err(Error::shape(
                "FlowMatrix::new",
                values.shape(),
                (road_ids.len(), values.cols()),
            ));
        }
        if values.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("flow counts must be finite and >= 0".into()));
        }
        let mut road_index = HashMap::with_capacity(road_ids.len());
        for (i, id) in road_ids.iter().enumerate() {
            if road_index.insert(id.clone(), i).is_some() {
                return Err(Error::Input(format!(
                    "duplicate road_id '{id}' in flow matrix"
                )));
            }
        }
        Ok(Self {
            road_ids,
            road_index,
            values,
            begin,
            interval,
        })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn t(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn road_ids(&self) -> &[String] {
        &self.road_ids
    }

    pub fn row_of(&self, road_id: &str) -> Option<usize> {
        self.road_index.get(road_id).copied()
    }

    pub fn begin(&self) -> NaiveDateTime {
        self.begin
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// First line `#begin=<ts> interval_s=<secs>`, then `road_id,c0,c1,...`.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!(
            "#begin={} interval_s={}\n",
            format_time(&self.begin),
            self.interval.secs()
        );
        for (i, id) in self.road_ids.iter().enumerate() {
            out.push_str(id);
            for &v in self.values.row(i) {
                let _ = write!(out, ",{}", v.round() as i64);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, meta) = lines.next().ok_or((1, "empty flow file".to_string()))?;
        let meta = meta
            .trim()
            .strip_prefix("#begin=")
            .ok_or((1, "missing '#begin=' metadata line".to_string()))?;
        let (ts, secs) = meta
            .split_once(" interval_s=")
            .ok_or((1, "missing 'interval_s=' in metadata".to_string()))?;
        let begin = parse_time(ts).map_err(|e| (1, e.to_string()))?;
        let interval = secs
            .trim()
            .parse::<u64>()
            .map_err(|e| e.to_string())
            .and_then(|s| Interval::from_secs(s).map_err(|e| e.to_string()))
            .map_err(|e| (1, e))?;
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in lines {
            let mut parts = line.split(',');
            let id = parts.next().unwrap_or("").trim();
            if id.is_empty() {
                return Err((i + 1, "row without road_id".into()));
            }
            let row: std::result::Result<Vec<f64>, _> = parts
                .map(|p| p.trim().parse::<u64>().map(|v| v as f64))
                .collect();
            let row = row.map_err(|e| (i + 1, format!("bad count: {e}")))?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err((
                        i + 1,
                        format!("row has {} buckets, expected {}", row.len(), first.len()),
                    ));
                }
            }
            ids.push(id.to_string());
            rows.push(row);
        }
        let values = Matrix::from_rows(&rows).map_err(|e| (0, e.to_string()))?;
        FlowMatrix::new(ids, values, begin, interval).map_err(|e| (0, e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|(line, msg)| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })
    }

    /// Same road order as `order`; every listed road must be present.
    pub fn reordered(&self, order: &[String]) -> Result<Self> {
        let mut data = Vec::with_capacity(order.len() * self.t());
        for id in order {
            let r = self
                .row_of(id)
                .ok_or_else(|| Error::Input(format!("road '{id}' missing from flow matrix")))?;
            data.extend_from_slice(self.values.row(r));
        }
        if order.len() != self.n() {
            return Err(Error::Input(format!(
                "graph has {} roads but flow matrix has {}",
                order.len(),
                self.n()
            )));
        }
        FlowMatrix::new(
            order.to_vec(),
            Matrix::new(order.len(), self.t(), data)?,
            self.begin,
            self.interval,
        )
    }
}

/// Groups records by car, drops repeated (road, bucket) pairs within a car,
/// and counts the survivors per road and bucket. Rows follow `roads`.
pub fn build_flow_matrix<I>(
    records: I,
    roads: &[String],
    begin: NaiveDateTime,
    interval: Interval,
    buckets: usize,
) -> Result<(FlowMatrix, IngestSummary)>
where
    I: IntoIterator<Item = GpsRecord>,
{
    let index: HashMap<&str, usize> = roads
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let mut summary = IngestSummary::default();
    let mut by_car: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for rec in records {
        summary.records += 1;
        let Some(&road) = index.get(rec.road_id.as_str()) else {
            summary.unknown_road += 1;
            continue;
        };
        let bucket = match bucketize(&rec.time, &begin, interval) {
            Ok(b) => b,
            Err(_) => {
                summary.before_begin += 1;
                continue;
            }
        };
        if bucket >= buckets {
            summary.out_of_horizon += 1;
            continue;
        }
        by_car.entry(rec.car_id).or_default().push((bucket, road));
    }
    let mut values = Matrix::zeros(roads.len(), buckets);
    for visits in by_car.values_mut() {
        visits.sort_unstable();
        let before = visits.len();
        visits.dedup();
        summary.duplicates += before - visits.len();
        for &(bucket, road) in visits.iter() {
            values.set(road, bucket, values.get(road, bucket) + 1.0);
            summary.counted += 1;
        }
    }
    let fm = FlowMatrix::new(roads.to_vec(), values, begin, interval)?;
    Ok((fm, summary))
}

/// One supervised example: `x` holds buckets `[t0, t0+d_in)`, `y` the next `d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    pub x: Matrix,
    pub y: Matrix,
    pub t0: usize,
}

pub fn make_windows(
    fm: &FlowMatrix,
    d_in: usize,
    d_out: usize,
    stride: usize,
) -> Result<Vec<ForecastWindow>> {
    windows_from_series(fm.values(), d_in, d_out, stride)
}

pub fn windows_from_series(
    series: &Matrix,
    d_in: usize,
    d_out: usize,
    stride: usize,
) -> Result<Vec<ForecastWindow>> {
    if d_in == 0 || d_out == 0 || stride == 0 {
        return Err(Error::Input(format!(
            "d_in, d_out and stride must be >= 1 (got {d_in}, {d_out}, {stride})"
        )));
    }
    let t = series.cols();
    if d_in + d_out > t {
        return Err(Error::EmptyDataset(format!(
            "{t} buckets cannot hold a window of {d_in} inputs + {d_out} targets"
        )));
    }
    (0..=t - d_in - d_out)
        .step_by(stride)
        .map(|t0| {
            Ok(ForecastWindow {
                x: series.col_range(t0, t0 + d_in)?,
                y: series.col_range(t0 + d_in, t0 + d_in + d_out)?,
                t0,
            })
        })
        .collect()
}

/// Per-node z-score; std is floored at `1e-8`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Statistics over every column of each row.
    pub fn fit_series(series: &Matrix) -> Result<Self> {
        if series.cols() == 0 {
            return Err(Error::EmptyDataset(
                "cannot fit a scaler on zero buckets".into(),
            ));
        }
        let mut mean = Vec::with_capacity(series.rows());
        let mut std = Vec::with_capacity(series.rows());
        for r in 0..series.rows() {
            let (m, s) = mean_std(series.row(r).iter().copied());
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    /// Statistics over every input and target value of the windows.
    pub fn fit_windows(windows: &[ForecastWindow]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::EmptyDataset("no training windows to fit a scaler".into()))?;
        let n = first.x.rows();
        let mut mean = Vec::with_capacity(n);
        let mut std = Vec::with_capacity(n);
        for r in 0..n {
            let vals = windows
                .iter()
                .flat_map(|w| w.x.row(r).iter().chain(w.y.row(r)).copied());
            let (m, s) = mean_std(vals);
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| {
            (m.get(r, c) - self.mean[r]) / self.std[r]
        }))
    }

    pub fn inverse(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| {
            m.get(r, c) * self.std[r] + self.mean[r]
        }))
    }

    pub fn transform_window(&self, w: &ForecastWindow) -> Result<ForecastWindow> {
        Ok(ForecastWindow {
            x: self.transform(&w.x)?,
            y: self.transform(&w.y)?,
            t0: w.t0,
        })
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.rows() != self.n() {
            return Err(Error::shape("scaler", m.shape(), (self.n(), m.cols())));
        }
        Ok(())
    }
}

fn mean_std(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, count) = vals.clone().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    let mean = sum / count.max(1) as f64;
    let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count.max(1) as f64;
    (mean, var.sqrt().max(STD_FLOOR))
}

/// Chronological bucket ranges: first 70% train, next 10% validation, last 20% test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn chronological_split(t: usize) -> Split {
    let train_end = t * 7 / 10;
    let val_end = t * 8 / 10;
    Split {
        train: 0..train_end,
        val: train_end..val_end,
        test: val_end..t,
    }
}

/// Windows for every split, normalized with statistics of the training range.
#[derive(Debug, Clone)]
pub struct ForecastDataset {
    pub train: Vec<ForecastWindow>,
    pub val: Vec<ForecastWindow>,
    pub test: Vec<ForecastWindow>,
    /// Untransformed counterparts of `val` and `test`.
    pub val_raw: Vec<ForecastWindow>,
    pub test_raw: Vec<ForecastWindow>,
    pub scaler: Scaler,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub stride: usize,
    pub normalize: bool,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            d_in: 12,
            d_out: 12,
            stride: 1,
            normalize: true,
        }
    }
}

pub fn prepare_dataset(series: &Matrix, spec: WindowSpec) -> Result<ForecastDataset> {
    let split = chronological_split(series.cols());
    let slice = |r: &Range<usize>| series.col_range(r.start, r.end);
    let train_series = slice(&split.train)?;
    let scaler = if spec.normalize {
        Scaler::fit_series(&train_series)?
    } else {
        Scaler::identity(series.rows())
    };
    let train_raw = windows_from_series(&train_series, spec.d_in, spec.d_out, spec.stride)?;
    let windows_or_empty = |r: &Range<usize>| -> Result<Vec<ForecastWindow>> {
        let mut ws = match windows_from_series(&slice(r)?, spec.d_in, spec.d_out, spec.stride) {
            Ok(ws) => ws,
            Err(Error::EmptyDataset(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        for w in &mut ws {
            w.t0 += r.start;
        }
        Ok(ws)
    };
    let val_raw = windows_or_empty(&split.val)?;
    let test_raw = windows_or_empty(&split.test)?;
    let tf = |ws: &[ForecastWindow]| -> Result<Vec<ForecastWindow>> {
        ws.iter().map(|w| scaler.transform_window(w)).collect()
    };
    Ok(ForecastDataset {
        train: tf(&train_raw)?,
        val: tf(&val_raw)?,
        test: tf(&test_raw)?,
        val_raw,
        test_raw,
        scaler,
        split,
    })
}
