//! Multivariate time series containers, normalization and sliding windows.

mod csv_io;
pub mod synthetic;

pub use csv_io::{load_csv_dataset, read_labels, read_matrix_csv, read_root_causes, write_labels, write_matrix_csv, write_root_causes, CsvOptions};
pub use synthetic::{generate_synthetic, AnomalyKind, AnomalySegment, PlantedEdge, SyntheticConfig, SyntheticOutput};

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled contiguous anomaly range and the sensors responsible for it.
/// `start` and `end` are 0-based and inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseSegment {
    pub start: usize,
    pub end: usize,
    pub sensors: Vec<usize>,
}

/// Observations of `N` sensors over `T` timestamps, each an `m`-vector.
///
/// Values are stored time-major as a `T×N×m` array so that a window is a
/// contiguous slab.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesMatrix {
    values: Array3<f64>,
    sensor_names: Vec<String>,
    anomaly_labels: Option<Vec<u8>>,
    root_cause_labels: Option<Vec<RootCauseSegment>>,
}

impl TimeSeriesMatrix {
    pub fn new(values: Array3<f64>, sensor_names: Vec<String>) -> Result<Self> {
        let (t, n, m) = values.dim();
        if t == 0 || n == 0 || m == 0 {
            return Err(Error::Schema(format!("empty series: T={t}, N={n}, m={m}")));
        }
        if sensor_names.len() != n {
            return Err(Error::Schema(format!(
                "{} sensor names for {n} sensors",
                sensor_names.len()
            )));
        }
        if let Some(((ti, ni, _), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Parse {
                row: ti,
                column: ni,
                message: format!("non-finite value {v}"),
            });
        }
        Ok(Self {
            values,
            sensor_names,
            anomaly_labels: None,
            root_cause_labels: None,
        })
    }

    /// Scalar-per-sensor series from a `T×N` matrix with default sensor names.
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        let (t, n) = rows.dim();
        let names = default_sensor_names(n);
        let values = rows
            .into_shape_with_order((t, n, 1))
            .map_err(|e| Error::Schema(e.to_string()))?;
        Self::new(values, names)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Label(format!(
                "expected {} labels, got {}",
                self.len(),
                labels.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Label(format!("label at row {pos} is not 0 or 1")));
        }
        self.anomaly_labels = Some(labels);
        Ok(self)
    }

    pub fn with_root_causes(mut self, segments: Vec<RootCauseSegment>) -> Result<Self> {
        for seg in &segments {
            if seg.start > seg.end || seg.end >= self.len() {
                return Err(Error::Label(format!(
                    "root-cause range {}-{} outside 0..{}",
                    seg.start,
                    seg.end,
                    self.len()
                )));
            }
            if let Some(&bad) = seg.sensors.iter().find(|&&s| s >= self.n_sensors()) {
                return Err(Error::Label(format!(
                    "root-cause sensor {bad} outside 0..{}",
                    self.n_sensors()
                )));
            }
        }
        self.root_cause_labels = Some(segments);
        Ok(self)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    /// Number of timestamps `T`.
    pub fn len(&self) -> usize {
        self.values.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_sensors(&self) -> usize {
        self.values.dim().1
    }

    /// Per-sensor dimension `m`.
    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn sensor_names(&self) -> &[String] {
        &self.sensor_names
    }

    pub fn anomaly_labels(&self) -> Option<&[u8]> {
        self.anomaly_labels.as_deref()
    }

    pub fn root_cause_labels(&self) -> Option<&[RootCauseSegment]> {
        self.root_cause_labels.as_deref()
    }

    /// The `N×m` observation at timestamp `t`.
    pub fn row(&self, t: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), t)
    }

    /// Timestamps `[start, end)` as a new matrix. Labels are sliced along.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InsufficientData(format!(
                "time slice {start}..{end} of a length-{} series",
                self.len()
            )));
        }
        let mut out = Self::new(
            self.values.slice(s![start..end, .., ..]).to_owned(),
            self.sensor_names.clone(),
        )?;
        if let Some(labels) = &self.anomaly_labels {
            out.anomaly_labels = Some(labels[start..end].to_vec());
        }
        if let Some(segs) = &self.root_cause_labels {
            out.root_cause_labels = Some(
                segs.iter()
                    .filter(|s| s.end >= start && s.start < end)
                    .map(|s| RootCauseSegment {
                        start: s.start.max(start) - start,
                        end: s.end.min(end - 1) - start,
                        sensors: s.sensors.clone(),
                    })
                    .collect(),
            );
        }
        Ok(out)
    }
}

pub fn default_sensor_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    MinMax,
    ZScore,
}

impl std::str::FromStr for NormMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minmax" => Ok(NormMethod::MinMax),
            "zscore" => Ok(NormMethod::ZScore),
            other => Err(Error::Config(format!("unknown normalization method {other:?}"))),
        }
    }
}

/// Per-channel statistics fitted on the training split.
///
/// For `MinMax`, `loc` is the minimum and `spread` is `max - min`; for
/// `ZScore`, `loc` is the mean and `spread` the standard deviation. Both are
/// `N×m`. A zero spread marks a constant channel, which maps to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerParams {
    pub method: NormMethod,
    pub loc: Array2<f64>,
    pub spread: Array2<f64>,
}

impl NormalizerParams {
    pub fn fit(x: &TimeSeriesMatrix, method: NormMethod) -> Self {
        let v = x.values();
        let (_, n, m) = v.dim();
        let mut loc = Array2::zeros((n, m));
        let mut spread = Array2::zeros((n, m));
        for i in 0..n {
            for k in 0..m {
                let col = v.slice(s![.., i, k]);
                match method {
                    NormMethod::MinMax => {
                        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        loc[[i, k]] = lo;
                        spread[[i, k]] = hi - lo;
                    }
                    NormMethod::ZScore => {
                        let mean = col.mean().unwrap_or(0.0);
                        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
                        loc[[i, k]] = mean;
                        spread[[i, k]] = var.sqrt();
                    }
                }
            }
        }
        Self { method, loc, spread }
    }

    pub fn apply(&self, x: &TimeSeriesMatrix) -> Result<TimeSeriesMatrix> {
        let (_, n, m) = x.values().dim();
        if self.loc.dim() != (n, m) {
            return Err(Error::Schema(format!(
                "normalizer fitted for {:?} channels, series has ({n}, {m})",
                self.loc.dim()
            )));
        }
        let mut out = x.clone();
        for mut row in out.values_mut().outer_iter_mut() {
            for i in 0..n {
                for k in 0..m {
                    let sp = self.spread[[i, k]];
                    row[[i, k]] = if sp > 0.0 { (row[[i, k]] - self.loc[[i, k]]) / sp } else { 0.0 };
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub source: Option<String>,
    pub normalization: Option<NormalizerParams>,
}

/// Unlabeled training split plus labeled test split over the same sensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: TimeSeriesMatrix,
    pub test: TimeSeriesMatrix,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(train: TimeSeriesMatrix, test: TimeSeriesMatrix, meta: DatasetMeta) -> Result<Self> {
        if train.n_sensors() != test.n_sensors() || train.dim() != test.dim() {
            return Err(Error::Schema(format!(
                "train has {}x{} channels, test has {}x{}",
                train.n_sensors(),
                train.dim(),
                test.n_sensors(),
                test.dim()
            )));
        }
        if train.sensor_names() != test.sensor_names() {
            return Err(Error::Schema("train and test sensor names differ".into()));
        }
        if train.anomaly_labels().is_some() {
            return Err(Error::Label("training split must not carry anomaly labels".into()));
        }
        Ok(Self { train, test, meta })
    }

    pub fn n_sensors(&self) -> usize {
        self.train.n_sensors()
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Fit normalization on the training split and apply it to both splits.
pub fn normalize(ds: &Dataset, method: NormMethod) -> Result<(Dataset, NormalizerParams)> {
    let params = NormalizerParams::fit(&ds.train, method);
    let train = params.apply(&ds.train)?;
    let test = params.apply(&ds.test)?;
    let mut meta = ds.meta.clone();
    meta.normalization = Some(params.clone());
    Ok((Dataset { train, test, meta }, params))
}

/// The `ω` observations preceding timestamp `t` (oldest first) and the
/// observation at `t` itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    /// `ω×N×m`
    pub history: Array3<f64>,
    /// `N×m`
    pub target: Array2<f64>,
    pub t: usize,
}

impl SampleWindow {
    pub fn at(x: &TimeSeriesMatrix, t: usize, width: usize) -> Result<Self> {
        if width < 2 {
            return Err(Error::DegenerateWindow(format!("window width {width} < 2")));
        }
        if t < width || t >= x.len() {
            return Err(Error::InsufficientData(format!(
                "no window of width {width} ends before t={t} in a length-{} series",
                x.len()
            )));
        }
        Ok(Self {
            history: x.values().slice(s![t - width..t, .., ..]).to_owned(),
            target: x.row(t).to_owned(),
            t,
        })
    }

    pub fn width(&self) -> usize {
        self.history.dim().0
    }

    pub fn n_sensors(&self) -> usize {
        self.history.dim().1
    }

    pub fn dim(&self) -> usize {
        self.history.dim().2
    }

    /// `N×(ω·m)`: row `i` is sensor `i`'s history flattened oldest first.
    pub fn per_sensor(&self) -> Array2<f64> {
        let (w, n, m) = self.history.dim();
        Array2::from_shape_fn((n, w * m), |(i, c)| self.history[[c / m, i, c % m]])
    }

    /// `ω×(N·m)`: row `p` is the full snapshot at window position `p`.
    pub fn per_step(&self) -> Array2<f64> {
        let (w, n, m) = self.history.dim();
        Array2::from_shape_fn((w, n * m), |(p, c)| self.history[[p, c / m, c % m]])
    }

    /// `(N·ω)×m`: every cause candidate, row `j·ω + p` is sensor `j` at
    /// window position `p`.
    pub fn candidates(&self) -> Array2<f64> {
        let (w, n, m) = self.history.dim();
        Array2::from_shape_fn((n * w, m), |(r, k)| self.history[[r % w, r / w, k]])
    }
}

/// All windows of width `ω` over `x`, for `t = ω … T−1`.
pub fn make_windows(x: &TimeSeriesMatrix, width: usize) -> Result<Vec<SampleWindow>> {
    if width < 2 {
        return Err(Error::DegenerateWindow(format!("window width {width} < 2")));
    }
    if x.len() <= width {
        return Err(Error::InsufficientData(format!(
            "series of length {} has no window of width {width}",
            x.len()
        )));
    }
    (width..x.len()).map(|t| SampleWindow::at(x, t, width)).collect()
}
