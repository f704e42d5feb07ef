//! Seeded VAR generator with planted time-lagged edges and injected,
//! root-cause-labeled test anomalies.
//!
//! Each sensor follows `x_i(t) = Σ coef · x_j(t − lag) + noise` over its
//! incoming planted edges. Anomalies are applied to the observed test values
//! after simulation, so they do not propagate through the dynamics.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array3;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    default_sensor_names, write_labels, write_matrix_csv, write_root_causes, Dataset, DatasetMeta, RootCauseSegment,
    TimeSeriesMatrix,
};
use crate::error::{Error, Result};

const BURN_IN: usize = 200;
const MIN_GAP: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub cause: usize,
    pub effect: usize,
    pub lag: usize,
    pub coef: f64,
}

impl PlantedEdge {
    pub const fn new(cause: usize, effect: usize, lag: usize, coef: f64) -> Self {
        Self { cause, effect, lag, coef }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Burst of additive 5–10σ pulses.
    Spike,
    /// Sustained 3–6σ offset.
    LevelShift,
    /// A planted edge's driver is replaced by independent noise.
    CorrelationBreak,
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "spike" => Ok(Self::Spike),
            "level_shift" => Ok(Self::LevelShift),
            "correlation_break" => Ok(Self::CorrelationBreak),
            other => Err(Error::Config(format!("unknown anomaly kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_sensors: usize,
    pub t_train: usize,
    pub t_test: usize,
    pub dim: usize,
    pub planted_edges: Vec<PlantedEdge>,
    pub noise_std: f64,
    pub anomaly_rate: f64,
    pub anomaly_kinds: Vec<AnomalyKind>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// Eight sensors in two causal chains, each driven by an AR(1) root.
    fn default() -> Self {
        Self {
            n_sensors: 8,
            t_train: 4000,
            t_test: 2000,
            dim: 1,
            planted_edges: vec![
                PlantedEdge::new(0, 0, 1, 0.7),
                PlantedEdge::new(4, 4, 1, 0.7),
                PlantedEdge::new(0, 1, 1, 0.8),
                PlantedEdge::new(0, 2, 2, 0.8),
                PlantedEdge::new(1, 3, 1, 0.7),
                PlantedEdge::new(4, 5, 2, 0.8),
                PlantedEdge::new(5, 6, 1, 0.7),
                PlantedEdge::new(4, 7, 3, 0.8),
                PlantedEdge::new(2, 7, 1, 0.5),
            ],
            noise_std: 0.1,
            anomaly_rate: 0.05,
            anomaly_kinds: vec![AnomalyKind::Spike, AnomalyKind::LevelShift, AnomalyKind::CorrelationBreak],
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 || self.t_train == 0 || self.t_test == 0 || self.dim == 0 {
            return Err(Error::Config("N, T_train, T_test and m must be positive".into()));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::Config(format!("noise_std must be > 0, got {}", self.noise_std)));
        }
        if !(0.0..0.5).contains(&self.anomaly_rate) {
            return Err(Error::Config(format!("anomaly_rate must be in [0, 0.5), got {}", self.anomaly_rate)));
        }
        for e in &self.planted_edges {
            if e.cause >= self.n_sensors || e.effect >= self.n_sensors {
                return Err(Error::Config(format!("edge {e:?} references a sensor outside 0..{}", self.n_sensors)));
            }
            if e.lag == 0 {
                return Err(Error::Config(format!("edge {e:?} is instantaneous; lags must be >= 1")));
            }
        }
        if self.anomaly_rate > 0.0 && self.anomaly_kinds.is_empty() {
            return Err(Error::Config("anomaly_rate > 0 needs at least one anomaly kind".into()));
        }
        Ok(())
    }

    /// Cross-sensor edges only; self-lags are autoregression, not causation
    /// between sensors.
    pub fn causal_edges(&self) -> Vec<PlantedEdge> {
        self.planted_edges.iter().copied().filter(|e| e.cause != e.effect).collect()
    }

    fn max_lag(&self) -> usize {
        self.planted_edges.iter().map(|e| e.lag).max().unwrap_or(0)
    }

    /// Spectral radius of the VAR companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let n = self.n_sensors;
        let lags = self.max_lag();
        if lags == 0 {
            return 0.0;
        }
        let size = n * lags;
        let mut c = DMatrix::<f64>::zeros(size, size);
        for e in &self.planted_edges {
            c[(e.effect, (e.lag - 1) * n + e.cause)] += e.coef;
        }
        for r in n..size {
            c[(r, r - n)] = 1.0;
        }
        c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySegment {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub kind: AnomalyKind,
    pub sensors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOutput {
    pub dataset: Dataset,
    pub planted_edges: Vec<PlantedEdge>,
    pub segments: Vec<AnomalySegment>,
    pub config: SyntheticConfig,
}

#[derive(Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    pub planted_edges: Vec<PlantedEdge>,
    pub segments: Vec<AnomalySegment>,
}

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const LABEL_FILE: &str = "test_label.csv";
pub const ROOT_CAUSE_FILE: &str = "interpretation_label.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

impl SyntheticOutput {
    /// Write the CSV layout plus the JSON ground-truth sidecar into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix_csv(&dir.join(TRAIN_FILE), &self.dataset.train)?;
        write_matrix_csv(&dir.join(TEST_FILE), &self.dataset.test)?;
        if let Some(labels) = self.dataset.test.anomaly_labels() {
            write_labels(&dir.join(LABEL_FILE), labels)?;
        }
        write_root_causes(
            &dir.join(ROOT_CAUSE_FILE),
            self.dataset.test.root_cause_labels().unwrap_or(&[]),
        )?;
        let truth = GroundTruth {
            config: self.config.clone(),
            planted_edges: self.planted_edges.clone(),
            segments: self.segments.clone(),
        };
        let path = dir.join(GROUND_TRUTH_FILE);
        fs::write(&path, serde_json::to_string_pretty(&truth)?).map_err(|e| Error::io(&path, e))
    }
}

/// Simulate the planted process and inject labeled anomalies into the test
/// split. Deterministic for a fixed seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticOutput> {
    cfg.validate()?;
    let radius = cfg.spectral_radius();
    if radius >= 1.0 {
        return Err(Error::Unstable { spectral_radius: radius });
    }
    let (n, m) = (cfg.n_sensors, cfg.dim);
    let total = BURN_IN + cfg.t_train + cfg.t_test;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).expect("noise_std validated");

    let mut x = Array3::<f64>::zeros((total, n, m));
    for t in 0..total {
        for i in 0..n {
            for k in 0..m {
                x[[t, i, k]] = noise.sample(&mut rng);
            }
        }
        for e in &cfg.planted_edges {
            if t >= e.lag {
                for k in 0..m {
                    x[[t, e.effect, k]] += e.coef * x[[t - e.lag, e.cause, k]];
                }
            }
        }
    }

    let names = default_sensor_names(n);
    let train_vals = x.slice(ndarray::s![BURN_IN..BURN_IN + cfg.t_train, .., ..]).to_owned();
    let mut test_vals = x.slice(ndarray::s![BURN_IN + cfg.t_train.., .., ..]).to_owned();

    let (mean, std) = channel_stats(&train_vals);
    let segments = place_segments(cfg, &mut rng)?;
    let mut labels = vec![0u8; cfg.t_test];
    for seg in &segments {
        inject(seg, &mut test_vals, &mean, &std, cfg, &mut rng);
        labels[seg.start..=seg.end].iter_mut().for_each(|l| *l = 1);
    }

    let train = TimeSeriesMatrix::new(train_vals, names.clone())?;
    let rc = segments
        .iter()
        .map(|s| RootCauseSegment {
            start: s.start,
            end: s.end,
            sensors: s.sensors.clone(),
        })
        .collect();
    let test = TimeSeriesMatrix::new(test_vals, names)?
        .with_labels(labels)?
        .with_root_causes(rc)?;
    let meta = DatasetMeta {
        name: format!("synthetic-seed{}", cfg.seed),
        source: None,
        normalization: None,
    };
    Ok(SyntheticOutput {
        dataset: Dataset::new(train, test, meta)?,
        planted_edges: cfg.causal_edges(),
        segments,
        config: cfg.clone(),
    })
}

fn channel_stats(v: &Array3<f64>) -> (ndarray::Array2<f64>, ndarray::Array2<f64>) {
    let (t, n, m) = v.dim();
    let mut mean = ndarray::Array2::zeros((n, m));
    let mut std = ndarray::Array2::zeros((n, m));
    for i in 0..n {
        for k in 0..m {
            let col = v.slice(ndarray::s![.., i, k]);
            let mu = col.sum() / t as f64;
            let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / t as f64;
            mean[[i, k]] = mu;
            std[[i, k]] = var.sqrt().max(1e-12);
        }
    }
    (mean, std)
}

fn segment_length(kind: AnomalyKind, rng: &mut ChaCha8Rng) -> usize {
    match kind {
        AnomalyKind::Spike => rng.random_range(3..=8),
        AnomalyKind::LevelShift => rng.random_range(15..=40),
        AnomalyKind::CorrelationBreak => rng.random_range(20..=40),
    }
}

fn place_segments(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Vec<AnomalySegment>> {
    let target = (cfg.anomaly_rate * cfg.t_test as f64).round() as usize;
    let cross = cfg.causal_edges();
    let kinds: Vec<AnomalyKind> = cfg
        .anomaly_kinds
        .iter()
        .copied()
        .filter(|k| *k != AnomalyKind::CorrelationBreak || !cross.is_empty())
        .collect();
    if target > 0 && kinds.is_empty() {
        return Err(Error::Config("correlation_break needs a cross-sensor planted edge".into()));
    }
    let margin = (cfg.t_test / 20).max(1);
    let mut segments: Vec<AnomalySegment> = Vec::new();
    let mut count = 0;
    let mut attempts = 0;
    while count < target {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config(format!(
                "could not place {target} anomalous points in a test split of {}",
                cfg.t_test
            )));
        }
        let kind = *kinds.choose(rng).expect("nonempty");
        let len = segment_length(kind, rng).min(target - count);
        if cfg.t_test < margin + len + 1 {
            continue;
        }
        let start = rng.random_range(margin..=cfg.t_test - len);
        let end = start + len - 1;
        let clash = segments
            .iter()
            .any(|s| start < s.end + 1 + MIN_GAP && s.start < end + 1 + MIN_GAP);
        if clash {
            continue;
        }
        let sensors = match kind {
            AnomalyKind::CorrelationBreak => {
                let e = cross.choose(rng).expect("nonempty");
                vec![e.cause, e.effect]
            }
            _ => {
                let k = rng.random_range(1..=2.min(cfg.n_sensors));
                let mut all: Vec<usize> = (0..cfg.n_sensors).collect();
                let mut picked: Vec<usize> = all.partial_shuffle(rng, k).0.to_vec();
                picked.sort_unstable();
                picked
            }
        };
        segments.push(AnomalySegment { start, end, kind, sensors });
        count += len;
    }
    segments.sort_by_key(|s| s.start);
    Ok(segments)
}

fn inject(
    seg: &AnomalySegment,
    x: &mut Array3<f64>,
    mean: &ndarray::Array2<f64>,
    std: &ndarray::Array2<f64>,
    cfg: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) {
    let m = cfg.dim;
    match seg.kind {
        AnomalyKind::Spike => {
            for &i in &seg.sensors {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for t in seg.start..=seg.end {
                    for k in 0..m {
                        x[[t, i, k]] += sign * rng.random_range(5.0..=10.0) * std[[i, k]];
                    }
                }
            }
        }
        AnomalyKind::LevelShift => {
            for &i in &seg.sensors {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let offset = sign * rng.random_range(3.0..=6.0);
                for t in seg.start..=seg.end {
                    for k in 0..m {
                        x[[t, i, k]] += offset * std[[i, k]];
                    }
                }
            }
        }
        AnomalyKind::CorrelationBreak => {
            let driver = seg.sensors[0];
            for t in seg.start..=seg.end {
                for k in 0..m {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    x[[t, driver, k]] = mean[[driver, k]] + z * std[[driver, k]];
                }
            }
        }
    }
}
