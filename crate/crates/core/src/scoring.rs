//! Root-cause and anomaly scores, the POT threshold, and ranked root causes.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_CALIBRATION: usize = 50;
pub const MIN_EXCEEDANCES: usize = 10;
const SHAPE_BOUNDS: (f64, f64) = (-0.5, 1.0);

/// Per-sensor squared prediction and reconstruction errors of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTerms {
    pub pred: Vec<f64>,
    pub recon: Vec<f64>,
}

impl ErrorTerms {
    /// `x`/`x_hat` are `N×m`; `s`/`s_tilde` hold each sensor's flattened
    /// history (`N×ωm`).
    pub fn new(x: &Array2<f64>, x_hat: &Array2<f64>, s: &Array2<f64>, s_tilde: &Array2<f64>) -> Self {
        let sq = |a: &Array2<f64>, b: &Array2<f64>| -> Vec<f64> {
            a.rows()
                .into_iter()
                .zip(b.rows())
                .map(|(r, q)| r.iter().zip(q.iter()).map(|(u, v)| (u - v) * (u - v)).sum())
                .collect()
        };
        Self {
            pred: sq(x, x_hat),
            recon: sq(s, s_tilde),
        }
    }

    pub fn root_cause_scores(&self, beta: f64) -> Vec<f64> {
        self.pred
            .iter()
            .zip(&self.recon)
            .map(|(p, r)| if beta == 0.0 { p.sqrt() } else { (p + beta * r).sqrt() })
            .collect()
    }
}

/// `rs_i = √(Σ(x_i − x̂_i)² + β Σ(S_i − S̃_i)²)`.
pub fn root_cause_scores(
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
    s: &Array2<f64>,
    s_tilde: &Array2<f64>,
    beta: f64,
) -> Vec<f64> {
    ErrorTerms::new(x, x_hat, s, s_tilde).root_cause_scores(beta)
}

pub fn anomaly_score(rs: &[f64]) -> f64 {
    rs.iter().sum::<f64>() / rs.len() as f64
}

/// Top `min(k, N)` sensors by descending score, ties to the lower index.
pub fn localize_root_causes(rs: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..rs.len()).collect();
    idx.sort_by(|&a, &b| rs[b].total_cmp(&rs[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, rs[i])).collect()
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotFit {
    pub threshold: f64,
    /// Level whose exceedances were fitted.
    pub init_level: f64,
    pub shape: f64,
    pub scale: f64,
    pub n_exceedances: usize,
    pub n_calibration: usize,
    /// Too few exceedances: threshold is the empirical `1 − q` quantile.
    pub fallback: bool,
}

fn gpd_loglik(y: &[f64], shape: f64, scale: f64) -> f64 {
    if !(scale > 0.0) || shape <= SHAPE_BOUNDS.0 || shape >= SHAPE_BOUNDS.1 {
        return f64::NEG_INFINITY;
    }
    let n = y.len() as f64;
    if shape.abs() < 1e-9 {
        return -n * scale.ln() - y.iter().sum::<f64>() / scale;
    }
    let mut acc = 0.0;
    for &v in y {
        let u = 1.0 + shape * v / scale;
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += u.ln();
    }
    -n * scale.ln() - (1.0 + 1.0 / shape) * acc
}

/// Nelder–Mead maximization of the GPD likelihood over `(shape, ln scale)`.
fn fit_gpd(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let (mut g0, mut s0) = if var > 0.0 {
        let r = mean * mean / var;
        (0.5 * (1.0 - r), 0.5 * mean * (1.0 + r))
    } else {
        (0.0, mean.max(1e-12))
    };
    g0 = g0.clamp(SHAPE_BOUNDS.0 + 0.05, SHAPE_BOUNDS.1 - 0.05);
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    if g0 < 0.0 && s0 <= -g0 * ymax {
        s0 = -g0 * ymax * 1.1;
    }
    let f = |p: &[f64; 2]| -gpd_loglik(y, p[0], p[1].exp());
    let mut best = [g0, s0.ln()];
    for _ in 0..3 {
        best = nelder_mead(&f, best, [0.1, 0.3], 400);
    }
    (best[0], best[1].exp())
}

fn nelder_mead<F: Fn(&[f64; 2]) -> f64>(f: &F, start: [f64; 2], step: [f64; 2], iters: usize) -> [f64; 2] {
    let mut pts = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut vals = pts.map(|p| f(&p));
    for _ in 0..iters {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.map(|i| pts[i]);
        vals = order.map(|i| vals[i]);
        if (vals[2] - vals[0]).abs() < 1e-12 * (1.0 + vals[0].abs()) {
            break;
        }
        let c = [(pts[0][0] + pts[1][0]) / 2.0, (pts[0][1] + pts[1][1]) / 2.0];
        let along = |t: f64| [c[0] + t * (pts[2][0] - c[0]), c[1] + t * (pts[2][1] - c[1])];
        let r = along(-1.0);
        let fr = f(&r);
        if fr < vals[0] {
            let e = along(-2.0);
            let fe = f(&e);
            if fe < fr {
                pts[2] = e;
                vals[2] = fe;
            } else {
                pts[2] = r;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            pts[2] = r;
            vals[2] = fr;
        } else {
            let k = if fr < vals[2] { along(-0.5) } else { along(0.5) };
            let fk = f(&k);
            if fk < vals[2].min(fr) {
                pts[2] = k;
                vals[2] = fk;
            } else {
                for i in 1..3 {
                    pts[i] = [(pts[i][0] + pts[0][0]) / 2.0, (pts[i][1] + pts[0][1]) / 2.0];
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    pts[best]
}

/// Peak-over-threshold: fit a generalized Pareto tail above the
/// `init_quantile` level and solve for exceedance probability `q`.
pub fn pot_threshold(calibration: &[f64], q: f64, init_quantile: f64) -> Result<PotFit> {
    if calibration.len() < MIN_CALIBRATION {
        return Err(Error::InsufficientCalibration {
            got: calibration.len(),
            need: MIN_CALIBRATION,
        });
    }
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::Config(format!("risk level q = {q} not in (0, 0.5)")));
    }
    if calibration.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientCalibration {
            got: calibration.iter().filter(|v| v.is_finite()).count(),
            need: MIN_CALIBRATION,
        });
    }
    let mut sorted = calibration.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let u = quantile_sorted(&sorted, init_quantile);
    let y: Vec<f64> = sorted.iter().filter(|&&v| v > u).map(|v| v - u).collect();
    if y.len() < MIN_EXCEEDANCES {
        return Ok(PotFit {
            threshold: quantile_sorted(&sorted, 1.0 - q).max(u),
            init_level: u,
            shape: 0.0,
            scale: 0.0,
            n_exceedances: y.len(),
            n_calibration: n,
            fallback: true,
        });
    }
    let (shape, scale) = fit_gpd(&y);
    let ratio = q * n as f64 / y.len() as f64;
    let z = if shape.abs() < 1e-9 {
        u - scale * ratio.ln()
    } else {
        u + scale / shape * (ratio.powf(-shape) - 1.0)
    };
    Ok(PotFit {
        threshold: z.max(u),
        init_level: u,
        shape,
        scale,
        n_exceedances: y.len(),
        n_calibration: n,
        fallback: false,
    })
}

/// Scores, verdicts and per-timestep root-cause scores over a test series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub threshold: f64,
    pub q: f64,
    pub beta: f64,
    pub fallback: bool,
    /// Timestamp of each scored window's target.
    pub timestamps: Vec<usize>,
    pub scores: Vec<f64>,
    pub verdicts: Vec<u8>,
    /// `rs` per scored timestep.
    pub root_scores: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ReportHeader {
    threshold: f64,
    q: f64,
    beta: f64,
    fallback: bool,
    n_sensors: usize,
    n_timesteps: usize,
}

#[derive(Serialize, Deserialize)]
struct ReportLine {
    t: usize,
    score: f64,
    verdict: u8,
    root_causes: Vec<(usize, f64)>,
    rs: Vec<f64>,
}

impl AnomalyReport {
    pub fn new(timestamps: Vec<usize>, root_scores: Vec<Vec<f64>>, fit: &PotFit, q: f64, beta: f64) -> Self {
        let scores: Vec<f64> = root_scores.iter().map(|rs| anomaly_score(rs)).collect();
        let verdicts = scores.iter().map(|&a| u8::from(a > fit.threshold)).collect();
        Self {
            threshold: fit.threshold,
            q,
            beta,
            fallback: fit.fallback,
            timestamps,
            scores,
            verdicts,
            root_scores,
        }
    }

    /// Ranked root causes for flagged timesteps; empty for the rest.
    pub fn root_causes(&self, idx: usize, k: usize) -> Vec<(usize, f64)> {
        if self.verdicts[idx] == 1 {
            localize_root_causes(&self.root_scores[idx], k)
        } else {
            Vec::new()
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.root_scores.first().map_or(0, Vec::len)
    }

    /// Verdicts expanded to a full-length series; unscored leading
    /// timestamps are 0.
    pub fn dense_verdicts(&self, len: usize) -> Vec<u8> {
        let mut out = vec![0; len];
        for (&t, &v) in self.timestamps.iter().zip(&self.verdicts) {
            if t < len {
                out[t] = v;
            }
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        let header = ReportHeader {
            threshold: self.threshold,
            q: self.q,
            beta: self.beta,
            fallback: self.fallback,
            n_sensors: self.n_sensors(),
            n_timesteps: self.scores.len(),
        };
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for i in 0..self.scores.len() {
            let line = ReportLine {
                t: self.timestamps[i],
                score: self.scores[i],
                verdict: self.verdicts[i],
                root_causes: self.root_causes(i, self.n_sensors()),
                rs: self.root_scores[i].clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ReportHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Schema(format!("{}: empty report", path.display())))?,
        )?;
        let mut report = Self {
            threshold: header.threshold,
            q: header.q,
            beta: header.beta,
            fallback: header.fallback,
            timestamps: Vec::new(),
            scores: Vec::new(),
            verdicts: Vec::new(),
            root_scores: Vec::new(),
        };
        for l in lines {
            let line: ReportLine = serde_json::from_str(l)?;
            report.timestamps.push(line.t);
            report.scores.push(line.score);
            report.verdicts.push(line.verdict);
            report.root_scores.push(line.rs);
        }
        Ok(report)
    }
}
