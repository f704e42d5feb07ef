//! Conditional VAR Granger test, used only to validate discovered causality on
//! synthetic data.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};

const RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrangerEdge {
    pub cause: usize,
    pub effect: usize,
    /// Lag with the largest absolute coefficient in the unrestricted fit.
    pub lag: usize,
    pub f_stat: f64,
    pub p_value: f64,
}

/// For every ordered pair `j → i` (`j ≠ i`), compare the full VAR(`max_lag`)
/// regression of `i` on all sensors' lags against the one without `j`'s lags.
/// Edges whose F-test p-value falls below `significance` are returned, sorted
/// by (effect, cause).
pub fn granger_oracle(x: &TimeSeriesMatrix, max_lag: usize, significance: f64) -> Result<Vec<GrangerEdge>> {
    if max_lag == 0 {
        return Err(Error::Config("max_lag must be >= 1".into()));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::Config(format!("significance {significance} not in (0, 1)")));
    }
    if x.dim() != 1 {
        return Err(Error::contract("granger_oracle", "only scalar sensors (m = 1) are supported"));
    }
    let (t_len, n) = (x.len(), x.n_sensors());
    if t_len <= 10 * max_lag * n {
        return Err(Error::InsufficientData(format!(
            "granger_oracle needs T > 10·max_lag·N = {}, got {t_len}",
            10 * max_lag * n
        )));
    }
    let vals = x.values();
    let rows = t_len - max_lag;
    let p = 1 + max_lag * n;
    let col = |lag: usize, k: usize| 1 + (lag - 1) * n + k;
    let design = DMatrix::from_fn(rows, p, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / n + 1;
            let k = (c - 1) % n;
            vals[[r + max_lag - lag, k, 0]]
        }
    });
    let gram = design.transpose() * &design;
    let df_full = rows as f64 - p as f64;
    let df_num = max_lag as f64;
    let dist = FisherSnedecor::new(df_num, df_full).map_err(|e| Error::InsufficientData(e.to_string()))?;

    let per_effect: Vec<Result<Vec<GrangerEdge>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = DVector::from_fn(rows, |r, _| vals[[r + max_lag, i, 0]]);
            let xty = design.transpose() * &y;
            let all: Vec<usize> = (0..p).collect();
            let (beta, rss_full) = fit(&design, &gram, &xty, &y, &all)?;
            let mut edges = Vec::new();
            for j in (0..n).filter(|&j| j != i) {
                let keep: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&c| c == 0 || (c - 1) % n != j)
                    .collect();
                let (_, rss_r) = fit(&design, &gram, &xty, &y, &keep)?;
                let f_stat = ((rss_r - rss_full).max(0.0) / df_num) / (rss_full / df_full);
                let p_value = 1.0 - dist.cdf(f_stat);
                if p_value < significance {
                    let lag = (1..=max_lag)
                        .max_by(|&a, &b| beta[col(a, j)].abs().total_cmp(&beta[col(b, j)].abs()))
                        .unwrap_or(1);
                    edges.push(GrangerEdge {
                        cause: j,
                        effect: i,
                        lag,
                        f_stat,
                        p_value,
                    });
                }
            }
            Ok(edges)
        })
        .collect();
    let mut out = Vec::new();
    for e in per_effect {
        out.extend(e?);
    }
    Ok(out)
}

/// Least squares on the columns `keep`, returning coefficients scattered back
/// to full width and the residual sum of squares.
fn fit(
    design: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    y: &DVector<f64>,
    keep: &[usize],
) -> Result<(DVector<f64>, f64)> {
    let k = keep.len();
    let g = DMatrix::from_fn(k, k, |a, b| gram[(keep[a], keep[b])]);
    let rhs = DVector::from_fn(k, |a, _| xty[keep[a]]);
    let chol = g.clone().cholesky().or_else(|| {
        let mut ridged = g;
        for d in 0..k {
            ridged[(d, d)] += RIDGE;
        }
        ridged.cholesky()
    });
    let chol = chol.ok_or_else(|| Error::Conditioning(format!("{k}-column Gram matrix is singular")))?;
    let sub = chol.solve(&rhs);
    let mut beta = DVector::zeros(design.ncols());
    for (a, &c) in keep.iter().enumerate() {
        beta[c] = sub[a];
    }
    let resid = y - design * &beta;
    Ok((beta, resid.norm_squared()))
}
