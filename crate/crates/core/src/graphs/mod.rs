//! The three subgraphs over a window: the top-K correlation graph between
//! sensors, the time-lagged causal graph, and the complete temporal graph
//! over window positions.

mod granger;

pub use granger::{granger_oracle, GrangerEdge};

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine similarity between node embeddings (rows of `embeddings`).
pub fn node_embedding_similarity(embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    let n = embeddings.nrows();
    let norms: Vec<f64> = embeddings.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(node) = norms.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateEmbedding { node });
    }
    let mut sim = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        sim[[i, i]] = 1.0;
        for j in i + 1..n {
            let c = (embeddings.row(i).dot(&embeddings.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            sim[[i, j]] = c;
            sim[[j, i]] = c;
        }
    }
    Ok(sim)
}

/// For each node, up to `k` other nodes by descending similarity; ties go to
/// the lower index.
pub fn topk_neighbors(similarity: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = similarity.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                similarity[[i, b]]
                    .partial_cmp(&similarity[[i, a]])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            others.truncate(k);
            others
        })
        .collect()
}

/// Sensor correlation graph with scalar edge features (`g = 1`, the cosine
/// similarity itself).
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationGraph {
    pub similarity: Array2<f64>,
    pub neighbor_sets: Vec<Vec<usize>>,
    pub k: usize,
}

impl CorrelationGraph {
    pub fn from_embeddings(embeddings: &Array2<f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("top-K neighbor count must be >= 1".into()));
        }
        let similarity = node_embedding_similarity(embeddings)?;
        let neighbor_sets = topk_neighbors(&similarity, k);
        Ok(Self {
            similarity,
            neighbor_sets,
            k,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.similarity.nrows()
    }

    /// `N×N×1` edge features.
    pub fn edge_features(&self) -> Array3<f64> {
        let n = self.n_nodes();
        Array3::from_shape_fn((n, n, 1), |(i, j, _)| self.similarity[[i, j]])
    }

    /// Undirected attention neighborhoods: `j` is a neighbor of `i` when
    /// either lists the other in its top-K.
    pub fn attention_mask(&self) -> Array2<bool> {
        let n = self.n_nodes();
        let mut mask = Array2::from_elem((n, n), false);
        for (i, set) in self.neighbor_sets.iter().enumerate() {
            for &j in set {
                mask[[i, j]] = true;
                mask[[j, i]] = true;
            }
        }
        mask
    }
}

/// A sensor at an absolute timestamp.
pub type TimedNode = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalEdge {
    pub cause: TimedNode,
    pub effect: TimedNode,
    pub weight: f64,
}

/// Time-lagged causal edges into the sensors at timestamp `t`. Every edge
/// points strictly forward in time, so the graph is a DAG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub theta: f64,
    pub edges: Vec<CausalEdge>,
}

impl CausalGraph {
    /// Parents of each effect node.
    pub fn parent_sets(&self) -> BTreeMap<TimedNode, Vec<TimedNode>> {
        let mut out: BTreeMap<TimedNode, Vec<TimedNode>> = BTreeMap::new();
        for e in &self.edges {
            out.entry(e.effect).or_default().push(e.cause);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Threshold a causal attention tensor (`effect × cause × window position`)
/// for the window ending at `t`. Position `p` of a width-`ω` window is
/// timestamp `t − ω + p`.
pub fn finalize_causal_graph(attention: &Array3<f64>, theta: f64, t: usize) -> Result<CausalGraph> {
    let (n_eff, n_cause, width) = attention.dim();
    if t < width {
        return Err(Error::contract(
            "finalize_causal_graph",
            format!("window of width {width} cannot end at t={t}"),
        ));
    }
    for i in 0..n_eff {
        let row = attention.index_axis(ndarray::Axis(0), i);
        if let Some(v) = row.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Normalization(format!("effect {i} has entry {v}")));
        }
        let sum = row.sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::Normalization(format!("effect {i} weights sum to {sum}")));
        }
    }
    let mut edges = Vec::new();
    for i in 0..n_eff {
        for j in 0..n_cause {
            for p in 0..width {
                let w = attention[[i, j, p]];
                if w >= theta {
                    edges.push(CausalEdge {
                        cause: (j, t - width + p),
                        effect: (i, t),
                        weight: w,
                    });
                }
            }
        }
    }
    Ok(CausalGraph { theta, edges })
}

/// Reshape an `N×(N·ω)` attention matrix (candidate `j·ω + p`) into the
/// `effect × cause × position` tensor.
pub fn attention_tensor(alpha: &Array2<f64>, width: usize) -> Array3<f64> {
    let n = alpha.nrows();
    let n_cause = alpha.ncols() / width;
    Array3::from_shape_fn((n, n_cause, width), |(i, j, p)| alpha[[i, j * width + p]])
}

/// Complete graph over the `ω` window positions (self-loops included);
/// weights come from temporal attention.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    pub timestamps: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl TemporalGraph {
    pub fn for_window(t: usize, width: usize) -> Result<Self> {
        if width < 2 || t < width {
            return Err(Error::DegenerateWindow(format!("width {width} ending at t={t}")));
        }
        let timestamps = (t - width..t).collect();
        let edges = (0..width).flat_map(|i| (0..width).map(move |j| (i, j))).collect();
        Ok(Self { timestamps, edges })
    }
}
