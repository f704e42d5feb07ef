//! Node- and edge-level correlation attention over the top-K sensor graph.

use ndarray::Array2;

use crate::autograd::{Tape, Var};
use crate::cdr::LEAKY_SLOPE;
use crate::data::SampleWindow;
use crate::error::{Error, Result};
use crate::graphs::CorrelationGraph;
use crate::params::{param_group, Dims, Init, WindowVars};

param_group!(NecrParams / NecrVars {
    /// `N×l` learned node embeddings.
    embeddings,
    /// `l×ωm`
    w_n,
    /// `l×1`: edge features are scalar similarities.
    w_edge,
    /// `1×2l`
    a_n,
    /// `1×2l`
    a_e,
});

impl NecrParams {
    pub fn init(d: Dims, init: &mut Init) -> Self {
        let l = d.hidden;
        Self {
            embeddings: init.embedding(d.n_sensors, l),
            w_n: init.matrix(l, d.history_len()),
            w_edge: init.matrix(l, 1),
            a_n: init.matrix(1, 2 * l),
            a_e: init.matrix(1, 2 * l),
        }
    }
}

/// Cosine similarity of the node embeddings, differentiable in them.
pub fn similarity_on(tape: &mut Tape, p: &NecrVars) -> Var {
    let unit = tape.row_normalize(p.embeddings);
    tape.matmul_t(unit, unit)
}

#[derive(Clone, Copy, Debug)]
pub struct NecrOut {
    pub node_attention: Var,
    pub edge_attention: Var,
    /// `N×2l`: node-level columns first, edge-level last.
    pub representation: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NecrOptions {
    /// Drop the edge-level half (replaced by zeros).
    pub no_edge: bool,
    /// Weight the center node's own projection instead of its neighbors'.
    pub aggregate_self: bool,
}

/// Both attention families plus the aggregated `N×2l` representation.
/// `sim` is the `N×N` similarity matrix, `mask` the neighborhoods.
pub fn necr_on(tape: &mut Tape, p: &NecrVars, w: &WindowVars, sim: Var, mask: &Array2<bool>, opts: NecrOptions) -> NecrOut {
    let l = tape.shape(p.w_n).0;
    let n = tape.shape(w.per_sensor).0;
    let proj = tape.matmul_t(w.per_sensor, p.w_n);

    let an1 = tape.slice_cols(p.a_n, 0, l);
    let an2 = tape.slice_cols(p.a_n, l, 2 * l);
    let s1 = tape.matmul_t(proj, an1);
    let s2 = tape.matmul_t(proj, an2);
    let sn = tape.outer_add(s1, s2);
    let sn = tape.leaky_relu(sn, LEAKY_SLOPE);
    let node_attention = tape.softmax_rows(sn, Some(mask));

    let ae1 = tape.slice_cols(p.a_e, 0, l);
    let ae2 = tape.slice_cols(p.a_e, l, 2 * l);
    let e1 = tape.matmul_t(proj, ae1);
    let e2 = tape.matmul(ae2, p.w_edge);
    let se = tape.mul(sim, e2);
    let se = tape.add(se, e1);
    let se = tape.leaky_relu(se, LEAKY_SLOPE);
    let edge_attention = tape.softmax_rows(se, Some(mask));

    let dn = if opts.aggregate_self {
        let wsum = tape.sum_cols(node_attention);
        tape.mul(proj, wsum)
    } else {
        tape.matmul(node_attention, proj)
    };
    let dn = tape.leaky_relu(dn, LEAKY_SLOPE);

    let de = if opts.no_edge {
        tape.constant(Array2::zeros((n, l)))
    } else {
        let weighted = tape.mul(edge_attention, sim);
        let agg = tape.sum_cols(weighted);
        let de = tape.matmul_t(agg, p.w_edge);
        tape.leaky_relu(de, LEAKY_SLOPE)
    };
    let representation = tape.concat_cols(&[dn, de]);
    NecrOut {
        node_attention,
        edge_attention,
        representation,
    }
}

fn check_graph(graph: &CorrelationGraph) -> Result<Array2<bool>> {
    if graph.n_nodes() < 2 {
        return Err(Error::DegenerateGraph("a single sensor has no neighbors".into()));
    }
    Ok(graph.attention_mask())
}

/// `(α^NCR, α^ECR)`, each `N×N` and zero outside the neighborhoods.
pub fn necr_attention(
    window: &SampleWindow,
    graph: &CorrelationGraph,
    params: &NecrParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mask = check_graph(graph)?;
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let w = WindowVars::new(&mut tape, window);
    let sim = tape.constant(graph.similarity.clone());
    let out = necr_on(&mut tape, &p, &w, sim, &mask, NecrOptions::default());
    Ok((tape.value(out.node_attention).clone(), tape.value(out.edge_attention).clone()))
}

/// `N×2l` representation from precomputed attention weights.
pub fn compute_necr(
    window: &SampleWindow,
    graph: &CorrelationGraph,
    weights: (&Array2<f64>, &Array2<f64>),
    params: &NecrParams,
    aggregate_self: bool,
) -> Array2<f64> {
    let proj = window.per_sensor().dot(&params.w_n.t());
    let lrelu = |v: f64| crate::autograd::leaky_relu(v, LEAKY_SLOPE);
    let (node, edge) = weights;
    let dn = if aggregate_self {
        let wsum = node.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        &proj * &wsum
    } else {
        node.dot(&proj)
    };
    let agg = (edge * &graph.similarity).sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    let de = agg.dot(&params.w_edge.t());
    ndarray::concatenate![ndarray::Axis(1), dn.mapv(lrelu), de.mapv(lrelu)]
}
