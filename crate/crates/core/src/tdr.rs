//! Self-attention over the `ω` window timesteps, projected to one row per
//! sensor.

use ndarray::Array2;

use crate::autograd::{Tape, Var};
use crate::cdr::LEAKY_SLOPE;
use crate::data::SampleWindow;
use crate::error::{Error, Result};
use crate::params::{param_group, Dims, Init, WindowVars};

param_group!(TdrParams / TdrVars {
    /// `l×Nm`
    w_t,
    /// `1×2l`
    a_t,
    /// `(N·l)×(ω·l)` alignment of the flattened timestep vectors to sensor rows.
    w_proj,
});

impl TdrParams {
    pub fn init(d: Dims, init: &mut Init) -> Self {
        let l = d.hidden;
        Self {
            w_t: init.matrix(l, d.n_sensors * d.dim),
            a_t: init.matrix(1, 2 * l),
            w_proj: init.matrix(d.n_sensors * l, d.width * l),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TdrOut {
    /// `ω×ω`
    pub attention: Var,
    /// `ω×l`
    pub timesteps: Var,
    /// `N×l`
    pub representation: Var,
}

pub fn tdr_on(tape: &mut Tape, p: &TdrVars, w: &WindowVars) -> TdrOut {
    let h = tape.matmul_t(w.per_step, p.w_t);
    let l = tape.shape(h).1;
    let a1 = tape.slice_cols(p.a_t, 0, l);
    let a2 = tape.slice_cols(p.a_t, l, 2 * l);
    let s1 = tape.matmul_t(h, a1);
    let s2 = tape.matmul_t(h, a2);
    let s = tape.outer_add(s1, s2);
    let s = tape.leaky_relu(s, LEAKY_SLOPE);
    let attention = tape.softmax_rows(s, None);
    let representation_from = aggregate(tape, p, attention, h);
    TdrOut {
        attention,
        timesteps: representation_from.0,
        representation: representation_from.1,
    }
}

fn aggregate(tape: &mut Tape, p: &TdrVars, attention: Var, h: Var) -> (Var, Var) {
    let (width, l) = tape.shape(h);
    let n = tape.shape(p.w_proj).0 / l;
    let u = tape.matmul(attention, h);
    let u = tape.leaky_relu(u, LEAKY_SLOPE);
    let flat = tape.reshape(u, 1, width * l);
    let proj = tape.matmul_t(flat, p.w_proj);
    (u, tape.reshape(proj, n, l))
}

/// `ω×ω`, row = query timestep.
pub fn tdr_attention(window: &SampleWindow, params: &TdrParams) -> Result<Array2<f64>> {
    if window.width() < 2 {
        return Err(Error::DegenerateWindow(format!("window width {} < 2", window.width())));
    }
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let w = WindowVars::new(&mut tape, window);
    let out = tdr_on(&mut tape, &p, &w);
    Ok(tape.value(out.attention).clone())
}

/// Per-timestep vectors `ω×l` and the aligned `N×l` representation.
pub fn temporal_features(window: &SampleWindow, alpha: &Array2<f64>, params: &TdrParams) -> (Array2<f64>, Array2<f64>) {
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let w = WindowVars::new(&mut tape, window);
    let h = tape.matmul_t(w.per_step, p.w_t);
    let a = tape.constant(alpha.clone());
    let (u, d) = aggregate(&mut tape, &p, a, h);
    (tape.value(u).clone(), tape.value(d).clone())
}

pub fn compute_tdr(window: &SampleWindow, alpha: &Array2<f64>, params: &TdrParams) -> Array2<f64> {
    temporal_features(window, alpha, params).1
}
