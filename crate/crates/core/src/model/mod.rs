//! Fusion, prediction and reconstruction heads, the end-to-end model, its
//! checkpoint format and training loop.

pub mod checkpoint;
mod forward;
pub mod train;

pub use checkpoint::{EpochRecord, ModelCheckpoint, OptimizerConfig, FORMAT_VERSION};
pub use forward::{forward_chunk, run_series, ChunkOutput, NoiseMode, RecurrentState, StepTrace, StepVars, WindowOutput};
pub use train::{train, EarlyStopping};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::cdr::{CdrParams, CdrVars, LEAKY_SLOPE};
use crate::data::NormMethod;
use crate::error::{Error, Result};
use crate::graphs::CorrelationGraph;
use crate::necr::{NecrParams, NecrVars};
use crate::params::{param_group, Dims, Init};
use crate::tdr::{TdrParams, TdrVars};

/// Component removals. Each removed representation is replaced by zeros of
/// the same shape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_cdr: bool,
    pub no_necr: bool,
    pub no_tdr: bool,
    pub no_edge: bool,
    /// All variables share decoder head 0.
    pub single_head_decoder: bool,
    /// Relation representation keeps only the effect term.
    pub no_causal_discovery: bool,
}

impl Ablation {
    pub const PRESETS: [&'static str; 9] = [
        "wo_tdr",
        "wo_edge",
        "wo_necr",
        "wo_drl",
        "wo_crl",
        "wo_crl_drl",
        "wo_necr_tdr",
        "wo_necr_cdr",
        "wo_tdr_cdr",
    ];

    pub fn preset(name: &str) -> Result<Self> {
        let mut a = Self::default();
        match name {
            "full" | "none" => {}
            "wo_tdr" => a.no_tdr = true,
            "wo_edge" => a.no_edge = true,
            "wo_necr" => a.no_necr = true,
            "wo_drl" => a.single_head_decoder = true,
            "wo_crl" => a.no_causal_discovery = true,
            "wo_crl_drl" | "wo_cdr" => a.no_cdr = true,
            "wo_necr_tdr" => {
                a.no_necr = true;
                a.no_tdr = true;
            }
            "wo_necr_cdr" => {
                a.no_necr = true;
                a.no_cdr = true;
            }
            "wo_tdr_cdr" => {
                a.no_tdr = true;
                a.no_cdr = true;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?}; expected full or one of {}",
                    Self::PRESETS.join(", ")
                )))
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Window width ω.
    pub width: usize,
    /// Embedding size l.
    pub hidden: usize,
    /// Neighbors per sensor K.
    pub top_k: usize,
    /// Causal threshold θ.
    pub theta: f64,
    /// Reconstruction weight β in the root-cause score.
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// POT risk level.
    pub q: f64,
    pub init_quantile: f64,
    pub seed: u64,
    /// Trailing fraction of the training series held out for validation and
    /// threshold calibration.
    pub val_fraction: f64,
    pub normalization: NormMethod,
    pub encoder_uses_current_hidden: bool,
    pub necr_aggregate_self: bool,
    /// Zero the recurrent states at the start of every batch of windows.
    pub reset_per_batch: bool,
    pub ablation: Ablation,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            width: 100,
            hidden: 64,
            top_k: 20,
            theta: 0.06,
            beta: 1.0,
            learning_rate: 1e-3,
            batch_size: 32,
            patience: 10,
            max_epochs: 50,
            q: 1e-2,
            init_quantile: 0.98,
            seed: 0,
            val_fraction: 0.1,
            normalization: NormMethod::MinMax,
            encoder_uses_current_hidden: false,
            necr_aggregate_self: false,
            reset_per_batch: true,
            ablation: Ablation::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("hidden", self.hidden),
            ("top_k", self.top_k),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.width < 2 {
            return Err(Error::Config("width must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} not in [0, 1]", self.theta)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta {} must be >= 0", self.beta)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.q > 0.0 && self.q < 0.5) {
            return Err(Error::Config(format!("q {} not in (0, 0.5)", self.q)));
        }
        if !(self.init_quantile > 0.0 && self.init_quantile < 1.0) {
            return Err(Error::Config(format!("init_quantile {} not in (0, 1)", self.init_quantile)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} not in (0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    pub fn dims(&self, n_sensors: usize, dim: usize) -> Dims {
        Dims {
            n_sensors,
            dim,
            width: self.width,
            hidden: self.hidden,
        }
    }
}

param_group!(
    /// Per-variable GRU over the concatenated representations, the prediction
    /// head, and the reconstruction VAE.
    FusionParams / FusionVars {
        /// `l×4l`
        w_xz,
        w_xr,
        w_xn,
        /// `l×l`
        w_hz,
        w_hr,
        w_hn,
        b_z,
        b_r,
        b_xn,
        b_hn,
        w1,
        b1,
        /// `m×l`
        w2,
        /// `1×m`
        b2,
        w_mu,
        b_mu,
        w_sigma,
        b_sigma,
        /// `(N·ωm)×l`, one block per variable.
        dec_w,
        /// `N×ωm`
        dec_b,
    }
);

impl FusionParams {
    pub fn init(d: Dims, init: &mut Init) -> Self {
        let (l, m, h) = (d.hidden, d.dim, d.history_len());
        Self {
            w_xz: init.matrix(l, 4 * l),
            w_xr: init.matrix(l, 4 * l),
            w_xn: init.matrix(l, 4 * l),
            w_hz: init.matrix(l, l),
            w_hr: init.matrix(l, l),
            w_hn: init.matrix(l, l),
            b_z: init.bias(1, l),
            b_r: init.bias(1, l),
            b_xn: init.bias(1, l),
            b_hn: init.bias(1, l),
            w1: init.matrix(l, l),
            b1: init.bias(1, l),
            w2: init.matrix(m, l),
            b2: init.bias(1, m),
            w_mu: init.matrix(l, l),
            b_mu: init.bias(1, l),
            w_sigma: init.matrix(l, l),
            b_sigma: init.bias(1, l),
            dec_w: init.matrix(d.n_sensors * h, l),
            dec_b: init.bias(d.n_sensors, h),
        }
    }
}

/// All four parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub cdr: CdrParams,
    pub necr: NecrParams,
    pub tdr: TdrParams,
    pub fusion: FusionParams,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub cdr: CdrVars,
    pub necr: NecrVars,
    pub tdr: TdrVars,
    pub fusion: FusionVars,
}

impl ModelParams {
    pub fn init(d: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        Self {
            cdr: CdrParams::init(d, &mut init),
            necr: NecrParams::init(d, &mut init),
            tdr: TdrParams::init(d, &mut init),
            fusion: FusionParams::init(d, &mut init),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            cdr: self.cdr.bind(tape),
            necr: self.necr.bind(tape),
            tdr: self.tdr.bind(tape),
            fusion: self.fusion.bind(tape),
        }
    }

    pub fn freeze(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            cdr: self.cdr.freeze(tape),
            necr: self.necr.freeze(tape),
            tdr: self.tdr.freeze(tape),
            fusion: self.fusion.freeze(tape),
        }
    }

    /// Canonical `group.name` keys in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        let groups: [(&str, Vec<(&'static str, &Array2<f64>)>); 4] = [
            ("cdr", self.cdr.tensors()),
            ("necr", self.necr.tensors()),
            ("tdr", self.tdr.tensors()),
            ("fusion", self.fusion.tensors()),
        ];
        for (g, ts) in groups {
            out.extend(ts.into_iter().map(|(n, t)| (format!("{g}.{n}"), t)));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        let groups: [(&str, Vec<(&'static str, &mut Array2<f64>)>); 4] = [
            ("cdr", self.cdr.tensors_mut()),
            ("necr", self.necr.tensors_mut()),
            ("tdr", self.tdr.tensors_mut()),
            ("fusion", self.fusion.tensors_mut()),
        ];
        for (g, ts) in groups {
            out.extend(ts.into_iter().map(|(n, t)| (format!("{g}.{n}"), t)));
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Round every parameter through `f32`.
    pub fn quantize(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }
}

impl ModelVars {
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        let groups: [(&str, Vec<(&'static str, Var)>); 4] = [
            ("cdr", self.cdr.all()),
            ("necr", self.necr.all()),
            ("tdr", self.tdr.all()),
            ("fusion", self.fusion.all()),
        ];
        for (g, vs) in groups {
            out.extend(vs.into_iter().map(|(n, v)| (format!("{g}.{n}"), v)));
        }
        out
    }
}

/// A trained or freshly initialized model together with its current
/// sensor graph.
#[derive(Clone, Debug)]
pub struct Model {
    pub dims: Dims,
    pub hp: Hyperparams,
    pub params: ModelParams,
    pub graph: CorrelationGraph,
}

impl Model {
    pub fn new(dims: Dims, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        let params = ModelParams::init(dims, hp.seed);
        Self::from_params(dims, hp, params)
    }

    pub fn from_params(dims: Dims, hp: Hyperparams, params: ModelParams) -> Result<Self> {
        if dims.n_sensors < 2 {
            return Err(Error::DegenerateGraph(format!(
                "need at least 2 sensors for the correlation graph, got {}",
                dims.n_sensors
            )));
        }
        let graph = CorrelationGraph::from_embeddings(&params.necr.embeddings, hp.top_k)?;
        Ok(Self {
            dims,
            hp,
            params,
            graph,
        })
    }

    pub fn refresh_graph(&mut self) -> Result<()> {
        self.graph = CorrelationGraph::from_embeddings(&self.params.necr.embeddings, self.hp.top_k)?;
        Ok(())
    }

    pub fn heads(&self) -> Vec<usize> {
        if self.hp.ablation.single_head_decoder {
            vec![0; self.dims.n_sensors]
        } else {
            (0..self.dims.n_sensors).collect()
        }
    }
}

/// Per-variable GRU cell with shared weights.
pub(crate) fn gru_on(tape: &mut Tape, p: &FusionVars, x: Var, h: Var) -> Var {
    let affine = |tape: &mut Tape, wx: Var, wh: Var, b: Var| {
        let a = tape.matmul_t(x, wx);
        let c = tape.matmul_t(h, wh);
        let s = tape.add(a, c);
        tape.add(s, b)
    };
    let z = affine(tape, p.w_xz, p.w_hz, p.b_z);
    let z = tape.sigmoid(z);
    let r = affine(tape, p.w_xr, p.w_hr, p.b_r);
    let r = tape.sigmoid(r);
    let xn = tape.matmul_t(x, p.w_xn);
    let xn = tape.add(xn, p.b_xn);
    let hn = tape.matmul_t(h, p.w_hn);
    let hn = tape.add(hn, p.b_hn);
    let gated = tape.mul(r, hn);
    let n = tape.add(xn, gated);
    let n = tape.tanh(n);
    // h' = n + z ⊙ (h − n)
    let diff = tape.sub(h, n);
    let keep = tape.mul(z, diff);
    tape.add(n, keep)
}

pub(crate) fn predict_on(tape: &mut Tape, p: &FusionVars, d: Var) -> Var {
    let a = tape.matmul_t(d, p.w1);
    let a = tape.add(a, p.b1);
    let a = tape.leaky_relu(a, LEAKY_SLOPE);
    let o = tape.matmul_t(a, p.w2);
    tape.add(o, p.b2)
}

#[derive(Clone, Copy, Debug)]
pub struct ReconVars {
    /// `N×ωm`
    pub reconstruction: Var,
    pub mu: Var,
    pub log_sigma: Var,
    /// Scalar KL summed over variables and dimensions.
    pub kl: Var,
    /// Scalar `(0.5·SSE + KL) / N`.
    pub loss: Var,
}

pub(crate) fn reconstruct_on(tape: &mut Tape, p: &FusionVars, d: Var, per_sensor: Var, eps: Var) -> ReconVars {
    let (n, _) = tape.shape(d);
    let width = tape.shape(per_sensor).1;
    let mu = tape.matmul_t(d, p.w_mu);
    let mu = tape.add(mu, p.b_mu);
    let log_sigma = tape.matmul_t(d, p.w_sigma);
    let log_sigma = tape.add(log_sigma, p.b_sigma);
    let sigma = tape.exp(log_sigma);
    let noise = tape.mul(sigma, eps);
    let zr = tape.add(mu, noise);
    let heads: Vec<usize> = (0..n).collect();
    let s = tape.per_row_linear(zr, p.dec_w, &heads, width);
    let reconstruction = tape.add(s, p.dec_b);
    let kl = kl_on(tape, mu, log_sigma);
    let err = tape.sub(reconstruction, per_sensor);
    let sq = tape.square(err);
    let sse = tape.sum(sq);
    let half = tape.scale(sse, 0.5);
    let tot = tape.add(half, kl);
    let loss = tape.scale(tot, 1.0 / n as f64);
    ReconVars {
        reconstruction,
        mu,
        log_sigma,
        kl,
        loss,
    }
}

/// `0.5 Σ (μ² + σ² − 1 − 2 log σ)`.
pub(crate) fn kl_on(tape: &mut Tape, mu: Var, log_sigma: Var) -> Var {
    let mu2 = tape.square(mu);
    let two_ls = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu2, var);
    let a = tape.sub(a, two_ls);
    let a = tape.add_scalar(a, -1.0);
    let s = tape.sum(a);
    tape.scale(s, 0.5)
}

pub fn kl_divergence(mu: &Array2<f64>, log_sigma: &Array2<f64>) -> f64 {
    mu.iter()
        .zip(log_sigma.iter())
        .map(|(m, ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

pub(crate) fn mse_on(tape: &mut Tape, pred: Var, target: Var) -> Var {
    let e = tape.sub(pred, target);
    let e = tape.square(e);
    tape.mean(e)
}

fn expect_shape(what: &str, a: &Array2<f64>, shape: (usize, usize)) -> Result<()> {
    if a.dim() != shape {
        return Err(Error::contract(
            "fuse",
            format!("{what} has shape {:?}, expected {shape:?}", a.dim()),
        ));
    }
    Ok(())
}

/// One GRU step over `d_cdr ‖ d_necr ‖ d_tdr`; returns `(d, state')`, which
/// are the same matrix.
pub fn fuse(
    d_cdr: &Array2<f64>,
    d_necr: &Array2<f64>,
    d_tdr: &Array2<f64>,
    gru_state: &Array2<f64>,
    params: &FusionParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let l = params.w_hz.nrows();
    let n = gru_state.nrows();
    expect_shape("gru_state", gru_state, (n, l))?;
    expect_shape("d_cdr", d_cdr, (n, l))?;
    expect_shape("d_necr", d_necr, (n, 2 * l))?;
    expect_shape("d_tdr", d_tdr, (n, l))?;
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let parts = [d_cdr, d_necr, d_tdr].map(|a| tape.constant(a.clone()));
    let x = tape.concat_cols(&parts);
    let h = tape.constant(gru_state.clone());
    let out = gru_on(&mut tape, &p, x, h);
    let d = tape.value(out).clone();
    Ok((d.clone(), d))
}

/// `N×m` forecast of the target row.
pub fn predict(d: &Array2<f64>, params: &FusionParams) -> Array2<f64> {
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let dv = tape.constant(d.clone());
    let o = predict_on(&mut tape, &p, dv);
    tape.value(o).clone()
}

/// Returns the `N×ωm` reconstruction of the window history and the
/// reconstruction loss. `noise = None` uses `ε = 0`.
pub fn reconstruct(
    d: &Array2<f64>,
    per_sensor: &Array2<f64>,
    params: &FusionParams,
    noise: Option<&Array2<f64>>,
) -> (Array2<f64>, f64) {
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let dv = tape.constant(d.clone());
    let sv = tape.constant(per_sensor.clone());
    let eps = tape.constant(noise.cloned().unwrap_or_else(|| Array2::zeros(d.dim())));
    let r = reconstruct_on(&mut tape, &p, dv, sv, eps);
    (tape.value(r.reconstruction).clone(), tape.scalar(r.loss))
}

/// Mean squared prediction error plus the reconstruction loss.
pub fn total_loss(x_hat: &Array2<f64>, target: &Array2<f64>, recon_loss: f64) -> Result<f64> {
    if x_hat.dim() != target.dim() {
        return Err(Error::contract(
            "total_loss",
            format!("prediction {:?} vs target {:?}", x_hat.dim(), target.dim()),
        ));
    }
    let mse = (x_hat - target).mapv(|v| v * v).mean().unwrap_or(0.0);
    Ok(mse + recon_loss)
}
