use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{gru_on, mse_on, predict_on, reconstruct_on, Model, ModelVars, ReconVars};
use crate::autograd::{Tape, Var};
use crate::cdr::{attention_on, decode_on, encode_on, relation_on, standard_normal, threshold_mask};
use crate::data::SampleWindow;
use crate::necr::{necr_on, similarity_on, NecrOptions};
use crate::params::{Dims, WindowVars};
use crate::tdr::tdr_on;

/// Source of the reparameterization noise.
pub enum NoiseMode<'a> {
    /// `ε = 0`: validation, scoring and inference.
    Zero,
    Sample(&'a mut ChaCha8Rng),
}

impl NoiseMode<'_> {
    fn draw(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        match self {
            NoiseMode::Zero => Array2::zeros((rows, cols)),
            NoiseMode::Sample(rng) => standard_normal(*rng, rows, cols),
        }
    }
}

/// Encoder hidden state (`1×l`) and per-variable GRU state (`N×l`).
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub encoder: Array2<f64>,
    pub gru: Array2<f64>,
}

impl RecurrentState {
    pub fn zeros(d: Dims) -> Self {
        Self {
            encoder: Array2::zeros((1, d.hidden)),
            gru: Array2::zeros((d.n_sensors, d.hidden)),
        }
    }
}

/// Tape handles for one window's forward pass.
#[derive(Clone, Debug)]
pub struct StepVars {
    pub t: usize,
    pub target: Var,
    pub per_sensor: Var,
    /// `N×m`
    pub x_hat: Var,
    pub recon: ReconVars,
    pub pred_loss: Var,
    pub loss: Var,
    pub alpha_cdr: Option<Var>,
    /// Candidate membership used for the relation term.
    pub cdr_mask: Option<Array2<bool>>,
    pub alpha_ncr: Option<Var>,
    pub alpha_ecr: Option<Var>,
    pub alpha_tdr: Option<Var>,
    pub d_cdr: Var,
    pub d_necr: Var,
    pub d_tdr: Var,
    pub d: Var,
    pub encoder_hidden: Var,
}

pub struct ChunkOutput {
    pub steps: Vec<StepVars>,
    /// Mean per-window loss over the chunk.
    pub loss: Var,
    pub state_encoder: Var,
    pub state_gru: Var,
}

impl ChunkOutput {
    pub fn final_state(&self, tape: &Tape) -> RecurrentState {
        RecurrentState {
            encoder: tape.value(self.state_encoder).clone(),
            gru: tape.value(self.state_gru).clone(),
        }
    }
}

/// Run consecutive windows through the model on one tape, carrying the
/// recurrent states from `state`.
pub fn forward_chunk(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    windows: &[SampleWindow],
    state: &RecurrentState,
    noise: &mut NoiseMode,
) -> ChunkOutput {
    let hp = &model.hp;
    let ab = hp.ablation;
    let (n, l) = (model.dims.n_sensors, model.dims.hidden);
    let heads = model.heads();
    let mask_ne = model.graph.attention_mask();
    let necr_opts = NecrOptions {
        no_edge: ab.no_edge,
        aggregate_self: hp.necr_aggregate_self,
    };
    let sim = (!ab.no_necr).then(|| similarity_on(tape, &vars.necr));

    let mut enc_h = tape.constant(state.encoder.clone());
    let mut gru_h = tape.constant(state.gru.clone());
    let mut steps = Vec::with_capacity(windows.len());
    let mut total: Option<Var> = None;

    for win in windows {
        let w = WindowVars::new(tape, win);

        let (d_cdr, alpha_cdr, cdr_mask) = if ab.no_cdr {
            (tape.constant(Array2::zeros((n, l))), None, None)
        } else {
            let (alpha, mask) = if ab.no_causal_discovery {
                (None, None)
            } else {
                let a = attention_on(tape, &vars.cdr, &w);
                (Some(a), Some(threshold_mask(tape.value(a), hp.theta)))
            };
            let a_var = alpha.unwrap_or(w.target);
            let r = relation_on(tape, &vars.cdr, &w, a_var, mask.as_ref());
            let eps = tape.constant(noise.draw(1, l));
            let lat = encode_on(tape, &vars.cdr, r, enc_h, eps, hp.encoder_uses_current_hidden);
            enc_h = lat.hidden;
            (decode_on(tape, &vars.cdr, &w, lat.z, &heads), alpha, mask)
        };

        let (d_necr, alpha_ncr, alpha_ecr) = match sim {
            Some(sim) => {
                let o = necr_on(tape, &vars.necr, &w, sim, &mask_ne, necr_opts);
                (o.representation, Some(o.node_attention), Some(o.edge_attention))
            }
            None => (tape.constant(Array2::zeros((n, 2 * l))), None, None),
        };

        let (d_tdr, alpha_tdr) = if ab.no_tdr {
            (tape.constant(Array2::zeros((n, l))), None)
        } else {
            let o = tdr_on(tape, &vars.tdr, &w);
            (o.representation, Some(o.attention))
        };

        let x = tape.concat_cols(&[d_cdr, d_necr, d_tdr]);
        let d = gru_on(tape, &vars.fusion, x, gru_h);
        gru_h = d;

        let x_hat = predict_on(tape, &vars.fusion, d);
        let pred_loss = mse_on(tape, x_hat, w.target);
        let eps = tape.constant(noise.draw(n, l));
        let recon = reconstruct_on(tape, &vars.fusion, d, w.per_sensor, eps);
        let loss = tape.add(pred_loss, recon.loss);
        total = Some(match total {
            Some(t) => tape.add(t, loss),
            None => loss,
        });
        steps.push(StepVars {
            t: win.t,
            target: w.target,
            per_sensor: w.per_sensor,
            x_hat,
            recon,
            pred_loss,
            loss,
            alpha_cdr,
            cdr_mask,
            alpha_ncr,
            alpha_ecr,
            alpha_tdr,
            d_cdr,
            d_necr,
            d_tdr,
            d,
            encoder_hidden: enc_h,
        });
    }
    let total = total.unwrap_or_else(|| tape.constant(Array2::zeros((1, 1))));
    let loss = tape.scale(total, 1.0 / windows.len().max(1) as f64);
    ChunkOutput {
        steps,
        loss,
        state_encoder: enc_h,
        state_gru: gru_h,
    }
}

/// Attention snapshots and representations for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub alpha_cdr: Option<Array2<f64>>,
    pub candidate_sizes: Option<Vec<usize>>,
    pub alpha_ncr: Option<Array2<f64>>,
    pub alpha_ecr: Option<Array2<f64>>,
    pub alpha_tdr: Option<Array2<f64>>,
    pub d_cdr: Array2<f64>,
    pub d_necr: Array2<f64>,
    pub d_tdr: Array2<f64>,
    pub d: Array2<f64>,
}

/// Values produced for one window at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutput {
    pub t: usize,
    /// `N×m`
    pub target: Array2<f64>,
    pub x_hat: Array2<f64>,
    /// `N×ωm`
    pub history: Array2<f64>,
    pub reconstruction: Array2<f64>,
    pub recon_loss: f64,
    pub loss: f64,
    pub trace: Option<StepTrace>,
}

impl WindowOutput {
    pub(crate) fn from_step(tape: &Tape, s: &StepVars, trace: bool) -> Self {
        let val = |v: Var| tape.value(v).clone();
        let trace = trace.then(|| StepTrace {
            alpha_cdr: s.alpha_cdr.map(val),
            candidate_sizes: s
                .cdr_mask
                .as_ref()
                .map(|m| m.rows().into_iter().map(|r| r.iter().filter(|b| **b).count()).collect()),
            alpha_ncr: s.alpha_ncr.map(val),
            alpha_ecr: s.alpha_ecr.map(val),
            alpha_tdr: s.alpha_tdr.map(val),
            d_cdr: val(s.d_cdr),
            d_necr: val(s.d_necr),
            d_tdr: val(s.d_tdr),
            d: val(s.d),
        });
        Self {
            t: s.t,
            target: val(s.target),
            x_hat: val(s.x_hat),
            history: val(s.per_sensor),
            reconstruction: val(s.recon.reconstruction),
            recon_loss: tape.scalar(s.recon.loss),
            loss: tape.scalar(s.loss),
            trace,
        }
    }
}

/// Deterministic (`ε = 0`) pass over the windows ending at each `t` in
/// `targets`, which must be consecutive. States reset every `batch_size`
/// windows when `reset_per_batch` is set; those chunks run in parallel.
pub fn run_series(
    model: &Model,
    x: &crate::data::TimeSeriesMatrix,
    targets: std::ops::Range<usize>,
    trace: bool,
) -> crate::error::Result<Vec<WindowOutput>> {
    use rayon::prelude::*;
    let width = model.hp.width;
    let bs = model.hp.batch_size;
    let starts: Vec<usize> = targets.clone().step_by(bs).collect();
    let run_chunk = |start: usize, state: &RecurrentState| -> crate::error::Result<(Vec<WindowOutput>, RecurrentState)> {
        let end = (start + bs).min(targets.end);
        let windows = (start..end)
            .map(|t| SampleWindow::at(x, t, width))
            .collect::<crate::error::Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let vars = model.params.freeze(&mut tape);
        let out = forward_chunk(&mut tape, model, &vars, &windows, state, &mut NoiseMode::Zero);
        let outs = out.steps.iter().map(|s| WindowOutput::from_step(&tape, s, trace)).collect();
        Ok((outs, out.final_state(&tape)))
    };
    let zero = RecurrentState::zeros(model.dims);
    if model.hp.reset_per_batch {
        let parts = starts
            .par_iter()
            .map(|&s| run_chunk(s, &zero).map(|r| r.0))
            .collect::<crate::error::Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().collect())
    } else {
        let mut state = zero;
        let mut all = Vec::with_capacity(targets.len());
        for s in starts {
            let (outs, next) = run_chunk(s, &state)?;
            all.extend(outs);
            state = next;
        }
        Ok(all)
    }
}
