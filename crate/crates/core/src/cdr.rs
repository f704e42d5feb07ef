//! Causal discovery attention, the causal relationship representation, and
//! the variational encoder with one decoder head per variable.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Tape, Var};
use crate::data::SampleWindow;
use crate::params::{param_group, Dims, Init, WindowVars};

pub const LEAKY_SLOPE: f64 = 0.2;

param_group!(
    /// Shapes for `N` sensors, `m` channels, window `ω` and embedding `l`.
    CdrParams / CdrVars {
        /// `1×2m`: first `m` entries score the effect, last `m` the cause.
        a_c,
        /// `l×m`
        w_c,
        /// `l×ωm`
        w_e,
        w_r,
        w_h,
        b,
        w_mu,
        b_mu,
        w_sigma,
        b_sigma,
        w_re,
        b_re,
        /// `(N·l)×ωm`, head `i` occupies rows `i·l..(i+1)·l`.
        w_head,
        /// `N×l`
        b_head,
        w_z,
    }
);

impl CdrParams {
    pub fn init(d: Dims, init: &mut Init) -> Self {
        let (l, m, h) = (d.hidden, d.dim, d.history_len());
        Self {
            a_c: init.matrix(1, 2 * m),
            w_c: init.matrix(l, m),
            w_e: init.matrix(l, h),
            w_r: init.matrix(l, l),
            w_h: init.matrix(l, l),
            b: init.bias(1, l),
            w_mu: init.matrix(l, l),
            b_mu: init.bias(1, l),
            w_sigma: init.matrix(l, l),
            b_sigma: init.bias(1, l),
            w_re: init.matrix(l, l),
            b_re: init.bias(1, l),
            w_head: init.matrix(d.n_sensors * l, h),
            b_head: init.bias(d.n_sensors, l),
            w_z: init.matrix(l, l),
        }
    }
}

/// Attention of every effect row over all `N·ω` lagged candidates
/// (`N×Nω`, candidate `j·ω + p`).
pub fn attention_on(tape: &mut Tape, p: &CdrVars, w: &WindowVars) -> Var {
    let m = tape.shape(w.target).1;
    let a_eff = tape.slice_cols(p.a_c, 0, m);
    let a_cause = tape.slice_cols(p.a_c, m, 2 * m);
    let e = tape.matmul_t(w.target, a_eff);
    let c = tape.matmul_t(w.candidates, a_cause);
    let s = tape.outer_add(e, c);
    let s = tape.leaky_relu(s, LEAKY_SLOPE);
    tape.softmax_rows(s, None)
}

/// `LeakyReLU(W_e S_i + Σ_{c ∈ C_i} α_ic W_c x_c)`. With `mask = None` the
/// causal term is dropped entirely.
pub fn relation_on(tape: &mut Tape, p: &CdrVars, w: &WindowVars, alpha: Var, mask: Option<&Array2<bool>>) -> Var {
    let eff = tape.matmul_t(w.per_sensor, p.w_e);
    let pre = match mask {
        Some(mask) => {
            let keep = tape.constant(mask.mapv(|b| if b { 1.0 } else { 0.0 }));
            let kept = tape.mul(alpha, keep);
            let proj = tape.matmul_t(w.candidates, p.w_c);
            let agg = tape.matmul(kept, proj);
            tape.add(eff, agg)
        }
        None => eff,
    };
    tape.leaky_relu(pre, LEAKY_SLOPE)
}

#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub z: Var,
    pub mu: Var,
    pub log_sigma: Var,
    pub hidden: Var,
}

/// Recurrent encoder and reparameterized latent. `h_prev` and `eps` are `1×l`.
pub fn encode_on(tape: &mut Tape, p: &CdrVars, r: Var, h_prev: Var, eps: Var, use_current_hidden: bool) -> LatentVars {
    let pooled = tape.mean_rows(r);
    let a = tape.matmul_t(pooled, p.w_r);
    let bh = tape.matmul_t(h_prev, p.w_h);
    let s = tape.add(a, bh);
    let s = tape.add(s, p.b);
    let hidden = tape.tanh(s);
    let src = if use_current_hidden { hidden } else { h_prev };
    let mu = tape.matmul_t(src, p.w_mu);
    let mu = tape.add(mu, p.b_mu);
    let log_sigma = tape.matmul_t(src, p.w_sigma);
    let log_sigma = tape.add(log_sigma, p.b_sigma);
    let sigma = tape.exp(log_sigma);
    let noise = tape.mul(sigma, eps);
    let sample = tape.add(mu, noise);
    let pre = tape.matmul_t(sample, p.w_re);
    let pre = tape.add(pre, p.b_re);
    let z = tape.tanh(pre);
    LatentVars {
        z,
        mu,
        log_sigma,
        hidden,
    }
}

/// `ĥ_i = tanh(W_head(heads[i]) S_i + W_z Z + b_head(heads[i]))`.
pub fn decode_on(tape: &mut Tape, p: &CdrVars, w: &WindowVars, z: Var, heads: &[usize]) -> Var {
    let l = tape.shape(p.w_z).0;
    let a = tape.per_row_linear(w.per_sensor, p.w_head, heads, l);
    let bias = tape.gather_rows(p.b_head, heads);
    let zt = tape.matmul_t(z, p.w_z);
    let s = tape.add(a, bias);
    let s = tape.add(s, zt);
    tape.tanh(s)
}

/// `N×(N·ω)` attention over lagged causes.
pub fn causal_attention(window: &SampleWindow, params: &CdrParams) -> Array2<f64> {
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let w = WindowVars::new(&mut tape, window);
    let a = attention_on(&mut tape, &p, &w);
    tape.value(a).clone()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub cause: usize,
    /// Window position, 0 = oldest. Timestamp is `t − ω + position`.
    pub position: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSets {
    pub width: usize,
    pub sets: Vec<Vec<Candidate>>,
}

impl CandidateSets {
    /// `N×(N·ω)` membership mask.
    pub fn mask(&self) -> Array2<bool> {
        let n = self.sets.len();
        let mut mask = Array2::from_elem((n, n * self.width), false);
        for (i, set) in self.sets.iter().enumerate() {
            for c in set {
                mask[[i, c.cause * self.width + c.position]] = true;
            }
        }
        mask
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }
}

pub fn threshold_mask(alpha: &Array2<f64>, theta: f64) -> Array2<bool> {
    alpha.mapv(|a| a >= theta)
}

pub fn select_candidates(alpha: &Array2<f64>, width: usize, theta: f64) -> CandidateSets {
    let sets = alpha
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &a)| a >= theta)
                .map(|(c, &a)| Candidate {
                    cause: c / width,
                    position: c % width,
                    weight: a,
                })
                .collect()
        })
        .collect();
    CandidateSets { width, sets }
}

/// `N×l` relation representation.
pub fn relation_representation(
    window: &SampleWindow,
    cands: &CandidateSets,
    alpha: &Array2<f64>,
    params: &CdrParams,
) -> Array2<f64> {
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let w = WindowVars::new(&mut tape, window);
    let a = tape.constant(alpha.clone());
    let r = relation_on(&mut tape, &p, &w, a, Some(&cands.mask()));
    tape.value(r).clone()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: Array2<f64>,
    pub mu: Array2<f64>,
    pub log_sigma: Array2<f64>,
    /// Encoder hidden state carried to the next window.
    pub hidden: Array2<f64>,
}

/// Draw `ε` from `rng` unless `noise` fixes it.
pub fn encode_latent<R: Rng>(
    r: &Array2<f64>,
    h_prev: &Array2<f64>,
    params: &CdrParams,
    noise: Option<&Array2<f64>>,
    use_current_hidden: bool,
    rng: &mut R,
) -> LatentState {
    let l = params.w_r.nrows();
    let eps = noise.cloned().unwrap_or_else(|| standard_normal(rng, 1, l));
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let rv = tape.constant(r.clone());
    let hv = tape.constant(h_prev.clone());
    let ev = tape.constant(eps);
    let lat = encode_on(&mut tape, &p, rv, hv, ev, use_current_hidden);
    LatentState {
        z: tape.value(lat.z).clone(),
        mu: tape.value(lat.mu).clone(),
        log_sigma: tape.value(lat.log_sigma).clone(),
        hidden: tape.value(lat.hidden).clone(),
    }
}

/// `N×l` disentangled representation, one head per variable.
pub fn multihead_decode(window: &SampleWindow, z: &Array2<f64>, params: &CdrParams) -> Array2<f64> {
    let mut tape = Tape::new();
    let p = params.freeze(&mut tape);
    let w = WindowVars::new(&mut tape, window);
    let zv = tape.constant(z.clone());
    let heads: Vec<usize> = (0..window.n_sensors()).collect();
    let d = decode_on(&mut tape, &p, &w, zv, &heads);
    tape.value(d).clone()
}

pub fn standard_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeSeriesMatrix;
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(n: usize, w: usize, l: usize) -> Dims {
        Dims {
            n_sensors: n,
            dim: 1,
            width: w,
            hidden: l,
        }
    }

    fn random_params(d: Dims, seed: u64) -> CdrParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CdrParams::init(d, &mut Init::new(&mut rng))
    }

    fn random_window(n: usize, w: usize, seed: u64) -> SampleWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = TimeSeriesMatrix::from_rows(standard_normal(&mut rng, w + 1, n)).unwrap();
        SampleWindow::at(&x, w, w).unwrap()
    }

    fn window_from(history: Vec<f64>, target: Vec<f64>, n: usize) -> SampleWindow {
        let w = history.len() / n;
        SampleWindow {
            history: Array3::from_shape_vec((w, n, 1), history).unwrap(),
            target: Array2::from_shape_vec((n, 1), target).unwrap(),
            t: w,
        }
    }

    #[test]
    fn zero_attention_vector_is_uniform() {
        let d = dims(3, 4, 5);
        let mut p = random_params(d, 1);
        p.a_c.fill(0.0);
        let a = causal_attention(&random_window(3, 4, 2), &p);
        assert!(a.iter().all(|v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn hand_softmax_two_thirds() {
        let d = dims(1, 2, 2);
        let mut p = random_params(d, 1);
        p.a_c = array![[0.0, 1.0]];
        let w = window_from(vec![2f64.ln(), 0.0], vec![0.3], 1);
        let a = causal_attention(&w, &p);
        assert!((a[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((a[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_selection_cases() {
        let a = array![[0.5, 0.3, 0.2]];
        let c = select_candidates(&a, 3, 0.25);
        assert_eq!(c.sets[0].iter().map(|c| c.position).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(select_candidates(&a, 3, 0.0).sizes(), vec![3]);
        assert_eq!(select_candidates(&a, 3, 1.01).sizes(), vec![0]);
        let c2 = select_candidates(&array![[0.1, 0.2, 0.3, 0.4]], 2, 0.25);
        assert_eq!((c2.sets[0][0].cause, c2.sets[0][0].position), (1, 0));
    }

    #[test]
    fn empty_candidates_leave_effect_term() {
        let d = dims(2, 3, 4);
        let p = random_params(d, 3);
        let w = random_window(2, 3, 4);
        let alpha = causal_attention(&w, &p);
        let r = relation_representation(&w, &select_candidates(&alpha, 3, 2.0), &alpha, &p);
        let expect = w.per_sensor().dot(&p.w_e.t()).mapv(|v| crate::autograd::leaky_relu(v, 0.2));
        assert_eq!(r, expect);
    }

    #[test]
    fn relation_hand_case() {
        let d = dims(1, 2, 2);
        let mut p = random_params(d, 0);
        p.w_c = array![[1.0], [-2.0]];
        p.w_e = array![[1.0, 0.0], [0.5, 1.0]];
        let w = window_from(vec![1.0, 3.0], vec![0.0], 1);
        let alpha = array![[1.0, 0.0]];
        let cands = select_candidates(&alpha, 2, 0.5);
        let r = relation_representation(&w, &cands, &alpha, &p);
        // W_e S = [1, 3.5]; α·W_c x_0 = [1, -2]; sum [2, 1.5]
        assert_eq!(r, array![[2.0, 1.5]]);
        p.w_c = array![[1.0], [-4.0]];
        let r = relation_representation(&w, &cands, &alpha, &p);
        // [2, -0.5] → leaky [2, -0.1]
        assert!((r[[0, 1]] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_params_give_zero_representations() {
        let d = dims(2, 3, 4);
        let p = random_params(d, 0).zeros_like();
        let w = random_window(2, 3, 1);
        let alpha = causal_attention(&w, &p);
        let r = relation_representation(&w, &select_candidates(&alpha, 3, 0.0), &alpha, &p);
        assert!(r.iter().all(|v| *v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lat = encode_latent(&r, &Array2::zeros((1, 4)), &p, None, false, &mut rng);
        assert!(lat.mu.iter().chain(lat.z.iter()).all(|v| *v == 0.0));
        assert!(multihead_decode(&w, &lat.z, &p).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_noise_latent_is_deterministic_mean_path() {
        let d = dims(2, 3, 3);
        let p = random_params(d, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = standard_normal(&mut rng, 2, 3);
        let h = standard_normal(&mut rng, 1, 3);
        let lat = encode_latent(&r, &h, &p, Some(&Array2::zeros((1, 3))), false, &mut rng);
        let mu = h.dot(&p.w_mu.t()) + &p.b_mu;
        let z = (mu.dot(&p.w_re.t()) + &p.b_re).mapv(f64::tanh);
        assert_eq!(lat.mu, mu);
        assert_eq!(lat.z, z);
        let hidden = (r.mean_axis(ndarray::Axis(0)).unwrap().insert_axis(ndarray::Axis(0)).dot(&p.w_r.t())
            + h.dot(&p.w_h.t())
            + &p.b)
            .mapv(f64::tanh);
        assert!((&lat.hidden - &hidden).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn reparameterized_gradient_wrt_w_sigma() {
        let d = dims(2, 3, 3);
        let p = random_params(d, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = standard_normal(&mut rng, 2, 3);
        let h = standard_normal(&mut rng, 1, 3);
        let eps = standard_normal(&mut rng, 1, 3);
        let loss = |p: &CdrParams, tape: &mut Tape, bind: bool| {
            let v = if bind { p.bind(tape) } else { p.freeze(tape) };
            let rv = tape.constant(r.clone());
            let hv = tape.constant(h.clone());
            let ev = tape.constant(eps.clone());
            let lat = encode_on(tape, &v, rv, hv, ev, false);
            let s = tape.sum(lat.z);
            (v, s)
        };
        let mut tape = Tape::new();
        let (v, s) = loss(&p, &mut tape, true);
        let g = tape.backward(s).get(v.w_sigma).unwrap().clone();
        for idx in 0..9 {
            let (a, b) = (idx / 3, idx % 3);
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.w_sigma[[a, b]] += delta;
                let mut t = Tape::new();
                let (_, s) = loss(&q, &mut t, false);
                t.scalar(s)
            };
            let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
            assert!((fd - g[[a, b]]).abs() <= 1e-3 * fd.abs().max(1e-6), "{fd} vs {}", g[[a, b]]);
        }
    }

    #[test]
    fn monte_carlo_mean_of_latent_argument() {
        let d = dims(2, 3, 3);
        let p = random_params(d, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = standard_normal(&mut rng, 1, 3);
        let mu = h.dot(&p.w_mu.t()) + &p.b_mu;
        let sigma = (h.dot(&p.w_sigma.t()) + &p.b_sigma).mapv(f64::exp);
        let draws = 100_000;
        let mut sum = Array2::<f64>::zeros((1, 3));
        let mut sq = Array2::<f64>::zeros((1, 3));
        for _ in 0..draws {
            let eps = standard_normal(&mut rng, 1, 3);
            let arg = (&mu + &(&sigma * &eps)).dot(&p.w_re.t()) + &p.b_re;
            sum += &arg;
            sq += &arg.mapv(|v| v * v);
        }
        let mean = &sum / draws as f64;
        let var = &sq / draws as f64 - mean.mapv(|v| v * v);
        let expect = mu.dot(&p.w_re.t()) + &p.b_re;
        for k in 0..3 {
            let se = (var[[0, k]] / draws as f64).sqrt();
            assert!((mean[[0, k]] - expect[[0, k]]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn heads_are_isolated() {
        let d = dims(3, 4, 2);
        let p = random_params(d, 6);
        let w = random_window(3, 4, 7);
        let z = array![[0.3, -0.2]];
        let base = multihead_decode(&w, &z, &p);
        let mut q = p.clone();
        for r in 2..4 {
            for c in 0..4 {
                q.w_head[[r, c]] += 0.5;
            }
        }
        let moved = multihead_decode(&w, &z, &q);
        assert_eq!(base.row(0), moved.row(0));
        assert_eq!(base.row(2), moved.row(2));
        assert_ne!(base.row(1), moved.row(1));

        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        let wv = WindowVars::new(&mut tape, &w);
        let zv = tape.constant(z.clone());
        let out = decode_on(&mut tape, &v, &wv, zv, &[0, 1, 2]);
        let row0 = tape.slice_cols(out, 0, 2);
        let sel = tape.constant(array![[1.0], [0.0], [0.0]]);
        let first = tape.mul(row0, sel);
        let s = tape.sum(first);
        let g = tape.backward(s).get(v.w_head).unwrap().clone();
        assert!(g.slice(ndarray::s![2.., ..]).iter().all(|v| *v == 0.0));
        assert!(g.slice(ndarray::s![..2, ..]).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn decode_hand_case() {
        let d = dims(2, 1, 2);
        let mut p = random_params(d, 0).zeros_like();
        p.w_head = array![[1.0], [0.0], [0.0], [2.0]];
        p.b_head = array![[0.1, 0.0], [0.0, -0.1]];
        p.w_z = array![[1.0, 0.0], [0.0, 1.0]];
        let w = window_from(vec![0.5, 0.25], vec![0.0, 0.0], 2);
        let z = array![[0.2, 0.3]];
        let out = multihead_decode(&w, &z, &p);
        let expect = array![
            [(0.5f64 + 0.1 + 0.2).tanh(), 0.3f64.tanh()],
            [0.2f64.tanh(), (0.5f64 - 0.1 + 0.3).tanh()]
        ];
        assert!((&out - &expect).iter().all(|v| v.abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn attention_rows_sum_to_one(seed in 0u64..10_000, n in 1usize..6, w in 2usize..10) {
            let d = dims(n, w, 3);
            let a = causal_attention(&random_window(n, w, seed), &random_params(d, seed ^ 1));
            for row in a.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn candidate_sets_shrink_with_theta(seed in 0u64..1000, t1 in 0.0f64..0.3, dt in 0.0f64..0.3) {
            let d = dims(3, 4, 3);
            let a = causal_attention(&random_window(3, 4, seed), &random_params(d, seed));
            let lo = select_candidates(&a, 4, t1).mask();
            let hi = select_candidates(&a, 4, t1 + dt).mask();
            prop_assert!(lo.iter().zip(hi.iter()).all(|(l, h)| !*h || *l));
        }
    }
}
