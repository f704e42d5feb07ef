//! Minimal reverse-mode automatic differentiation over dense 2-D matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates gradients into the nodes that require
//! them. Values are `f64` throughout so that gradients can be checked against
//! central finite differences.
//!
//! Broadcasting in [`Tape::add`], [`Tape::sub`] and [`Tape::mul`] is limited to
//! the right operand being a `1×n` row, an `n×1` column, or a `1×1` scalar.

use ndarray::{s, Array2, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Square(Var),
    OuterAdd(Var, Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    SumCols(Var),
    Sum(Var),
    Reshape(Var),
    RowNormalize(Var),
    PerRowLinear { x: Var, w: Var, heads: Vec<usize>, out: usize },
    GatherRows(Var, Vec<usize>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn broadcast_ok(a: (usize, usize), b: (usize, usize)) -> bool {
    a == b || b == (1, a.1) || b == (a.0, 1) || b == (1, 1)
}

fn broadcast_to(b: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    if b.dim() == shape {
        b.clone()
    } else {
        b.broadcast(shape)
            .expect("broadcast shape checked at record time")
            .to_owned()
    }
}

fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if g.nrows() != shape.0 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if g.ncols() != shape.1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`; the usual shape for `x · Wᵀ` with `W` stored as out×in.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(broadcast_ok(sa, sb), "add: incompatible shapes {sa:?} and {sb:?}");
        let value = self.value(a) + &broadcast_to(self.value(b), sa);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(broadcast_ok(sa, sb), "sub: incompatible shapes {sa:?} and {sb:?}");
        let value = self.value(a) - &broadcast_to(self.value(b), sa);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(broadcast_ok(sa, sb), "mul: incompatible shapes {sa:?} and {sb:?}");
        let value = self.value(a) * &broadcast_to(self.value(b), sa);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| leaky_relu(x, slope));
        let ng = self.ng(a);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let ng = self.ng(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let ng = self.ng(a);
        self.push(value, Op::Square(a), ng)
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (n×1) and `b` (m×1).
    pub fn outer_add(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.1 == 1 && sb.1 == 1, "outer_add expects column vectors");
        let av = self.value(a);
        let bv = self.value(b);
        let value = Array2::from_shape_fn((sa.0, sb.0), |(i, j)| av[[i, 0]] + bv[[j, 0]]);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::OuterAdd(a, b), ng)
    }

    /// Row-wise softmax. Entries where `mask` is false get weight 0; a row
    /// with no admissible entry becomes all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Array2<bool>>) -> Var {
        let x = self.value(a);
        let mut out = Array2::<f64>::zeros(x.dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            let keep = |j: usize| mask.map_or(true, |m| m[[i, j]]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| keep(*j))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                continue;
            }
            let mut total = 0.0;
            for (j, v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    out[[i, j]] = e;
                    total += e;
                }
            }
            out.row_mut(i).mapv_inplace(|e| e / total);
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    /// Mean over rows: n×k → 1×k.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows of empty matrix")
            .insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(value, Op::MeanRows(a), ng)
    }

    /// Sum over columns: n×k → n×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(value, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let total = self.sum(a);
        self.scale(total, 1.0 / n)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("reshape: element count differs");
        let ng = self.ng(a);
        self.push(value, Op::Reshape(a), ng)
    }

    /// Scale every row to unit Euclidean norm. Rows must be nonzero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        let ng = self.ng(a);
        self.push(value, Op::RowNormalize(a), ng)
    }

    /// Per-row affine map with a separate weight block per row:
    /// `out[i] = W[heads[i]] · x[i]`, where `w` stacks the blocks as
    /// `(H·out)×in`.
    pub fn per_row_linear(&mut self, x: Var, w: Var, heads: &[usize], out: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(heads.len(), xv.nrows(), "per_row_linear: one head per row");
        assert_eq!(wv.ncols(), xv.ncols(), "per_row_linear: input width");
        let mut value = Array2::<f64>::zeros((xv.nrows(), out));
        for (i, &h) in heads.iter().enumerate() {
            let block = wv.slice(s![h * out..(h + 1) * out, ..]);
            value.row_mut(i).assign(&block.dot(&xv.row(i)));
        }
        let ng = self.ng(x) || self.ng(w);
        self.push(
            value,
            Op::PerRowLinear {
                x,
                w,
                heads: heads.to_vec(),
                out,
            },
            ng,
        )
    }

    /// `out[i] = a[idx[i]]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut value = Array2::<f64>::zeros((idx.len(), av.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            value.row_mut(i).assign(&av.row(r));
        }
        let ng = self.ng(a);
        self.push(value, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = g.t().dot(self.value(*a));
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        let gb = reduce_to(g.clone(), self.shape(*b));
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        let gb = reduce_to(-&g, self.shape(*b));
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let sa = self.shape(*a);
                    if self.ng(*b) {
                        let gb = reduce_to(&g * self.value(*a), self.shape(*b));
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        let ga = &g * &broadcast_to(self.value(*b), sa);
                        self.acc(&mut grads, *a, ga);
                    }
                }
                Op::Scale(a, k) => self.acc(&mut grads, *a, g * *k),
                Op::AddScalar(a) => self.acc(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let ga = Zip::from(&g).and(y).map_collect(|g, y| g * (1.0 - y * y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = Zip::from(&g).and(y).map_collect(|g, y| g * y * (1.0 - y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ga = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|g, x| if *x > 0.0 { *g } else { g * slope });
                    self.acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => self.acc(&mut grads, *a, g * y),
                Op::Square(a) => {
                    let ga = Zip::from(&g).and(self.value(*a)).map_collect(|g, x| 2.0 * g * x);
                    self.acc(&mut grads, *a, ga);
                }
                Op::OuterAdd(a, b) => {
                    if self.ng(*a) {
                        let ga = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(1));
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::SoftmaxRows(a) => {
                    // dx = y ⊙ (g − Σ_j g_j y_j), masked entries have y = 0.
                    let mut ga = Array2::<f64>::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.dot(&gr);
                        for j in 0..y.ncols() {
                            ga[[i, j]] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.ng(*p) {
                            let gp = g.slice(s![.., start..start + w]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::<f64>::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let sa = self.shape(*a);
                    let ga = broadcast_to(&g, sa) / sa.0 as f64;
                    self.acc(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let ga = broadcast_to(&g, self.shape(*a));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let sa = self.shape(*a);
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let ga = Array2::from_shape_vec(sa, flat).expect("reshape back");
                    self.acc(&mut grads, *a, ga);
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let mut ga = Array2::<f64>::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let norm = x.row(i).dot(&x.row(i)).sqrt();
                        let yg = y.row(i).dot(&g.row(i));
                        for j in 0..x.ncols() {
                            ga[[i, j]] = (g[[i, j]] - y[[i, j]] * yg) / norm;
                        }
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::PerRowLinear { x, w, heads, out } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    if self.ng(*x) {
                        let mut gx = Array2::<f64>::zeros(xv.dim());
                        for (i, &h) in heads.iter().enumerate() {
                            let block = wv.slice(s![h * out..(h + 1) * out, ..]);
                            gx.row_mut(i).assign(&block.t().dot(&g.row(i)));
                        }
                        self.acc(&mut grads, *x, gx);
                    }
                    if self.ng(*w) {
                        let mut gw = Array2::<f64>::zeros(wv.dim());
                        for (i, &h) in heads.iter().enumerate() {
                            let gi = g.row(i);
                            let xi = xv.row(i);
                            let mut block = gw.slice_mut(s![h * out..(h + 1) * out, ..]);
                            for r in 0..*out {
                                let gr = gi[r];
                                if gr != 0.0 {
                                    block.row_mut(r).scaled_add(gr, &xi);
                                }
                            }
                        }
                        self.acc(&mut grads, *w, gw);
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::<f64>::zeros(self.shape(*a));
                    for (i, &r) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(r);
                        row += &g.row(i);
                    }
                    self.acc(&mut grads, *a, ga);
                }
            }
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}
