//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameter leaves borrow
//! the [`ParamSet`] instead of copying it; [`Graph::backward`] returns gradients
//! for every parameter that took part in the computation.

use ndarray::{s, Array2, Axis};

use crate::nn::ctc::ctc_loss_and_grad;
use crate::nn::params::{Grads, Mat, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    Reshape(Var),
    ContextStack(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ReplaceRows { x: Var, row: Var, mask: Vec<bool> },
    MulConst(Var, Mat),
    /// Scalar loss with its gradient w.r.t. the input precomputed.
    Loss(Var, Mat),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `x + b` with `b` a `1 x n` row broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let v = self.value(x) + self.value(b);
        self.push(v, Op::AddRow(x, b))
    }

    pub fn mul_row(&mut self, x: Var, g: Var) -> Var {
        let v = self.value(x) * self.value(g);
        self.push(v, Op::MulRow(x, g))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x) * s;
        self.push(v, Op::Scale(x, s))
    }

    pub fn add_const(&mut self, x: Var, c: &Mat) -> Var {
        let v = self.value(x) + c;
        self.push(v, Op::AddConst(x))
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Mat) -> Var {
        let v = self.value(x) * &c;
        self.push(v, Op::MulConst(x, c))
    }

    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let wv = self.param(w);
        let bv = self.param(b);
        let h = self.matmul(x, wv);
        self.add_row(h, bv)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).mapv(|a| if a > 0.0 { a } else { slope * a });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| 0.5 * a * (1.0 + (GELU_C * (a + 0.044715 * a * a * a)).tanh()));
        self.push(v, Op::Gelu(x))
    }

    /// Row-wise standardization without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.ncols() as f64;
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|a| (a - mean) * is);
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { x, inv_std })
    }

    pub fn layer_norm_affine(&mut self, x: Var, gain: ParamId, bias: ParamId) -> Var {
        let n = self.layer_norm(x);
        let g = self.param(gain);
        let b = self.param(bias);
        let scaled = self.mul_row(n, g);
        self.add_row(scaled, b)
    }

    /// Softmax over each row restricted to the first `valid` columns (others get 0).
    pub fn softmax_rows(&mut self, x: Var, valid: usize) -> Var {
        let xv = self.value(x);
        let valid = valid.min(xv.ncols()).max(1);
        let mut out = Array2::zeros(xv.dim());
        for (src, mut dst) in xv.rows().into_iter().zip(out.rows_mut()) {
            let m = src.slice(s![..valid]).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for j in 0..valid {
                let e = (src[j] - m).exp();
                dst[j] = e;
                z += e;
            }
            for j in 0..valid {
                dst[j] /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = xv.iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), data).expect("reshape preserves element count");
        self.push(v, Op::Reshape(x))
    }

    /// Row `t` of the output is rows `t-ctx+1 ..= t` of `x` side by side
    /// (zeros before the first row).
    pub fn context_stack(&mut self, x: Var, ctx: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        let mut out = Array2::zeros((r, c * ctx));
        for t in 0..r {
            for k in 0..ctx {
                let src = t as isize - (ctx - 1 - k) as isize;
                if src >= 0 {
                    out.slice_mut(s![t, k * c..(k + 1) * c]).assign(&xv.row(src as usize));
                }
            }
        }
        self.push(out, Op::ContextStack(x, ctx))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        let views: Vec<_> = xs.iter().map(|&v| self.value(v).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(v, Op::ConcatCols(xs.to_vec()))
    }

    /// Replace the rows of `x` selected by `mask` with the `1 x n` row `row`.
    pub fn replace_rows(&mut self, x: Var, row: Var, mask: &[bool]) -> Var {
        let mut v = self.value(x).clone();
        let r = self.value(row).row(0).to_owned();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                v.row_mut(i).assign(&r);
            }
        }
        self.push(v, Op::ReplaceRows { x, row, mask: mask.to_vec() })
    }

    /// `sum over (row, class) of -log softmax(x[row])[class]`, divided by `denom`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)], denom: f64) -> Var {
        let xv = self.value(logits);
        let mut grad = Array2::zeros(xv.dim());
        let mut loss = 0.0;
        for &(r, class) in targets {
            let row = xv.row(r);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
            loss += lse - row[class];
            for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
                *g += (row[j] - lse).exp() / denom;
            }
            grad[[r, class]] -= 1.0 / denom;
        }
        self.push(Array2::from_elem((1, 1), loss / denom), Op::Loss(logits, grad))
    }

    /// CTC negative log-likelihood of `labels` (blank = 0) divided by `denom`.
    /// Returns `None` when no alignment exists.
    pub fn ctc_loss(&mut self, logits: Var, labels: &[usize], denom: f64) -> Option<Var> {
        let (nll, mut grad) = ctc_loss_and_grad(self.value(logits), labels)?;
        grad /= denom;
        Some(self.push(Array2::from_elem((1, 1), nll / denom), Op::Loss(logits, grad)))
    }

    pub fn add_scalars(&mut self, xs: &[Var]) -> Var {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn backward(&self, root: Var) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Array2::ones(self.value(root).dim()));
        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let out = self.nodes[i].value.as_ref();
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Transpose(a) => acc(&mut adj, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::AddRow(x, b) => {
                    acc(&mut adj, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut adj, *x, g);
                }
                Op::MulRow(x, r) => {
                    let gr = (&g * self.value(*x)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gx = &g * self.value(*r);
                    acc(&mut adj, *r, gr);
                    acc(&mut adj, *x, gx);
                }
                Op::Scale(x, s) => acc(&mut adj, *x, g * *s),
                Op::AddConst(x) => acc(&mut adj, *x, g),
                Op::MulConst(x, c) => acc(&mut adj, *x, g * c),
                Op::LeakyRelu(x, slope) => {
                    let mut gx = g;
                    gx.zip_mut_with(self.value(*x), |d, &a| {
                        if a <= 0.0 {
                            *d *= slope
                        }
                    });
                    acc(&mut adj, *x, gx);
                }
                Op::Gelu(x) => {
                    let mut gx = g;
                    gx.zip_mut_with(self.value(*x), |d, &a| {
                        let inner = GELU_C * (a + 0.044715 * a * a * a);
                        let t = inner.tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * a * a);
                        *d *= 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner;
                    });
                    acc(&mut adj, *x, gx);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = out.expect("value");
                    let cols = y.ncols() as f64;
                    let mut gx = Array2::zeros(y.dim());
                    for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                        let gy = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gy.sum() / cols;
                        let mean_gy = gy.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for j in 0..row.len() {
                            row[j] = inv_std[r] * (gy[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = out.expect("value");
                    let mut gx = Array2::zeros(y.dim());
                    for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..row.len() {
                            row[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Reshape(x) => {
                    let dim = self.value(*x).dim();
                    let data: Vec<f64> = g.iter().copied().collect();
                    acc(&mut adj, *x, Array2::from_shape_vec(dim, data).expect("same count"));
                }
                Op::ContextStack(x, ctx) => {
                    let (r, c) = self.value(*x).dim();
                    let mut gx = Array2::zeros((r, c));
                    for t in 0..r {
                        for k in 0..*ctx {
                            let src = t as isize - (*ctx - 1 - k) as isize;
                            if src >= 0 {
                                let mut dst = gx.row_mut(src as usize);
                                dst += &g.slice(s![t, k * c..(k + 1) * c]);
                            }
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut adj, *x, gx);
                }
                Op::ConcatCols(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let w = self.value(x).ncols();
                        acc(&mut adj, x, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ReplaceRows { x, row, mask } => {
                    let mut gx = g;
                    let mut grow = Array2::zeros((1, gx.ncols()));
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            let mut gr = grow.row_mut(0);
                            gr += &gx.row(i);
                            gx.row_mut(i).fill(0.0);
                        }
                    }
                    acc(&mut adj, *row, grow);
                    acc(&mut adj, *x, gx);
                }
                Op::Loss(x, grad) => acc(&mut adj, *x, grad * g[[0, 0]]),
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;

    /// Central-difference check of every parameter entry of `f`.
    fn check(params: &mut ParamSet, f: &dyn Fn(&mut Graph) -> Var) {
        let grads = {
            let mut g = Graph::new(params);
            let out = f(&mut g);
            g.backward(out)
        };
        let h = 1e-6;
        for id in params.ids().collect::<Vec<_>>() {
            for idx in 0..params.get(id).len() {
                let (r, c) = (idx / params.get(id).ncols(), idx % params.get(id).ncols());
                let orig = params.get(id)[[r, c]];
                params.get_mut(id)[[r, c]] = orig + h;
                let lp = { let mut g = Graph::new(params); let o = f(&mut g); g.scalar(o) };
                params.get_mut(id)[[r, c]] = orig - h;
                let lm = { let mut g = Graph::new(params); let o = f(&mut g); g.scalar(o) };
                params.get_mut(id)[[r, c]] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                assert!(err < 1e-5, "{} [{r},{c}]: numeric {num} analytic {ana}", params.name(id));
            }
        }
    }

    #[test]
    fn ops_match_finite_differences() {
        let mut rng = stage_rng(1, "graph");
        let mut p = ParamSet::new();
        let x = p.add_xavier("x", 6, 4, &mut rng);
        let w = p.add_xavier("w", 8, 6, &mut rng);
        let b = p.add_xavier("b", 1, 6, &mut rng);
        let gain = p.add_xavier("g", 1, 6, &mut rng);
        let row = p.add_xavier("row", 1, 6, &mut rng);
        let konst = Array2::from_shape_fn((3, 6), |(i, j)| (i * 7 + j) as f64 * 0.01);
        let f = move |g: &mut Graph| {
            let xv = g.param(x);
            let stacked = g.context_stack(xv, 2); // 6 x 8
            let wv = g.param(w);
            let h = g.matmul(stacked, wv); // 6 x 6
            let bv = g.param(b);
            let h = g.add_row(h, bv);
            let h = g.gelu(h);
            let h = g.reshape(h, 3, 12);
            let a = g.slice_cols(h, 0, 6);
            let c = g.slice_cols(h, 6, 6);
            let c = g.leaky_relu(c, 0.1);
            let a = g.layer_norm(a);
            let gv = g.param(gain);
            let a = g.mul_row(a, gv);
            let rv = g.param(row);
            let a = g.replace_rows(a, rv, &[false, true, false]);
            let a = g.add_const(a, &konst);
            let at = g.transpose(a);
            let att = g.matmul(c, at); // 3 x 3
            let att = g.scale(att, 0.5);
            let sm = g.softmax_rows(att, 2);
            let mixed = g.matmul(sm, c);
            let both = g.concat_cols(&[mixed, a]);
            let both = g.add(both, both);
            g.cross_entropy(both, &[(0, 1), (2, 7)], 2.0)
        };
        check(&mut p, &f);
    }

    #[test]
    fn ctc_matches_finite_differences() {
        let mut rng = stage_rng(2, "graph");
        let mut p = ParamSet::new();
        let x = p.add_xavier("logits", 7, 4, &mut rng);
        p.get_mut(x).mapv_inplace(|v| v * 3.0);
        let f = move |g: &mut Graph| {
            let xv = g.param(x);
            g.ctc_loss(xv, &[1, 2, 2], 3.0).unwrap()
        };
        check(&mut p, &f);
    }
}
