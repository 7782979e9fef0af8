//! A small define-by-run reverse-mode autodiff tape.
//!
//! Each forward pass builds a fresh [`Graph`]. Parameters are bound into the
//! graph by name from a [`ParamStore`]; parameters whose names fall under a
//! frozen prefix become constants, so no gradient (and no backward work) is
//! spent on them.

use std::collections::HashMap;

use crate::params::ParamStore;
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm(Var, f64),
    MeanAxis(Var, usize),
    Concat(Vec<Var>, usize),
    SelectRows(Var, Vec<usize>),
    Im2Col(Var, usize),
    MaxPool(Var, Vec<usize>),
    Loss(Vec<Var>, Vec<Tensor>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    frozen: Vec<String>,
    no_grad: bool,
    flops: u64,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph in which nothing requires a gradient.
    pub fn inference() -> Self {
        Self { no_grad: true, ..Self::default() }
    }

    /// Parameters whose names start with `prefix` are bound as constants.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Multiply-accumulate count of all matrix products so far, times two.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad: requires_grad && !self.no_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf that gets a gradient (used by gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind the named parameter from `store` (once per graph).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} missing from store"))
            .clone();
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.push(t, Op::Leaf, trainable);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Gradients for every trainable parameter bound in this graph.
    pub fn param_grads(&self, grads: &Grads) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, &v) in &self.params {
            if !self.nodes[v.0].requires_grad {
                continue;
            }
            let g = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)));
            out.insert(name, g);
        }
        out
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    fn check_bcast(&self, a: Var, b: Var) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb,
            "cannot broadcast {sb:?} onto {sa:?}"
        );
    }

    /// `a + b` where `b`'s shape equals the trailing dims of `a`.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Var {
        self.check_bcast(a, b);
        let bv = self.value(b).data();
        let n = bv.len();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(bv) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(t, Op::AddBcast(a, b), rg)
    }

    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Var {
        self.check_bcast(a, b);
        let bv = self.value(b).data();
        let n = bv.len();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(bv) {
                *x *= y;
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MulBcast(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    /// Batched matrix product. `a` is `[batch.., m, k]` (or `[batch.., k, m]`
    /// when `ta`); `b` is either a shared 2-D matrix or carries the same
    /// batch dims as `a`.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs matrices: {sa:?} x {sb:?}");
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if tb { (cb, rb) } else { (rb, cb) };
        assert_eq!(k, kb, "matmul inner dims differ: {sa:?} x {sb:?} (ta={ta}, tb={tb})");
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared_b = sb.len() == 2;
        if !shared_b {
            assert_eq!(sa[..sa.len() - 2], sb[..sb.len() - 2], "batch dims differ");
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if shared_b && !ta {
            gemm(batch * m, k, n, av, false, bv, tb, &mut out, 0.0);
        } else {
            for i in 0..batch {
                let bs = if shared_b { bv } else { &bv[i * k * n..(i + 1) * k * n] };
                gemm(m, k, n, &av[i * m * k..(i + 1) * m * k], ta, bs, tb, &mut out[i * m * n..(i + 1) * m * n], 0.0);
            }
        }
        self.flops += 2 * (batch * m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&out_shape, out), Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        let rg = self.rg(&[a]);
        self.push(t, Op::Reshape(a), rg)
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let t = self.value(a).permuted(perm);
        let rg = self.rg(&[a]);
        self.push(t, Op::Permute(a, perm.to_vec()), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(t, Op::Gelu(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let d = t.last_dim();
        for row in t.data_mut().chunks_mut(d) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Normalization over the last axis without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut t = self.value(a).clone();
        let d = t.last_dim();
        for row in t.data_mut().chunks_mut(d) {
            let (mean, rstd) = moments(row, eps);
            for x in row.iter_mut() {
                *x = (*x - mean) * rstd;
            }
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::LayerNorm(a, eps), rg)
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let s = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&s, axis);
        let av = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += av[base + i];
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        let mut shape = s.clone();
        shape.remove(axis);
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&shape, out), Op::MeanAxis(a, axis), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let s0 = self.shape(parts[0]).to_vec();
        let (outer, _, inner) = split_axis(&s0, axis);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), s0.len(), "concat rank mismatch");
            for (d, (&x, &y)) in s.iter().zip(&s0).enumerate() {
                assert!(d == axis || x == y, "concat shape mismatch {s:?} vs {s0:?}");
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let pv = self.value(p).data();
                out.extend_from_slice(&pv[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = self.rg(parts);
        self.push(Tensor::new(&shape, out), Op::Concat(parts.to_vec(), axis), rg)
    }

    /// Gather rows of `a` viewed as `[rows, last_dim]`; output `[idx.len(), last_dim]`.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let d = src.last_dim();
        let rows = src.len() / d;
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            assert!(i < rows, "row {i} out of range {rows}");
            out.extend_from_slice(src.row(i));
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&[idx.len(), d], out), Op::SelectRows(a, idx.to_vec()), rg)
    }

    /// `[b, l, c]` -> `[b * l, k * c]` patches with zero "same" padding.
    pub fn im2col(&mut self, x: Var, k: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "im2col expects [batch, length, channels]");
        let (b, l, c) = (s[0], s[1], s[2]);
        let pad = (k - 1) / 2;
        let xv = self.value(x).data();
        let mut out = vec![0.0; b * l * k * c];
        for bi in 0..b {
            for t in 0..l {
                let row = &mut out[(bi * l + t) * k * c..(bi * l + t + 1) * k * c];
                for j in 0..k {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= l as isize {
                        continue;
                    }
                    let off = (bi * l + src as usize) * c;
                    row[j * c..(j + 1) * c].copy_from_slice(&xv[off..off + c]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&[b * l, k * c], out), Op::Im2Col(x, k), rg)
    }

    /// Stride-1 max pooling over the length axis of `[b, l, c]`, same length out.
    pub fn max_pool(&mut self, x: Var, k: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3);
        let (b, l, c) = (s[0], s[1], s[2]);
        let pad = (k - 1) / 2;
        let xv = self.value(x).data();
        let mut out = vec![0.0; b * l * c];
        let mut arg = vec![0usize; b * l * c];
        for bi in 0..b {
            for t in 0..l {
                let lo = t.saturating_sub(pad);
                let hi = (t + k - pad).min(l);
                for ch in 0..c {
                    let mut best = lo;
                    for src in lo + 1..hi {
                        if xv[(bi * l + src) * c + ch] > xv[(bi * l + best) * c + ch] {
                            best = src;
                        }
                    }
                    let o = (bi * l + t) * c + ch;
                    out[o] = xv[(bi * l + best) * c + ch];
                    arg[o] = (bi * l + best) * c + ch;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&s, out), Op::MaxPool(x, arg), rg)
    }

    /// A scalar loss whose value and input gradients were computed eagerly.
    pub fn loss(&mut self, inputs: &[Var], value: f64, grads: Vec<Tensor>) -> Var {
        assert_eq!(inputs.len(), grads.len());
        for (&v, g) in inputs.iter().zip(&grads) {
            assert_eq!(self.shape(v), g.shape(), "loss gradient shape mismatch");
        }
        let rg = self.rg(inputs);
        self.push(Tensor::scalar(value), Op::Loss(inputs.to_vec(), grads), rg)
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        grads[root.0] = Some(Tensor::new(self.shape(root), vec![1.0]));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Grads(grads)
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, gout.clone());
                self.accum(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, gout.clone());
                self.accum(grads, *b, gout.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accum(grads, *a, gout.zip_map(self.value(*b), |g, y| g * y));
                }
                if self.requires_grad(*b) {
                    self.accum(grads, *b, gout.zip_map(self.value(*a), |g, x| g * x));
                }
            }
            Op::AddBcast(a, b) => {
                self.accum(grads, *a, gout.clone());
                if self.requires_grad(*b) {
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for chunk in gout.data().chunks(n) {
                        for (acc, g) in gb.iter_mut().zip(chunk) {
                            *acc += g;
                        }
                    }
                    self.accum(grads, *b, Tensor::new(self.shape(*b), gb));
                }
            }
            Op::MulBcast(a, b) => {
                let bv = self.value(*b).data();
                let n = bv.len();
                if self.requires_grad(*a) {
                    let mut ga = gout.clone();
                    for chunk in ga.data_mut().chunks_mut(n) {
                        for (g, y) in chunk.iter_mut().zip(bv) {
                            *g *= y;
                        }
                    }
                    self.accum(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; n];
                    for (gc, xc) in gout.data().chunks(n).zip(self.value(*a).data().chunks(n)) {
                        for j in 0..n {
                            gb[j] += gc[j] * xc[j];
                        }
                    }
                    self.accum(grads, *b, Tensor::new(self.shape(*b), gb));
                }
            }
            Op::Scale(a, s) => self.accum(grads, *a, gout.map(|g| g * s)),
            Op::MatMul { a, b, ta, tb } => self.matmul_backward(*a, *b, *ta, *tb, gout, grads),
            Op::Reshape(a) => {
                let g = gout.clone().reshaped(self.shape(*a));
                self.accum(grads, *a, g);
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accum(grads, *a, gout.permuted(&inv));
            }
            Op::Relu(a) => {
                let g = gout.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.accum(grads, *a, g);
            }
            Op::Gelu(a) => {
                let g = gout.zip_map(self.value(*a), |g, x| g * gelu_grad(x));
                self.accum(grads, *a, g);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let d = y.last_dim();
                let mut g = gout.clone();
                for (gr, yr) in g.data_mut().chunks_mut(d).zip(y.data().chunks(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for (gi, yi) in gr.iter_mut().zip(yr) {
                        *gi = yi * (*gi - dot);
                    }
                }
                self.accum(grads, *a, g);
            }
            Op::LayerNorm(a, eps) => {
                let x = self.value(*a);
                let d = x.last_dim();
                let mut g = gout.clone();
                for ((gr, xr), yr) in g.data_mut().chunks_mut(d).zip(x.data().chunks(d)).zip(node.value.data().chunks(d)) {
                    let (_, rstd) = moments(xr, *eps);
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / d as f64;
                    for (gi, yi) in gr.iter_mut().zip(yr) {
                        *gi = rstd * (*gi - mg - yi * mgy);
                    }
                }
                self.accum(grads, *a, g);
            }
            Op::MeanAxis(a, axis) => {
                let s = self.shape(*a);
                let (outer, len, inner) = split_axis(s, *axis);
                let inv = 1.0 / len as f64;
                let gv = gout.data();
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            g[(o * len + l) * inner + i] = gv[o * inner + i] * inv;
                        }
                    }
                }
                self.accum(grads, *a, Tensor::new(s, g));
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(gout.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.requires_grad(p) {
                        let mut g = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            g.extend_from_slice(&gout.data()[base..base + len * inner]);
                        }
                        self.accum(grads, p, Tensor::new(self.shape(p), g));
                    }
                    offset += len;
                }
            }
            Op::SelectRows(a, idx) => {
                let s = self.shape(*a);
                let d = gout.last_dim();
                let mut g = Tensor::zeros(s);
                let gd = g.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gd[i * d + j] += gout.data()[r * d + j];
                    }
                }
                self.accum(grads, *a, g);
            }
            Op::Im2Col(x, k) => {
                let s = self.shape(*x);
                let (b, l, c) = (s[0], s[1], s[2]);
                let pad = (k - 1) / 2;
                let gv = gout.data();
                let mut g = vec![0.0; b * l * c];
                for bi in 0..b {
                    for t in 0..l {
                        let row = &gv[(bi * l + t) * k * c..(bi * l + t + 1) * k * c];
                        for j in 0..*k {
                            let src = t as isize + j as isize - pad as isize;
                            if src < 0 || src >= l as isize {
                                continue;
                            }
                            let off = (bi * l + src as usize) * c;
                            for ch in 0..c {
                                g[off + ch] += row[j * c + ch];
                            }
                        }
                    }
                }
                self.accum(grads, *x, Tensor::new(s, g));
            }
            Op::MaxPool(x, arg) => {
                let mut g = Tensor::zeros(self.shape(*x));
                let gd = g.data_mut();
                for (o, &src) in arg.iter().enumerate() {
                    gd[src] += gout.data()[o];
                }
                self.accum(grads, *x, g);
            }
            Op::Loss(inputs, lgrads) => {
                let up = gout.item();
                for (&v, lg) in inputs.iter().zip(lgrads) {
                    self.accum(grads, v, lg.map(|g| g * up));
                }
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, ta: bool, tb: bool, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let n = gout.last_dim();
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared_b = sb.len() == 2;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let gv = gout.data();
        if self.requires_grad(a) {
            let mut ga = vec![0.0; av.len()];
            if shared_b && !ta {
                gemm(batch * m, n, k, gv, false, bv, !tb, &mut ga, 0.0);
            } else {
                for i in 0..batch {
                    let bs = if shared_b { bv } else { &bv[i * k * n..(i + 1) * k * n] };
                    let go = &gv[i * m * n..(i + 1) * m * n];
                    let dst = &mut ga[i * m * k..(i + 1) * m * k];
                    if ta {
                        // A stored [k, m]: dA = op(B) dC^T
                        gemm(k, n, m, bs, tb, go, true, dst, 0.0);
                    } else {
                        gemm(m, n, k, go, false, bs, !tb, dst, 0.0);
                    }
                }
            }
            self.accum(grads, a, Tensor::new(sa, ga));
        }
        if self.requires_grad(b) {
            let mut gb = vec![0.0; bv.len()];
            if shared_b && !ta && !tb {
                gemm(k, batch * m, n, av, true, gv, false, &mut gb, 0.0);
            } else {
                for i in 0..batch {
                    let as_ = &av[i * m * k..(i + 1) * m * k];
                    let go = &gv[i * m * n..(i + 1) * m * n];
                    let (dst, beta) = if shared_b {
                        (&mut gb[..], if i == 0 { 0.0 } else { 1.0 })
                    } else {
                        (&mut gb[i * k * n..(i + 1) * k * n], 0.0)
                    };
                    if tb {
                        // B stored [n, k]: dB = dC^T op(A)
                        gemm(n, m, k, go, true, as_, ta, dst, beta);
                    } else {
                        gemm(k, m, n, as_, !ta, go, false, dst, beta);
                    }
                }
            }
            self.accum(grads, b, Tensor::new(sb, gb));
        }
    }
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
