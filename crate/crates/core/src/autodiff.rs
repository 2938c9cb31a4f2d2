//! Reverse-mode differentiation over flat `f64` buffers.
//!
//! A [`Tape`] records every operation of one forward pass together with its
//! value. Learnable tensors live in a single flat slice owned by the caller;
//! `Param` nodes view into it, and [`Tape::backward`] returns gradients in the
//! same flat layout. Every [`Op`] variant has its adjoint in the one `match`
//! inside `backward`, so a missing rule is a compile error.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::equivariant::ChannelCoupling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the second operand of `Add`/`Mul` is laid against the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    /// Same length.
    Same,
    /// `b[i / width]`: one value per contiguous run of `width` elements.
    Rows(usize),
    /// `b[i % period]`: one value per column of a row-major matrix.
    Cols(usize),
}

impl Broadcast {
    #[inline]
    fn at(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Rows(w) => i / w,
            Broadcast::Cols(p) => i % p,
        }
    }
}

/// Contiguous groups of varying length covering a buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Groups {
    pub starts: Vec<usize>,
    pub len: usize,
}

impl Groups {
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut starts = Vec::new();
        let mut len = 0;
        for s in sizes {
            starts.push(len);
            len += s;
        }
        Groups { starts, len }
    }

    pub fn uniform(count: usize, width: usize) -> Self {
        Self::from_sizes(std::iter::repeat_n(width, count))
    }

    pub fn count(&self) -> usize {
        self.starts.len()
    }

    fn range(&self, g: usize) -> std::ops::Range<usize> {
        let end = self.starts.get(g + 1).copied().unwrap_or(self.len);
        self.starts[g]..end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowNormKind {
    /// Zero mean, unit variance per row.
    Layer,
    /// Unit root-mean-square per row.
    Rms,
}

/// Atom-pair bookkeeping for block messages and their attention-weighted sum.
///
/// `rho` is laid out `[matrix][channel][ao]`; the message of pair `p` from
/// sender `B` to receiver `A` is `[channel][ao of A]` at `msg_offsets[p]`;
/// the aggregate is `[ao][channel][head]`.
#[derive(Debug, Clone)]
pub struct PairPlan {
    pub matrices: Vec<DMatrix<f64>>,
    pub atom_ranges: Vec<std::ops::Range<usize>>,
    /// Ordered `(sender, receiver)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub channels: usize,
    pub heads: usize,
    pub msg_offsets: Vec<usize>,
    pub msg_len: usize,
}

impl PairPlan {
    pub fn new(
        matrices: Vec<DMatrix<f64>>,
        atom_ranges: Vec<std::ops::Range<usize>>,
        channels: usize,
        heads: usize,
    ) -> Self {
        let n = atom_ranges.len();
        let mut pairs = Vec::new();
        let mut msg_offsets = Vec::new();
        let mut msg_len = 0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    pairs.push((b, a));
                    msg_offsets.push(msg_len);
                    msg_len += channels * atom_ranges[a].len();
                }
            }
        }
        PairPlan {
            matrices,
            atom_ranges,
            pairs,
            channels,
            heads,
            msg_offsets,
            msg_len,
        }
    }

    pub fn num_aos(&self) -> usize {
        self.atom_ranges.last().map_or(0, |r| r.end)
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Constant,
    Param {
        offset: usize,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    /// `y[i] = x[index[i]]`, or 0 where the index is `usize::MAX`.
    Gather {
        x: Var,
        index: Arc<Vec<usize>>,
    },
    Add {
        x: Var,
        b: Var,
        bc: Broadcast,
    },
    Mul {
        x: Var,
        b: Var,
        bc: Broadcast,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Shift {
        x: Var,
        c: f64,
    },
    Sum(Var),
    Swish(Var),
    Softplus(Var),
    Exp(Var),
    Recip(Var),
    /// `C (m x n) = op(A) (m x k) op(B) (k x n)`, row-major, `op` an optional transpose.
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    /// Smoothed norm `sqrt(sum x^2 + eps^2) - eps` per group.
    GroupNorm {
        x: Var,
        groups: Arc<Groups>,
        eps: f64,
    },
    /// `y[i] = x[i] * s[group(i)]`.
    GroupScale {
        x: Var,
        s: Var,
        groups: Arc<Groups>,
    },
    RowNorm {
        x: Var,
        width: usize,
        kind: RowNormKind,
        eps: f64,
    },
    Coupling {
        f: Var,
        g: Var,
        op: Arc<ChannelCoupling<f64>>,
        batch: usize,
    },
    BlockMessage {
        rho: Var,
        plan: Arc<PairPlan>,
    },
    Aggregate {
        msg: Var,
        alpha: Var,
        plan: Arc<PairPlan>,
    },
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    param_lens: Vec<usize>,
}

/// Result of a backward sweep.
pub struct Gradients {
    /// Gradient with respect to the flat parameter buffer.
    pub params: Vec<f64>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to an intermediate node, if it was reached.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }
}

fn swish(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `c += alpha * op(a) op(b)` with explicit logical strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: strides describe in-bounds views of `a` (m x k), `b` (k x n) and
    // `c` (m x n); the callers build them from the matching buffer shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (usize, usize) {
    // logical (rows x cols) view of a row-major buffer, possibly stored transposed
    if transposed {
        (1, rows)
    } else {
        (cols, 1)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_lens: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param { offset } => &self.params[offset..offset + self.param_lens[v.0]],
            _ => &node.value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        let len = value.len();
        self.nodes.push(Node { op, value });
        self.param_lens.push(len);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, offset: usize, len: usize) -> Var {
        assert!(
            offset + len <= self.params.len(),
            "parameter view out of range"
        );
        self.nodes.push(Node {
            op: Op::Param { offset },
            value: Vec::new(),
        });
        self.param_lens.push(len);
        Var(self.nodes.len() - 1)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x)[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, v)
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut v = Vec::new();
        for &x in xs {
            v.extend_from_slice(self.value(x));
        }
        self.push(Op::Concat(xs.to_vec()), v)
    }

    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>) -> Var {
        let xv = self.value(x);
        let v = index
            .iter()
            .map(|&i| if i == usize::MAX { 0.0 } else { xv[i] })
            .collect();
        self.push(Op::Gather { x, index }, v)
    }

    pub fn add(&mut self, x: Var, b: Var, bc: Broadcast) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let v = xv
            .iter()
            .enumerate()
            .map(|(i, a)| a + bv[bc.at(i)])
            .collect();
        self.push(Op::Add { x, b, bc }, v)
    }

    pub fn mul(&mut self, x: Var, b: Var, bc: Broadcast) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let v = xv
            .iter()
            .enumerate()
            .map(|(i, a)| a * bv[bc.at(i)])
            .collect();
        self.push(Op::Mul { x, b, bc }, v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).iter().map(|a| a * c).collect();
        self.push(Op::Scale { x, c }, v)
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).iter().map(|a| a + c).collect();
        self.push(Op::Shift { x, c }, v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), vec![s])
    }

    pub fn swish(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&a| swish(a)).collect();
        self.push(Op::Swish(x), v)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&a| softplus(a)).collect();
        self.push(Op::Softplus(x), v)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| a.exp()).collect();
        self.push(Op::Exp(x), v)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| 1.0 / a).collect();
        self.push(Op::Recip(x), v)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn matmul(
        &mut self,
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    ) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), m * k, "matmul: left operand shape");
        assert_eq!(bv.len(), k * n, "matmul: right operand shape");
        let mut c = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            av,
            strides(m, k, ta),
            bv,
            strides(k, n, tb),
            &mut c,
            (n, 1),
        );
        self.push(
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                ta,
                tb,
            },
            c,
        )
    }

    pub fn group_norm(&mut self, x: Var, groups: Arc<Groups>, eps: f64) -> Var {
        let xv = self.value(x);
        assert_eq!(
            xv.len(),
            groups.len,
            "group_norm: groups do not cover input"
        );
        let v = (0..groups.count())
            .map(|g| {
                let sq: f64 = xv[groups.range(g)].iter().map(|a| a * a).sum();
                (sq + eps * eps).sqrt() - eps
            })
            .collect();
        self.push(Op::GroupNorm { x, groups, eps }, v)
    }

    pub fn group_scale(&mut self, x: Var, s: Var, groups: Arc<Groups>) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        let mut v = xv.to_vec();
        for g in 0..groups.count() {
            for y in &mut v[groups.range(g)] {
                *y *= sv[g];
            }
        }
        self.push(Op::GroupScale { x, s, groups }, v)
    }

    pub fn row_norm(&mut self, x: Var, width: usize, kind: RowNormKind, eps: f64) -> Var {
        let xv = self.value(x);
        let mut v = vec![0.0; xv.len()];
        for (row, out) in xv.chunks(width).zip(v.chunks_mut(width)) {
            let (mean, scale) = row_stats(row, kind, eps);
            for (o, a) in out.iter_mut().zip(row) {
                *o = (a - mean) * scale;
            }
        }
        self.push(
            Op::RowNorm {
                x,
                width,
                kind,
                eps,
            },
            v,
        )
    }

    pub fn coupling(&mut self, f: Var, g: Var, op: Arc<ChannelCoupling<f64>>, batch: usize) -> Var {
        let v = op.apply(self.value(f), self.value(g), batch);
        self.push(Op::Coupling { f, g, op, batch }, v)
    }

    pub fn block_message(&mut self, rho: Var, plan: Arc<PairPlan>) -> Var {
        let r = self.value(rho);
        let nao = plan.num_aos();
        let c = plan.channels;
        let mut v = vec![0.0; plan.msg_len];
        for (p, &(b, a)) in plan.pairs.iter().enumerate() {
            let (rb, ra) = (&plan.atom_ranges[b], &plan.atom_ranges[a]);
            let na = ra.len();
            let out = &mut v[plan.msg_offsets[p]..plan.msg_offsets[p] + c * na];
            for (o, mat) in plan.matrices.iter().enumerate() {
                for i in 0..c {
                    let row = &r[(o * c + i) * nao..(o * c + i + 1) * nao];
                    for mu in rb.clone() {
                        let x = row[mu];
                        if x == 0.0 {
                            continue;
                        }
                        for (k, nu) in ra.clone().enumerate() {
                            out[i * na + k] += x * mat[(mu, nu)];
                        }
                    }
                }
            }
        }
        self.push(Op::BlockMessage { rho, plan }, v)
    }

    pub fn aggregate(&mut self, msg: Var, alpha: Var, plan: Arc<PairPlan>) -> Var {
        let (mv, av) = (self.value(msg), self.value(alpha));
        let (c, h) = (plan.channels, plan.heads);
        let mut v = vec![0.0; plan.num_aos() * c * h];
        for (p, &(_, a)) in plan.pairs.iter().enumerate() {
            let ra = plan.atom_ranges[a].clone();
            let na = ra.len();
            let m = &mv[plan.msg_offsets[p]..plan.msg_offsets[p] + c * na];
            let al = &av[p * h..(p + 1) * h];
            for (k, nu) in ra.enumerate() {
                for i in 0..c {
                    let x = m[i * na + k];
                    for j in 0..h {
                        v[(nu * c + i) * h + j] += x * al[j];
                    }
                }
            }
        }
        self.push(Op::Aggregate { msg, alpha, plan }, v)
    }

    /// Propagates `seed` (the adjoint of `out`) back through the tape.
    pub fn backward(&self, out: Var, seed: &[f64]) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut pgrad = vec![0.0; self.params.len()];
        assert_eq!(seed.len(), self.value(out).len(), "seed shape");
        grads[out.0] = Some(seed.to_vec());

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=out.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (g, d) in pgrad[*offset..*offset + dy.len()].iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    for (g, d) in gx[*start..*start + dy.len()].iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        let gx = acc(&mut grads, x, n);
                        for (g, d) in gx.iter_mut().zip(&dy[off..off + n]) {
                            *g += d;
                        }
                        off += n;
                    }
                }
                Op::Gather { x, index } => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    for (&i, d) in index.iter().zip(&dy) {
                        if i != usize::MAX {
                            gx[i] += d;
                        }
                    }
                }
                Op::Add { x, b, bc } => {
                    let (nx, nb) = (self.value(*x).len(), self.value(*b).len());
                    {
                        let gx = acc(&mut grads, *x, nx);
                        for (g, d) in gx.iter_mut().zip(&dy) {
                            *g += d;
                        }
                    }
                    let gb = acc(&mut grads, *b, nb);
                    for (i, d) in dy.iter().enumerate() {
                        gb[bc.at(i)] += d;
                    }
                }
                Op::Mul { x, b, bc } => {
                    let (xv, bv) = (self.value(*x), self.value(*b));
                    {
                        let gx = acc(&mut grads, *x, xv.len());
                        for (i, d) in dy.iter().enumerate() {
                            gx[i] += d * bv[bc.at(i)];
                        }
                    }
                    let gb = acc(&mut grads, *b, bv.len());
                    for (i, d) in dy.iter().enumerate() {
                        gb[bc.at(i)] += d * xv[i];
                    }
                }
                Op::Scale { x, c } => {
                    let gx = acc(&mut grads, *x, dy.len());
                    for (g, d) in gx.iter_mut().zip(&dy) {
                        *g += d * c;
                    }
                }
                Op::Shift { x, .. } => {
                    let gx = acc(&mut grads, *x, dy.len());
                    for (g, d) in gx.iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    for g in gx.iter_mut() {
                        *g += dy[0];
                    }
                }
                Op::Swish(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv.len());
                    for ((g, d), &a) in gx.iter_mut().zip(&dy).zip(xv) {
                        let s = sigmoid(a);
                        *g += d * (s + a * s * (1.0 - s));
                    }
                }
                Op::Softplus(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv.len());
                    for ((g, d), &a) in gx.iter_mut().zip(&dy).zip(xv) {
                        *g += d * sigmoid(a);
                    }
                }
                Op::Exp(x) => {
                    let n = dy.len();
                    let gx = acc(&mut grads, *x, n);
                    for ((g, d), y) in gx.iter_mut().zip(&dy).zip(&node.value) {
                        *g += d * y;
                    }
                }
                Op::Recip(x) => {
                    let n = dy.len();
                    let gx = acc(&mut grads, *x, n);
                    for ((g, d), y) in gx.iter_mut().zip(&dy).zip(&node.value) {
                        *g -= d * y * y;
                    }
                }
                Op::MatMul {
                    a,
                    b,
                    m,
                    k,
                    n,
                    ta,
                    tb,
                } => {
                    let (m, k, n) = (*m, *k, *n);
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (sa, sb) = (strides(m, k, *ta), strides(k, n, *tb));
                    {
                        // dA = dC B^T, written through A's logical strides
                        let ga = acc(&mut grads, *a, m * k);
                        gemm(m, n, k, &dy, (n, 1), bv, (sb.1, sb.0), ga, sa);
                    }
                    let gb = acc(&mut grads, *b, k * n);
                    gemm(k, m, n, av, (sa.1, sa.0), &dy, (n, 1), gb, sb);
                }
                Op::GroupNorm { x, groups, eps } => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv.len());
                    for g in 0..groups.count() {
                        let denom = node.value[g] + eps;
                        for i in groups.range(g) {
                            gx[i] += dy[g] * xv[i] / denom;
                        }
                    }
                }
                Op::GroupScale { x, s, groups } => {
                    let (xv, sv) = (self.value(*x), self.value(*s));
                    {
                        let gx = acc(&mut grads, *x, xv.len());
                        for g in 0..groups.count() {
                            for i in groups.range(g) {
                                gx[i] += dy[i] * sv[g];
                            }
                        }
                    }
                    let gs = acc(&mut grads, *s, sv.len());
                    for (g, gsg) in gs.iter_mut().enumerate() {
                        *gsg += groups.range(g).map(|i| dy[i] * xv[i]).sum::<f64>();
                    }
                }
                Op::RowNorm {
                    x,
                    width,
                    kind,
                    eps,
                } => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv.len());
                    let w = *width as f64;
                    for ((row, d), (g, y)) in xv
                        .chunks(*width)
                        .zip(dy.chunks(*width))
                        .zip(gx.chunks_mut(*width).zip(node.value.chunks(*width)))
                    {
                        let (_, scale) = row_stats(row, *kind, *eps);
                        let dot: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / w;
                        let mean_d = match kind {
                            RowNormKind::Layer => d.iter().sum::<f64>() / w,
                            RowNormKind::Rms => 0.0,
                        };
                        for i in 0..row.len() {
                            g[i] += scale * (d[i] - mean_d - y[i] * dot);
                        }
                    }
                }
                Op::Coupling { f, g, op, batch } => {
                    let (fv, gv) = (self.value(*f), self.value(*g));
                    let mut df = vec![0.0; fv.len()];
                    let mut dg = vec![0.0; gv.len()];
                    op.backward(fv, gv, &dy, &mut df, &mut dg, *batch);
                    for (a, b) in acc(&mut grads, *f, fv.len()).iter_mut().zip(&df) {
                        *a += b;
                    }
                    for (a, b) in acc(&mut grads, *g, gv.len()).iter_mut().zip(&dg) {
                        *a += b;
                    }
                }
                Op::BlockMessage { rho, plan } => {
                    let n = self.value(*rho).len();
                    let gr = acc(&mut grads, *rho, n);
                    let nao = plan.num_aos();
                    let c = plan.channels;
                    for (p, &(b, a)) in plan.pairs.iter().enumerate() {
                        let (rb, ra) = (&plan.atom_ranges[b], &plan.atom_ranges[a]);
                        let na = ra.len();
                        let d = &dy[plan.msg_offsets[p]..plan.msg_offsets[p] + c * na];
                        for (o, mat) in plan.matrices.iter().enumerate() {
                            for i in 0..c {
                                let row = &mut gr[(o * c + i) * nao..(o * c + i + 1) * nao];
                                for mu in rb.clone() {
                                    row[mu] += ra
                                        .clone()
                                        .enumerate()
                                        .map(|(k, nu)| d[i * na + k] * mat[(mu, nu)])
                                        .sum::<f64>();
                                }
                            }
                        }
                    }
                }
                Op::Aggregate { msg, alpha, plan } => {
                    let (mv, av) = (self.value(*msg), self.value(*alpha));
                    let (c, h) = (plan.channels, plan.heads);
                    let mut gm = vec![0.0; mv.len()];
                    let mut ga = vec![0.0; av.len()];
                    for (p, &(_, a)) in plan.pairs.iter().enumerate() {
                        let ra = plan.atom_ranges[a].clone();
                        let na = ra.len();
                        let off = plan.msg_offsets[p];
                        for (k, nu) in ra.enumerate() {
                            for i in 0..c {
                                let x = mv[off + i * na + k];
                                for j in 0..h {
                                    let d = dy[(nu * c + i) * h + j];
                                    gm[off + i * na + k] += d * av[p * h + j];
                                    ga[p * h + j] += d * x;
                                }
                            }
                        }
                    }
                    for (a, b) in acc(&mut grads, *msg, mv.len()).iter_mut().zip(&gm) {
                        *a += b;
                    }
                    for (a, b) in acc(&mut grads, *alpha, av.len()).iter_mut().zip(&ga) {
                        *a += b;
                    }
                }
            }
            grads[idx] = Some(dy);
        }
        Gradients {
            params: pgrad,
            nodes: grads,
        }
    }
}

fn row_stats(row: &[f64], kind: RowNormKind, eps: f64) -> (f64, f64) {
    let w = row.len() as f64;
    match kind {
        RowNormKind::Layer => {
            let mean = row.iter().sum::<f64>() / w;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / w;
            (mean, 1.0 / (var + eps).sqrt())
        }
        RowNormKind::Rms => {
            let ms = row.iter().map(|a| a * a).sum::<f64>() / w;
            (0.0, 1.0 / (ms + eps).sqrt())
        }
    }
}
