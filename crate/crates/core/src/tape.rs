//! Reverse-mode differentiation tape over [`Tensor`].
//!
//! The reference encoder records its forward pass on a tape; the trainer
//! seeds cotangents at the gathered output nodes (mask state, pooled event
//! states, vocabulary scores) and runs one backward sweep to obtain
//! parameter gradients. Every op's backward rule is checked against central
//! finite differences in this module's tests.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    GatherRows { src: NodeId, rows: Vec<usize> },
    Add { a: NodeId, b: NodeId },
    /// y = x·W + b with W: (in, out), b: (1, out) broadcast over rows.
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Matmul { a: NodeId, b: NodeId },
    /// y = A·Bᵀ
    MatmulNt { a: NodeId, b: NodeId },
    ScaleConst { x: NodeId, c: S },
    SoftmaxRows { x: NodeId },
    /// Row-wise layer norm with learned gain/bias (each (1, d)).
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: S },
    Gelu { x: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    /// (n, d) -> (1, d) mean over rows.
    MeanRows { x: NodeId },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn gather_rows(&mut self, src: NodeId, rows: Vec<usize>) -> NodeId {
        let src_t = self.value(src);
        let mut out = Tensor::zeros(rows.len(), src_t.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(src_t.row(r));
        }
        self.push(out, Op::GatherRows { src, rows })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_inplace(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(x).matmul(self.value(w));
        let bias = self.value(b).clone();
        assert_eq!(bias.rows(), 1, "linear bias must be a row vector");
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                *out.at_mut(r, c) = out.at(r, c) + bias.at(0, c);
            }
        }
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::Matmul { a, b })
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(out, Op::MatmulNt { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: S) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale_inplace(c);
        self.push(out, Op::ScaleConst { x, c })
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            softmax_into(xv.row(r), out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows { x })
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: S) -> NodeId {
        let xv = self.value(x);
        let g = self.value(gamma).clone();
        let b = self.value(beta).clone();
        let d = S::from_count(xv.cols());
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<S>() / d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<S>() / d;
            let inv_std = (var + eps).sqrt().recip();
            for c in 0..xv.cols() {
                let xhat = (row[c] - mean) * inv_std;
                *out.at_mut(r, c) = g.at(0, c) * xhat + b.at(0, c);
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(gelu_tanh);
        self.push(out, Op::Gelu { x })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "column slice out of range");
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for p in &parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols { parts })
    }

    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let inv = S::from_count(xv.rows()).recip();
        let mut out = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for c in 0..xv.cols() {
                *out.at_mut(0, c) = out.at(0, c) + xv.at(r, c) * inv;
            }
        }
        self.push(out, Op::MeanRows { x })
    }

    /// Backward sweep from externally supplied cotangents. Multiple seeds
    /// accumulate, so one sweep serves a joint objective with several heads.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor<S>)>) -> Gradients<S> {
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            let v = self.value(id);
            assert_eq!(seed.rows(), v.rows(), "seed shape mismatch");
            assert_eq!(seed.cols(), v.cols(), "seed shape mismatch");
            accumulate(&mut grads[id.0], &seed);
        }

        for idx in (0..self.nodes.len()).rev() {
            let dy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                }
                Op::GatherRows { src, rows } => {
                    let cols = dy.cols();
                    let src_rows = self.value(*src).rows();
                    let mut dsrc = Tensor::zeros(src_rows, cols);
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            *dsrc.at_mut(r, c) = dsrc.at(r, c) + dy.at(i, c);
                        }
                    }
                    accumulate(&mut grads[src.0], &dsrc);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], &dy);
                    accumulate(&mut grads[b.0], &dy);
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let dx = dy.matmul_nt(wv); // dy · Wᵀ
                    let dw = xv.matmul_tn(&dy); // xᵀ · dy
                    let mut db = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for c in 0..dy.cols() {
                            *db.at_mut(0, c) = db.at(0, c) + dy.at(r, c);
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                    accumulate(&mut grads[w.0], &dw);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Matmul { a, b } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads[a.0], &dy.matmul_nt(bv));
                    accumulate(&mut grads[b.0], &av.matmul_tn(&dy));
                }
                Op::MatmulNt { a, b } => {
                    // y = A·Bᵀ: dA = dy·B, dB = dyᵀ·A
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads[a.0], &dy.matmul(bv));
                    accumulate(&mut grads[b.0], &dy.matmul_tn(av));
                }
                Op::ScaleConst { x, c } => {
                    let mut dx = dy.clone();
                    dx.scale_inplace(*c);
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::SoftmaxRows { x } => {
                    let y = &self.nodes[idx].value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dyr = dy.row(r);
                        let inner: S = yr.iter().zip(dyr).map(|(p, g)| *p * *g).sum();
                        for c in 0..y.cols() {
                            *dx.at_mut(r, c) = yr[c] * (dyr[c] - inner);
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let xv = self.value(*x);
                    let g = self.value(*gamma);
                    let d = S::from_count(xv.cols());
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let mut dgamma = Tensor::zeros(1, xv.cols());
                    let mut dbeta = Tensor::zeros(1, xv.cols());
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let mean = row.iter().copied().sum::<S>() / d;
                        let var =
                            row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<S>() / d;
                        let inv_std = (var + *eps).sqrt().recip();
                        let xhat: Vec<S> =
                            row.iter().map(|v| (*v - mean) * inv_std).collect();
                        let dyr = dy.row(r);
                        let dxhat: Vec<S> = (0..xv.cols())
                            .map(|c| dyr[c] * g.at(0, c))
                            .collect();
                        let mean_dxhat = dxhat.iter().copied().sum::<S>() / d;
                        let mean_dxhat_xhat = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(a, b)| *a * *b)
                            .sum::<S>()
                            / d;
                        for c in 0..xv.cols() {
                            *dx.at_mut(r, c) = inv_std
                                * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                            *dgamma.at_mut(0, c) = dgamma.at(0, c) + dyr[c] * xhat[c];
                            *dbeta.at_mut(0, c) = dbeta.at(0, c) + dyr[c];
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                    accumulate(&mut grads[gamma.0], &dgamma);
                    accumulate(&mut grads[beta.0], &dbeta);
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (o, (xi, dyi)) in dx
                        .data_mut()
                        .iter_mut()
                        .zip(xv.data().iter().zip(dy.data()))
                    {
                        *o = *dyi * gelu_tanh_derivative(*xi);
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::SliceCols { x, start, len } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        dx.row_mut(r)[*start..*start + *len].copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let mut dp = Tensor::zeros(pv.rows(), pv.cols());
                        for r in 0..pv.rows() {
                            dp.row_mut(r)
                                .copy_from_slice(&dy.row(r)[offset..offset + pv.cols()]);
                        }
                        offset += pv.cols();
                        accumulate(&mut grads[p.0], &dp);
                    }
                }
                Op::MeanRows { x } => {
                    let xv = self.value(*x);
                    let inv = S::from_count(xv.rows()).recip();
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        for c in 0..xv.cols() {
                            *dx.at_mut(r, c) = dy.at(0, c) * inv;
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
        }

        Gradients { grads }
    }
}

pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, delta: &Tensor<S>) {
    match slot {
        Some(existing) => existing.add_inplace(delta),
        None => *slot = Some(delta.clone()),
    }
}

pub fn softmax_into<S: Scalar>(scores: &[S], out: &mut [S]) {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for (o, s) in out.iter_mut().zip(scores) {
        let e = (*s - max).exp();
        *o = e;
        sum = sum + e;
    }
    let inv = sum.recip();
    for o in out.iter_mut() {
        *o = *o * inv;
    }
}

/// tanh-approximated GELU, the smooth variant used by BERT-family models.
pub fn gelu_tanh<S: Scalar>(x: S) -> S {
    let k = S::real(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = S::real(0.044_715);
    let half = S::real(0.5);
    half * x * (S::one() + (k * (x + a * x * x * x)).tanh())
}

fn gelu_tanh_derivative<S: Scalar>(x: S) -> S {
    let k = S::real(0.797_884_560_802_865_4);
    let a = S::real(0.044_715);
    let half = S::real(0.5);
    let three = S::real(3.0);
    let u = k * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * k * (S::one() + three * a * x * x)
}
