use super::{gemm_into, softmax_rows, Mat, Scalar, Tensor};
use crate::error::{config_err, shape_err, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: Conv1dGeom,
        cols: Vec<T>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
        cols: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        row: Var,
    },
    Gelu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    ToTokens {
        x: Var,
    },
    Row {
        x: Var,
        index: usize,
    },
    Dot {
        x: Var,
        coeffs: Vec<T>,
    },
    SoftmaxCe {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
}

#[derive(Clone, Copy, Debug)]
struct Conv1dGeom {
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    len_out: usize,
}

#[derive(Clone, Copy, Debug)]
struct Conv2dGeom {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Output length of a strided, symmetrically zero-padded convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return config_err("convolution stride must be positive");
    }
    if kernel == 0 || kernel > len + 2 * pad {
        return shape_err(format!("kernel {kernel} larger than padded input {len}+2*{pad}"));
    }
    Ok((len + 2 * pad - kernel) / stride + 1)
}

/// Projection weights of one multi-head attention block. Weights are
/// `[D, D]` in `x · w` orientation, biases `[D]`.
#[derive(Clone, Copy, Debug)]
pub struct MhaParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// A tape of tensor operations. Nodes are appended in evaluation order, so
/// every node's parents precede it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// `x · w + b` over the rows of `x` (`[rows, in]` or `[in]`).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        if ws.shape().len() != 2 {
            return shape_err(format!("linear weight must be 2-D, got {:?}", ws.shape()));
        }
        let (din, dout) = (ws.shape()[0], ws.shape()[1]);
        let last = *xs.shape().last().unwrap();
        if last != din {
            return shape_err(format!(
                "linear input {:?} does not match weight {:?}",
                xs.shape(),
                ws.shape()
            ));
        }
        let rows = xs.len() / din;
        if let Some(b) = b {
            if self.value(b).len() != dout {
                return shape_err(format!("linear bias must have {dout} entries"));
            }
        }
        let mut out = vec![T::zero(); rows * dout];
        gemm_into(
            T::one(),
            Mat::new(xs.data(), rows, din),
            Mat::new(ws.data(), din, dout),
            T::zero(),
            &mut out,
            dout,
            0,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, &bv) in row.iter_mut().zip(bd) {
                    *o = *o + bv;
                }
            }
        }
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// 1-D cross-correlation of `x: [C_in, L]` with `k: [C_out, C_in, K]`.
    pub fn conv1d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        if xs.len() != 2 || ks.len() != 3 || ks[1] != xs[0] {
            return shape_err(format!("conv1d input {xs:?} vs kernel {ks:?}"));
        }
        let (c_in, len, c_out, kernel) = (xs[0], xs[1], ks[0], ks[2]);
        let len_out = conv_out_len(len, kernel, stride, pad)?;
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return shape_err(format!("conv1d bias must have {c_out} entries"));
            }
        }
        let geom = Conv1dGeom {
            c_in,
            c_out,
            len,
            kernel,
            stride,
            pad,
            len_out,
        };
        let xd = self.value(x).data();
        let rows = c_in * kernel;
        let mut cols = vec![T::zero(); rows * len_out];
        for c in 0..c_in {
            for j in 0..kernel {
                let dst = &mut cols[(c * kernel + j) * len_out..(c * kernel + j + 1) * len_out];
                for (o, d) in dst.iter_mut().enumerate() {
                    let pos = (o * stride + j) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        *d = xd[c * len + pos as usize];
                    }
                }
            }
        }
        let mut out = vec![T::zero(); c_out * len_out];
        gemm_into(
            T::one(),
            Mat::new(self.value(k).data(), c_out, rows),
            Mat::new(&cols, rows, len_out),
            T::zero(),
            &mut out,
            len_out,
            0,
        );
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), len_out);
        }
        let value = Tensor::new(vec![c_out, len_out], out)?;
        Ok(self.push(value, Op::Conv1d { x, k, b, geom, cols }))
    }

    /// 2-D cross-correlation of `x: [C_in, H, W]` with a square kernel
    /// `k: [C_out, C_in, K, K]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != ks[3] {
            return shape_err(format!("conv2d input {xs:?} vs kernel {ks:?}"));
        }
        let (c_in, h, w, c_out, kernel) = (xs[0], xs[1], xs[2], ks[0], ks[2]);
        let h_out = conv_out_len(h, kernel, stride, pad)?;
        let w_out = conv_out_len(w, kernel, stride, pad)?;
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return shape_err(format!("conv2d bias must have {c_out} entries"));
            }
        }
        let geom = Conv2dGeom {
            c_in,
            c_out,
            h,
            w,
            kernel,
            stride,
            pad,
            h_out,
            w_out,
        };
        let xd = self.value(x).data();
        let rows = c_in * kernel * kernel;
        let spatial = h_out * w_out;
        let mut cols = vec![T::zero(); rows * spatial];
        for c in 0..c_in {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let r = (c * kernel + ky) * kernel + kx;
                    let dst = &mut cols[r * spatial..(r + 1) * spatial];
                    for oy in 0..h_out {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let src = &xd[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                        for ox in 0..w_out {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[oy * w_out + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); c_out * spatial];
        gemm_into(
            T::one(),
            Mat::new(self.value(k).data(), c_out, rows),
            Mat::new(&cols, rows, spatial),
            T::zero(),
            &mut out,
            spatial,
            0,
        );
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), spatial);
        }
        let value = Tensor::new(vec![c_out, h_out, w_out], out)?;
        Ok(self.push(value, Op::Conv2d { x, k, b, geom, cols }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add {:?} + {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Adds `row` (`D` values) to every row of `x: [N, D]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let d = *xv.shape().last().unwrap();
        if rv.len() != d {
            return shape_err(format!("add_row {:?} + {:?}", xv.shape(), rv.shape()));
        }
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(d) {
            for (o, &r) in chunk.iter_mut().zip(rv.data()) {
                *o = *o + r;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow { x, row }))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu(v)).collect();
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data,
        };
        self.push(value, Op::Gelu { x })
    }

    /// Normalises each row of `x` over its last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return shape_err(format!("layer_norm affine must have {d} entries"));
        }
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + bta[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Scaled dot-product attention over all token pairs, split into
    /// `heads` column blocks. `q`, `k`, `v` are `[N, D]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let shape = self.value(q).shape().to_vec();
        if shape.len() != 2 || self.value(k).shape() != shape || self.value(v).shape() != shape {
            return shape_err("attention expects equal [N, D] query, key and value");
        }
        let (n, d) = (shape[0], shape[1]);
        if heads == 0 || !d.is_multiple_of(heads) {
            return config_err(format!("model dim {d} not divisible by {heads} heads"));
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * n * n];
        let mut out = vec![T::zero(); n * d];
        for h in 0..heads {
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            gemm_into(
                scale,
                Mat::new(qd, n, d).cols(h * dh, dh),
                Mat::new(kd, n, d).cols(h * dh, dh).t(),
                T::zero(),
                p,
                n,
                0,
            );
            let s = softmax_rows(p, n);
            p.copy_from_slice(&s);
            gemm_into(
                T::one(),
                Mat::new(p, n, n),
                Mat::new(vd, n, d).cols(h * dh, dh),
                T::zero(),
                &mut out,
                d,
                h * dh,
            );
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Attention { q, k, v, heads, probs }))
    }

    /// Full multi-head self-attention block: projections, attention, output
    /// projection.
    pub fn multi_head_attention(&mut self, x: Var, heads: usize, p: &MhaParams) -> Result<Var> {
        let d = *self.value(x).shape().last().unwrap();
        if heads == 0 || !d.is_multiple_of(heads) {
            return config_err(format!("model dim {d} not divisible by {heads} heads"));
        }
        let q = self.linear(x, p.wq, Some(p.bq))?;
        let k = self.linear(x, p.wk, Some(p.bk))?;
        let v = self.linear(x, p.wv, Some(p.bv))?;
        let a = self.attention(q, k, v, heads)?;
        self.linear(a, p.wo, Some(p.bo))
    }

    /// Stacks `[N_i, D]` blocks along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat of zero blocks");
        }
        let d = *self.value(parts[0]).shape().last().unwrap();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.shape()[1] != d {
                return shape_err(format!("concat block {:?} is not [*, {d}]", pv.shape()));
            }
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / d;
        let value = Tensor::new(vec![rows, d], data)?;
        Ok(self.push(value, Op::ConcatRows { parts: parts.to_vec() }))
    }

    /// `[C, S1, S2, ...]` to `[S1*S2*..., C]`: one token per spatial site.
    pub fn to_tokens(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() < 2 {
            return shape_err("to_tokens needs a channel axis and at least one site axis");
        }
        let c = xv.shape()[0];
        let s = xv.len() / c;
        let src = xv.data();
        let mut data = vec![T::zero(); xv.len()];
        for ch in 0..c {
            for site in 0..s {
                data[site * c + ch] = src[ch * s + site];
            }
        }
        let value = Tensor::new(vec![s, c], data)?;
        Ok(self.push(value, Op::ToTokens { x }))
    }

    /// Row `index` of `x: [N, D]` as a `[1, D]` tensor.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.rows_cols();
        if index >= n {
            return shape_err(format!("row {index} of {n}"));
        }
        let value = Tensor::new(vec![1, d], xv.data()[index * d..(index + 1) * d].to_vec())?;
        Ok(self.push(value, Op::Row { x, index }))
    }

    /// `sum(x * coeffs)` as a scalar; `coeffs` is a constant.
    pub fn dot(&mut self, x: Var, coeffs: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != coeffs.len() {
            return shape_err(format!("dot of {} and {} values", xv.len(), coeffs.len()));
        }
        let s = xv.data().iter().zip(coeffs).map(|(&a, &b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::Dot {
                x,
                coeffs: coeffs.to_vec(),
            },
        ))
    }

    /// `-log softmax(logits)[label]` as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        let k = lv.len();
        if label >= k {
            return shape_err(format!("label {label} out of range for {k} classes"));
        }
        let max = lv.data().iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + lv.data().iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - lv.data()[label];
        let probs = softmax_rows(lv.data(), k);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, label, probs }))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return shape_err("backward requires a scalar loss");
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let wv = self.value(*w);
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = g.len() / dout;
                let xd = self.value(*x).data();
                with_grad(grads, *x, xd.len(), |dx| {
                    gemm_into(
                        T::one(),
                        Mat::new(g, rows, dout),
                        Mat::new(wv.data(), din, dout).t(),
                        T::one(),
                        dx,
                        din,
                        0,
                    )
                });
                with_grad(grads, *w, wv.len(), |dw| {
                    gemm_into(
                        T::one(),
                        Mat::new(xd, rows, din).t(),
                        Mat::new(g, rows, dout),
                        T::one(),
                        dw,
                        dout,
                        0,
                    )
                });
                if let Some(b) = b {
                    with_grad(grads, *b, dout, |db| {
                        for row in g.chunks(dout) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                    });
                }
            }
            Op::Conv1d { x, k, b, geom, cols } => {
                let rows = geom.c_in * geom.kernel;
                let lo = geom.len_out;
                let kd = self.value(*k).data();
                with_grad(grads, *k, kd.len(), |dk| {
                    gemm_into(
                        T::one(),
                        Mat::new(g, geom.c_out, lo),
                        Mat::new(cols, rows, lo).t(),
                        T::one(),
                        dk,
                        rows,
                        0,
                    )
                });
                if let Some(b) = b {
                    with_grad(grads, *b, geom.c_out, |db| channel_sums(db, g, lo));
                }
                let mut dcols = vec![T::zero(); rows * lo];
                gemm_into(
                    T::one(),
                    Mat::new(kd, geom.c_out, rows).t(),
                    Mat::new(g, geom.c_out, lo),
                    T::zero(),
                    &mut dcols,
                    lo,
                    0,
                );
                with_grad(grads, *x, geom.c_in * geom.len, |dx| {
                    for c in 0..geom.c_in {
                        for j in 0..geom.kernel {
                            let src = &dcols[(c * geom.kernel + j) * lo..(c * geom.kernel + j + 1) * lo];
                            for (o, &v) in src.iter().enumerate() {
                                let pos = (o * geom.stride + j) as isize - geom.pad as isize;
                                if pos >= 0 && (pos as usize) < geom.len {
                                    let t = &mut dx[c * geom.len + pos as usize];
                                    *t = *t + v;
                                }
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, k, b, geom, cols } => {
                let kk = geom.kernel;
                let rows = geom.c_in * kk * kk;
                let spatial = geom.h_out * geom.w_out;
                let kd = self.value(*k).data();
                with_grad(grads, *k, kd.len(), |dk| {
                    gemm_into(
                        T::one(),
                        Mat::new(g, geom.c_out, spatial),
                        Mat::new(cols, rows, spatial).t(),
                        T::one(),
                        dk,
                        rows,
                        0,
                    )
                });
                if let Some(b) = b {
                    with_grad(grads, *b, geom.c_out, |db| channel_sums(db, g, spatial));
                }
                let mut dcols = vec![T::zero(); rows * spatial];
                gemm_into(
                    T::one(),
                    Mat::new(kd, geom.c_out, rows).t(),
                    Mat::new(g, geom.c_out, spatial),
                    T::zero(),
                    &mut dcols,
                    spatial,
                    0,
                );
                with_grad(grads, *x, geom.c_in * geom.h * geom.w, |dx| {
                    for c in 0..geom.c_in {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let r = (c * kk + ky) * kk + kx;
                                let src = &dcols[r * spatial..(r + 1) * spatial];
                                for oy in 0..geom.h_out {
                                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                    if iy < 0 || iy as usize >= geom.h {
                                        continue;
                                    }
                                    let base = (c * geom.h + iy as usize) * geom.w;
                                    for ox in 0..geom.w_out {
                                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                        if ix >= 0 && (ix as usize) < geom.w {
                                            let t = &mut dx[base + ix as usize];
                                            *t = *t + src[oy * geom.w_out + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                with_grad(grads, *a, g.len(), |da| accumulate(da, g));
                with_grad(grads, *b, g.len(), |db| accumulate(db, g));
            }
            Op::AddRow { x, row } => {
                let d = self.value(*row).len();
                with_grad(grads, *x, g.len(), |dx| accumulate(dx, g));
                with_grad(grads, *row, d, |dr| {
                    for chunk in g.chunks(d) {
                        accumulate(dr, chunk);
                    }
                });
            }
            Op::Gelu { x } => {
                let xd = self.value(*x).data();
                with_grad(grads, *x, g.len(), |dx| {
                    for ((d, &xv), &gv) in dx.iter_mut().zip(xd).zip(g) {
                        *d = *d + gv * gelu_grad(xv);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gd = self.value(*gamma).data();
                let d = gd.len();
                let dn = T::of(d as f64);
                with_grad(grads, *gamma, d, |dg| {
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + gr[j] * xr[j];
                        }
                    }
                });
                with_grad(grads, *beta, d, |db| {
                    for gr in g.chunks(d) {
                        accumulate(db, gr);
                    }
                });
                with_grad(grads, *x, g.len(), |dx| {
                    let mut dxhat = vec![T::zero(); d];
                    for (r, (gr, xr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dxhat[j] = gr[j] * gd[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
                        let mean_dx = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for j in 0..d {
                            let t = &mut dx[r * d + j];
                            *t = *t + rstd[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                let shape = self.value(*q).shape();
                let (n, d) = (shape[0], shape[1]);
                let dh = d / heads;
                let scale = T::one() / T::of(dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![T::zero(); n * d];
                let mut dk = vec![T::zero(); n * d];
                let mut dv = vec![T::zero(); n * d];
                let mut dp = vec![T::zero(); n * n];
                for h in 0..*heads {
                    let p = &probs[h * n * n..(h + 1) * n * n];
                    let go = Mat::new(g, n, d).cols(h * dh, dh);
                    gemm_into(
                        T::one(),
                        go,
                        Mat::new(vd, n, d).cols(h * dh, dh).t(),
                        T::zero(),
                        &mut dp,
                        n,
                        0,
                    );
                    gemm_into(T::one(), Mat::new(p, n, n).t(), go, T::one(), &mut dv, d, h * dh);
                    for r in 0..n {
                        let pr = &p[r * n..(r + 1) * n];
                        let dr = &mut dp[r * n..(r + 1) * n];
                        let dot = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                        for (x, &pv) in dr.iter_mut().zip(pr) {
                            *x = pv * (*x - dot);
                        }
                    }
                    gemm_into(
                        scale,
                        Mat::new(&dp, n, n),
                        Mat::new(kd, n, d).cols(h * dh, dh),
                        T::one(),
                        &mut dq,
                        d,
                        h * dh,
                    );
                    gemm_into(
                        scale,
                        Mat::new(&dp, n, n).t(),
                        Mat::new(qd, n, d).cols(h * dh, dh),
                        T::one(),
                        &mut dk,
                        d,
                        h * dh,
                    );
                }
                with_grad(grads, *q, n * d, |t| accumulate(t, &dq));
                with_grad(grads, *k, n * d, |t| accumulate(t, &dk));
                with_grad(grads, *v, n * d, |t| accumulate(t, &dv));
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    with_grad(grads, p, len, |dp| accumulate(dp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::ToTokens { x } => {
                let c = node.value.shape()[1];
                let s = node.value.shape()[0];
                with_grad(grads, *x, g.len(), |dx| {
                    for ch in 0..c {
                        for site in 0..s {
                            let t = &mut dx[ch * s + site];
                            *t = *t + g[site * c + ch];
                        }
                    }
                });
            }
            Op::Row { x, index } => {
                let d = g.len();
                let len = self.value(*x).len();
                with_grad(grads, *x, len, |dx| accumulate(&mut dx[index * d..(index + 1) * d], g));
            }
            Op::Dot { x, coeffs } => {
                with_grad(grads, *x, coeffs.len(), |dx| {
                    for (d, &c) in dx.iter_mut().zip(coeffs) {
                        *d = *d + g[0] * c;
                    }
                });
            }
            Op::SoftmaxCe { logits, label, probs } => {
                with_grad(grads, *logits, probs.len(), |dl| {
                    for (j, (d, &p)) in dl.iter_mut().zip(probs).enumerate() {
                        let y = if j == *label { T::one() } else { T::zero() };
                        *d = *d + g[0] * (p - y);
                    }
                });
            }
        }
    }
}

fn with_grad<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot)
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], per_channel: usize) {
    for (chunk, &b) in out.chunks_mut(per_channel).zip(bias) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn channel_sums<T: Scalar>(db: &mut [T], g: &[T], per_channel: usize) {
    for (d, chunk) in db.iter_mut().zip(g.chunks(per_channel)) {
        *d = *d + chunk.iter().copied().sum::<T>();
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Gradients of every node reachable from the loss.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
