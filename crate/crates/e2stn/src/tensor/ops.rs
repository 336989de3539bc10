//! Forward implementations and local gradient rules for every primitive.

use super::{ConvKind, Graph, Op, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

/// Split a shape into (rows, last-dim) treating all leading axes as rows.
fn row_view(shape: &[usize]) -> (usize, usize) {
    let m = *shape.last().expect("non-empty shape");
    let rows = shape.iter().product::<usize>() / m;
    (rows, m)
}

impl Graph {
    // ---- elementwise -----------------------------------------------------

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push("add", self.shape(a).to_vec(), data, Op::Add(a, b), false)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        self.push("sub", self.shape(a).to_vec(), data, Op::Sub(a, b), false)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push("mul", self.shape(a).to_vec(), data, Op::Mul(a, b), false)
    }

    pub fn scalar_mul(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::NonFinite { op: "scalar_mul" });
        }
        let data = self.data(a).iter().map(|x| x * c).collect();
        self.push(
            "scalar_mul",
            self.shape(a).to_vec(),
            data,
            Op::ScalarMul(a, c),
            false,
        )
    }

    /// Broadcast a length-m bias over the rows of an `[..., m]` tensor.
    pub fn bias_add(&mut self, x: Tensor, b: Tensor) -> Result<Tensor> {
        let (rows, m) = row_view(self.shape(x));
        if self.shape(b) != [m] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let xd = self.data(x);
        let bd = self.data(b);
        let mut data = Vec::with_capacity(rows * m);
        for r in 0..rows {
            for j in 0..m {
                data.push(xd[r * m + j] + bd[j]);
            }
        }
        self.push("bias_add", self.shape(x).to_vec(), data, Op::BiasAdd(x, b), false)
    }

    /// Broadcast a length-C bias over the `[C, H, W]` feature map channels.
    pub fn channel_bias_add(&mut self, x: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || self.shape(b) != [shape[0]] {
            return Err(Error::ShapeMismatch {
                op: "channel_bias_add",
                lhs: shape,
                rhs: self.shape(b).to_vec(),
            });
        }
        let plane = shape[1] * shape[2];
        let xd = self.data(x);
        let bd = self.data(b);
        let mut data = Vec::with_capacity(xd.len());
        for c in 0..shape[0] {
            for i in 0..plane {
                data.push(xd[c * plane + i] + bd[c]);
            }
        }
        self.push(
            "channel_bias_add",
            shape,
            data,
            Op::ChannelBiasAdd(x, b),
            false,
        )
    }

    pub fn relu(&mut self, a: Tensor) -> Result<Tensor> {
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        self.push("relu", self.shape(a).to_vec(), data, Op::Relu(a), false)
    }

    pub fn elu(&mut self, a: Tensor) -> Result<Tensor> {
        let data = self
            .data(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        self.push("elu", self.shape(a).to_vec(), data, Op::Elu(a), false)
    }

    pub fn clamp(&mut self, a: Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        let data = self.data(a).iter().map(|&x| x.clamp(lo, hi)).collect();
        self.push(
            "clamp",
            self.shape(a).to_vec(),
            data,
            Op::Clamp { input: a, lo, hi },
            false,
        )
    }

    /// Natural log of `max(x, eps)`; total on nonnegative input.
    pub fn log_eps(&mut self, a: Tensor, eps: f64) -> Result<Tensor> {
        let data = self.data(a).iter().map(|&x| x.max(eps).ln()).collect();
        self.push(
            "log_eps",
            self.shape(a).to_vec(),
            data,
            Op::LogEps { input: a, eps },
            false,
        )
    }

    // ---- linear algebra --------------------------------------------------

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.data(a), self.data(b), n, k, m);
        self.push("matmul", vec![n, m], data, Op::Matmul(a, b), false)
    }

    pub fn transpose_last_two(&mut self, a: Tensor) -> Result<Tensor> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "transpose_last_two",
                shape: s.to_vec(),
                msg: "expected a 2-D tensor".into(),
            });
        }
        let (n, m) = (s[0], s[1]);
        let ad = self.data(a);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = ad[i * m + j];
            }
        }
        self.push(
            "transpose_last_two",
            vec![m, n],
            data,
            Op::TransposeLastTwo(a),
            false,
        )
    }

    pub fn reshape(&mut self, a: Tensor, new_shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel(a) {
            return Err(Error::Dimension {
                op: "reshape",
                shape: new_shape,
                msg: format!("element count differs from input {:?}", self.shape(a)),
            });
        }
        let data = self.data(a).to_vec();
        self.push("reshape", new_shape, data, Op::Reshape(a), false)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Dimension {
            op: "concat",
            shape: vec![],
            msg: "no tensors given".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension {
                op: "concat",
                shape: base,
                msg: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;

        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let alen = self.shape(p)[axis];
            let pd = self.data(p);
            for o in 0..outer {
                for a in 0..alen {
                    let src = (o * alen + a) * inner;
                    let dst = (o * axis_total + offset + a) * inner;
                    data[dst..dst + inner].copy_from_slice(&pd[src..src + inner]);
                }
            }
            offset += alen;
        }
        self.push(
            "concat",
            shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            false,
        )
    }

    /// Slice `len` entries starting at `start` along the last axis. With a
    /// `C x B` feature matrix this extracts band columns.
    pub fn slice_last(&mut self, a: Tensor, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape(a).to_vec();
        let (rows, m) = row_view(&s);
        if len == 0 || start + len > m {
            return Err(Error::Dimension {
                op: "slice_last",
                shape: s,
                msg: format!("slice [{start}, {start}+{len}) out of range for width {m}"),
            });
        }
        let ad = self.data(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ad[r * m + start..r * m + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        self.push(
            "slice_last",
            shape,
            data,
            Op::SliceLast { input: a, start, len },
            false,
        )
    }

    // ---- normalization ---------------------------------------------------

    /// Row-wise softmax over the last axis, computed with max subtraction.
    pub fn softmax_rows(&mut self, a: Tensor) -> Result<Tensor> {
        let (rows, m) = row_view(self.shape(a));
        let ad = self.data(a);
        let mut data = vec![0.0; rows * m];
        for r in 0..rows {
            let row = &ad[r * m..(r + 1) * m];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..m {
                let e = (row[j] - max).exp();
                data[r * m + j] = e;
                sum += e;
            }
            for j in 0..m {
                data[r * m + j] /= sum;
            }
        }
        self.push(
            "softmax_rows",
            self.shape(a).to_vec(),
            data,
            Op::SoftmaxRows(a),
            false,
        )
    }

    /// Layer normalization over the last axis with affine gain/shift.
    /// Variance is the population variance (1/m).
    pub fn layer_norm(&mut self, x: Tensor, gamma: Tensor, beta: Tensor, eps: f64) -> Result<Tensor> {
        let (rows, m) = row_view(self.shape(x));
        if m < 2 {
            return Err(Error::Dimension {
                op: "layer_norm",
                shape: self.shape(x).to_vec(),
                msg: "normalized width must be >= 2".into(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        same_shape("layer_norm", self.shape(gamma), &[m])?;
        same_shape("layer_norm", self.shape(beta), &[m])?;
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut data = vec![0.0; rows * m];
        for r in 0..rows {
            let row = &xd[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..m {
                data[r * m + j] = gd[j] * (row[j] - mean) * inv + bd[j];
            }
        }
        self.push(
            "layer_norm",
            self.shape(x).to_vec(),
            data,
            Op::LayerNorm { x, gamma, beta, eps },
            false,
        )
    }

    /// Divide each row of a 2-D nonnegative matrix by its sum plus `eps`.
    pub fn normalize_rows_l1(&mut self, a: Tensor, eps: f64) -> Result<Tensor> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "normalize_rows_l1",
                shape: s.to_vec(),
                msg: "expected a 2-D tensor".into(),
            });
        }
        let (rows, m) = (s[0], s[1]);
        let ad = self.data(a);
        let mut data = vec![0.0; rows * m];
        for r in 0..rows {
            let sum: f64 = ad[r * m..(r + 1) * m].iter().sum::<f64>() + eps;
            for j in 0..m {
                data[r * m + j] = ad[r * m + j] / sum;
            }
        }
        self.push(
            "normalize_rows_l1",
            s.to_vec(),
            data,
            Op::NormalizeRowsL1 { input: a, eps },
            false,
        )
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum_all(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.data(a).iter().sum();
        self.push("sum_all", vec![1], vec![v], Op::SumAll(a), false)
    }

    pub fn mean_all(&mut self, a: Tensor) -> Result<Tensor> {
        let n = self.numel(a);
        let v = self.data(a).iter().sum::<f64>() / n as f64;
        self.push("mean_all", vec![1], vec![v], Op::MeanAll(a), false)
    }

    /// Population variance over all elements.
    pub fn variance_all(&mut self, a: Tensor) -> Result<Tensor> {
        let n = self.numel(a) as f64;
        let mean = self.data(a).iter().sum::<f64>() / n;
        let v = self.data(a).iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        self.push("variance_all", vec![1], vec![v], Op::VarianceAll(a), false)
    }

    /// `sqrt(sum x^2)` over all elements.
    pub fn l2_norm(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.data(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push("l2_norm", vec![1], vec![v], Op::L2Norm(a), false)
    }

    /// Per-channel mean of a `[C, H, W]` map, pooled over the spatial axes.
    pub fn channel_mean(&mut self, a: Tensor) -> Result<Tensor> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(Error::Dimension {
                op: "channel_mean",
                shape: s.to_vec(),
                msg: "expected a [C, H, W] tensor".into(),
            });
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let ad = self.data(a);
        let data = (0..c)
            .map(|ch| ad[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        self.push("channel_mean", vec![c], data, Op::ChannelMean(a), false)
    }

    /// Per-channel population variance of a `[C, H, W]` map.
    pub fn channel_variance(&mut self, a: Tensor) -> Result<Tensor> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(Error::Dimension {
                op: "channel_variance",
                shape: s.to_vec(),
                msg: "expected a [C, H, W] tensor".into(),
            });
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let ad = self.data(a);
        let data = (0..c)
            .map(|ch| {
                let slice = &ad[ch * plane..(ch + 1) * plane];
                let mean = slice.iter().sum::<f64>() / plane as f64;
                slice.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / plane as f64
            })
            .collect();
        self.push(
            "channel_variance",
            vec![c],
            data,
            Op::ChannelVariance(a),
            false,
        )
    }

    // ---- convolution -------------------------------------------------------

    /// 2-D cross-correlation (no kernel flip) over a `[c_in, H, W]` input with
    /// zero padding `(ph, pw)`.
    pub fn conv2d(
        &mut self,
        input: Tensor,
        kernels: Tensor,
        kind: ConvKind,
        padding: (usize, usize),
    ) -> Result<Tensor> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernels).to_vec();
        if is.len() != 3 || ks.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: is,
                rhs: ks,
            });
        }
        let (c_in, h, w) = (is[0], is[1], is[2]);
        let (kh, kw) = (ks[2], ks[3]);
        let (ph, pw) = padding;
        match kind {
            ConvKind::Standard => {
                if ks[1] != c_in {
                    return Err(Error::ShapeMismatch { op: "conv2d", lhs: is, rhs: ks });
                }
            }
            ConvKind::Depthwise => {
                if ks[0] != c_in {
                    return Err(Error::ShapeMismatch { op: "conv2d", lhs: is, rhs: ks });
                }
            }
            ConvKind::Pointwise => {
                if ks[1] != c_in || kh != 1 || kw != 1 {
                    return Err(Error::ShapeMismatch { op: "conv2d", lhs: is, rhs: ks });
                }
            }
        }
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::Dimension {
                op: "conv2d",
                shape: ks,
                msg: format!("kernel ({kh}, {kw}) larger than padded input ({}, {})", h + 2 * ph, w + 2 * pw),
            });
        }
        let h_out = h + 2 * ph - kh + 1;
        let w_out = w + 2 * pw - kw + 1;
        let c_out = match kind {
            ConvKind::Standard | ConvKind::Pointwise => ks[0],
            ConvKind::Depthwise => c_in * ks[1],
        };

        let xd = self.data(input);
        let kd = self.data(kernels);
        let mut data = vec![0.0; c_out * h_out * w_out];
        let k_in = ks[1];
        // (out channel, contributing input channel, kernel channel slot)
        let pairs: Vec<(usize, usize, usize)> = match kind {
            ConvKind::Standard | ConvKind::Pointwise => (0..ks[0])
                .flat_map(|o| (0..c_in).map(move |i| (o, i, i)))
                .collect(),
            ConvKind::Depthwise => (0..c_in)
                .flat_map(|c| (0..k_in).map(move |d| (c * k_in + d, c, d)))
                .collect(),
        };
        for &(o, i, slot) in &pairs {
            let kbase = match kind {
                ConvKind::Standard | ConvKind::Pointwise => (o * k_in + slot) * kh * kw,
                ConvKind::Depthwise => (i * k_in + slot) * kh * kw,
            };
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for u in 0..kh {
                        let y = (oy + u) as isize - ph as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let x = (ox + v) as isize - pw as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            acc += xd[(i * h + y as usize) * w + x as usize] * kd[kbase + u * kw + v];
                        }
                    }
                    data[(o * h_out + oy) * w_out + ox] += acc;
                }
            }
        }
        self.push(
            "conv2d",
            vec![c_out, h_out, w_out],
            data,
            Op::Conv2d { input, kernels, kind, padding },
            false,
        )
    }

    // ---- backward rules ----------------------------------------------------

    pub(crate) fn backward_op(&mut self, id: usize, op: &Op) {
        let g = self.nodes[id].grad.clone().expect("grad present");
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, &g);
                self.accumulate(b, &g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, &g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(self.data(b)).map(|(gi, bi)| gi * bi).collect();
                let db: Vec<f64> = g.iter().zip(self.data(a)).map(|(gi, ai)| gi * ai).collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::ScalarMul(a, c) => {
                let da: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                self.accumulate(a, &da);
            }
            Op::BiasAdd(x, b) => {
                self.accumulate(x, &g);
                let (rows, m) = row_view(&self.nodes[id].shape);
                let mut db = vec![0.0; m];
                for r in 0..rows {
                    for j in 0..m {
                        db[j] += g[r * m + j];
                    }
                }
                self.accumulate(b, &db);
            }
            Op::ChannelBiasAdd(x, b) => {
                self.accumulate(x, &g);
                let s = &self.nodes[id].shape;
                let (c, plane) = (s[0], s[1] * s[2]);
                let mut db = vec![0.0; c];
                for ch in 0..c {
                    db[ch] = g[ch * plane..(ch + 1) * plane].iter().sum();
                }
                self.accumulate(b, &db);
            }
            Op::Matmul(a, b) => {
                let (n, k) = (self.shape(a)[0], self.shape(a)[1]);
                let m = self.shape(b)[1];
                // dA = g . B^T
                let bd = self.data(b);
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for t in 0..k {
                            da[i * k + t] += gij * bd[t * m + j];
                        }
                    }
                }
                // dB = A^T . g
                let ad = self.data(a);
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    for t in 0..k {
                        let ait = ad[i * k + t];
                        if ait == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            db[t * m + j] += ait * g[i * m + j];
                        }
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::TransposeLastTwo(a) => {
                let (m, n) = (self.nodes[id].shape[0], self.nodes[id].shape[1]);
                let mut da = vec![0.0; n * m];
                for j in 0..m {
                    for i in 0..n {
                        da[i * m + j] = g[j * n + i];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Reshape(a) => {
                self.accumulate(a, &g);
            }
            Op::Concat { ref parts, axis } => {
                let shape = self.nodes[id].shape.clone();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let axis_total = shape[axis];
                let mut offset = 0;
                for &p in parts {
                    let alen = self.shape(p)[axis];
                    let mut dp = vec![0.0; self.numel(p)];
                    for o in 0..outer {
                        for a in 0..alen {
                            let dst = (o * alen + a) * inner;
                            let src = (o * axis_total + offset + a) * inner;
                            dp[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                        }
                    }
                    self.accumulate(p, &dp);
                    offset += alen;
                }
            }
            Op::SliceLast { input, start, len } => {
                let s = self.shape(input).to_vec();
                let (rows, m) = row_view(&s);
                let mut di = vec![0.0; rows * m];
                for r in 0..rows {
                    for j in 0..len {
                        di[r * m + start + j] = g[r * len + j];
                    }
                }
                self.accumulate(input, &di);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = self
                    .data(a)
                    .iter()
                    .zip(&g)
                    .map(|(&x, gi)| if x > 0.0 { *gi } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Elu(a) => {
                // for x <= 0 the output is exp(x) - 1, so d/dx = output + 1
                let out = self.nodes[id].data.clone();
                let da: Vec<f64> = self
                    .data(a)
                    .iter()
                    .zip(out.iter().zip(&g))
                    .map(|(&x, (&y, gi))| if x > 0.0 { *gi } else { gi * (y + 1.0) })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::SoftmaxRows(a) => {
                let (rows, m) = row_view(&self.nodes[id].shape);
                let p = self.nodes[id].data.clone();
                let mut da = vec![0.0; rows * m];
                for r in 0..rows {
                    let dot: f64 = (0..m).map(|j| g[r * m + j] * p[r * m + j]).sum();
                    for j in 0..m {
                        da[r * m + j] = p[r * m + j] * (g[r * m + j] - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (rows, m) = row_view(&self.nodes[id].shape);
                let xd = self.data(x).to_vec();
                let gd = self.data(gamma).to_vec();
                let mf = m as f64;
                let mut dx = vec![0.0; rows * m];
                let mut dgamma = vec![0.0; m];
                let mut dbeta = vec![0.0; m];
                for r in 0..rows {
                    let row = &xd[r * m..(r + 1) * m];
                    let mean = row.iter().sum::<f64>() / mf;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / mf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let gv: Vec<f64> = (0..m).map(|j| g[r * m + j] * gd[j]).collect();
                    let mean_gv = gv.iter().sum::<f64>() / mf;
                    let mean_gv_xhat = gv.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / mf;
                    for j in 0..m {
                        dx[r * m + j] = inv * (gv[j] - mean_gv - xhat[j] * mean_gv_xhat);
                        dgamma[j] += g[r * m + j] * xhat[j];
                        dbeta[j] += g[r * m + j];
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }
            Op::SumAll(a) => {
                let da = vec![g[0]; self.numel(a)];
                self.accumulate(a, &da);
            }
            Op::MeanAll(a) => {
                let n = self.numel(a) as f64;
                let da = vec![g[0] / n; self.numel(a)];
                self.accumulate(a, &da);
            }
            Op::VarianceAll(a) => {
                let n = self.numel(a) as f64;
                let mean = self.data(a).iter().sum::<f64>() / n;
                let da: Vec<f64> = self
                    .data(a)
                    .iter()
                    .map(|x| g[0] * 2.0 * (x - mean) / n)
                    .collect();
                self.accumulate(a, &da);
            }
            Op::L2Norm(a) => {
                // subgradient 0 at the origin
                let norm = self.nodes[id].data[0].max(1e-12);
                let da: Vec<f64> = self.data(a).iter().map(|x| g[0] * x / norm).collect();
                self.accumulate(a, &da);
            }
            Op::ChannelMean(a) => {
                let s = self.shape(a).to_vec();
                let (c, plane) = (s[0], s[1] * s[2]);
                let mut da = vec![0.0; c * plane];
                for ch in 0..c {
                    let v = g[ch] / plane as f64;
                    for i in 0..plane {
                        da[ch * plane + i] = v;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::ChannelVariance(a) => {
                let s = self.shape(a).to_vec();
                let (c, plane) = (s[0], s[1] * s[2]);
                let ad = self.data(a).to_vec();
                let mut da = vec![0.0; c * plane];
                for ch in 0..c {
                    let slice = &ad[ch * plane..(ch + 1) * plane];
                    let mean = slice.iter().sum::<f64>() / plane as f64;
                    for i in 0..plane {
                        da[ch * plane + i] = g[ch] * 2.0 * (slice[i] - mean) / plane as f64;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Conv2d { input, kernels, kind, padding } => {
                self.conv2d_backward(id, input, kernels, kind, padding, &g);
            }
            Op::Clamp { input, lo, hi } => {
                let da: Vec<f64> = self
                    .data(input)
                    .iter()
                    .zip(&g)
                    .map(|(&x, gi)| if x > lo && x < hi { *gi } else { 0.0 })
                    .collect();
                self.accumulate(input, &da);
            }
            Op::LogEps { input, eps } => {
                let da: Vec<f64> = self
                    .data(input)
                    .iter()
                    .zip(&g)
                    .map(|(&x, gi)| if x > eps { gi / x } else { 0.0 })
                    .collect();
                self.accumulate(input, &da);
            }
            Op::NormalizeRowsL1 { input, eps } => {
                let s = self.shape(input).to_vec();
                let (rows, m) = (s[0], s[1]);
                let ad = self.data(input).to_vec();
                let mut da = vec![0.0; rows * m];
                for r in 0..rows {
                    let sum: f64 = ad[r * m..(r + 1) * m].iter().sum::<f64>() + eps;
                    let dot: f64 = (0..m).map(|j| g[r * m + j] * ad[r * m + j]).sum();
                    for j in 0..m {
                        da[r * m + j] = g[r * m + j] / sum - dot / (sum * sum);
                    }
                }
                self.accumulate(input, &da);
            }
        }
    }

    fn conv2d_backward(
        &mut self,
        id: usize,
        input: Tensor,
        kernels: Tensor,
        kind: ConvKind,
        padding: (usize, usize),
        g: &[f64],
    ) {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernels).to_vec();
        let (c_in, h, w) = (is[0], is[1], is[2]);
        let (k_in, kh, kw) = (ks[1], ks[2], ks[3]);
        let (ph, pw) = padding;
        let os = self.nodes[id].shape.clone();
        let (h_out, w_out) = (os[1], os[2]);
        let xd = self.data(input).to_vec();
        let kd = self.data(kernels).to_vec();
        let mut dx = vec![0.0; xd.len()];
        let mut dk = vec![0.0; kd.len()];
        let c_out_groups = ks[0];
        let pairs: Vec<(usize, usize, usize)> = match kind {
            ConvKind::Standard | ConvKind::Pointwise => (0..c_out_groups)
                .flat_map(|o| (0..c_in).map(move |i| (o, i, i)))
                .collect(),
            ConvKind::Depthwise => (0..c_in)
                .flat_map(|c| (0..k_in).map(move |d| (c * k_in + d, c, d)))
                .collect(),
        };
        for &(o, i, slot) in &pairs {
            let kbase = match kind {
                ConvKind::Standard | ConvKind::Pointwise => (o * k_in + slot) * kh * kw,
                ConvKind::Depthwise => (i * k_in + slot) * kh * kw,
            };
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let go = g[(o * h_out + oy) * w_out + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for u in 0..kh {
                        let y = (oy + u) as isize - ph as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let x = (ox + v) as isize - pw as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            let xi = (i * h + y as usize) * w + x as usize;
                            dx[xi] += go * kd[kbase + u * kw + v];
                            dk[kbase + u * kw + v] += go * xd[xi];
                        }
                    }
                }
            }
        }
        self.accumulate(input, &dx);
        self.accumulate(kernels, &dk);
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for t in 0..k {
            let ait = a[i * k + t];
            if ait == 0.0 {
                continue;
            }
            let brow = &b[t * m..(t + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += ait * brow[j];
            }
        }
    }
    out
}
