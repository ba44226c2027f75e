use super::kernels::{self, gemm, Window};
use super::Tensor;
use crate::error::{Error, Result};

/// Clamp applied to predictions inside [`Graph::bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        win: Window,
        batch: usize,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        win: Window,
        batch: usize,
        in_channels: usize,
        input_cm: Vec<f64>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        batch: usize,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Affine {
        input: Var,
        scale: f64,
    },
    Reshape {
        input: Var,
    },
    L1 {
        a: Var,
        b: Var,
    },
    Bce {
        pred: Var,
        target: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of executed operations. Nodes are appended in execution order, so the
/// tape is always topologically sorted and [`Graph::backward`] walks it in
/// reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`; `None` when
    /// `v` does not require gradients or backward has not run.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        self.grads.get(v.0)?.as_deref()
    }

    /// Moves the gradient out of the graph, materialising zeros when the
    /// loss did not depend on `v`.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        if !self.consumed || !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(self.grads[v.0].take().unwrap_or_else(|| vec![0.0; len]))
    }

    /// Records a tensor, tracking gradients when `requires_grad` is set on it.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.push(tensor, Op::Leaf, false)
    }

    fn push(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// 2-D convolution. `input` is `[C_in, H, W]` or `[N, C_in, H, W]`,
    /// `kernel` is `[C_out, C_in, kh, kw]` and `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (batch, batched, c, h, w) = image_dims(self.value(input).shape())?;
        let kshape = self.value(kernel).shape().to_vec();
        if kshape.len() != 4 || kshape[1] != c {
            return Err(Error::shape(format!(
                "conv2d kernel {kshape:?} does not match input channels {c}"
            )));
        }
        let (c_out, kh, kw) = (kshape[0], kshape[2], kshape[3]);
        check_bias(self.value(bias), c_out)?;
        let win = Window::conv(c, h, w, kh, kw, stride, padding).ok_or_else(|| {
            Error::shape(format!(
                "conv2d kernel {kh}x{kw} (stride {stride}, padding {padding}) does not fit input {h}x{w}"
            ))
        })?;
        let p = win.positions();
        let cols = kernels::im2col(self.value(input).data(), batch, &win);
        let mut out_cm = vec![0.0; c_out * batch * p];
        gemm(c_out, win.rows(), batch * p, self.value(kernel).data(), false, &cols, false, &mut out_cm, 0.0);
        let bias_data = self.value(bias).data();
        for (co, row) in out_cm.chunks_mut(batch * p).enumerate() {
            row.iter_mut().for_each(|v| *v += bias_data[co]);
        }
        let out = kernels::channel_major_to_batch(&out_cm, batch, c_out, p);
        let shape = with_batch(batched, batch, &[c_out, win.out_h, win.out_w]);
        let needs = self.needs(&[input, kernel, bias]);
        self.push(
            Tensor::new(&shape, out)?,
            Op::Conv2d { input, kernel, bias, win, batch, cols },
            needs,
        )
    }

    /// Transposed 2-D convolution, the adjoint of [`Graph::conv2d`]'s linear
    /// map. `kernel` is `[C_in, C_out, kh, kw]`; the output extent is
    /// `(H - 1) * stride - 2 * padding + kh`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (batch, batched, c_in, h, w) = image_dims(self.value(input).shape())?;
        let kshape = self.value(kernel).shape().to_vec();
        if kshape.len() != 4 || kshape[0] != c_in {
            return Err(Error::shape(format!(
                "conv_transpose2d kernel {kshape:?} does not match input channels {c_in}"
            )));
        }
        let (c_out, kh, kw) = (kshape[1], kshape[2], kshape[3]);
        check_bias(self.value(bias), c_out)?;
        if stride == 0 || (h - 1) * stride + kh <= 2 * padding || (w - 1) * stride + kw <= 2 * padding {
            return Err(Error::shape(format!(
                "conv_transpose2d output extent is empty for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
            )));
        }
        let out_h = (h - 1) * stride + kh - 2 * padding;
        let out_w = (w - 1) * stride + kw - 2 * padding;
        let win = Window::conv(c_out, out_h, out_w, kh, kw, stride, padding)
            .filter(|win| win.out_h == h && win.out_w == w)
            .ok_or_else(|| Error::shape("conv_transpose2d geometry is inconsistent"))?;
        let hw = h * w;
        let input_cm = kernels::batch_to_channel_major(self.value(input).data(), batch, c_in, hw);
        let mut cols = vec![0.0; win.rows() * batch * hw];
        gemm(win.rows(), c_in, batch * hw, self.value(kernel).data(), true, &input_cm, false, &mut cols, 0.0);
        let mut out = kernels::col2im(&cols, batch, &win);
        let bias_data = self.value(bias).data();
        let plane = out_h * out_w;
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let b = bias_data[i % c_out];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let shape = with_batch(batched, batch, &[c_out, out_h, out_w]);
        let needs = self.needs(&[input, kernel, bias]);
        self.push(
            Tensor::new(&shape, out)?,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                win,
                batch,
                in_channels: c_in,
                input_cm,
            },
            needs,
        )
    }

    /// Affine layer `weight · input + bias`; `input` is `[n]` or `[N, n]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        let (batch, batched, n) = match ishape.as_slice() {
            [n] => (1, false, *n),
            [b, n] => (*b, true, *n),
            _ => return Err(Error::shape(format!("dense input must be rank 1 or 2, got {ishape:?}"))),
        };
        let wshape = self.value(weight).shape().to_vec();
        if wshape.len() != 2 || wshape[1] != n {
            return Err(Error::shape(format!(
                "dense weight {wshape:?} does not accept input of width {n}"
            )));
        }
        let m = wshape[0];
        check_bias(self.value(bias), m)?;
        let mut out = vec![0.0; batch * m];
        gemm(batch, n, m, self.value(input).data(), false, self.value(weight).data(), true, &mut out, 0.0);
        let bias_data = self.value(bias).data();
        for row in out.chunks_mut(m) {
            row.iter_mut().zip(bias_data).for_each(|(v, b)| *v += b);
        }
        let shape = if batched { vec![batch, m] } else { vec![m] };
        let needs = self.needs(&[input, weight, bias]);
        self.push(Tensor::new(&shape, out)?, Op::Dense { input, weight, bias, batch }, needs)
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(slope) = kind {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::shape(format!("leaky_relu slope {slope} outside (0, 1)")));
            }
        }
        let x = self.value(input);
        if !x.all_finite() {
            return Err(Error::Numeric(format!("{kind:?} received a non-finite input")));
        }
        let out = x.data().iter().map(|&v| kind.apply(v)).collect();
        let t = Tensor::new(x.shape(), out)?;
        let needs = self.needs(&[input]);
        self.push(t, Op::Activation { input, kind }, needs)
    }

    /// `scale * input + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Result<Var> {
        let x = self.value(input);
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| scale * v + shift).collect())?;
        let needs = self.needs(&[input]);
        self.push(t, Op::Affine { input, scale }, needs)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.affine(input, factor, 0.0)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshaped(shape)?;
        let needs = self.needs(&[input]);
        self.push(t, Op::Reshape { input }, needs)
    }

    /// Mean absolute difference. The subgradient at `a == b` is zero.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("l1_loss", ta, tb)?;
        let mean = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / ta.len() as f64;
        let needs = self.needs(&[a, b]);
        self.push(Tensor::scalar(mean), Op::L1 { a, b }, needs)
    }

    /// Binary cross-entropy of predictions in (0, 1) against a fixed label,
    /// averaged over all elements. Predictions are clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, pred: Var, target: f64) -> Result<Var> {
        if target != 0.0 && target != 1.0 {
            return Err(Error::shape(format!("bce target must be 0 or 1, got {target}")));
        }
        let p = self.value(pred);
        let loss = p
            .data()
            .iter()
            .map(|&v| {
                let v = v.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(target * v.ln() + (1.0 - target) * (1.0 - v).ln())
            })
            .sum::<f64>()
            / p.len() as f64;
        let needs = self.needs(&[pred]);
        self.push(Tensor::scalar(loss), Op::Bce { pred, target }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let t = Tensor::new(ta.shape(), ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect())?;
        let needs = self.needs(&[a, b]);
        self.push(t, Op::Add { a, b }, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let t = Tensor::new(ta.shape(), ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect())?;
        let needs = self.needs(&[a, b]);
        self.push(t, Op::Mul { a, b }, needs)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().sum();
        let needs = self.needs(&[input]);
        self.push(Tensor::scalar(s), Op::Sum { input }, needs)
    }

    /// Reverse-mode accumulation of `d loss / d v` for every node that
    /// requires gradients. A graph supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, win, batch, cols } => {
                let c_out = self.value(*kernel).shape()[0];
                let np = batch * win.positions();
                let g_cm = kernels::batch_to_channel_major(g, *batch, c_out, win.positions());
                if wants(bias) {
                    accumulate(grads, *bias, g_cm.chunks(np).map(|r| r.iter().sum()).collect());
                }
                if wants(kernel) {
                    let mut dk = vec![0.0; c_out * win.rows()];
                    gemm(c_out, np, win.rows(), &g_cm, false, cols, true, &mut dk, 0.0);
                    accumulate(grads, *kernel, dk);
                }
                if wants(input) {
                    let mut dcols = vec![0.0; win.rows() * np];
                    gemm(win.rows(), c_out, np, self.value(*kernel).data(), true, &g_cm, false, &mut dcols, 0.0);
                    accumulate(grads, *input, kernels::col2im(&dcols, *batch, win));
                }
            }
            Op::ConvTranspose2d { input, kernel, bias, win, batch, in_channels, input_cm } => {
                let c_out = win.channels;
                let hw = win.positions();
                if wants(bias) {
                    let plane = win.height * win.width;
                    let mut db = vec![0.0; c_out];
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        db[i % c_out] += chunk.iter().sum::<f64>();
                    }
                    accumulate(grads, *bias, db);
                }
                if wants(kernel) || wants(input) {
                    let dcols = kernels::im2col(g, *batch, win);
                    if wants(kernel) {
                        let mut dk = vec![0.0; in_channels * win.rows()];
                        gemm(*in_channels, batch * hw, win.rows(), input_cm, false, &dcols, true, &mut dk, 0.0);
                        accumulate(grads, *kernel, dk);
                    }
                    if wants(input) {
                        let mut dx = vec![0.0; in_channels * batch * hw];
                        gemm(*in_channels, win.rows(), batch * hw, self.value(*kernel).data(), false, &dcols, false, &mut dx, 0.0);
                        accumulate(grads, *input, kernels::channel_major_to_batch(&dx, *batch, *in_channels, hw));
                    }
                }
            }
            Op::Dense { input, weight, bias, batch } => {
                let wshape = self.value(*weight).shape();
                let (m, n) = (wshape[0], wshape[1]);
                if wants(bias) {
                    let mut db = vec![0.0; m];
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(grads, *bias, db);
                }
                if wants(weight) {
                    let mut dw = vec![0.0; m * n];
                    gemm(m, *batch, n, g, true, self.value(*input).data(), false, &mut dw, 0.0);
                    accumulate(grads, *weight, dw);
                }
                if wants(input) {
                    let mut dx = vec![0.0; batch * n];
                    gemm(*batch, m, n, g, false, self.value(*weight).data(), false, &mut dx, 0.0);
                    accumulate(grads, *input, dx);
                }
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                let dx = match kind {
                    Activation::LeakyRelu(slope) => x
                        .iter()
                        .zip(g)
                        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { slope * gv })
                        .collect(),
                    Activation::Tanh => y.iter().zip(g).map(|(&yv, &gv)| gv * (1.0 - yv * yv)).collect(),
                    Activation::Sigmoid => y.iter().zip(g).map(|(&yv, &gv)| gv * yv * (1.0 - yv)).collect(),
                };
                accumulate(grads, *input, dx);
            }
            Op::Affine { input, scale } => {
                accumulate(grads, *input, g.iter().map(|v| v * scale).collect());
            }
            Op::Reshape { input } => accumulate(grads, *input, g.to_vec()),
            Op::L1 { a, b } => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] / ta.len() as f64;
                let da: Vec<f64> = ta
                    .iter()
                    .zip(tb)
                    .map(|(x, y)| {
                        let d = x - y;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if wants(b) {
                    accumulate(grads, *b, da.iter().map(|v| -v).collect());
                }
                if wants(a) {
                    accumulate(grads, *a, da);
                }
            }
            Op::Bce { pred, target } => {
                let p = self.value(*pred).data();
                let scale = g[0] / p.len() as f64;
                let dp = p
                    .iter()
                    .map(|&v| {
                        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&v) {
                            0.0
                        } else {
                            scale * (-target / v + (1.0 - target) / (1.0 - v))
                        }
                    })
                    .collect();
                accumulate(grads, *pred, dp);
            }
            Op::Add { a, b } => {
                if wants(a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if wants(a) {
                    accumulate(grads, *a, g.iter().zip(tb).map(|(x, y)| x * y).collect());
                }
                if wants(b) {
                    accumulate(grads, *b, g.iter().zip(ta).map(|(x, y)| x * y).collect());
                }
            }
            Op::Sum { input } => {
                let n = self.value(*input).len();
                accumulate(grads, *input, vec![g[0]; n]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&contribution).for_each(|(e, c)| *e += c),
        slot @ None => *slot = Some(contribution),
    }
}

/// `(batch, batched, channels, height, width)` of a rank-3 or rank-4 image tensor.
fn image_dims(shape: &[usize]) -> Result<(usize, bool, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, false, c, h, w)),
        [n, c, h, w] => Ok((n, true, c, h, w)),
        _ => Err(Error::shape(format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"))),
    }
}

fn with_batch(batched: bool, batch: usize, dims: &[usize]) -> Vec<usize> {
    let mut shape = Vec::with_capacity(dims.len() + 1);
    if batched {
        shape.push(batch);
    }
    shape.extend_from_slice(dims);
    shape
}

fn check_bias(bias: &Tensor, expected: usize) -> Result<()> {
    if bias.shape() != [expected] {
        return Err(Error::shape(format!(
            "bias shape {:?}, expected [{expected}]",
            bias.shape()
        )));
    }
    Ok(())
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op} operands differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_sliding_window_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.])).unwrap();
        let k = g.constant(t(&[1, 1, 2, 2], &[1., 0., 0., 1.])).unwrap();
        let b = g.constant(t(&[1], &[0.])).unwrap();
        let y = g.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[6., 8., 12., 14.]);
    }

    #[test]
    fn conv2d_identity_kernel_and_zero_input() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = g.constant(t(&[1, 4, 5], &data)).unwrap();
        let k = g.constant(t(&[1, 1, 1, 1], &[1.])).unwrap();
        let b = g.constant(t(&[1], &[0.])).unwrap();
        let y = g.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);

        let z = g.constant(Tensor::zeros(&[2, 5, 5])).unwrap();
        let k = g.constant(Tensor::from_fn(&[3, 2, 3, 3], |i| i as f64)).unwrap();
        let b = g.constant(t(&[3], &[0.5, -1.0, 2.0])).unwrap();
        let y = g.conv2d(z, k, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 3, 3]);
        for (i, v) in g.value(y).data().iter().enumerate() {
            assert_eq!(*v, [0.5, -1.0, 2.0][i / 9]);
        }
    }

    #[test]
    fn conv2d_shape_errors_name_dims() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 3])).unwrap();
        let k = g.constant(Tensor::zeros(&[1, 3, 2, 2])).unwrap();
        let b = g.constant(Tensor::zeros(&[1])).unwrap();
        let err = g.conv2d(x, k, b, 1, 0).unwrap_err();
        assert!(err.to_string().contains("channels 2"), "{err}");
        let k = g.constant(Tensor::zeros(&[1, 2, 5, 5])).unwrap();
        assert!(matches!(g.conv2d(x, k, b, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_transpose_scatter_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1], &[2.])).unwrap();
        let k = g.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        let b = g.constant(t(&[1], &[0.])).unwrap();
        let y = g.conv_transpose2d(x, k, b, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[2., 4., 6., 8.]);

        let z = g.constant(Tensor::zeros(&[1, 3, 3])).unwrap();
        let k = g.constant(Tensor::from_fn(&[1, 2, 4, 4], |i| i as f64)).unwrap();
        let b = g.constant(t(&[2], &[0.25, -0.75])).unwrap();
        let y = g.conv_transpose2d(z, k, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 6, 6]);
        assert!(g.value(y).data()[..36].iter().all(|&v| v == 0.25));
        assert!(g.value(y).data()[36..].iter().all(|&v| v == -0.75));
    }

    #[test]
    fn dense_matvec_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1., 2.])).unwrap();
        let w = g.constant(t(&[2, 2], &[1., 1., 0., 1.])).unwrap();
        let b = g.constant(t(&[2], &[0., 0.])).unwrap();
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3., 2.]);

        let eye = g.constant(t(&[2, 2], &[1., 0., 0., 1.])).unwrap();
        let y = g.dense(x, eye, b).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2.]);

        let zero = g.constant(Tensor::zeros(&[2])).unwrap();
        let bias = g.constant(t(&[2], &[0.5, -2.0])).unwrap();
        let y = g.dense(zero, w, bias).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0]);

        let bad = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(g.dense(bad, w, b), Err(Error::Shape(_))));
    }

    #[test]
    fn activations_at_reference_points() {
        assert_eq!(Activation::LeakyRelu(0.2).apply(-1.0), -0.2);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[f64::NAN])).unwrap();
        assert!(matches!(g.activation(x, Activation::Tanh), Err(Error::Numeric(_))));
        let y = g.constant(t(&[1], &[1.0])).unwrap();
        assert!(g.activation(y, Activation::LeakyRelu(1.5)).is_err());
    }

    #[test]
    fn l1_loss_values() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1., 3.])).unwrap();
        let b = g.constant(t(&[2], &[2., 5.])).unwrap();
        let l = g.l1_loss(a, b).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 1.5);
        let same = g.l1_loss(a, a).unwrap();
        assert_eq!(g.value(same).item().unwrap(), 0.0);
        let z = g.constant(t(&[1], &[0.])).unwrap();
        let x = g.constant(t(&[1], &[-4.25])).unwrap();
        let l = g.l1_loss(z, x).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 4.25);
        let c = g.constant(t(&[3], &[0., 0., 0.])).unwrap();
        assert!(matches!(g.l1_loss(a, c), Err(Error::Shape(_))));
    }

    #[test]
    fn l1_subgradient_is_zero_at_ties() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[3], &[1., 2., 3.]).with_requires_grad(true)).unwrap();
        let b = g.constant(t(&[3], &[1., 0., 5.])).unwrap();
        let l = g.l1_loss(a, b).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[0.0, 1.0 / 3.0, -1.0 / 3.0]);
    }

    #[test]
    fn bce_values() {
        let mut g = Graph::new();
        let half = g.constant(t(&[1], &[0.5])).unwrap();
        let l = g.bce_loss(half, 1.0).unwrap();
        assert!((g.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let one = g.constant(t(&[1], &[1.0])).unwrap();
        let l = g.bce_loss(one, 1.0).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-6);
        let p = g.constant(t(&[1], &[0.9])).unwrap();
        let l = g.bce_loss(p, 0.0).unwrap();
        assert!((g.value(l).item().unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!(g.bce_loss(p, 0.5).is_err());
    }

    #[test]
    fn dense_weight_gradient_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[3.])).unwrap();
        let w = g.leaf(t(&[1, 1], &[1.]).with_requires_grad(true)).unwrap();
        let b = g.leaf(t(&[1], &[0.]).with_requires_grad(true)).unwrap();
        let y = g.dense(x, w, b).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[3.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1., 2.]).with_requires_grad(true)).unwrap();
        let unused = g.leaf(t(&[2], &[5., 6.]).with_requires_grad(true)).unwrap();
        let s = g.sum(a).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.take_grad(unused).unwrap(), vec![0.0, 0.0]);
        assert_eq!(g.take_grad(a).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1., 2.]).with_requires_grad(true)).unwrap();
        let s = g.sum(a).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
        assert!(matches!(g.sum(a), Err(Error::GraphConsumed)));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1., 2.]).with_requires_grad(true)).unwrap();
        assert!(matches!(g.backward(a), Err(Error::Shape(_))));
    }

    #[test]
    fn batched_conv_matches_per_sample() {
        let x = Tensor::from_fn(&[2, 2, 6, 6], |i| ((i * 7) % 11) as f64 - 5.0);
        let k = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5) % 7) as f64 * 0.1);
        let b = t(&[3], &[0.1, 0.2, 0.3]);
        let mut g = Graph::new();
        let (xv, kv, bv) = (g.constant(x.clone()).unwrap(), g.constant(k).unwrap(), g.constant(b).unwrap());
        let y = g.conv2d(xv, kv, bv, 2, 1).unwrap();
        let batched = g.value(y).data().to_vec();
        let half = batched.len() / 2;
        for n in 0..2 {
            let xs = t(&[2, 6, 6], &x.data()[n * 72..(n + 1) * 72]);
            let xs = g.constant(xs).unwrap();
            let ys = g.conv2d(xs, kv, bv, 2, 1).unwrap();
            assert_eq!(g.value(ys).data(), &batched[n * half..(n + 1) * half]);
        }
    }
}
