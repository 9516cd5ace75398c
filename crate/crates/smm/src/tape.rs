//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every forward op appends one node. Backward walks the nodes in reverse
//! append order, which is a reverse topological order by construction, and
//! accumulates gradients into the leaves. One tape lives for one training
//! step and is dropped after `backward`.
//!
//! When no input of an op requires a gradient the result is stored as a
//! plain leaf, so inference-style forwards run the exact same arithmetic
//! with no graph retained.

use crate::error::{Result, SmmError};
use crate::tensor::Tensor;

pub type VarId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    ScaleRows(VarId, Vec<f64>),
    Matmul(VarId, VarId),
    AddBias(VarId, VarId),
    AddChanBias(VarId, VarId),
    AddSampleChan(VarId, VarId),
    Conv2d {
        input: VarId,
        weight: VarId,
        stride: usize,
        pad: usize,
    },
    Relu(VarId),
    LeakyRelu(VarId, f64),
    Tanh(VarId),
    Sum(VarId),
    Mean(VarId),
    SqNorm(VarId),
    Concat(Vec<VarId>),
    Reshape(VarId),
    Upsample2x(VarId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<VarId> {
        value.check_finite("tape leaf")?;
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<VarId> {
        self.leaf(value, false)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last backward pass, if this node required one.
    pub fn grad(&self, id: VarId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn requires_grad(&self, id: VarId) -> bool {
        self.nodes[id].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<VarId> {
        let id = self.nodes.len();
        // Nodes with no gradient demand degrade to leaves: same value, no graph.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(id)
    }

    fn needs_grad(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn check_same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<()> {
        if self.nodes[a].value.shape != self.nodes[b].value.shape {
            return Err(SmmError::ShapeMismatch {
                op,
                lhs: self.nodes[a].value.shape.clone(),
                rhs: self.nodes[b].value.shape.clone(),
            });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_same_shape("add", a, b)?;
        let v = zip_map(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        let rg = self.needs_grad(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_same_shape("sub", a, b)?;
        let v = zip_map(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        let rg = self.needs_grad(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_same_shape("mul", a, b)?;
        let v = zip_map(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        let rg = self.needs_grad(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: VarId, k: f64) -> Result<VarId> {
        let va = &self.nodes[a].value;
        let v = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().map(|x| x * k).collect(),
        };
        let rg = self.needs_grad(&[a]);
        self.push(v, Op::Scale(a, k), rg)
    }

    /// Broadcast one scalar per batch row: `out[b, ..] = a[b, ..] * factors[b]`.
    pub fn scale_rows(&mut self, a: VarId, factors: &[f64]) -> Result<VarId> {
        let va = &self.nodes[a].value;
        if va.batch() != factors.len() {
            return Err(SmmError::ShapeMismatch {
                op: "scale_rows",
                lhs: va.shape.clone(),
                rhs: vec![factors.len()],
            });
        }
        let row = va.numel() / va.batch();
        let mut data = va.data.clone();
        for (b, &f) in factors.iter().enumerate() {
            for v in &mut data[b * row..(b + 1) * row] {
                *v *= f;
            }
        }
        let v = Tensor {
            shape: va.shape.clone(),
            data,
        };
        let rg = self.needs_grad(&[a]);
        self.push(v, Op::ScaleRows(a, factors.to_vec()), rg)
    }

    // ---- linear algebra ----

    /// `a: [B, I] x w: [I, O] -> [B, O]`
    pub fn matmul(&mut self, a: VarId, w: VarId) -> Result<VarId> {
        let (sa, sw) = (&self.nodes[a].value.shape, &self.nodes[w].value.shape);
        if sa.len() != 2 || sw.len() != 2 || sa[1] != sw[0] {
            return Err(SmmError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sw.clone(),
            });
        }
        let (bsz, inner, out) = (sa[0], sa[1], sw[1]);
        let mut data = vec![0.0; bsz * out];
        let av = &self.nodes[a].value.data;
        let wv = &self.nodes[w].value.data;
        for b in 0..bsz {
            let dst = &mut data[b * out..(b + 1) * out];
            for i in 0..inner {
                let x = av[b * inner + i];
                let wrow = &wv[i * out..(i + 1) * out];
                for (d, &wij) in dst.iter_mut().zip(wrow) {
                    *d += x * wij;
                }
            }
        }
        let v = Tensor {
            shape: vec![bsz, out],
            data,
        };
        let rg = self.needs_grad(&[a, w]);
        self.push(v, Op::Matmul(a, w), rg)
    }

    /// `a: [B, F] + bias: [F]`, broadcast over the batch.
    pub fn add_bias(&mut self, a: VarId, bias: VarId) -> Result<VarId> {
        let (sa, sb) = (&self.nodes[a].value.shape, &self.nodes[bias].value.shape);
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(SmmError::ShapeMismatch {
                op: "add_bias",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let f = sa[1];
        let bv = &self.nodes[bias].value.data;
        let mut data = self.nodes[a].value.data.clone();
        for chunk in data.chunks_mut(f) {
            for (d, &b) in chunk.iter_mut().zip(bv) {
                *d += b;
            }
        }
        let v = Tensor {
            shape: sa.clone(),
            data,
        };
        let rg = self.needs_grad(&[a, bias]);
        self.push(v, Op::AddBias(a, bias), rg)
    }

    /// `a: [B, C, H, W] + bias: [C]`, broadcast over batch and space.
    pub fn add_chan_bias(&mut self, a: VarId, bias: VarId) -> Result<VarId> {
        let (sa, sb) = (&self.nodes[a].value.shape, &self.nodes[bias].value.shape);
        if sa.len() != 4 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(SmmError::ShapeMismatch {
                op: "add_chan_bias",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (c, hw) = (sa[1], sa[2] * sa[3]);
        let bv = &self.nodes[bias].value.data;
        let mut data = self.nodes[a].value.data.clone();
        for sample in data.chunks_mut(c * hw) {
            for (ch, &b) in bv.iter().enumerate() {
                for d in &mut sample[ch * hw..(ch + 1) * hw] {
                    *d += b;
                }
            }
        }
        let v = Tensor {
            shape: sa.clone(),
            data,
        };
        let rg = self.needs_grad(&[a, bias]);
        self.push(v, Op::AddChanBias(a, bias), rg)
    }

    /// `a: [B, C, H, W] + b: [B, C]`, each per-sample channel scalar broadcast
    /// over space. Used for per-sample time conditioning of conv layers.
    pub fn add_sample_chan(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (&self.nodes[a].value.shape, &self.nodes[b].value.shape);
        if sa.len() != 4 || sb.len() != 2 || sa[0] != sb[0] || sa[1] != sb[1] {
            return Err(SmmError::ShapeMismatch {
                op: "add_sample_chan",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (c, hw) = (sa[1], sa[2] * sa[3]);
        let bv = &self.nodes[b].value.data;
        let mut data = self.nodes[a].value.data.clone();
        for (s, sample) in data.chunks_mut(c * hw).enumerate() {
            for ch in 0..c {
                let add = bv[s * c + ch];
                for d in &mut sample[ch * hw..(ch + 1) * hw] {
                    *d += add;
                }
            }
        }
        let v = Tensor {
            shape: sa.clone(),
            data,
        };
        let rg = self.needs_grad(&[a, b]);
        self.push(v, Op::AddSampleChan(a, b), rg)
    }

    /// Direct 2D convolution. `input: [B, IC, H, W]`, `weight: [OC, IC, KH, KW]`,
    /// odd kernel, stride 1 or 2.
    pub fn conv2d(
        &mut self,
        input: VarId,
        weight: VarId,
        stride: usize,
        padding: Padding,
    ) -> Result<VarId> {
        let (si, sw) = (&self.nodes[input].value.shape, &self.nodes[weight].value.shape);
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] {
            return Err(SmmError::ShapeMismatch {
                op: "conv2d",
                lhs: si.clone(),
                rhs: sw.clone(),
            });
        }
        if stride == 0 || stride > 2 {
            return Err(SmmError::InvalidArgument(format!(
                "conv2d stride {stride} unsupported"
            )));
        }
        let (kh, kw) = (sw[2], sw[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(SmmError::InvalidArgument(
                "conv2d requires odd kernel extents".into(),
            ));
        }
        let pad = match padding {
            Padding::Same => (kh - 1) / 2,
            Padding::Valid => 0,
        };
        let (h, w) = (si[2], si[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(SmmError::ShapeMismatch {
                op: "conv2d",
                lhs: si.clone(),
                rhs: sw.clone(),
            });
        }
        let value = conv2d_forward(
            &self.nodes[input].value,
            &self.nodes[weight].value,
            stride,
            pad,
        );
        let rg = self.needs_grad(&[input, weight]);
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                stride,
                pad,
            },
            rg,
        )
    }

    // ---- activations ----

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        let v = map(&self.nodes[a].value, |x| x.max(0.0));
        let rg = self.needs_grad(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: VarId, slope: f64) -> Result<VarId> {
        let v = map(&self.nodes[a].value, |x| if x > 0.0 { x } else { slope * x });
        let rg = self.needs_grad(&[a]);
        self.push(v, Op::LeakyRelu(a, slope), rg)
    }

    pub fn tanh(&mut self, a: VarId) -> Result<VarId> {
        let v = map(&self.nodes[a].value, f64::tanh);
        let rg = self.needs_grad(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: VarId) -> Result<VarId> {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.finite_scalar(s, "sum")?;
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: VarId) -> Result<VarId> {
        let n = self.nodes[a].value.numel() as f64;
        let s: f64 = self.nodes[a].value.data.iter().sum::<f64>() / n;
        self.finite_scalar(s, "mean")?;
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Squared L2 norm over all elements.
    pub fn sq_norm(&mut self, a: VarId) -> Result<VarId> {
        let s: f64 = self.nodes[a].value.data.iter().map(|x| x * x).sum();
        self.finite_scalar(s, "sq_norm")?;
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(s), Op::SqNorm(a), rg)
    }

    fn finite_scalar(&self, s: f64, op: &str) -> Result<()> {
        if s.is_finite() {
            Ok(())
        } else {
            Err(SmmError::NonFinite {
                context: format!("{op} result"),
            })
        }
    }

    // ---- shape ----

    /// Concatenate along axis 1 (features or channels).
    pub fn concat(&mut self, ids: &[VarId]) -> Result<VarId> {
        if ids.is_empty() {
            return Err(SmmError::InvalidArgument("concat of nothing".into()));
        }
        let first = &self.nodes[ids[0]].value.shape;
        let bsz = first[0];
        let mut axis1 = 0usize;
        for &id in ids {
            let s = &self.nodes[id].value.shape;
            let compatible = s.len() == first.len()
                && s[0] == bsz
                && s[2..] == first[2..];
            if !compatible {
                return Err(SmmError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.clone(),
                });
            }
            axis1 += s[1];
        }
        let mut shape = first.clone();
        shape[1] = axis1;
        let total: usize = shape.iter().product();
        let mut data = Vec::with_capacity(total);
        for b in 0..bsz {
            for &id in ids {
                let v = &self.nodes[id].value;
                let row = v.numel() / bsz;
                data.extend_from_slice(&v.data[b * row..(b + 1) * row]);
            }
        }
        let rg = self.needs_grad(ids);
        self.push(Tensor { shape, data }, Op::Concat(ids.to_vec()), rg)
    }

    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId> {
        let va = &self.nodes[a].value;
        if shape.iter().product::<usize>() != va.numel() {
            return Err(SmmError::ShapeMismatch {
                op: "reshape",
                lhs: va.shape.clone(),
                rhs: shape,
            });
        }
        let v = Tensor {
            shape,
            data: va.data.clone(),
        };
        let rg = self.needs_grad(&[a]);
        self.push(v, Op::Reshape(a), rg)
    }

    /// Nearest-neighbour 2x upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, a: VarId) -> Result<VarId> {
        let s = &self.nodes[a].value.shape;
        if s.len() != 4 {
            return Err(SmmError::ShapeMismatch {
                op: "upsample2x",
                lhs: s.clone(),
                rhs: vec![],
            });
        }
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = &self.nodes[a].value.data;
        let mut data = vec![0.0; bsz * c * 4 * h * w];
        let (oh, ow) = (2 * h, 2 * w);
        for bc in 0..bsz * c {
            let sbase = bc * h * w;
            let dbase = bc * oh * ow;
            for y in 0..oh {
                let srow = sbase + (y / 2) * w;
                let drow = dbase + y * ow;
                for x in 0..ow {
                    data[drow + x] = src[srow + x / 2];
                }
            }
        }
        let v = Tensor {
            shape: vec![bsz, c, oh, ow],
            data,
        };
        let rg = self.needs_grad(&[a]);
        self.push(v, Op::Upsample2x(a), rg)
    }

    // ---- backward ----

    /// Populate gradients of every `requires_grad` leaf reachable from `loss`.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.backward_done {
            return Err(SmmError::DoubleBackward);
        }
        let lv = &self.nodes[loss].value;
        if !lv.is_scalar() {
            return Err(SmmError::NonScalarLoss(lv.shape.clone()));
        }
        lv.check_finite("backward loss")?;
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {
                    self.nodes[id].grad = Some(g);
                    continue;
                }
                op => self.propagate(op_snapshot(op), id, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        op: OpRef,
        id: VarId,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let accum = |grads: &mut [Option<Vec<f64>>], tape: &Tape, target: VarId, delta: &[f64]| {
            if !tape.nodes[target].requires_grad {
                return;
            }
            let slot = grads[target]
                .get_or_insert_with(|| vec![0.0; tape.nodes[target].value.numel()]);
            for (s, d) in slot.iter_mut().zip(delta) {
                *s += d;
            }
        };

        match op {
            OpRef::Add(a, b) => {
                accum(grads, self, a, g);
                accum(grads, self, b, g);
            }
            OpRef::Sub(a, b) => {
                accum(grads, self, a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accum(grads, self, b, &neg);
            }
            OpRef::Mul(a, b) => {
                let gb: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].value.data)
                    .map(|(g, x)| g * x)
                    .collect();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[b].value.data)
                    .map(|(g, x)| g * x)
                    .collect();
                accum(grads, self, a, &ga);
                accum(grads, self, b, &gb);
            }
            OpRef::Scale(a, k) => {
                let ga: Vec<f64> = g.iter().map(|x| x * k).collect();
                accum(grads, self, a, &ga);
            }
            OpRef::ScaleRows(a, factors) => {
                let row = self.nodes[a].value.numel() / factors.len();
                let mut ga = g.to_vec();
                for (b, &f) in factors.iter().enumerate() {
                    for v in &mut ga[b * row..(b + 1) * row] {
                        *v *= f;
                    }
                }
                accum(grads, self, a, &ga);
            }
            OpRef::Matmul(a, w) => {
                let sa = &self.nodes[a].value.shape;
                let sw = &self.nodes[w].value.shape;
                let (bsz, inner, out) = (sa[0], sa[1], sw[1]);
                let av = &self.nodes[a].value.data;
                let wv = &self.nodes[w].value.data;
                if self.nodes[a].requires_grad {
                    // ga = g @ w^T
                    let mut ga = vec![0.0; bsz * inner];
                    for b in 0..bsz {
                        for i in 0..inner {
                            let wrow = &wv[i * out..(i + 1) * out];
                            let grow = &g[b * out..(b + 1) * out];
                            let mut acc = 0.0;
                            for (wij, gj) in wrow.iter().zip(grow) {
                                acc += wij * gj;
                            }
                            ga[b * inner + i] = acc;
                        }
                    }
                    accum(grads, self, a, &ga);
                }
                if self.nodes[w].requires_grad {
                    // gw = a^T @ g
                    let mut gw = vec![0.0; inner * out];
                    for b in 0..bsz {
                        let grow = &g[b * out..(b + 1) * out];
                        for i in 0..inner {
                            let x = av[b * inner + i];
                            let dst = &mut gw[i * out..(i + 1) * out];
                            for (d, gj) in dst.iter_mut().zip(grow) {
                                *d += x * gj;
                            }
                        }
                    }
                    accum(grads, self, w, &gw);
                }
            }
            OpRef::AddBias(a, bias) => {
                accum(grads, self, a, g);
                if self.nodes[bias].requires_grad {
                    let f = self.nodes[bias].value.numel();
                    let mut gb = vec![0.0; f];
                    for chunk in g.chunks(f) {
                        for (d, &x) in gb.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    accum(grads, self, bias, &gb);
                }
            }
            OpRef::AddChanBias(a, bias) => {
                accum(grads, self, a, g);
                if self.nodes[bias].requires_grad {
                    let s = &self.nodes[a].value.shape;
                    let (c, hw) = (s[1], s[2] * s[3]);
                    let mut gb = vec![0.0; c];
                    for sample in g.chunks(c * hw) {
                        for (ch, d) in gb.iter_mut().enumerate() {
                            *d += sample[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    accum(grads, self, bias, &gb);
                }
            }
            OpRef::AddSampleChan(a, b) => {
                accum(grads, self, a, g);
                if self.nodes[b].requires_grad {
                    let s = &self.nodes[a].value.shape;
                    let (bsz, c, hw) = (s[0], s[1], s[2] * s[3]);
                    let mut gb = vec![0.0; bsz * c];
                    for (smp, sample) in g.chunks(c * hw).enumerate().take(bsz) {
                        for ch in 0..c {
                            gb[smp * c + ch] =
                                sample[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    accum(grads, self, b, &gb);
                }
            }
            OpRef::Conv2d {
                input,
                weight,
                stride,
                pad,
            } => {
                let (gi, gw) = conv2d_backward(
                    &self.nodes[input].value,
                    &self.nodes[weight].value,
                    &self.nodes[id].value.shape,
                    g,
                    stride,
                    pad,
                    self.nodes[input].requires_grad,
                    self.nodes[weight].requires_grad,
                );
                if let Some(gi) = gi {
                    accum(grads, self, input, &gi);
                }
                if let Some(gw) = gw {
                    accum(grads, self, weight, &gw);
                }
            }
            OpRef::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].value.data)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accum(grads, self, a, &ga);
            }
            OpRef::LeakyRelu(a, slope) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a].value.data)
                    .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                    .collect();
                accum(grads, self, a, &ga);
            }
            OpRef::Tanh(a) => {
                // y = tanh(x) saved in this node's value
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[id].value.data)
                    .map(|(g, &y)| g * (1.0 - y * y))
                    .collect();
                accum(grads, self, a, &ga);
            }
            OpRef::Sum(a) => {
                let ga = vec![g[0]; self.nodes[a].value.numel()];
                accum(grads, self, a, &ga);
            }
            OpRef::Mean(a) => {
                let n = self.nodes[a].value.numel();
                let ga = vec![g[0] / n as f64; n];
                accum(grads, self, a, &ga);
            }
            OpRef::SqNorm(a) => {
                let ga: Vec<f64> = self.nodes[a]
                    .value
                    .data
                    .iter()
                    .map(|&x| 2.0 * x * g[0])
                    .collect();
                accum(grads, self, a, &ga);
            }
            OpRef::Concat(ids) => {
                let bsz = self.nodes[id].value.batch();
                let mut offset = 0usize;
                let total_row = self.nodes[id].value.numel() / bsz;
                for &src in &ids {
                    let row = self.nodes[src].value.numel() / bsz;
                    if self.nodes[src].requires_grad {
                        let mut gs = vec![0.0; bsz * row];
                        for b in 0..bsz {
                            gs[b * row..(b + 1) * row].copy_from_slice(
                                &g[b * total_row + offset..b * total_row + offset + row],
                            );
                        }
                        accum(grads, self, src, &gs);
                    }
                    offset += row;
                }
            }
            OpRef::Reshape(a) => {
                accum(grads, self, a, g);
            }
            OpRef::Upsample2x(a) => {
                let s = &self.nodes[a].value.shape;
                let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
                let (oh, ow) = (2 * h, 2 * w);
                let mut ga = vec![0.0; bsz * c * h * w];
                for bc in 0..bsz * c {
                    let sbase = bc * h * w;
                    let dbase = bc * oh * ow;
                    for y in 0..oh {
                        let srow = sbase + (y / 2) * w;
                        let drow = dbase + y * ow;
                        for x in 0..ow {
                            ga[srow + x / 2] += g[drow + x];
                        }
                    }
                }
                accum(grads, self, a, &ga);
            }
        }
    }
}

/// Owned snapshot of an op so backward can borrow the tape immutably.
enum OpRef {
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    ScaleRows(VarId, Vec<f64>),
    Matmul(VarId, VarId),
    AddBias(VarId, VarId),
    AddChanBias(VarId, VarId),
    AddSampleChan(VarId, VarId),
    Conv2d {
        input: VarId,
        weight: VarId,
        stride: usize,
        pad: usize,
    },
    Relu(VarId),
    LeakyRelu(VarId, f64),
    Tanh(VarId),
    Sum(VarId),
    Mean(VarId),
    SqNorm(VarId),
    Concat(Vec<VarId>),
    Reshape(VarId),
    Upsample2x(VarId),
}

fn op_snapshot(op: &Op) -> OpRef {
    match op {
        Op::Leaf => unreachable!("leaves are handled before propagate"),
        Op::Add(a, b) => OpRef::Add(*a, *b),
        Op::Sub(a, b) => OpRef::Sub(*a, *b),
        Op::Mul(a, b) => OpRef::Mul(*a, *b),
        Op::Scale(a, k) => OpRef::Scale(*a, *k),
        Op::ScaleRows(a, f) => OpRef::ScaleRows(*a, f.clone()),
        Op::Matmul(a, b) => OpRef::Matmul(*a, *b),
        Op::AddBias(a, b) => OpRef::AddBias(*a, *b),
        Op::AddChanBias(a, b) => OpRef::AddChanBias(*a, *b),
        Op::AddSampleChan(a, b) => OpRef::AddSampleChan(*a, *b),
        Op::Conv2d {
            input,
            weight,
            stride,
            pad,
        } => OpRef::Conv2d {
            input: *input,
            weight: *weight,
            stride: *stride,
            pad: *pad,
        },
        Op::Relu(a) => OpRef::Relu(*a),
        Op::LeakyRelu(a, s) => OpRef::LeakyRelu(*a, *s),
        Op::Tanh(a) => OpRef::Tanh(*a),
        Op::Sum(a) => OpRef::Sum(*a),
        Op::Mean(a) => OpRef::Mean(*a),
        Op::SqNorm(a) => OpRef::SqNorm(*a),
        Op::Concat(ids) => OpRef::Concat(ids.clone()),
        Op::Reshape(a) => OpRef::Reshape(*a),
        Op::Upsample2x(a) => OpRef::Upsample2x(*a),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect(),
    }
}

fn conv_out_extent(h: usize, k: usize, pad: usize, stride: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

fn conv_range(extent_in: usize, extent_out: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // valid output positions o with 0 <= o*stride + k - pad < extent_in
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = (extent_in + pad).saturating_sub(k).div_ceil(stride);
    (lo.min(extent_out), hi.min(extent_out))
}

fn conv2d_forward(input: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (bsz, ic, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let (oc, kh, kw) = (weight.shape[0], weight.shape[2], weight.shape[3]);
    let oh = conv_out_extent(h, kh, pad, stride);
    let ow = conv_out_extent(w, kw, pad, stride);
    let mut out = vec![0.0; bsz * oc * oh * ow];
    let iv = &input.data;
    let wv = &weight.data;
    for b in 0..bsz {
        let in_b = &iv[b * ic * h * w..(b + 1) * ic * h * w];
        let out_b = &mut out[b * oc * oh * ow..(b + 1) * oc * oh * ow];
        for o in 0..oc {
            let out_c = &mut out_b[o * oh * ow..(o + 1) * oh * ow];
            for i in 0..ic {
                let in_c = &in_b[i * h * w..(i + 1) * h * w];
                let w_base = (o * ic + i) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = conv_range(h, oh, ky, pad, stride);
                    for kx in 0..kw {
                        let wval = wv[w_base + ky * kw + kx];
                        if wval == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = conv_range(w, ow, kx, pad, stride);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let in_row = &in_c[iy * w..iy * w + w];
                            let out_row = &mut out_c[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - pad;
                                let n = ox_hi - ox_lo;
                                let src = &in_row[ix0..ix0 + n];
                                let dst = &mut out_row[ox_lo..ox_lo + n];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wval * s;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    out_row[ox] += wval * in_row[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![bsz, oc, oh, ow],
        data: out,
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    out_shape: &[usize],
    gout: &[f64],
    stride: usize,
    pad: usize,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (bsz, ic, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let (oc, kh, kw) = (weight.shape[0], weight.shape[2], weight.shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let mut gi = if need_input {
        Some(vec![0.0; input.numel()])
    } else {
        None
    };
    let mut gw = if need_weight {
        Some(vec![0.0; weight.numel()])
    } else {
        None
    };
    for b in 0..bsz {
        let in_b = &input.data[b * ic * h * w..(b + 1) * ic * h * w];
        let g_b = &gout[b * oc * oh * ow..(b + 1) * oc * oh * ow];
        for o in 0..oc {
            let g_c = &g_b[o * oh * ow..(o + 1) * oh * ow];
            for i in 0..ic {
                let in_c = &in_b[i * h * w..(i + 1) * h * w];
                let gi_base = b * ic * h * w + i * h * w;
                let w_base = (o * ic + i) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = conv_range(h, oh, ky, pad, stride);
                    for kx in 0..kw {
                        let wval = weight.data[w_base + ky * kw + kx];
                        let (ox_lo, ox_hi) = conv_range(w, ow, kx, pad, stride);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut wacc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_c[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - pad;
                                let n = ox_hi - ox_lo;
                                let in_row = &in_c[iy * w + ix0..iy * w + ix0 + n];
                                let g_seg = &g_row[ox_lo..ox_lo + n];
                                if need_weight {
                                    let mut acc = 0.0;
                                    for (x, g) in in_row.iter().zip(g_seg) {
                                        acc += x * g;
                                    }
                                    wacc += acc;
                                }
                                if let Some(gi) = gi.as_mut() {
                                    let dst =
                                        &mut gi[gi_base + iy * w + ix0..gi_base + iy * w + ix0 + n];
                                    for (d, g) in dst.iter_mut().zip(g_seg) {
                                        *d += wval * g;
                                    }
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * stride + kx - pad;
                                    let gv = g_row[ox];
                                    wacc += in_c[iy * w + ix] * gv;
                                    if let Some(gi) = gi.as_mut() {
                                        gi[gi_base + iy * w + ix] += wval * gv;
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[w_base + ky * kw + kx] += wacc;
                        }
                    }
                }
            }
        }
    }
    (gi, gw)
}
