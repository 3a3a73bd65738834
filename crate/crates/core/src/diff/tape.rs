use super::kernels::{self, Window};
use super::{Array, DiffError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    input: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    /// `false` when the input was a single `(channels, length)` series.
    batched: bool,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv1d(ConvSpec),
    ConvTranspose1d(ConvSpec),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Reshape(Var),
}

struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Records a computation so that gradients can be pulled back through it.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] simply walks it in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Array {
        self.get(var).cloned().unwrap_or_else(|| Array::zeros(shape))
    }
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

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Array) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Array, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Array {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, name: &'static str, value: Array, op: Op, parents: &[Var]) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: name });
        }
        let needs_grad = self.needs(parents);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> DiffError {
        DiffError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(self.mismatch(op, a, b))
        }
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Array {
        let (x, y) = (self.value(a), self.value(b));
        Array::from_parts(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    // ---- forward ops -------------------------------------------------

    /// Matrix product of `(m×k)` and `(k×n)` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        self.push("matmul", Array::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn conv_geometry(
        &self,
        op: &'static str,
        input: Var,
        weight: Var,
        bias: Option<Var>,
    ) -> Result<(usize, usize, usize, usize, usize, bool), DiffError> {
        let si = self.shape(input);
        let sw = self.shape(weight);
        let (batch, channels, length, batched) = match *si {
            [c, l] => (1, c, l, false),
            [n, c, l] => (n, c, l, true),
            _ => return Err(self.mismatch(op, input, weight)),
        };
        if sw.len() != 3 || sw[0] == 0 {
            return Err(self.mismatch(op, input, weight));
        }
        // conv1d weights are (out, in, k); transposed weights are (in, out, k).
        let (w_in, w_out) = if op == "conv1d" { (sw[1], sw[0]) } else { (sw[0], sw[1]) };
        if w_in != channels {
            return Err(self.mismatch(op, input, weight));
        }
        if let Some(b) = bias {
            if self.shape(b) != [w_out] {
                return Err(self.mismatch(op, weight, b));
            }
        }
        Ok((batch, channels, length, w_out, sw[2], batched))
    }

    /// 1-D convolution (cross-correlation) with zero padding.
    ///
    /// `input` is `(channels, length)` or `(batch, channels, length)`;
    /// `weight` is `(out_channels, channels, kernel)`. The output length is
    /// `floor((length + 2·padding − kernel) / stride) + 1`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, DiffError> {
        let (batch, channels, length, out_ch, kernel, batched) = self.conv_geometry("conv1d", input, weight, bias)?;
        if stride == 0 || length + 2 * padding < kernel {
            return Err(DiffError::InvalidArgument(format!(
                "conv1d: kernel {kernel} with padding {padding}, stride {stride} does not fit length {length}"
            )));
        }
        let positions = (length + 2 * padding - kernel) / stride + 1;
        let win = Window { batch, channels, length, kernel, stride, padding, positions };
        let cols = kernels::im2col(self.value(input).data(), win);
        let mut out = vec![0.0; batch * positions * out_ch];
        kernels::gemm(
            batch * positions,
            channels * kernel,
            out_ch,
            &cols,
            false,
            self.value(weight).data(),
            true,
            0.0,
            &mut out,
        );
        let mut out = kernels::channels_first(&out, batch, out_ch, positions);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), positions);
        }
        let shape = if batched { vec![batch, out_ch, positions] } else { vec![out_ch, positions] };
        let spec = ConvSpec { input, weight, bias, stride, padding, batched };
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push("conv1d", Array::from_parts(shape, out), Op::Conv1d(spec), &parents)
    }

    /// Transposed 1-D convolution, the adjoint of [`Tape::conv1d`].
    ///
    /// `weight` is `(channels, out_channels, kernel)`. The output length is
    /// `(length − 1)·stride − 2·padding + kernel + output_padding`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var, DiffError> {
        let (batch, channels, length, out_ch, kernel, batched) =
            self.conv_geometry("conv_transpose1d", input, weight, bias)?;
        let full = (length - 1) * stride + kernel + output_padding;
        if stride == 0 || output_padding >= stride.max(1) || full <= 2 * padding {
            return Err(DiffError::InvalidArgument(format!(
                "conv_transpose1d: stride {stride}, padding {padding}, output padding {output_padding} invalid for length {length}"
            )));
        }
        let out_len = full - 2 * padding;
        let x_rows = kernels::channels_last(self.value(input).data(), batch, channels, length);
        let mut cols = vec![0.0; batch * length * out_ch * kernel];
        kernels::gemm(
            batch * length,
            channels,
            out_ch * kernel,
            &x_rows,
            false,
            self.value(weight).data(),
            false,
            0.0,
            &mut cols,
        );
        let win = Window { batch, channels: out_ch, length: out_len, kernel, stride, padding, positions: length };
        let mut out = vec![0.0; batch * out_ch * out_len];
        kernels::col2im(&cols, win, &mut out);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), out_len);
        }
        let shape = if batched { vec![batch, out_ch, out_len] } else { vec![out_ch, out_len] };
        let spec = ConvSpec { input, weight, bias, stride, padding, batched };
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push("conv_transpose1d", Array::from_parts(shape, out), Op::ConvTranspose1d(spec), &parents)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a bias vector along the last axis, repeated over every leading index.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb.len() != 1 || sx[sx.len() - 1] != sb[0] {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let width = sb[0];
        let b = self.value(bias).data();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(width) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push("add_bias", v, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, DiffError> {
        let v = self.value(x).map(|p| p * factor);
        self.push("scale", v, Op::Scale(x, factor), &[x])
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, x: Var, offset: f64) -> Result<Var, DiffError> {
        let v = self.value(x).map(|p| p + offset);
        self.push("shift", v, Op::Shift(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(|p| p.max(0.0));
        self.push("relu", v, Op::Relu(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(kernels::softplus);
        self.push("softplus", v, Op::Softplus(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(f64::exp);
        self.push("exp", v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(f64::ln);
        self.push("log", v, Op::Log(x), &[x])
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), DiffError> {
        if axis < self.shape(x).len() {
            Ok(())
        } else {
            Err(DiffError::InvalidArgument(format!("{op}: axis {axis} out of range for shape {:?}", self.shape(x))))
        }
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, DiffError> {
        self.check_axis("softmax", x, axis)?;
        let v = softmax_along(self.value(x), axis, false);
        self.push("softmax", v, Op::Softmax(x, axis), &[x])
    }

    /// `log(softmax(x))` along `axis` without forming the softmax first.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, DiffError> {
        self.check_axis("log_softmax", x, axis)?;
        let v = softmax_along(self.value(x), axis, true);
        self.push("log_softmax", v, Op::LogSoftmax(x, axis), &[x])
    }

    /// Sum of all elements, as a one-element array.
    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = Array::scalar(self.value(x).sum());
        self.push("sum", v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let a = self.value(x);
        let v = Array::scalar(a.sum() / a.len() as f64);
        self.push("mean", v, Op::Mean(x), &[x])
    }

    /// Sum along `axis`, dropping it. A fully reduced result has shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, DiffError> {
        self.check_axis("sum_axis", x, axis)?;
        let a = self.value(x);
        let (outer, extent, inner) = kernels::split_axis(a.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let src = &a.data()[(o * extent + e) * inner..][..inner];
                for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push("sum_axis", Array::from_parts(shape, out), Op::SumAxis(x, axis), &[x])
    }

    /// Concatenate along `axis`; every other extent must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or_else(|| DiffError::InvalidArgument("concat of zero arrays".into()))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        for &p in &parts[1..] {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let total: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let e = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p).data()[o * e * inner..][..e * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", Array::from_parts(shape, out), Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let a = self.value(x);
        if shape.iter().product::<usize>() != a.len() || shape.contains(&0) {
            return Err(DiffError::ShapeMismatch { op: "reshape", lhs: a.shape().to_vec(), rhs: shape.to_vec() });
        }
        let v = Array::from_parts(shape.to_vec(), a.data().to_vec());
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    // ---- reverse pass ------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every node at or before `loss` is visited once, latest first; a
    /// node's gradient is complete by the time it is visited because all
    /// of its consumers were recorded after it.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(DiffError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.pull_back(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array>], target: Var, contrib: Array) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn pull_back(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut da);
                    self.accumulate(grads, *a, Array::from_parts(vec![m, k], da));
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
                    self.accumulate(grads, *b, Array::from_parts(vec![k, n], db));
                }
            }
            Op::Conv1d(spec) => self.conv1d_backward(spec, g, grads),
            Op::ConvTranspose1d(spec) => self.conv_transpose1d_backward(spec, g, grads),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = zip(g, bv, |p, q| p * q);
                let gb = zip(g, av, |p, q| p * q);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                let width = self.shape(*b)[0];
                let mut db = vec![0.0; width];
                for row in g.data().chunks(width) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *b, Array::from_parts(vec![width], db));
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::Shift(x) => self.accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                // relu'(0) = 0
                let d = zip(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = zip(g, self.value(*x), |gv, xv| gv * kernels::sigmoid(xv));
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => self.accumulate(grads, *x, zip(g, y, |gv, yv| gv * yv)),
            Op::Log(x) => self.accumulate(grads, *x, zip(g, self.value(*x), |gv, xv| gv / xv)),
            Op::Softmax(x, axis) => {
                let d = along_axis(g, y, *axis, |gs, ys, out| {
                    let dot: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in out.iter_mut().zip(gs).zip(ys) {
                        *o = yv * (gv - dot);
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::LogSoftmax(x, axis) => {
                let d = along_axis(g, y, *axis, |gs, ys, out| {
                    let total: f64 = gs.iter().sum();
                    for ((o, gv), yv) in out.iter_mut().zip(gs).zip(ys) {
                        *o = gv - yv.exp() * total;
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let v = g.item();
                self.accumulate(grads, *x, Array::full(self.shape(*x), v));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = g.item() / xv.len() as f64;
                self.accumulate(grads, *x, Array::full(xv.shape(), v));
            }
            Op::SumAxis(x, axis) => {
                let shape = self.shape(*x);
                let (outer, extent, inner) = kernels::split_axis(shape, *axis);
                let mut d = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..][..inner];
                    for e in 0..extent {
                        d[(o * extent + e) * inner..][..inner].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *x, Array::from_parts(shape.to_vec(), d));
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = kernels::split_axis(y.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p);
                    let e = shape[*axis];
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            d.extend_from_slice(&g.data()[(o * total + offset) * inner..][..e * inner]);
                        }
                        self.accumulate(grads, p, Array::from_parts(shape.to_vec(), d));
                    }
                    offset += e;
                }
            }
            Op::Reshape(x) => {
                let d = Array::from_parts(self.shape(*x).to_vec(), g.data().to_vec());
                self.accumulate(grads, *x, d);
            }
        }
    }

    fn conv_batch(&self, spec: &ConvSpec) -> (usize, usize, usize) {
        let s = self.shape(spec.input);
        if spec.batched {
            (s[0], s[1], s[2])
        } else {
            (1, s[0], s[1])
        }
    }

    fn conv1d_backward(&self, spec: &ConvSpec, g: &Array, grads: &mut [Option<Array>]) {
        let (batch, channels, length) = self.conv_batch(spec);
        let w = self.value(spec.weight);
        let (out_ch, kernel) = (w.shape()[0], w.shape()[2]);
        let positions = *g.shape().last().unwrap();
        let win = Window { batch, channels, length, kernel, stride: spec.stride, padding: spec.padding, positions };
        let g_rows = kernels::channels_last(g.data(), batch, out_ch, positions);

        if let Some(b) = spec.bias {
            self.accumulate(grads, b, channel_sums(g.data(), batch, out_ch, positions));
        }
        if self.nodes[spec.weight.0].needs_grad {
            let cols = kernels::im2col(self.value(spec.input).data(), win);
            let mut dw = vec![0.0; out_ch * channels * kernel];
            kernels::gemm(out_ch, batch * positions, channels * kernel, &g_rows, true, &cols, false, 0.0, &mut dw);
            self.accumulate(grads, spec.weight, Array::from_parts(w.shape().to_vec(), dw));
        }
        if self.nodes[spec.input.0].needs_grad {
            let mut dcols = vec![0.0; win.cols_len()];
            kernels::gemm(
                batch * positions,
                out_ch,
                channels * kernel,
                &g_rows,
                false,
                w.data(),
                false,
                0.0,
                &mut dcols,
            );
            let mut dx = vec![0.0; batch * channels * length];
            kernels::col2im(&dcols, win, &mut dx);
            self.accumulate(grads, spec.input, Array::from_parts(self.shape(spec.input).to_vec(), dx));
        }
    }

    fn conv_transpose1d_backward(&self, spec: &ConvSpec, g: &Array, grads: &mut [Option<Array>]) {
        let (batch, channels, length) = self.conv_batch(spec);
        let w = self.value(spec.weight);
        let (out_ch, kernel) = (w.shape()[1], w.shape()[2]);
        let out_len = *g.shape().last().unwrap();
        let win = Window {
            batch,
            channels: out_ch,
            length: out_len,
            kernel,
            stride: spec.stride,
            padding: spec.padding,
            positions: length,
        };
        if let Some(b) = spec.bias {
            self.accumulate(grads, b, channel_sums(g.data(), batch, out_ch, out_len));
        }
        let g_cols = kernels::im2col(g.data(), win);
        if self.nodes[spec.weight.0].needs_grad {
            let x_rows = kernels::channels_last(self.value(spec.input).data(), batch, channels, length);
            let mut dw = vec![0.0; channels * out_ch * kernel];
            kernels::gemm(channels, batch * length, out_ch * kernel, &x_rows, true, &g_cols, false, 0.0, &mut dw);
            self.accumulate(grads, spec.weight, Array::from_parts(w.shape().to_vec(), dw));
        }
        if self.nodes[spec.input.0].needs_grad {
            let mut dx_rows = vec![0.0; batch * length * channels];
            kernels::gemm(batch * length, out_ch * kernel, channels, &g_cols, false, w.data(), true, 0.0, &mut dx_rows);
            let dx = kernels::channels_first(&dx_rows, batch, channels, length);
            self.accumulate(grads, spec.input, Array::from_parts(self.shape(spec.input).to_vec(), dx));
        }
    }
}

fn zip(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    Array::from_parts(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect())
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], length: usize) {
    let channels = bias.len();
    for (i, chunk) in out.chunks_mut(length).enumerate() {
        let b = bias[i % channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(g: &[f64], batch: usize, channels: usize, length: usize) -> Array {
    let mut db = vec![0.0; channels];
    for n in 0..batch {
        for (c, d) in db.iter_mut().enumerate() {
            *d += g[(n * channels + c) * length..][..length].iter().sum::<f64>();
        }
    }
    Array::from_parts(vec![channels], db)
}

/// Apply `f` to every 1-D fibre along `axis`, gathering strided elements
/// into contiguous scratch buffers.
fn along_axis(g: &Array, y: &Array, axis: usize, f: impl Fn(&[f64], &[f64], &mut [f64])) -> Array {
    let (outer, extent, inner) = kernels::split_axis(y.shape(), axis);
    let mut out = vec![0.0; y.len()];
    let (mut gs, mut ys, mut os) = (vec![0.0; extent], vec![0.0; extent], vec![0.0; extent]);
    for o in 0..outer {
        for i in 0..inner {
            for e in 0..extent {
                let idx = (o * extent + e) * inner + i;
                gs[e] = g.data()[idx];
                ys[e] = y.data()[idx];
            }
            f(&gs, &ys, &mut os);
            for e in 0..extent {
                out[(o * extent + e) * inner + i] = os[e];
            }
        }
    }
    Array::from_parts(y.shape().to_vec(), out)
}

fn softmax_along(x: &Array, axis: usize, log: bool) -> Array {
    let (outer, extent, inner) = kernels::split_axis(x.shape(), axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |e: usize| (o * extent + e) * inner + i;
            let max = (0..extent).map(|e| x.data()[idx(e)]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..extent).map(|e| (x.data()[idx(e)] - max).exp()).sum();
            let log_total = total.ln();
            for e in 0..extent {
                let shifted = x.data()[idx(e)] - max;
                out[idx(e)] = if log { shifted - log_total } else { shifted.exp() / total };
            }
        }
    }
    Array::from_parts(x.shape().to_vec(), out)
}
