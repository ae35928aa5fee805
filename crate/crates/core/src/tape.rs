//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Every operation evaluates eagerly and appends one node to the [`Tape`].
//! [`Tape::backward`] walks the nodes in reverse recording order, so each
//! operation is visited exactly once and gradients of shared inputs add up.

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::real::{gemm, Mat, Real};
use crate::tensor::{dims2, dims3, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    ScaleChannels {
        input: Var,
        scale: Var,
    },
    MulConst {
        input: Var,
        factor: Vec<T>,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (`n - 1` denominator), as used for running estimates.
    pub var_unbiased: Vec<T>,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// Operation record for one forward pass.
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(u64, Var)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a parameter as a differentiable leaf.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        let var = self.leaf(p.tensor.clone(), true);
        self.bindings.push((p.uid(), var));
        var
    }

    pub(crate) fn vars_of(&self, uid: u64) -> impl Iterator<Item = Var> + '_ {
        self.bindings
            .iter()
            .filter(move |(u, _)| *u == uid)
            .map(|&(_, v)| v)
    }

    /// Width-preserving 1-D convolution; see [`conv::same_padding`] for the padding rule.
    pub fn conv1d_same(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        groups: usize,
    ) -> Result<Var> {
        const OP: &str = "conv1d_same";
        let (batch, cin, width) = dims3(self.value(input), OP)?;
        let ws = self.value(weight);
        ws.expect_rank(OP, 3)?;
        let (cout, cin_g, k) = (ws.shape()[0], ws.shape()[1], ws.shape()[2]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(
                OP,
                "groups",
                format!("{cin} input / {cout} output channels not divisible by {groups} groups"),
            ));
        }
        if cin_g != cin / groups {
            return Err(Error::shape(
                OP,
                "input channels",
                format!("weight expects {cin_g} per group, input has {}", cin / groups),
            ));
        }
        if width == 0 || k == 0 {
            return Err(Error::shape(OP, "width", "width and kernel size must be >= 1"));
        }
        if let Some(b) = bias {
            let bs = self.value(b);
            if bs.shape() != [cout] {
                return Err(Error::shape(
                    OP,
                    "bias",
                    format!("expected [{cout}], got {:?}", bs.shape()),
                ));
            }
        }
        let geom = ConvGeom {
            batch,
            cin,
            cout,
            width,
            k,
            groups,
        };
        let out = conv::forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            geom,
        );
        let rg = self.any_grad(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::from_vec(&[batch, cout, width], out)?;
        Ok(self.push(
            value,
            rg,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Training-mode batch norm: per-channel statistics over batch and time.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        epsilon: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        const OP: &str = "batch_norm";
        let (b, c, w) = dims3(self.value(input), OP)?;
        self.check_channel_vec(OP, scale, c)?;
        self.check_channel_vec(OP, shift, c)?;
        let n = b * w;
        if n < 2 {
            return Err(Error::shape(OP, "batch", "training needs >= 2 values per channel"));
        }
        let x = self.value(input).data();
        let nf = T::lit(n as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s = s + x[(bi * c + ch) * w..][..w].iter().copied().sum::<T>();
            }
            let m = s / nf;
            let mut ss = T::zero();
            for bi in 0..b {
                for &v in &x[(bi * c + ch) * w..][..w] {
                    ss = ss + (v - m) * (v - m);
                }
            }
            mean[ch] = m;
            var[ch] = ss / nf;
        }
        let eps = T::lit(epsilon);
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let var_unbiased = var
            .iter()
            .map(|&v| v * nf / T::lit((n - 1) as f64))
            .collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var_unbiased,
        };
        let var = self.normalize(input, scale, shift, &mean, inv_std, true)?;
        Ok((var, stats))
    }

    /// Inference-mode batch norm with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        running_mean: &[T],
        running_var: &[T],
        epsilon: f64,
    ) -> Result<Var> {
        const OP: &str = "batch_norm";
        let (_, c, _) = dims3(self.value(input), OP)?;
        self.check_channel_vec(OP, scale, c)?;
        self.check_channel_vec(OP, shift, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(OP, "running statistics", format!("expected {c} channels")));
        }
        let eps = T::lit(epsilon);
        let inv_std = running_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        self.normalize(input, scale, shift, running_mean, inv_std, false)
    }

    fn check_channel_vec(&self, op: &'static str, v: Var, c: usize) -> Result<()> {
        if self.value(v).shape() != [c] {
            return Err(Error::shape(
                op,
                "channels",
                format!("expected [{c}], got {:?}", self.value(v).shape()),
            ));
        }
        Ok(())
    }

    fn normalize(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        mean: &[T],
        inv_std: Vec<T>,
        batch_stats: bool,
    ) -> Result<Var> {
        let xs = self.value(input);
        let shape = xs.shape().to_vec();
        let (c, w) = (shape[1], shape[2]);
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut out = Vec::with_capacity(xs.len());
        for (row_idx, row) in xs.data().chunks_exact(w).enumerate() {
            let ch = row_idx % c;
            for &v in row {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(gamma[ch] * h + beta[ch]);
            }
        }
        let rg = self.any_grad(&[input, scale, shift]);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            rg,
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(T::zero()));
        let rg = self.requires_grad(x);
        self.push(v, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        let rg = self.requires_grad(x);
        self.push(v, rg, Op::Sigmoid(x))
    }

    /// `x @ weight^T + bias` for `x: [B, din]`, `weight: [dout, din]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let (b, din) = dims2(self.value(input), OP)?;
        let (dout, wdin) = dims2(self.value(weight), OP)?;
        if din != wdin {
            return Err(Error::shape(
                OP,
                "input features",
                format!("input has {din}, weight expects {wdin}"),
            ));
        }
        let mut out = vec![T::zero(); b * dout];
        if let Some(bv) = bias {
            let bs = self.value(bv);
            if bs.shape() != [dout] {
                return Err(Error::shape(
                    OP,
                    "bias",
                    format!("expected [{dout}], got {:?}", bs.shape()),
                ));
            }
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bs.data());
            }
        }
        gemm(
            Mat::new(self.value(input).data(), b, din),
            Mat::new(self.value(weight).data(), dout, din).t(),
            T::one(),
            &mut out,
        );
        let rg = self.any_grad(&[input, weight]) || bias.is_some_and(|v| self.requires_grad(v));
        Ok(self.push(
            Tensor::from_vec(&[b, dout], out)?,
            rg,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Mean over the time axis: `[B, C, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, w) = dims3(self.value(x), "global_avg_pool")?;
        if w == 0 {
            return Err(Error::shape("global_avg_pool", "width", "width must be >= 1"));
        }
        let wf = T::lit(w as f64);
        let out = self
            .value(x)
            .data()
            .chunks_exact(w)
            .map(|row| row.iter().copied().sum::<T>() / wf)
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_vec(&[b, c], out)?, rg, Op::GlobalAvgPool(x)))
    }

    /// Channel-axis concatenation of `[B, Ci, W]` tensors, in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = xs
            .first()
            .ok_or_else(|| Error::shape(OP, "inputs", "need at least one tensor"))?;
        let (b, _, w) = dims3(self.value(*first), OP)?;
        let mut total = 0;
        for &x in xs {
            let (bi, ci, wi) = dims3(self.value(x), OP)?;
            if bi != b {
                return Err(Error::shape(OP, "batch", format!("{bi} vs {b}")));
            }
            if wi != w {
                return Err(Error::shape(OP, "width", format!("{wi} vs {w}")));
            }
            total += ci;
        }
        let mut out = Vec::with_capacity(b * total * w);
        for bi in 0..b {
            for &x in xs {
                let v = self.value(x);
                let cw = v.shape()[1] * w;
                out.extend_from_slice(&v.data()[bi * cw..(bi + 1) * cw]);
            }
        }
        let rg = self.any_grad(xs);
        Ok(self.push(
            Tensor::from_vec(&[b, total, w], out)?,
            rg,
            Op::Concat(xs.to_vec()),
        ))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        self.same_shape("add", x, y)?;
        let out = zip_map(self.value(x), self.value(y), |a, b| a + b);
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(out, rg, Op::Add(x, y)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        self.same_shape("mul", x, y)?;
        let out = zip_map(self.value(x), self.value(y), |a, b| a * b);
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(out, rg, Op::Mul(x, y)))
    }

    fn same_shape(&self, op: &'static str, x: Var, y: Var) -> Result<()> {
        if self.value(x).shape() != self.value(y).shape() {
            return Err(Error::shape(
                op,
                "shape",
                format!("{:?} vs {:?}", self.value(x).shape(), self.value(y).shape()),
            ));
        }
        Ok(())
    }

    /// `x[b, c, t] * scale[b, c]`.
    pub fn scale_channels(&mut self, input: Var, scale: Var) -> Result<Var> {
        const OP: &str = "scale_channels";
        let (b, c, w) = dims3(self.value(input), OP)?;
        if self.value(scale).shape() != [b, c] {
            return Err(Error::shape(
                OP,
                "scale",
                format!("expected [{b}, {c}], got {:?}", self.value(scale).shape()),
            ));
        }
        let s = self.value(scale).data();
        let mut out = self.value(input).data().to_vec();
        for (row, &sv) in out.chunks_exact_mut(w).zip(s) {
            row.iter_mut().for_each(|v| *v = *v * sv);
        }
        let out = Tensor::from_vec(&[b, c, w], out)?;
        let rg = self.any_grad(&[input, scale]);
        Ok(self.push(out, rg, Op::ScaleChannels { input, scale }))
    }

    /// Elementwise product with a constant (non-differentiable) factor.
    pub fn mul_const(&mut self, input: Var, factor: Vec<T>) -> Result<Var> {
        if factor.len() != self.value(input).len() {
            return Err(Error::shape(
                "mul_const",
                "elements",
                format!("factor {} vs input {}", factor.len(), self.value(input).len()),
            ));
        }
        let x = self.value(input);
        let data = x.data().iter().zip(&factor).map(|(&a, &f)| a * f).collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, rg, Op::MulConst { input, factor }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let (b, c) = dims2(self.value(logits), OP)?;
        if labels.len() != b {
            return Err(Error::shape(OP, "batch", format!("{} labels for {b} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape(OP, "label", format!("label {bad} out of range for {c} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = Vec::with_capacity(b * c);
        let mut loss = T::zero();
        for (row, &label) in z.chunks_exact(c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let total: T = exps.iter().copied().sum();
            loss = loss + total.ln() - (row[label] - max);
            probs.extend(exps.iter().map(|&e| e / total));
        }
        let loss = loss / T::lit(b as f64);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse accumulation from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                "loss",
                format!("expected a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.requires_grad(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                // Separate buffers keep the three mutable borrows of `grads` disjoint.
                let mut gx = slot(&self.nodes, grads, *input).map(std::mem::take);
                let mut gw = slot(&self.nodes, grads, *weight).map(std::mem::take);
                let mut gb = bias.and_then(|b| slot(&self.nodes, grads, b).map(std::mem::take));
                conv::backward(
                    x,
                    w,
                    g,
                    *geom,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gx {
                    grads[input.0] = Some(v);
                }
                if let Some(v) = gw {
                    grads[weight.0] = Some(v);
                }
                if let (Some(b), Some(v)) = (bias, gb) {
                    grads[b.0] = Some(v);
                }
            }
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = node.value.shape();
                let (b, c, w) = (shape[0], shape[1], shape[2]);
                let gamma = self.value(*scale).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * w;
                        for t in off..off + w {
                            dgamma[ch] = dgamma[ch] + g[t] * xhat[t];
                            dbeta[ch] = dbeta[ch] + g[t];
                        }
                    }
                }
                if let Some(gx) = slot(&self.nodes, grads, *input) {
                    let nf = T::lit((b * w) as f64);
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * w;
                            let k = gamma[ch] * inv_std[ch];
                            for t in off..off + w {
                                let d = if *batch_stats {
                                    k * (g[t] - dbeta[ch] / nf - xhat[t] * dgamma[ch] / nf)
                                } else {
                                    k * g[t]
                                };
                                gx[t] = gx[t] + d;
                            }
                        }
                    }
                }
                if let Some(gs) = slot(&self.nodes, grads, *scale) {
                    add_into(gs, &dgamma);
                }
                if let Some(gb) = slot(&self.nodes, grads, *shift) {
                    add_into(gb, &dbeta);
                }
            }
            Op::Relu(x) => {
                let y = node.value.data();
                if let Some(gx) = slot(&self.nodes, grads, *x) {
                    for ((a, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        if yv > T::zero() {
                            *a = *a + gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(gx) = slot(&self.nodes, grads, *x) {
                    for ((a, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *a = *a + gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let xs = self.value(*input);
                let (b, din) = (xs.shape()[0], xs.shape()[1]);
                let dout = self.value(*weight).shape()[0];
                if let Some(gx) = slot(&self.nodes, grads, *input) {
                    gemm(
                        Mat::new(g, b, dout),
                        Mat::new(self.value(*weight).data(), dout, din),
                        T::one(),
                        gx,
                    );
                }
                if let Some(gw) = slot(&self.nodes, grads, *weight) {
                    gemm(Mat::new(g, b, dout).t(), Mat::new(xs.data(), b, din), T::one(), gw);
                }
                if let Some(gb) = bias.and_then(|b| slot(&self.nodes, grads, b)) {
                    for row in g.chunks_exact(dout) {
                        add_into(gb, row);
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let w = self.value(*x).shape()[2];
                let inv = T::lit(1.0 / w as f64);
                if let Some(gx) = slot(&self.nodes, grads, *x) {
                    for (row, &gv) in gx.chunks_exact_mut(w).zip(g) {
                        row.iter_mut().for_each(|a| *a = *a + gv * inv);
                    }
                }
            }
            Op::Concat(xs) => {
                let shape = node.value.shape();
                let (b, total, w) = (shape[0], shape[1], shape[2]);
                let mut offset = 0;
                for &x in xs {
                    let ci = self.value(x).shape()[1];
                    if let Some(gx) = slot(&self.nodes, grads, x) {
                        for bi in 0..b {
                            let src = &g[(bi * total + offset) * w..][..ci * w];
                            add_into(&mut gx[bi * ci * w..(bi + 1) * ci * w], src);
                        }
                    }
                    offset += ci;
                }
            }
            Op::Add(x, y) => {
                for v in [*x, *y] {
                    if let Some(gv) = slot(&self.nodes, grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Mul(x, y) => {
                let (xv, yv) = (self.value(*x).data(), self.value(*y).data());
                if let Some(gx) = slot(&self.nodes, grads, *x) {
                    for i in 0..gx.len() {
                        gx[i] = gx[i] + g[i] * yv[i];
                    }
                }
                if let Some(gy) = slot(&self.nodes, grads, *y) {
                    for i in 0..gy.len() {
                        gy[i] = gy[i] + g[i] * xv[i];
                    }
                }
            }
            Op::ScaleChannels { input, scale } => {
                let w = self.value(*input).shape()[2];
                let s = self.value(*scale).data();
                let x = self.value(*input).data();
                if let Some(gx) = slot(&self.nodes, grads, *input) {
                    for ((row, grow), &sv) in gx.chunks_exact_mut(w).zip(g.chunks_exact(w)).zip(s) {
                        for (a, &gv) in row.iter_mut().zip(grow) {
                            *a = *a + gv * sv;
                        }
                    }
                }
                if let Some(gs) = slot(&self.nodes, grads, *scale) {
                    for ((a, grow), xrow) in gs.iter_mut().zip(g.chunks_exact(w)).zip(x.chunks_exact(w)) {
                        let dot: T = grow.iter().zip(xrow).map(|(&p, &q)| p * q).sum();
                        *a = *a + dot;
                    }
                }
            }
            Op::MulConst { input, factor } => {
                if let Some(gx) = slot(&self.nodes, grads, *input) {
                    for i in 0..gx.len() {
                        gx[i] = gx[i] + g[i] * factor[i];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(&self.nodes, grads, *x) {
                    gx.iter_mut().for_each(|a| *a = *a + g[0]);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).shape()[1];
                let scale = g[0] / T::lit(labels.len() as f64);
                if let Some(gz) = slot(&self.nodes, grads, *logits) {
                    for (bi, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == label { T::one() } else { T::zero() };
                            let i = bi * c + j;
                            gz[i] = gz[i] + scale * (probs[i] - target);
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    var: Var,
) -> Option<&'a mut Vec<T>> {
    let n = &nodes[var.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[var.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]))
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn add_into<T: Real>(acc: &mut [T], src: &[T]) {
    for (a, &s) in acc.iter_mut().zip(src) {
        *a = *a + s;
    }
}

fn zip_map<T: Real>(x: &Tensor<T>, y: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}
