//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Each
//! operation appends a node holding its output and whatever the backward
//! rule needs; [`Tape::backward`] walks the nodes once in reverse. Leaves
//! created with [`Tape::leaf`] accumulate gradients across backward calls
//! until [`Tape::zero_grad`]; constants never receive one.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::nn::kernels::{self, ConvGeom, UpGeom};
use crate::tensor::{Element, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Concat {
        a: Var,
        b: Var,
        ca: usize,
        cb: usize,
    },
    SliceChannels {
        x: Var,
        start: usize,
        count: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2x2 {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: UpGeom,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BceWithLogits {
        logits: Var,
        target: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Records operations and replays them backwards.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    corrupt_conv_backward: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            corrupt_conv_backward: false,
        }
    }

    /// Deliberately breaks the conv2d input gradient (scaled by 1.01) so
    /// self-checks can prove they detect a faulty backward rule.
    #[doc(hidden)]
    pub fn inject_conv_backward_fault(&mut self) {
        self.corrupt_conv_backward = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter or checked input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = self.node(v);
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts_unchecked(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert_eq!(v.tape, self.id, "variable used with a foreign tape");
        &self.nodes[v.index]
    }

    fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.index].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        self.check(x)?;
        let out = self.value(x).map(f);
        let rg = self.needs(&[x]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var, TensorError> {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.value(x).sum();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let v = self.value(x);
        let m = v.sum() / T::from_f64(v.len() as f64);
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, kernels::sigmoid_elem, Op::Sigmoid(x))
    }

    /// Joins two N×C×H×W tensors along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let (n, ca, h, w) = self.value(a).dims4("concat_channels")?;
        let (nb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        for (axis, l, r) in [("batch", n, nb), ("height", h, hb), ("width", w, wb)] {
            if l != r {
                return Err(TensorError::AxisMismatch {
                    op: "concat_channels",
                    axis,
                    left: l,
                    right: r,
                });
            }
        }
        let hw = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            data.extend_from_slice(&da[i * ca * hw..(i + 1) * ca * hw]);
            data.extend_from_slice(&db[i * cb * hw..(i + 1) * cb * hw]);
        }
        let out = Tensor::from_parts_unchecked(vec![n, ca + cb, h, w], data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat { a, b, ca, cb }, rg))
    }

    /// Channels `start..start + count` of an N×C×H×W tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        let (n, c, h, w) = self.value(x).dims4("slice_channels")?;
        if count == 0 || start + count > c {
            return Err(TensorError::InvalidArgument {
                op: "slice_channels",
                reason: format!("channels {start}..{} outside 0..{c}", start + count),
            });
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * count * hw);
        for i in 0..n {
            data.extend_from_slice(&src[(i * c + start) * hw..(i * c + start + count) * hw]);
        }
        let out = Tensor::from_parts_unchecked(vec![n, count, h, w], data);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::SliceChannels { x, start, count }, rg))
    }

    /// Dense cross-correlation with an O×C×kh×kw weight and optional bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        let (n, c, h, wd) = self.value(x).dims4("conv2d")?;
        let (o, wc, kh, kw) = self.value(w).dims4("conv2d")?;
        if wc != c {
            return Err(TensorError::AxisMismatch {
                op: "conv2d",
                axis: "input channels",
                left: c,
                right: wc,
            });
        }
        let ho = out_extent("conv2d", h, kh, stride, pad)?;
        let wo = out_extent("conv2d", wd, kw, stride, pad)?;
        self.check_bias("conv2d", b, o)?;
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let data = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let out = Tensor::from_parts_unchecked(vec![n, o, ho, wo], data);
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Per-channel convolution with a C×1×kh×kw weight, stride 1.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        let (n, c, h, wd) = self.value(x).dims4("depthwise_conv2d")?;
        let (wc, one, kh, kw) = self.value(w).dims4("depthwise_conv2d")?;
        if wc != c || one != 1 {
            return Err(TensorError::InvalidArgument {
                op: "depthwise_conv2d",
                reason: format!("weight {:?} is not {c}×1×kh×kw", self.value(w).shape()),
            });
        }
        let ho = out_extent("depthwise_conv2d", h, kh, 1, pad)?;
        let wo = out_extent("depthwise_conv2d", wd, kw, 1, pad)?;
        self.check_bias("depthwise_conv2d", b, c)?;
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o: c,
            kh,
            kw,
            stride: 1,
            pad,
            ho,
            wo,
        };
        let data = kernels::depthwise_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let out = Tensor::from_parts_unchecked(vec![n, c, ho, wo], data);
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::Depthwise { x, w, b, geom }, rg))
    }

    /// Transposed 2×2 stride-2 convolution; weight is `cin × cout × 2 × 2`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        let (n, cin, h, wd) = self.value(x).dims4("transposed_conv2d")?;
        let (wc, cout, kh, kw) = self.value(w).dims4("transposed_conv2d")?;
        if (kh, kw) != (2, 2) {
            return Err(TensorError::InvalidArgument {
                op: "transposed_conv2d",
                reason: format!("only 2×2 kernels with stride 2 are supported, got {kh}×{kw}"),
            });
        }
        if wc != cin {
            return Err(TensorError::AxisMismatch {
                op: "transposed_conv2d",
                axis: "input channels",
                left: cin,
                right: wc,
            });
        }
        self.check_bias("transposed_conv2d", b, cout)?;
        let geom = UpGeom { n, cin, cout, h, w: wd };
        let data = kernels::conv_transpose2x2_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let out = Tensor::from_parts_unchecked(vec![n, cout, 2 * h, 2 * wd], data);
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::ConvTranspose2x2 { x, w, b, geom }, rg))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let (n, c, h, w) = self.value(x).dims4("maxpool2d")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidArgument {
                op: "maxpool2d",
                reason: format!("spatial extents {h}×{w} must be even"),
            });
        }
        let (data, argmax) = kernels::maxpool2_forward(self.value(x).data(), n, c, h, w);
        let out = Tensor::from_parts_unchecked(vec![n, c, h / 2, w / 2], data);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Normalizes with the batch's own per-channel statistics and returns them.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>), TensorError> {
        let dims = self.bn_check(x, gamma, beta)?;
        let saved = kernels::batchnorm_train_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            dims,
        );
        let out = Tensor::from_parts_unchecked(self.value(x).shape().to_vec(), saved.y);
        let rg = self.needs(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat: saved.xhat,
                inv_std: saved.inv_std,
            },
            rg,
        );
        Ok((
            v,
            BatchStats {
                mean: saved.mean,
                var: saved.var,
            },
        ))
    }

    /// Normalizes with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.bn_check(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::AxisMismatch {
                op: "batchnorm2d",
                axis: "running statistics",
                left: c,
                right: running_mean.len(),
            });
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let hw = h * w;
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        for i in 0..n {
            for ch in 0..c {
                for at in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                    xhat[at] = (xs[at] - running_mean[ch]) * inv_std[ch];
                    y[at] = g[ch] * xhat[at] + b[ch];
                }
            }
        }
        let out = Tensor::from_parts_unchecked(vec![n, c, h, w], y);
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy between logits and a {0,1} target.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
        self.check(logits)?;
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_loss",
                left: z.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        if let Some(bad) = target.data().iter().position(|&t| t != T::zero() && t != T::one()) {
            return Err(TensorError::InvalidArgument {
                op: "bce_loss",
                reason: format!("target value at index {bad} is not 0 or 1"),
            });
        }
        let total = z
            .data()
            .iter()
            .zip(target.data())
            .fold(T::zero(), |acc, (&zi, &ti)| acc + kernels::bce_with_logits_elem(zi, ti));
        let loss = total / T::from_f64(z.len() as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize, usize), TensorError> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let dims = self.value(x).dims4("batchnorm2d")?;
        for p in [gamma, beta] {
            if self.value(p).len() != dims.1 {
                return Err(TensorError::AxisMismatch {
                    op: "batchnorm2d",
                    axis: "channels",
                    left: dims.1,
                    right: self.value(p).len(),
                });
            }
        }
        Ok(dims)
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<(), TensorError> {
        if let Some(b) = b {
            self.check(b)?;
            if self.value(b).len() != channels {
                return Err(TensorError::AxisMismatch {
                    op,
                    axis: "bias length",
                    left: channels,
                    right: self.value(b).len(),
                });
            }
        }
        Ok(())
    }

    /// Propagates d(loss)/d(node) to every reachable leaf, adding into any
    /// gradient the leaf already holds.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check(loss)?;
        let root = &self.nodes[loss.index];
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::Detached);
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.index).map(|_| None).collect();
        adj[loss.index] = Some(vec![T::one()]);
        for i in (0..=loss.index).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(acc) => kernels::add_into(acc, &g),
                        None => node.grad = Some(g),
                    }
                }
                Op::Constant => {}
                op => {
                    for (input, grad) in self.input_grads(op, self.nodes[i].value.data(), &g) {
                        if !self.nodes[input.index].requires_grad {
                            continue;
                        }
                        match &mut adj[input.index] {
                            Some(acc) => kernels::add_into(acc, &grad),
                            slot @ None => *slot = Some(grad),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, op: &Op<T>, out: &[T], g: &[T]) -> Vec<(Var, Vec<T>)> {
        let val = |v: Var| self.nodes[v.index].value.data();
        match op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect();
                let gb = g.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, k) => vec![(*x, g.iter().map(|&v| v * *k).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
            Op::Mean(x) => {
                let n = val(*x).len();
                vec![(*x, vec![g[0] / T::from_f64(n as f64); n])]
            }
            Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => {
                // σ'(x) = σ(x)(1 − σ(x)) from the recorded output.
                let gx = g.iter().zip(out).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                vec![(*x, gx)]
            }
            Op::Concat { a, b, ca, cb } => {
                let (n, _, h, w) = self.nodes[a.index].value.dims4("concat").expect("rank 4");
                let hw = h * w;
                let mut ga = Vec::with_capacity(n * ca * hw);
                let mut gb = Vec::with_capacity(n * cb * hw);
                for i in 0..n {
                    let base = i * (ca + cb) * hw;
                    ga.extend_from_slice(&g[base..base + ca * hw]);
                    gb.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::SliceChannels { x, start, count } => {
                let (n, c, h, w) = self.nodes[x.index].value.dims4("slice").expect("rank 4");
                let hw = h * w;
                let mut gx = vec![T::zero(); n * c * hw];
                for i in 0..n {
                    gx[(i * c + start) * hw..(i * c + start + count) * hw]
                        .copy_from_slice(&g[i * count * hw..(i + 1) * count * hw]);
                }
                vec![(*x, gx)]
            }
            Op::Conv2d { x, w, b, geom } => {
                let mut grads = kernels::conv2d_backward(val(*x), val(*w), g, geom);
                if self.corrupt_conv_backward {
                    grads.dx.iter_mut().for_each(|v| *v = *v * T::from_f64(1.01));
                }
                with_bias(*x, *w, *b, grads)
            }
            Op::Depthwise { x, w, b, geom } => {
                with_bias(*x, *w, *b, kernels::depthwise_backward(val(*x), val(*w), g, geom))
            }
            Op::ConvTranspose2x2 { x, w, b, geom } => with_bias(
                *x,
                *w,
                *b,
                kernels::conv_transpose2x2_backward(val(*x), val(*w), g, geom),
            ),
            Op::MaxPool2 { x, argmax } => {
                let mut gx = vec![T::zero(); val(*x).len()];
                for (&at, &gv) in argmax.iter().zip(g) {
                    gx[at] = gx[at] + gv;
                }
                vec![(*x, gx)]
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let dims = self.nodes[x.index].value.dims4("batchnorm2d").expect("rank 4");
                let (dx, dgamma, dbeta) = kernels::batchnorm_train_backward(g, xhat, inv_std, val(*gamma), dims);
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c, h, w) = self.nodes[x.index].value.dims4("batchnorm2d").expect("rank 4");
                let hw = h * w;
                let gam = val(*gamma);
                let mut dx = vec![T::zero(); g.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        for at in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                            dx[at] = g[at] * gam[ch] * inv_std[ch];
                            dgamma[ch] = dgamma[ch] + g[at] * xhat[at];
                            dbeta[ch] = dbeta[ch] + g[at];
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::BceWithLogits { logits, target } => {
                let z = val(*logits);
                let scale = g[0] / T::from_f64(z.len() as f64);
                let gz = z
                    .iter()
                    .zip(target)
                    .map(|(&zi, &ti)| (kernels::sigmoid_elem(zi) - ti) * scale)
                    .collect();
                vec![(*logits, gz)]
            }
        }
    }
}

fn with_bias<T>(x: Var, w: Var, b: Option<Var>, grads: kernels::ConvGrads<T>) -> Vec<(Var, Vec<T>)> {
    let mut out = vec![(x, grads.dx), (w, grads.dw)];
    if let Some(b) = b {
        out.push((b, grads.db));
    }
    out
}

fn out_extent(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            reason: "stride must be positive".into(),
        });
    }
    let span = size + 2 * pad;
    if span < k || !(span - k).is_multiple_of(stride) {
        return Err(TensorError::InvalidArgument {
            op,
            reason: format!("output size ({size} + 2·{pad} − {k})/{stride} + 1 is not a positive integer"),
        });
    }
    Ok((span - k) / stride + 1)
}
