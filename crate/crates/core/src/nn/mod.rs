//! Convolutional building blocks and the segmentation loss.
//!
//! Each function records onto a [`Tape`] and is differentiable with respect
//! to every `Var` it takes.

pub(crate) mod kernels;

use crate::autograd::{BatchStats, Tape, Var};
use crate::tensor::{Element, Tensor, TensorError};

/// Weight/bias handles plus geometry for one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    /// Stride 1 with `k / 2` padding, so odd kernels preserve H×W.
    pub fn same(tape: &Tape<impl Element>, weight: Var, bias: Option<Var>) -> Self {
        let k = tape.value(weight).shape().get(2).copied().unwrap_or(1);
        ConvParams {
            weight,
            bias,
            stride: 1,
            padding: k / 2,
        }
    }
}

pub fn conv2d<T: Element>(tape: &mut Tape<T>, x: Var, p: &ConvParams) -> Result<Var, TensorError> {
    tape.conv2d(x, p.weight, p.bias, p.stride, p.padding)
}

/// Depthwise 3×3 followed by pointwise 1×1 (the Xception block).
pub fn separable_conv2d<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    depthwise: &ConvParams,
    pointwise: &ConvParams,
) -> Result<Var, TensorError> {
    if depthwise.stride != 1 {
        return Err(TensorError::InvalidArgument {
            op: "separable_conv2d",
            reason: "depthwise stage must use stride 1".into(),
        });
    }
    let pw_shape = tape.value(pointwise.weight).shape();
    if pw_shape.len() != 4 || pw_shape[2] != 1 || pw_shape[3] != 1 {
        return Err(TensorError::InvalidArgument {
            op: "separable_conv2d",
            reason: format!("pointwise weight {pw_shape:?} is not O×C×1×1"),
        });
    }
    let mid = tape.depthwise_conv2d(x, depthwise.weight, depthwise.bias, depthwise.padding)?;
    tape.conv2d(
        mid,
        pointwise.weight,
        pointwise.bias,
        pointwise.stride,
        pointwise.padding,
    )
}

/// Number of weights in a separable block versus a dense 3×3 conv, ignoring biases.
pub fn separable_param_count(in_ch: usize, out_ch: usize, k: usize) -> (usize, usize) {
    (in_ch * k * k + in_ch * out_ch, in_ch * out_ch * k * k)
}

/// Learned ×2 upsampling; `p.weight` is `in × out × 2 × 2`.
pub fn transposed_conv2d<T: Element>(tape: &mut Tape<T>, x: Var, p: &ConvParams) -> Result<Var, TensorError> {
    if p.stride != 2 || p.padding != 0 {
        return Err(TensorError::InvalidArgument {
            op: "transposed_conv2d",
            reason: format!(
                "only kernel 2, stride 2, padding 0 is supported (got stride {}, padding {})",
                p.stride, p.padding
            ),
        });
    }
    tape.conv_transpose2x2(x, p.weight, p.bias)
}

pub fn maxpool2d<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
    tape.maxpool2(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics and hyperparameters of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
    pub mode: Mode,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64(0.1),
            eps: T::from_f64(1e-5),
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// `running ← (1 − momentum)·running + momentum·batch`, using the
    /// biased batch variance.
    pub fn update(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}

/// Batch normalization. Train mode normalizes with batch statistics and
/// folds them into the running averages; eval mode uses the running ones.
pub fn batchnorm2d<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState<T>,
) -> Result<Var, TensorError> {
    let (out, stats) = batchnorm_forward(tape, x, gamma, beta, state)?;
    if let Some(stats) = stats {
        state.update(&stats);
    }
    Ok(out)
}

/// Like [`batchnorm2d`] but hands the batch statistics back instead of
/// updating `state`.
pub fn batchnorm_forward<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &BatchNormState<T>,
) -> Result<(Var, Option<BatchStats<T>>), TensorError> {
    let c = tape.value(x).dims4("batchnorm2d")?.1;
    if c != state.channels() {
        return Err(TensorError::AxisMismatch {
            op: "batchnorm2d",
            axis: "channels",
            left: c,
            right: state.channels(),
        });
    }
    match state.mode {
        Mode::Train => {
            let (v, stats) = tape.batchnorm_train(x, gamma, beta, state.eps)?;
            Ok((v, Some(stats)))
        }
        Mode::Eval => Ok((
            tape.batchnorm_eval(x, gamma, beta, &state.running_mean, &state.running_var, state.eps)?,
            None,
        )),
    }
}

/// Mean pixel binary cross-entropy on logits (stable form).
pub fn bce_loss<T: Element>(tape: &mut Tape<T>, logits: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
    let shape = tape.value(logits).shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(TensorError::InvalidArgument {
            op: "bce_loss",
            reason: format!("logits must be N×1×H×W, got {shape:?}"),
        });
    }
    tape.bce_with_logits(logits, target)
}

/// He-normal initialization: std = sqrt(2 / fan_in).
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
