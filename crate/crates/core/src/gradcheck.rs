//! Central-difference verification of analytic gradients.

use crate::autograd::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Largest relative disagreement between the tape's gradient of `f` at
/// `input` and `(f(x+eps) − f(x−eps)) / (2·eps)` per element, measured as
/// `|a − n| / max(|a|, |n|, 1e−8)`.
///
/// `f` must reduce to a scalar. It is re-run on a fresh tape for every
/// perturbation, so it must be a pure function of its input.
pub fn gradient_check<F>(f: F, input: &Tensor<f64>, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
{
    gradient_check_with(Tape::new, f, input, eps)
}

/// [`gradient_check`] with a caller-supplied tape constructor.
pub fn gradient_check_with<F, M>(make_tape: M, f: F, input: &Tensor<f64>, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
    M: Fn() -> Tape<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "gradient_check",
            reason: format!("eps must be positive, got {eps}"),
        });
    }
    let mut tape = make_tape();
    let x = tape.leaf(input.clone());
    let out = f(&mut tape, x)?;
    if !tape.value(out).is_scalar() {
        return Err(TensorError::NonScalarLoss(tape.value(out).shape().to_vec()));
    }
    let analytic = match tape.backward(out) {
        Ok(()) => tape.grad(x).map(Tensor::into_data),
        // A constant function has no path to the input.
        Err(TensorError::Detached) => None,
        Err(e) => return Err(e),
    }
    .unwrap_or_else(|| vec![0.0; input.len()]);

    let eval = |values: Vec<f64>| -> Result<f64, TensorError> {
        let mut tape = make_tape();
        let x = tape.constant(Tensor::from_vec(input.shape(), values)?);
        let out = f(&mut tape, x)?;
        Ok(tape.value(out).item().expect("scalar output"))
    };

    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let mut plus = input.data().to_vec();
        plus[i] += eps;
        let mut minus = input.data().to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// A differentiable function of one input, with the input to check it at.
pub struct GradCase {
    pub op: &'static str,
    /// Which argument of `op` is being perturbed.
    pub wrt: &'static str,
    pub input: Tensor<f64>,
    #[allow(clippy::type_complexity)]
    pub f: Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>>,
}

fn rand(shape: &[usize], seed: u64, salt: u64) -> Tensor<f64> {
    Tensor::randn_seeded(shape, seed.wrapping_mul(1_000_003).wrapping_add(salt), 1.0).expect("positive std")
}

/// Values bounded away from zero so ReLU's kink stays out of reach of the
/// finite-difference step.
fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| v.signum() * (v.abs() + 0.05))
}

/// Distinct values at least 0.05 apart, randomly arranged, so no pooling
/// window has a tie.
fn distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let r = rand(shape, seed, 77);
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r.data()[a].total_cmp(&r.data()[b]));
    let mut v = vec![0.0; r.len()];
    for (rank, &i) in order.iter().enumerate() {
        v[i] = rank as f64 * 0.05 - 1.0;
    }
    Tensor::from_vec(shape, v).expect("shape")
}

/// `Σ r ⊙ y` for a fixed random `r`, so every output element matters.
fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = t.value(y).shape().to_vec();
    let r = t.constant(rand(&shape, seed, 999));
    let p = t.mul(y, r)?;
    t.sum(p)
}

macro_rules! case {
    ($op:expr, $wrt:expr, $input:expr, $seed:ident, |$t:ident, $x:ident| $body:expr) => {
        GradCase {
            op: $op,
            wrt: $wrt,
            input: $input,
            f: Box::new(move |$t: &mut Tape<f64>, $x: Var| {
                let y = $body?;
                weighted_sum($t, y, $seed)
            }),
        }
    };
}

/// Every differentiable op, each argument separately, at inputs drawn from
/// `seed`.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    use crate::nn::{self, ConvParams};
    let s = seed;
    let x4 = [2, 2, 5, 5];
    let c = move |t: &mut Tape<f64>, shape: &[usize], salt: u64| t.constant(rand(shape, s, salt));
    vec![
        case!("add", "a", rand(&[3, 4], s, 1), s, |t, x| {
            let b = c(t, &[3, 4], 2);
            t.add(x, b)
        }),
        case!("mul", "a", rand(&[3, 4], s, 1), s, |t, x| {
            let b = c(t, &[3, 4], 2);
            t.mul(x, b)
        }),
        case!("mul", "a=b", rand(&[6], s, 3), s, |t, x| t.mul(x, x)),
        case!("relu", "x", away_from_zero(rand(&[4, 5], s, 4)), s, |t, x| t.relu(x)),
        case!("sigmoid", "x", rand(&[4, 5], s, 5).map(|v| 2.0 * v), s, |t, x| t
            .sigmoid(x)),
        case!("concat", "a", rand(&[2, 2, 3, 3], s, 6), s, |t, x| {
            let b = c(t, &[2, 3, 3, 3], 7);
            t.concat_channels(x, b)
        }),
        case!("concat", "b", rand(&[2, 3, 3, 3], s, 7), s, |t, x| {
            let a = c(t, &[2, 2, 3, 3], 6);
            t.concat_channels(a, x)
        }),
        case!("conv2d", "x", rand(&x4, s, 8), s, |t, x| {
            let w = c(t, &[3, 2, 3, 3], 9);
            let b = c(t, &[3], 10);
            t.conv2d(x, w, Some(b), 1, 1)
        }),
        case!("conv2d", "weight", rand(&[3, 2, 3, 3], s, 9), s, |t, w| {
            let x = c(t, &x4, 8);
            t.conv2d(x, w, None, 1, 1)
        }),
        case!("conv2d", "bias", rand(&[3], s, 10), s, |t, b| {
            let x = c(t, &x4, 8);
            let w = c(t, &[3, 2, 3, 3], 9);
            t.conv2d(x, w, Some(b), 1, 1)
        }),
        case!("conv2d stride 2", "x", rand(&x4, s, 11), s, |t, x| {
            let w = c(t, &[2, 2, 3, 3], 12);
            t.conv2d(x, w, None, 2, 0)
        }),
        case!("conv2d stride 2", "weight", rand(&[2, 2, 3, 3], s, 12), s, |t, w| {
            let x = c(t, &x4, 11);
            t.conv2d(x, w, None, 2, 0)
        }),
        case!("separable conv", "x", rand(&x4, s, 13), s, |t, x| {
            let dw = c(t, &[2, 1, 3, 3], 14);
            let db = c(t, &[2], 15);
            let pw = c(t, &[3, 2, 1, 1], 16);
            let pb = c(t, &[3], 17);
            let dp = ConvParams::same(t, dw, Some(db));
            let pp = ConvParams::same(t, pw, Some(pb));
            nn::separable_conv2d(t, x, &dp, &pp)
        }),
        case!("separable conv", "depthwise", rand(&[2, 1, 3, 3], s, 14), s, |t, dw| {
            let x = c(t, &x4, 13);
            let pw = c(t, &[3, 2, 1, 1], 16);
            let dp = ConvParams::same(t, dw, None);
            let pp = ConvParams::same(t, pw, None);
            nn::separable_conv2d(t, x, &dp, &pp)
        }),
        case!("separable conv", "depthwise bias", rand(&[2], s, 15), s, |t, db| {
            let x = c(t, &x4, 13);
            let dw = c(t, &[2, 1, 3, 3], 14);
            let pw = c(t, &[3, 2, 1, 1], 16);
            let dp = ConvParams::same(t, dw, Some(db));
            let pp = ConvParams::same(t, pw, None);
            nn::separable_conv2d(t, x, &dp, &pp)
        }),
        case!("separable conv", "pointwise", rand(&[3, 2, 1, 1], s, 16), s, |t, pw| {
            let x = c(t, &x4, 13);
            let dw = c(t, &[2, 1, 3, 3], 14);
            let dp = ConvParams::same(t, dw, None);
            let pp = ConvParams::same(t, pw, None);
            nn::separable_conv2d(t, x, &dp, &pp)
        }),
        case!("transposed conv", "x", rand(&[2, 3, 3, 3], s, 18), s, |t, x| {
            let w = c(t, &[3, 2, 2, 2], 19);
            let b = c(t, &[2], 20);
            t.conv_transpose2x2(x, w, Some(b))
        }),
        case!("transposed conv", "weight", rand(&[3, 2, 2, 2], s, 19), s, |t, w| {
            let x = c(t, &[2, 3, 3, 3], 18);
            t.conv_transpose2x2(x, w, None)
        }),
        case!("transposed conv", "bias", rand(&[2], s, 20), s, |t, b| {
            let x = c(t, &[2, 3, 3, 3], 18);
            let w = c(t, &[3, 2, 2, 2], 19);
            t.conv_transpose2x2(x, w, Some(b))
        }),
        case!("maxpool", "x", distinct(&[2, 2, 4, 6], s), s, |t, x| t.maxpool2(x)),
        case!("batchnorm train", "x", rand(&[3, 2, 3, 3], s, 21), s, |t, x| {
            let g = c(t, &[2], 22);
            let b = c(t, &[2], 23);
            t.batchnorm_train(x, g, b, 1e-5).map(|r| r.0)
        }),
        case!("batchnorm train", "gamma", rand(&[2], s, 22), s, |t, g| {
            let x = c(t, &[3, 2, 3, 3], 21);
            let b = c(t, &[2], 23);
            t.batchnorm_train(x, g, b, 1e-5).map(|r| r.0)
        }),
        case!("batchnorm train", "beta", rand(&[2], s, 23), s, |t, b| {
            let x = c(t, &[3, 2, 3, 3], 21);
            let g = c(t, &[2], 22);
            t.batchnorm_train(x, g, b, 1e-5).map(|r| r.0)
        }),
        GradCase {
            op: "bce",
            wrt: "logits",
            input: rand(&[2, 1, 3, 4], s, 24).map(|v| 3.0 * v),
            f: Box::new(move |t, z| {
                let target = rand(&[2, 1, 3, 4], s, 25).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                nn::bce_loss(t, z, &target)
            }),
        },
    ]
}

/// Worst relative error for one (op, argument) pair over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub wrt: &'static str,
    pub seeds: usize,
    pub worst: f64,
}

/// Runs [`op_cases`] for seeds `0..seeds` on tapes built by `make_tape`.
pub fn op_suite<M>(seeds: u64, eps: f64, make_tape: M) -> Result<Vec<OpReport>, TensorError>
where
    M: Fn() -> Tape<f64> + Copy,
{
    let mut reports: Vec<OpReport> = Vec::new();
    for seed in 0..seeds {
        for (i, case) in op_cases(seed).into_iter().enumerate() {
            let err = gradient_check_with(make_tape, &case.f, &case.input, eps)?;
            if seed == 0 {
                reports.push(OpReport {
                    op: case.op,
                    wrt: case.wrt,
                    seeds: 0,
                    worst: 0.0,
                });
            }
            let r = &mut reports[i];
            r.seeds += 1;
            r.worst = r.worst.max(err);
        }
    }
    Ok(reports)
}
