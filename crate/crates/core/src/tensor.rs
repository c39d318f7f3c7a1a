//! Dense row-major tensors and the element types they can hold.
//!
//! Image-shaped tensors use the N×C×H×W layout throughout the crate.

use std::fmt;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Errors raised by tensor construction and by the operations recorded on a tape.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} expects length {expected}, got length {actual} ({actual} \u{2260} {expected})")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero extent")]
    EmptyExtent(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {axis} differs ({left} vs {right})")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("loss is not connected to any differentiable leaf")]
    Detached,
}

/// Element precision tag stored alongside tensors in weight files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => f.write_str("f32"),
            DType::F64 => f.write_str("f64"),
        }
    }
}

/// Scalar types the engine computes in: `f32` for training and inference,
/// `f64` for gradient checking.
pub trait Element: Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major matrices, where
    /// `op(a)` is m×k and `op(b)` is k×n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );
}

fn gemm_strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    // Stored matrix is (rows×cols) when not transposed, (cols×rows) when transposed.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(trans_a, m, k);
                let (rsb, csb) = gemm_strides(trans_b, k, n);
                // SAFETY: slice lengths were checked above and the strides
                // address exactly the m×k, k×n and m×n row-major extents.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, DType::F32, matrixmultiply::sgemm);
impl_element!(f64, DType::F64, matrixmultiply::dgemm);

/// An N-dimensional array with a contiguous row-major buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &std::any::type_name::<T>())
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor, checking extents, length and finiteness.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::EmptyExtent(shape.to_vec()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self, TensorError> {
        Self::from_vec(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Normal samples with mean 0 and the given standard deviation.
    ///
    /// The generator is ChaCha8 seeded from `seed`, sampled through the
    /// ziggurat standard normal of `rand_distr`, so the stream is identical
    /// on every platform.
    pub fn randn_seeded(shape: &[usize], seed: u64, std: f64) -> Result<Self, TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::randn_from(shape, &mut rng, std)
    }

    pub fn randn_from(shape: &[usize], rng: &mut ChaCha8Rng, std: f64) -> Result<Self, TensorError> {
        if std.is_nan() || std <= 0.0 {
            return Err(TensorError::NonPositiveStd(std));
        }
        if shape.contains(&0) {
            return Err(TensorError::EmptyExtent(shape.to_vec()));
        }
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// `(n, c, h, w)` for rank-4 tensors.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts element precision.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Items `start..start + count` along the leading (batch) axis.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self, TensorError> {
        let n = *self.shape.first().unwrap_or(&0);
        if count == 0 || start + count > n {
            return Err(TensorError::InvalidArgument {
                op: "batch_slice",
                reason: format!("range {start}..{} outside batch of {n}", start + count),
            });
        }
        let item: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Tensor {
            shape,
            data: self.data[start * item..(start + count) * item].to_vec(),
        })
    }

    /// Stacks equally-shaped tensors along the leading axis.
    pub fn concat_batch(parts: &[Tensor<T>]) -> Result<Self, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat_batch",
            reason: "no tensors given".into(),
        })?;
        let mut shape = first.shape.clone();
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_batch",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        shape[0] = n;
        Ok(Tensor { shape, data })
    }
}

/// Builds a tensor from a shape and values, see [`Tensor::from_vec`].
pub fn tensor_from<T: Element>(shape: &[usize], values: Vec<T>) -> Result<Tensor<T>, TensorError> {
    Tensor::from_vec(shape, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_sum_to_zero() {
        let t = tensor_from(&[2, 2], vec![0.0f32; 4]).unwrap();
        assert_eq!(t.sum(), 0.0);
    }

    #[test]
    fn readback_preserves_order() {
        let t = tensor_from(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.dims4("t").unwrap(), (1, 1, 2, 2));
    }

    #[test]
    fn length_mismatch_names_both_counts() {
        let err = tensor_from(&[3], vec![1.0f32, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2 \u{2260} 3") && msg.contains("length 2"), "{msg}");
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            tensor_from(&[2], vec![1.0f32, f32::NAN]).unwrap_err(),
            TensorError::NonFinite(1)
        );
    }

    #[test]
    fn randn_is_deterministic() {
        let a = Tensor::<f32>::randn_seeded(&[3, 4], 7, 1.0).unwrap();
        let b = Tensor::<f32>::randn_seeded(&[3, 4], 7, 1.0).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn randn_sample_means_are_plausible() {
        // 1000 N(0,1) draws: standard error of the mean is 1/sqrt(1000).
        let se = 1.0 / (1000f64).sqrt();
        let a = Tensor::<f64>::randn_seeded(&[1000], 1, 1.0).unwrap();
        let b = Tensor::<f64>::randn_seeded(&[1000], 2, 1.0).unwrap();
        let ma = a.sum() / 1000.0;
        let mb = b.sum() / 1000.0;
        assert_ne!(ma, mb);
        assert!(ma.abs() < 5.0 * se, "{ma}");
        assert!(mb.abs() < 5.0 * se, "{mb}");
    }

    #[test]
    fn randn_rejects_zero_std() {
        assert!(matches!(
            Tensor::<f32>::randn_seeded(&[2], 0, 0.0),
            Err(TensorError::NonPositiveStd(_))
        ));
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        f64::gemm(false, false, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        f64::gemm(true, false, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        f64::gemm(false, true, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
