//! A stride-2, 2×2 convolution and the 2×2 transposed convolution sharing
//! its kernel are adjoint linear maps.

use ctseg::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conv_stride2_and_transposed_conv_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..20 {
        let n = rng.random_range(1..=3);
        let c = rng.random_range(1..=4);
        let o = rng.random_range(1..=4);
        let h = 2 * rng.random_range(1..=5);
        let w = 2 * rng.random_range(1..=5);
        let seed = 1000 + i as u64;
        let x = Tensor::<f64>::randn_seeded(&[n, c, h, w], seed, 1.0).unwrap();
        let y = Tensor::<f64>::randn_seeded(&[n, o, h / 2, w / 2], seed + 1, 1.0).unwrap();
        let k = Tensor::<f64>::randn_seeded(&[o, c, 2, 2], seed + 2, 1.0).unwrap();

        let mut t = Tape::new();
        let (xv, yv, kv) = (t.constant(x.clone()), t.constant(y.clone()), t.constant(k));
        let conv = t.conv2d(xv, kv, None, 2, 0).unwrap();
        let back = t.conv_transpose2x2(yv, kv, None).unwrap();
        assert_eq!(t.value(conv).shape(), y.shape());
        assert_eq!(t.value(back).shape(), x.shape());
        let lhs = dot(t.value(conv).data(), y.data());
        let rhs = dot(x.data(), t.value(back).data());
        assert!((lhs - rhs).abs() < 1e-10, "instance {i}: {lhs} vs {rhs}");
    }
}
