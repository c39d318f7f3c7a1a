use ctseg::gradcheck::{gradient_check, op_suite};
use ctseg::nn::{self, BatchNormState, ConvParams};
use ctseg::{Tape, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    let reports = op_suite(10, 1e-5, Tape::new).unwrap();
    assert!(reports.len() >= 20);
    for r in &reports {
        assert_eq!(r.seeds, 10);
        assert!(r.worst < 1e-4, "{} wrt {}: {:e}", r.op, r.wrt, r.worst);
    }
}

#[test]
fn corrupted_conv_backward_is_caught() {
    let faulty = || {
        let mut t = Tape::new();
        t.inject_conv_backward_fault();
        t
    };
    let reports = op_suite(1, 1e-5, faulty).unwrap();
    let conv_x = reports.iter().find(|r| r.op == "conv2d" && r.wrt == "x").unwrap();
    assert!(conv_x.worst > 1e-3, "{:e}", conv_x.worst);
}

/// A small conv → BN → ReLU → pool → up-conv → concat → 1×1 head stack,
/// checked end to end with respect to its input.
#[test]
fn composed_block_gradient() {
    for seed in 0..3 {
        let x = Tensor::<f64>::randn_seeded(&[2, 1, 4, 4], seed, 1.0).unwrap();
        let err = gradient_check(
            |t, x| {
                let w1 = t.constant(Tensor::randn_seeded(&[2, 1, 3, 3], 100 + seed, 0.7)?);
                let g = t.constant(Tensor::ones(&[2]));
                let b = t.constant(Tensor::zeros(&[2]));
                let up = t.constant(Tensor::randn_seeded(&[2, 2, 2, 2], 200 + seed, 0.7)?);
                let head = t.constant(Tensor::randn_seeded(&[1, 3, 1, 1], 300 + seed, 0.7)?);
                let p1 = ConvParams::same(t, w1, None);
                let h = nn::conv2d(t, x, &p1)?;
                let mut bn = BatchNormState::new(2);
                let h = nn::batchnorm2d(t, h, g, b, &mut bn)?;
                let h = t.sigmoid(h)?;
                let d = nn::maxpool2d(t, h)?;
                let pu = ConvParams {
                    weight: up,
                    bias: None,
                    stride: 2,
                    padding: 0,
                };
                let u = nn::transposed_conv2d(t, d, &pu)?;
                let cat = t.concat_channels(u, x)?;
                let ph = ConvParams::same(t, head, None);
                let logits = nn::conv2d(t, cat, &ph)?;
                let target = Tensor::from_f64(
                    &[2, 1, 4, 4],
                    &[
                        1., 0., 1., 1., 0., 0., 1., 0., 1., 1., 0., 0., 0., 1., 0., 1., 0., 1., 1., 0., 0., 0., 1., 1.,
                        1., 0., 0., 1., 0., 1., 1., 0.,
                    ],
                )?;
                nn::bce_loss(t, logits, &target)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}
