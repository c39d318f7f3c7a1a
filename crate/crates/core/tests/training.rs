use std::ops::ControlFlow;

use ctseg::synthetic::lesion_samples;
use ctseg::train::{evaluate_loss, fit, history_csv, TrainError, TrainRunConfig};
use ctseg::{Tensor, UNet, UNetConfig};

fn tiny() -> UNetConfig {
    UNetConfig {
        depth: 2,
        base_channels: 4,
        input_size: 16,
        ..UNetConfig::default()
    }
}

fn run(seed: u64, epochs: usize) -> (String, Vec<u8>) {
    let train = lesion_samples::<f32>(6, 16, 1);
    let val = lesion_samples::<f32>(2, 16, 2);
    let mut net = UNet::<f32>::build(&tiny(), seed).unwrap();
    let cfg = TrainRunConfig {
        max_epochs: epochs,
        initial_lr: 1e-3,
        seed,
        ..TrainRunConfig::default()
    };
    let report = fit(&mut net, &train, &val, &cfg, |_| ControlFlow::Continue(())).unwrap();
    (history_csv(&report.history), report.best.to_bytes())
}

#[test]
fn fit_is_reproducible() {
    assert_eq!(run(5, 3), run(5, 3));
    assert_ne!(run(5, 3).1, run(6, 3).1);
}

#[test]
fn training_reduces_loss() {
    let train = lesion_samples::<f32>(4, 16, 3);
    let mut net = UNet::<f32>::build(&tiny(), 0).unwrap();
    let before = evaluate_loss(&net, &train, 4).unwrap();
    let cfg = TrainRunConfig {
        max_epochs: 15,
        initial_lr: 1e-3,
        ..TrainRunConfig::default()
    };
    let report = fit(&mut net, &train, &train, &cfg, |_| ControlFlow::Continue(())).unwrap();
    let h = &report.history;
    assert_eq!(h.len(), 15);
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
    assert!(report.best_val_loss < before);
    let best = h.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_loss, best);
    assert_eq!(h[report.best_epoch - 1].val_loss, best);
}

#[test]
fn zero_learning_rate_only_moves_running_statistics() {
    let train = lesion_samples::<f32>(4, 16, 3);
    let mut net = UNet::<f32>::build(&tiny(), 0).unwrap();
    let before = net.weights().clone();
    let cfg = TrainRunConfig {
        max_epochs: 2,
        initial_lr: 0.0,
        ..TrainRunConfig::default()
    };
    fit(&mut net, &train, &train, &cfg, |_| ControlFlow::Continue(())).unwrap();
    for (name, t) in before.iter() {
        if name.ends_with("running_mean") || name.ends_with("running_var") {
            continue;
        }
        assert_eq!(net.parameter(name), Some(t), "{name}");
    }
}

#[test]
fn observer_can_stop_and_checkpoints_are_flagged() {
    let train = lesion_samples::<f32>(2, 16, 3);
    let mut net = UNet::<f32>::build(&tiny(), 0).unwrap();
    let cfg = TrainRunConfig {
        max_epochs: 10,
        checkpoint_every: 2,
        ..TrainRunConfig::default()
    };
    let mut due = Vec::new();
    let report = fit(&mut net, &train, &train, &cfg, |e| {
        due.push(e.checkpoint_due);
        if e.row.epoch == 4 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert!(report.stopped_early);
    assert_eq!(report.history.len(), 4);
    assert_eq!(due, vec![false, true, false, true]);
}

#[test]
fn single_sample_dataset_trains() {
    let train = lesion_samples::<f32>(1, 16, 3);
    let mut net = UNet::<f32>::build(&tiny(), 0).unwrap();
    let cfg = TrainRunConfig {
        max_epochs: 3,
        ..TrainRunConfig::default()
    };
    let report = fit(&mut net, &train, &train, &cfg, |_| ControlFlow::Continue(())).unwrap();
    assert!(report.history.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn exploding_weights_abort_with_context() {
    let train = lesion_samples::<f32>(2, 16, 3);
    let mut net = UNet::<f32>::build(&tiny(), 0).unwrap();
    let shape = net.parameter("head.weight").unwrap().shape().to_vec();
    net.set_parameter("head.weight", Tensor::full(&shape, 3e38)).unwrap();
    let err = fit(&mut net, &train, &train, &TrainRunConfig::default(), |_| {
        ControlFlow::Continue(())
    })
    .unwrap_err();
    assert!(
        matches!(
            err,
            TrainError::NonFiniteLoss { epoch: 1, .. } | TrainError::NonFiniteGradient { .. }
        ),
        "{err}"
    );
    assert!(err.to_string().contains("epoch 1"), "{err}");
}

#[test]
fn history_csv_layout() {
    let (csv, _) = run(1, 2);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,lr");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[1].ends_with(",0.001"));
}
