//! Adam, reduce-on-plateau scheduling and the epoch loop.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::Tape;
use crate::nn::{self, Mode};
use crate::tensor::{Element, Tensor, TensorError};
use crate::unet::{ModelError, ModelWeights, UNet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {param}{context}")]
    NonFiniteGradient { param: String, context: String },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("gradient for {param} has shape {grad:?}, parameter has {weight:?}")]
    GradShape {
        param: String,
        grad: Vec<usize>,
        weight: Vec<usize>,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Adam moment buffers and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Steps taken so far.
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction:
///
/// ```text
/// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
/// w ← w − lr · (m / (1−β1^t)) / (sqrt(v / (1−β2^t)) + eps)
/// ```
///
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step<T: Element>(
    weights: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    state: &mut AdamState<T>,
) -> Result<(), TrainError> {
    assert_eq!(weights.len(), grads.len());
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
    for (i, (w, g)) in weights.iter().zip(grads).enumerate() {
        if w.shape() != g.shape() {
            return Err(TrainError::GradShape {
                param: name(i),
                grad: g.shape().to_vec(),
                weight: w.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                param: name(i),
                context: String::new(),
            });
        }
    }
    if state.m.len() != weights.len() {
        state.m = weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
        state.v = weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
    }
    state.t += 1;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let c1 = T::from_f64(1.0 - state.beta1.powi(state.t as i32));
    let c2 = T::from_f64(1.0 - state.beta2.powi(state.t as i32));
    let lr = T::from_f64(state.lr);
    let eps = T::from_f64(state.eps);
    for ((w, g), (m, v)) in weights
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((wi, &gi), mi), vi) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *wi = *wi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Reduce-on-plateau on a monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub best: f64,
    pub epochs_since_improve: usize,
    pub patience: usize,
    pub decay_factor: f64,
    pub min_lr: f64,
    /// Absolute improvement required to reset the counter.
    pub threshold: f64,
    pub lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        PlateauScheduler {
            best: f64::INFINITY,
            epochs_since_improve: 0,
            patience: 4,
            decay_factor: 0.1,
            min_lr: 1e-7,
            threshold: 1e-4,
            lr,
        }
    }

    /// Feeds one epoch's loss; returns the learning rate to use next.
    /// The rate decays once the counter exceeds `patience`, i.e. on the
    /// `patience + 1`-th consecutive epoch without improvement.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve += 1;
            if self.epochs_since_improve > self.patience {
                self.lr = (self.lr * self.decay_factor).max(self.min_lr);
                self.epochs_since_improve = 0;
            }
        }
        self.lr
    }
}

/// Settings for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub seed: u64,
    /// Report a checkpoint as due every this many epochs (0 = never).
    pub checkpoint_every: usize,
    /// Stop once validation loss has not improved for `early_stop_patience` epochs.
    pub early_stop: bool,
    pub early_stop_patience: usize,
    pub patience: usize,
    pub decay_factor: f64,
    pub min_lr: f64,
    pub improvement_threshold: f64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            max_epochs: 50,
            batch_size: 4,
            initial_lr: 1e-4,
            seed: 0,
            checkpoint_every: 0,
            early_stop: false,
            early_stop_patience: 10,
            patience: 4,
            decay_factor: 0.1,
            min_lr: 1e-7,
            improvement_threshold: 1e-4,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must be in (0, 1]");
        }
        if self.min_lr < 0.0 || self.improvement_threshold < 0.0 {
            return bad("min_lr and improvement_threshold must be non-negative");
        }
        if self.early_stop && self.early_stop_patience == 0 {
            return bad("early_stop_patience must be positive");
        }
        Ok(())
    }

    pub fn scheduler(&self) -> PlateauScheduler {
        PlateauScheduler {
            patience: self.patience,
            decay_factor: self.decay_factor,
            min_lr: self.min_lr,
            threshold: self.improvement_threshold,
            ..PlateauScheduler::new(self.initial_lr)
        }
    }
}

/// One training example: a 1×H×W image in [0, 1] and its 1×H×W binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub mask: Tensor<T>,
}

/// Stacks samples into N×1×H×W image and mask batches.
pub fn collate<T: Element>(samples: &[&Sample<T>]) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let lift = |t: &Tensor<T>| -> Result<Tensor<T>, TensorError> {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        t.reshape(&shape)
    };
    let images = samples.iter().map(|s| lift(&s.image)).collect::<Result<Vec<_>, _>>()?;
    let masks = samples.iter().map(|s| lift(&s.mask)).collect::<Result<Vec<_>, _>>()?;
    Ok((Tensor::concat_batch(&images)?, Tensor::concat_batch(&masks)?))
}

/// Shuffled index batches. A trailing batch of one is merged into the
/// previous batch, since batch statistics need at least two items.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean per-pixel BCE over the epoch.
    pub mean_loss: f64,
    pub steps: usize,
}

/// One shuffled pass over `data` with Adam updates.
pub fn train_epoch<T: Element>(
    model: &mut UNet<T>,
    data: &[Sample<T>],
    batch_size: usize,
    optimizer: &mut AdamState<T>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let names = model.trainable_names().to_vec();
    let mut loss_sum = 0.0;
    let mut pixels = 0usize;
    let batches = batch_indices(data.len(), batch_size, rng);
    for (step, batch) in batches.iter().enumerate() {
        let items: Vec<&Sample<T>> = batch.iter().map(|&i| &data[i]).collect();
        let (images, masks) = collate(&items)?;
        let mut tape = Tape::new();
        let pass = model.forward_on_tape(&mut tape, &images, Mode::Train)?;
        let loss = nn::bce_loss(&mut tape, pass.logits, &masks)?;
        let value = tape.value(loss).item().expect("scalar").as_f64();
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, step });
        }
        tape.backward(loss)?;
        let by_name: std::collections::HashMap<&str, crate::autograd::Var> =
            pass.params.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        let mut weights = Vec::with_capacity(names.len());
        let mut grads = Vec::with_capacity(names.len());
        for n in &names {
            let w = model.parameter(n).expect("trainable parameter").clone();
            let g = by_name
                .get(n.as_str())
                .and_then(|&v| tape.grad(v))
                .unwrap_or_else(|| Tensor::zeros(w.shape()));
            weights.push(w);
            grads.push(g);
        }
        adam_step(&mut weights, &grads, &names, optimizer).map_err(|e| match e {
            TrainError::NonFiniteGradient { param, .. } => TrainError::NonFiniteGradient {
                param,
                context: format!(" at epoch {epoch}, step {step}"),
            },
            other => other,
        })?;
        for (n, w) in names.iter().zip(weights) {
            model.set_parameter(n, w)?;
        }
        model.commit_batch_stats(&pass.batch_stats);
        let count = masks.len();
        loss_sum += value * count as f64;
        pixels += count;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / pixels as f64,
        steps: batches.len(),
    })
}

/// Mean per-pixel BCE in eval mode, batches taken in order.
pub fn evaluate_loss<T: Element>(model: &UNet<T>, data: &[Sample<T>], batch_size: usize) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut loss_sum = 0.0;
    let mut pixels = 0usize;
    let refs: Vec<&Sample<T>> = data.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (images, masks) = collate(chunk)?;
        let mut tape = Tape::new();
        let pass = model.forward_on_tape(&mut tape, &images, Mode::Eval)?;
        let loss = nn::bce_loss(&mut tape, pass.logits, &masks)?;
        loss_sum += tape.value(loss).item().expect("scalar").as_f64() * masks.len() as f64;
        pixels += masks.len();
    }
    Ok(loss_sum / pixels as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// What [`fit`] hands to its observer after every epoch.
pub struct EpochEvent<'a, T> {
    pub row: HistoryRow,
    pub model: &'a UNet<T>,
    pub is_best: bool,
    pub checkpoint_due: bool,
}

#[derive(Debug, Clone)]
pub struct FitReport<T> {
    pub history: Vec<HistoryRow>,
    pub best: ModelWeights<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Trains for up to `cfg.max_epochs`, stepping the plateau scheduler on
/// validation loss and keeping the weights of the best validation epoch.
/// The observer may stop the run by returning `ControlFlow::Break`.
pub fn fit<T: Element>(
    model: &mut UNet<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    cfg: &TrainRunConfig,
    mut observer: impl FnMut(&EpochEvent<'_, T>) -> ControlFlow<()>,
) -> Result<FitReport<T>, TrainError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = AdamState::new(cfg.initial_lr);
    let mut scheduler = cfg.scheduler();
    let mut history = Vec::new();
    let mut best = model.weights().clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let lr = optimizer.lr;
        let stats = train_epoch(model, train, cfg.batch_size, &mut optimizer, &mut rng, epoch)?;
        let val_loss = evaluate_loss(model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, step: 0 });
        }
        let row = HistoryRow {
            epoch,
            train_loss: stats.mean_loss,
            val_loss,
            lr,
        };
        history.push(row);
        let is_best = val_loss < best_val;
        if is_best {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.weights().clone();
        }
        optimizer.lr = scheduler.step(val_loss);
        let event = EpochEvent {
            row,
            model,
            is_best,
            checkpoint_due: cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0,
        };
        if observer(&event).is_break() {
            stopped_early = true;
            break;
        }
        if cfg.early_stop && epoch - best_epoch >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    Ok(FitReport {
        history,
        best,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
    })
}

/// Formats like C's `%.6g`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// History as CSV: `epoch,train_loss,val_loss,lr`, six significant digits.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            sig6(r.train_loss),
            sig6(r.val_loss),
            sig6(r.lr)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_f64(&[1], &[v]).unwrap()
    }

    #[test]
    fn zero_gradient_never_moves_weights() {
        let mut w = vec![Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
        let before = w.clone();
        let mut st = AdamState::new(0.1);
        for _ in 0..25 {
            adam_step(&mut w, &[Tensor::zeros(&[3])], &[], &mut st).unwrap();
        }
        assert_eq!(w, before);
        assert_eq!(st.t, 25);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 → Δ = −lr / (1 + eps).
        let mut w = vec![scalar(0.0)];
        let mut st = AdamState::new(0.01);
        adam_step(&mut w, &[scalar(1.0)], &[], &mut st).unwrap();
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((w[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        // With constant g, m̂ = g and v̂ = g² exactly for every t, so
        // |Δ| = lr·|g| / (|g| + eps) at every step.
        let mut w = vec![scalar(0.0)];
        let mut st = AdamState::new(0.001);
        let mut last = 0.0;
        for _ in 0..100 {
            let before = w[0].data()[0];
            adam_step(&mut w, &[scalar(-3.0)], &[], &mut st).unwrap();
            last = w[0].data()[0] - before;
        }
        assert!(last > 0.0);
        assert!((last - 0.001 * 3.0 / (3.0 + 1e-8)).abs() < 1e-12, "{last}");
    }

    #[test]
    fn nan_gradient_names_parameter_and_changes_nothing() {
        let mut w = vec![scalar(1.0), scalar(2.0)];
        let mut st = AdamState::<f64>::new(0.1);
        let grads = vec![scalar(1.0), Tensor::from_parts_unchecked(vec![1], vec![f64::NAN])];
        let err = adam_step(&mut w, &grads, &["a".into(), "b".into()], &mut st).unwrap_err();
        assert!(err.to_string().contains('b'), "{err}");
        assert_eq!(w, vec![scalar(1.0), scalar(2.0)]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn scheduler_keeps_lr_while_improving() {
        let mut s = PlateauScheduler::new(1e-4);
        for i in 0..10 {
            assert_eq!(s.step(1.0 - 0.01 * i as f64), 1e-4);
        }
    }

    #[test]
    fn scheduler_decays_on_fifth_flat_epoch() {
        let mut s = PlateauScheduler::new(1e-4);
        s.best = 1.0;
        let lrs: Vec<f64> = (0..6).map(|_| s.step(1.0)).collect();
        assert_eq!(&lrs[..4], &[1e-4; 4]);
        assert!((lrs[4] - 1e-5).abs() < 1e-20);
        assert_eq!(lrs[5], lrs[4]);
        assert_eq!(s.epochs_since_improve, 1);
    }

    #[test]
    fn scheduler_clamps_at_min_lr() {
        let mut s = PlateauScheduler::new(1e-7);
        s.best = 0.0;
        for _ in 0..30 {
            assert_eq!(s.step(1.0), 1e-7);
        }
    }

    #[test]
    fn singleton_tail_is_merged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = batch_indices(9, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = batch_indices(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let b = batch_indices(1, 4, &mut rng);
        assert_eq!(b, vec![vec![0]]);
        let mut all: Vec<usize> = batch_indices(13, 4, &mut rng).concat();
        all.sort();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.123456789012), "0.123457");
        assert_eq!(sig6(1e-4), "0.0001");
        assert_eq!(sig6(1e-7), "1e-07");
        assert_eq!(sig6(123456789.0), "1.23457e+08");
        assert_eq!(sig6(12.5), "12.5");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(999999.7), "1e+06");
    }
}
