//! Encoder–decoder segmentation network with equal-resolution skip
//! connections.
//!
//! Each encoder stage is two 3×3 conv → batch-norm → ReLU blocks followed
//! by a 2×2 max-pool; the bottleneck is two more blocks; each decoder
//! stage upsamples with a learned 2×2 stride-2 transposed convolution,
//! concatenates the encoder map of the same resolution and applies two
//! blocks. A 1×1 conv produces one logit channel. All convolutions use
//! "same" padding, so skip tensors always line up without cropping.
//!
//! The separable encoder swaps every encoder/bottleneck conv except the
//! very first for a depthwise 3×3 + pointwise 1×1 pair.

mod weights;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autograd::{BatchStats, Tape, Var};
use crate::nn::{self, BatchNormState, ConvParams, Mode};
use crate::tensor::{Element, Tensor, TensorError};

pub use weights::{ModelWeights, WeightsError, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("input must be N×{channels}×{size}×{size}, got {shape:?}")]
    InputShape {
        channels: usize,
        size: usize,
        shape: Vec<usize>,
    },
    #[error("input values must lie in [0, 1]; found {0}")]
    InputRange(f64),
    #[error("checkpoint fingerprint {found:016x} does not match configuration {expected:016x}")]
    Fingerprint { found: u64, expected: u64 },
    #[error("strict transfer failed: {0}")]
    StrictTransfer(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Plain,
    /// Depthwise-separable convolutions, Xception style.
    Separable,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Plain => "plain",
            EncoderKind::Separable => "separable",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(EncoderKind::Plain),
            "separable" => Ok(EncoderKind::Separable),
            other => Err(ModelError::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

/// Architecture descriptor; everything needed to rebuild the parameter set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UNetConfig {
    /// Number of down/up stages, 2–5.
    pub depth: usize,
    /// Channels at full resolution; doubles per encoder stage.
    pub base_channels: usize,
    pub encoder: EncoderKind,
    /// Square input extent; divisible by 2^depth.
    pub input_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub decoder_batchnorm: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 16,
            encoder: EncoderKind::Plain,
            input_size: 64,
            in_channels: 1,
            out_channels: 1,
            decoder_batchnorm: true,
        }
    }
}

impl UNetConfig {
    /// The full-resolution configuration: 512² input, separable encoder.
    pub fn full_scale() -> Self {
        UNetConfig {
            depth: 4,
            base_channels: 32,
            encoder: EncoderKind::Separable,
            input_size: 512,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(2..=5).contains(&self.depth) {
            return Err(ModelError::Config(format!("depth {} outside 2..=5", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(ModelError::Config("base_channels must be positive".into()));
        }
        let stride = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return Err(ModelError::Config(format!(
                "input_size {} is not a positive multiple of 2^{} = {stride}",
                self.input_size, self.depth
            )));
        }
        if self.in_channels != 1 || self.out_channels != 1 {
            return Err(ModelError::Config(
                "only single-channel input and output are supported".into(),
            ));
        }
        Ok(())
    }

    /// Stable text form, also embedded in weight files.
    pub fn canonical(&self) -> String {
        format!(
            "depth={};base_channels={};encoder={};input_size={};in_channels={};out_channels={};decoder_batchnorm={}",
            self.depth,
            self.base_channels,
            self.encoder,
            self.input_size,
            self.in_channels,
            self.out_channels,
            self.decoder_batchnorm
        )
    }

    /// First 8 bytes (LE) of the SHA-256 of [`Self::canonical`].
    pub fn fingerprint(&self) -> u64 {
        let d = Sha256::digest(self.canonical().as_bytes());
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    pub fn parse_canonical(text: &str) -> Result<Self, ModelError> {
        let mut cfg = UNetConfig::default();
        for part in text.split(';').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("bad config entry {part:?}")))?;
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| ModelError::Config(format!("{k}: {v:?} is not an integer")))
            };
            match k {
                "depth" => cfg.depth = num(v)?,
                "base_channels" => cfg.base_channels = num(v)?,
                "encoder" => cfg.encoder = v.parse()?,
                "input_size" => cfg.input_size = num(v)?,
                "in_channels" => cfg.in_channels = num(v)?,
                "out_channels" => cfg.out_channels = num(v)?,
                "decoder_batchnorm" => {
                    cfg.decoder_batchnorm = v
                        .parse()
                        .map_err(|_| ModelError::Config(format!("decoder_batchnorm: {v:?}")))?
                }
                other => return Err(ModelError::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn stage_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial extents of the encoder feature maps (one per stage) and of
    /// the bottleneck.
    pub fn feature_sizes(&self) -> (Vec<usize>, usize) {
        let enc = (0..self.depth).map(|i| self.input_size >> i).collect();
        (enc, self.input_size >> self.depth)
    }
}

/// What kind of convolution a block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvKind {
    Dense,
    Separable,
}

#[derive(Debug, Clone)]
struct Block {
    prefix: String,
    kind: ConvKind,
    in_ch: usize,
    out_ch: usize,
    batchnorm: bool,
}

#[derive(Debug, Clone)]
struct Stage {
    conv1: Block,
    conv2: Block,
}

/// Output of one recorded forward pass.
#[derive(Debug)]
pub struct ForwardPass<T> {
    pub logits: Var,
    /// Trainable parameter name → leaf on the tape (empty in eval mode).
    pub params: Vec<(String, Var)>,
    /// Batch statistics per batch-norm prefix (train mode only).
    pub batch_stats: Vec<(String, BatchStats<T>)>,
}

/// Ledger returned by [`UNet::transfer_load`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferReport {
    pub loaded: Vec<String>,
    pub skipped: Vec<SkippedTensor>,
    /// Donor tensors with no counterpart in the model.
    pub unused: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedTensor {
    pub name: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    MissingInDonor,
    ShapeMismatch { model: Vec<usize>, donor: Vec<usize> },
}

impl fmt::Display for SkippedTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reason {
            SkipReason::MissingInDonor => write!(f, "{}: not in donor", self.name),
            SkipReason::ShapeMismatch { model, donor } => {
                write!(f, "{}: shape {model:?} vs donor {donor:?}", self.name)
            }
        }
    }
}

/// A built network: configuration, parameters and batch-norm buffers.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: UNetConfig,
    encoder: Vec<Stage>,
    bottleneck: Stage,
    /// Decoder stages, indexed by the resolution level they restore.
    decoder: Vec<Stage>,
    weights: ModelWeights<T>,
    trainable: Vec<String>,
    bn_momentum: T,
    bn_eps: T,
}

const RUNNING_MEAN: &str = "running_mean";
const RUNNING_VAR: &str = "running_var";

impl<T: Element> UNet<T> {
    /// Builds the network with seeded He-normal conv weights, zero biases,
    /// unit batch-norm scales and unit running variances.
    pub fn build(config: &UNetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let sep = match config.encoder {
            EncoderKind::Plain => ConvKind::Dense,
            EncoderKind::Separable => ConvKind::Separable,
        };
        let block = |prefix: String, kind, in_ch, out_ch, batchnorm| Block {
            prefix,
            kind,
            in_ch,
            out_ch,
            batchnorm,
        };
        let mut encoder = Vec::new();
        for i in 0..config.depth {
            let in_ch = if i == 0 {
                config.in_channels
            } else {
                config.stage_channels(i - 1)
            };
            let out = config.stage_channels(i);
            let first_kind = if i == 0 { ConvKind::Dense } else { sep };
            encoder.push(Stage {
                conv1: block(format!("enc.{i}.conv1"), first_kind, in_ch, out, true),
                conv2: block(format!("enc.{i}.conv2"), sep, out, out, true),
            });
        }
        let mid_in = config.stage_channels(config.depth - 1);
        let mid_out = config.stage_channels(config.depth);
        let bottleneck = Stage {
            conv1: block("mid.conv1".into(), sep, mid_in, mid_out, true),
            conv2: block("mid.conv2".into(), sep, mid_out, mid_out, true),
        };
        let decoder: Vec<Stage> = (0..config.depth)
            .map(|i| {
                let out = config.stage_channels(i);
                Stage {
                    conv1: block(
                        format!("dec.{i}.conv1"),
                        ConvKind::Dense,
                        2 * out,
                        out,
                        config.decoder_batchnorm,
                    ),
                    conv2: block(
                        format!("dec.{i}.conv2"),
                        ConvKind::Dense,
                        out,
                        out,
                        config.decoder_batchnorm,
                    ),
                }
            })
            .collect();

        let mut net = UNet {
            config: config.clone(),
            encoder,
            bottleneck,
            decoder,
            weights: ModelWeights::new(config.fingerprint(), config.canonical()),
            trainable: Vec::new(),
            bn_momentum: T::from_f64(0.1),
            bn_eps: T::from_f64(1e-5),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.init_parameters(&mut rng)?;
        Ok(net)
    }

    fn declare(&mut self, name: String, t: Tensor<T>, trainable: bool) -> Result<(), ModelError> {
        if trainable {
            self.trainable.push(name.clone());
        }
        self.weights.insert(name, t)?;
        Ok(())
    }

    fn declare_conv(
        &mut self,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        shape: [usize; 4],
        fan_in: usize,
    ) -> Result<(), ModelError> {
        let w = Tensor::randn_from(&shape, rng, nn::he_std(fan_in))?;
        let bias_len = shape[0];
        self.declare(format!("{prefix}.weight"), w, true)?;
        self.declare(format!("{prefix}.bias"), Tensor::zeros(&[bias_len]), true)
    }

    fn declare_block(&mut self, rng: &mut ChaCha8Rng, b: &Block) -> Result<(), ModelError> {
        match b.kind {
            ConvKind::Dense => self.declare_conv(rng, &b.prefix, [b.out_ch, b.in_ch, 3, 3], b.in_ch * 9)?,
            ConvKind::Separable => {
                self.declare_conv(rng, &format!("{}.depthwise", b.prefix), [b.in_ch, 1, 3, 3], 9)?;
                self.declare_conv(
                    rng,
                    &format!("{}.pointwise", b.prefix),
                    [b.out_ch, b.in_ch, 1, 1],
                    b.in_ch,
                )?;
            }
        }
        if b.batchnorm {
            let bn = bn_prefix(&b.prefix);
            self.declare(format!("{bn}.gamma"), Tensor::ones(&[b.out_ch]), true)?;
            self.declare(format!("{bn}.beta"), Tensor::zeros(&[b.out_ch]), true)?;
            self.declare(format!("{bn}.{RUNNING_MEAN}"), Tensor::zeros(&[b.out_ch]), false)?;
            self.declare(format!("{bn}.{RUNNING_VAR}"), Tensor::ones(&[b.out_ch]), false)?;
        }
        Ok(())
    }

    fn init_parameters(&mut self, rng: &mut ChaCha8Rng) -> Result<(), ModelError> {
        let blocks: Vec<Block> = self
            .encoder
            .iter()
            .chain(std::iter::once(&self.bottleneck))
            .flat_map(|s| [s.conv1.clone(), s.conv2.clone()])
            .collect();
        for b in &blocks {
            self.declare_block(rng, b)?;
        }
        for i in (0..self.config.depth).rev() {
            let out = self.config.stage_channels(i);
            let up_in = self.config.stage_channels(i + 1);
            // Transposed conv weight is in × out × 2 × 2.
            let w = Tensor::randn_from(&[up_in, out, 2, 2], rng, nn::he_std(up_in))?;
            self.declare(format!("dec.{i}.up.weight"), w, true)?;
            self.declare(format!("dec.{i}.up.bias"), Tensor::zeros(&[out]), true)?;
            let stage = self.decoder[i].clone();
            self.declare_block(rng, &stage.conv1)?;
            self.declare_block(rng, &stage.conv2)?;
        }
        let base = self.config.base_channels;
        self.declare_conv(rng, "head", [self.config.out_channels, base, 1, 1], base)?;
        Ok(())
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    /// Names of the parameters updated by training, in declaration order.
    pub fn trainable_names(&self) -> &[String] {
        &self.trainable
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<T>> {
        self.weights.get(name)
    }

    /// Overwrites one tensor, keeping its shape.
    pub fn set_parameter(&mut self, name: &str, value: Tensor<T>) -> Result<(), ModelError> {
        let slot = self
            .weights
            .get_mut(name)
            .ok_or_else(|| ModelError::Config(format!("no parameter named {name}")))?;
        if slot.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_parameter",
                left: slot.shape().to_vec(),
                right: value.shape().to_vec(),
            }
            .into());
        }
        *slot = value;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable
            .iter()
            .map(|n| self.weights.get(n).map_or(0, Tensor::len))
            .sum()
    }

    fn bind(&self, tape: &mut Tape<T>, name: &str, mode: Mode, params: &mut Vec<(String, Var)>) -> Var {
        let t = self
            .weights
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} declared at build time"))
            .clone();
        match mode {
            Mode::Train => {
                let v = tape.leaf(t);
                params.push((name.to_string(), v));
                v
            }
            Mode::Eval => tape.constant(t),
        }
    }

    fn run_block(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        b: &Block,
        mode: Mode,
        pass: &mut ForwardPass<T>,
    ) -> Result<Var, ModelError> {
        let p = &b.prefix;
        let conv = |tape: &mut Tape<T>, name: &str, params: &mut Vec<(String, Var)>| {
            let w = self.bind(tape, &format!("{name}.weight"), mode, params);
            let bias = self.bind(tape, &format!("{name}.bias"), mode, params);
            ConvParams::same(tape, w, Some(bias))
        };
        let y = match b.kind {
            ConvKind::Dense => {
                let cp = conv(tape, p, &mut pass.params);
                nn::conv2d(tape, x, &cp)?
            }
            ConvKind::Separable => {
                let dw = conv(tape, &format!("{p}.depthwise"), &mut pass.params);
                let pw = conv(tape, &format!("{p}.pointwise"), &mut pass.params);
                nn::separable_conv2d(tape, x, &dw, &pw)?
            }
        };
        let y = if b.batchnorm {
            let bn = bn_prefix(p);
            let gamma = self.bind(tape, &format!("{bn}.gamma"), mode, &mut pass.params);
            let beta = self.bind(tape, &format!("{bn}.beta"), mode, &mut pass.params);
            let state = self.bn_state(&bn, mode);
            let (out, stats) = nn::batchnorm_forward(tape, y, gamma, beta, &state)?;
            if let Some(stats) = stats {
                pass.batch_stats.push((bn, stats));
            }
            out
        } else {
            y
        };
        Ok(tape.relu(y)?)
    }

    fn bn_state(&self, bn: &str, mode: Mode) -> BatchNormState<T> {
        let get = |k: &str| {
            self.weights
                .get(&format!("{bn}.{k}"))
                .expect("batch-norm buffers declared")
                .data()
                .to_vec()
        };
        BatchNormState {
            running_mean: get(RUNNING_MEAN),
            running_var: get(RUNNING_VAR),
            momentum: self.bn_momentum,
            eps: self.bn_eps,
            mode,
        }
    }

    fn run_stage(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        s: &Stage,
        mode: Mode,
        pass: &mut ForwardPass<T>,
    ) -> Result<Var, ModelError> {
        let y = self.run_block(tape, x, &s.conv1, mode, pass)?;
        self.run_block(tape, y, &s.conv2, mode, pass)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        let size = self.config.input_size;
        let ok = matches!(x.shape(), [_, c, h, w] if *c == self.config.in_channels && *h == size && *w == size);
        if !ok {
            return Err(ModelError::InputShape {
                channels: self.config.in_channels,
                size,
                shape: x.shape().to_vec(),
            });
        }
        if let Some(v) = x.data().iter().find(|v| **v < T::zero() || **v > T::one()) {
            return Err(ModelError::InputRange(v.as_f64()));
        }
        Ok(())
    }

    /// Records the network on `tape` and returns the logit map. In train
    /// mode every trainable parameter becomes a leaf and batch-norm layers
    /// report their batch statistics (commit them with
    /// [`Self::commit_batch_stats`]); in eval mode parameters are constants.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        input: &Tensor<T>,
        mode: Mode,
    ) -> Result<ForwardPass<T>, ModelError> {
        self.check_input(input)?;
        let x = tape.constant(input.clone());
        let mut pass = ForwardPass {
            logits: x,
            params: Vec::new(),
            batch_stats: Vec::new(),
        };
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for stage in &self.encoder {
            h = self.run_stage(tape, h, stage, mode, &mut pass)?;
            skips.push(h);
            h = nn::maxpool2d(tape, h)?;
        }
        h = self.run_stage(tape, h, &self.bottleneck, mode, &mut pass)?;
        for i in (0..self.config.depth).rev() {
            let w = self.bind(tape, &format!("dec.{i}.up.weight"), mode, &mut pass.params);
            let b = self.bind(tape, &format!("dec.{i}.up.bias"), mode, &mut pass.params);
            let up = nn::transposed_conv2d(
                tape,
                h,
                &ConvParams {
                    weight: w,
                    bias: Some(b),
                    stride: 2,
                    padding: 0,
                },
            )?;
            // Skip and upsampled maps must agree exactly; concat errors otherwise.
            let joined = tape.concat_channels(skips[i], up)?;
            h = self.run_stage(tape, joined, &self.decoder[i], mode, &mut pass)?;
        }
        let w = self.bind(tape, "head.weight", mode, &mut pass.params);
        let b = self.bind(tape, "head.bias", mode, &mut pass.params);
        pass.logits = nn::conv2d(
            tape,
            h,
            &ConvParams {
                weight: w,
                bias: Some(b),
                stride: 1,
                padding: 0,
            },
        )?;
        Ok(pass)
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn commit_batch_stats(&mut self, stats: &[(String, BatchStats<T>)]) {
        for (bn, s) in stats {
            let mut state = self.bn_state(bn, Mode::Train);
            state.update(s);
            self.weights.replace(
                &format!("{bn}.{RUNNING_MEAN}"),
                Tensor::from_parts_unchecked(vec![state.running_mean.len()], state.running_mean),
            );
            self.weights.replace(
                &format!("{bn}.{RUNNING_VAR}"),
                Tensor::from_parts_unchecked(vec![state.running_var.len()], state.running_var),
            );
        }
    }

    /// Logits in eval mode.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, batch, Mode::Eval)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Per-pixel probabilities (sigmoid of the logits), eval mode.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, batch, Mode::Eval)?;
        let probs = tape.sigmoid(pass.logits)?;
        Ok(tape.value(probs).clone())
    }

    /// Copies matching tensors from `donor`. Non-strict mode skips any
    /// name that is absent or differently shaped and reports it; strict
    /// mode refuses to change anything unless every tensor matches.
    pub fn transfer_load(&mut self, donor: &ModelWeights<T>, strict: bool) -> Result<TransferReport, ModelError> {
        let mut report = TransferReport::default();
        for (name, t) in self.weights.iter() {
            match donor.get(name) {
                None => report.skipped.push(SkippedTensor {
                    name: name.to_string(),
                    reason: SkipReason::MissingInDonor,
                }),
                Some(d) if d.shape() != t.shape() => report.skipped.push(SkippedTensor {
                    name: name.to_string(),
                    reason: SkipReason::ShapeMismatch {
                        model: t.shape().to_vec(),
                        donor: d.shape().to_vec(),
                    },
                }),
                Some(_) => report.loaded.push(name.to_string()),
            }
        }
        report.unused = donor
            .names()
            .filter(|n| self.weights.get(n).is_none())
            .map(str::to_string)
            .collect();
        if strict && (!report.skipped.is_empty() || !report.unused.is_empty()) {
            let mut parts: Vec<String> = report.skipped.iter().map(ToString::to_string).collect();
            parts.extend(report.unused.iter().map(|n| format!("{n}: not in model")));
            return Err(ModelError::StrictTransfer(parts.join("; ")));
        }
        for name in &report.loaded {
            let t = donor.get(name).expect("checked above").clone();
            self.weights.replace(name, t);
        }
        Ok(report)
    }

    /// Rebuilds a model from a weight file image, using its embedded config.
    pub fn from_weights(weights: &ModelWeights<T>) -> Result<Self, ModelError> {
        let config = UNetConfig::parse_canonical(&weights.config)?;
        if config.fingerprint() != weights.fingerprint {
            return Err(ModelError::Fingerprint {
                found: weights.fingerprint,
                expected: config.fingerprint(),
            });
        }
        let mut net = Self::build(&config, 0)?;
        net.transfer_load(weights, true)?;
        Ok(net)
    }

    pub fn save_weights(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.weights.save(path)?)
    }

    pub fn load_weights(path: &Path) -> Result<ModelWeights<T>, ModelError> {
        Ok(ModelWeights::load(path)?)
    }

    /// Loads a weight file and rebuilds the model it describes.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_weights(&Self::load_weights(path)?)
    }
}

fn bn_prefix(conv_prefix: &str) -> String {
    // enc.0.conv1 -> enc.0.bn1
    match conv_prefix.rsplit_once(".conv") {
        Some((head, idx)) => format!("{head}.bn{idx}"),
        None => format!("{conv_prefix}.bn"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_channels: 4,
            input_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::default().validate().is_ok());
        assert!(UNetConfig::full_scale().validate().is_ok());
        let bad = |f: fn(&mut UNetConfig)| {
            let mut c = UNetConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.depth = 1));
        assert!(bad(|c| c.depth = 6));
        assert!(bad(|c| c.input_size = 60));
        assert!(bad(|c| c.base_channels = 0));
        assert!(bad(|c| c.in_channels = 3));
    }

    #[test]
    fn canonical_round_trip() {
        for cfg in [UNetConfig::default(), UNetConfig::full_scale(), small()] {
            assert_eq!(UNetConfig::parse_canonical(&cfg.canonical()).unwrap(), cfg);
        }
        assert_ne!(UNetConfig::default().fingerprint(), small().fingerprint());
    }

    #[test]
    fn feature_sizes_depth_two() {
        let cfg = UNetConfig {
            depth: 2,
            base_channels: 8,
            input_size: 64,
            ..Default::default()
        };
        assert_eq!(cfg.feature_sizes(), (vec![64, 32], 16));
    }

    #[test]
    fn parameter_census_depth_two_plain() {
        let net = UNet::<f32>::build(&small(), 0).unwrap();
        let mut expected = Vec::new();
        let conv = |p: &str, out: &mut Vec<String>| {
            out.push(format!("{p}.weight"));
            out.push(format!("{p}.bias"));
        };
        let bn = |p: &str, out: &mut Vec<String>| {
            for k in ["gamma", "beta", "running_mean", "running_var"] {
                out.push(format!("{p}.{k}"));
            }
        };
        for s in ["enc.0", "enc.1", "mid"] {
            for j in 1..=2 {
                conv(&format!("{s}.conv{j}"), &mut expected);
                bn(&format!("{s}.bn{j}"), &mut expected);
            }
        }
        for i in [1, 0] {
            conv(&format!("dec.{i}.up"), &mut expected);
            for j in 1..=2 {
                conv(&format!("dec.{i}.conv{j}"), &mut expected);
                bn(&format!("dec.{i}.bn{j}"), &mut expected);
            }
        }
        conv("head", &mut expected);
        let names: Vec<&str> = net.weights().names().collect();
        assert_eq!(names, expected);
        assert!(!net.trainable_names().iter().any(|n| n.contains("running")));
    }

    #[test]
    fn separable_encoder_names() {
        let cfg = UNetConfig {
            encoder: EncoderKind::Separable,
            ..small()
        };
        let net = UNet::<f32>::build(&cfg, 0).unwrap();
        assert!(net.parameter("enc.0.conv1.weight").is_some());
        assert_eq!(
            net.parameter("enc.1.conv1.depthwise.weight").unwrap().shape(),
            &[4, 1, 3, 3]
        );
        assert_eq!(
            net.parameter("enc.1.conv1.pointwise.weight").unwrap().shape(),
            &[8, 4, 1, 1]
        );
        assert!(net.parameter("dec.0.conv1.weight").is_some());
    }

    #[test]
    fn builds_are_deterministic() {
        let a = UNet::<f32>::build(&small(), 5).unwrap();
        let b = UNet::<f32>::build(&small(), 5).unwrap();
        let c = UNet::<f32>::build(&small(), 6).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn forward_shape_and_range() {
        let net = UNet::<f32>::build(&small(), 1).unwrap();
        let x = Tensor::<f32>::from_f64(&[2, 1, 16, 16], &vec![0.3; 512]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 16, 16]);
        assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = UNet::<f32>::build(&small(), 1).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 1, 8, 8])),
            Err(ModelError::InputShape { .. })
        ));
        assert!(matches!(
            net.forward(&Tensor::full(&[1, 1, 16, 16], 2.0)),
            Err(ModelError::InputRange(_))
        ));
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut net = UNet::<f32>::build(&small(), 1).unwrap();
        net.set_parameter("head.weight", Tensor::zeros(&[1, 4, 1, 1])).unwrap();
        let y = net.forward(&Tensor::zeros(&[1, 1, 16, 16])).unwrap();
        assert!(y.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn bn_prefix_mapping() {
        assert_eq!(bn_prefix("enc.0.conv1"), "enc.0.bn1");
        assert_eq!(bn_prefix("mid.conv2"), "mid.bn2");
    }
}
