//! ctseg: 2-D U-Net segmentation of CT slices and scan-level triage.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`autograd`], [`gradcheck`]: dense tensors with
//!   define-by-run reverse-mode differentiation.
//! - [`nn`]: convolutions (dense, depthwise-separable, transposed),
//!   pooling, batch norm and the logit BCE loss.
//! - [`unet`]: encoder/decoder assembly, the weight container and partial
//!   weight transfer.
//! - [`train`]: Adam, reduce-on-plateau and the epoch loop.
//! - [`data`]: slice images, VIA annotations, mask rasterization,
//!   stratified splits and manifests.
//! - [`inference`]: slice classification by connected components and the
//!   consecutive-slice scan rule.
//! - [`metrics`]: confusion counts, proportions with confidence intervals,
//!   bootstrap F1 and dice.
//!
//! Inner loops over batch items, planes and bootstrap resamples go through
//! [`par`], which uses rayon when the `parallel` feature is on (default)
//! and plain iteration otherwise.

pub mod autograd;
pub mod data;
pub mod gradcheck;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod unet;

pub use autograd::{Tape, Var};
pub use tensor::{tensor_from, DType, Element, Tensor, TensorError};
pub use unet::{EncoderKind, ModelWeights, UNet, UNetConfig};
