//! Autoencoders whose hidden codes are guided by Gaussian-process and
//! parametric label models.
//!
//! The crate trains a tied-weight denoising autoencoder with noisy rectified
//! hidden units against a blended cost: reconstruction error, the negative
//! log marginal likelihood of GP latent-variable models on projections of
//! hidden-unit partitions, and optional logistic-regression heads. Learned
//! codes are evaluated with linear probes.

pub mod autoencoder;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod kernels;
pub mod linalg;
pub mod objective;
pub mod optimizer;

pub use error::{NpgaError, Result};
pub use kernels::{KernelKind, KernelSpec};
pub use objective::{GpGuidanceConfig, HeadConfig, HeadLoss, ModelConfig, ParamLayout, ParamVector};
pub use optimizer::{train, CgOptions, TrainOutcome, TrainedModel};
