//! Improved ECAPA-TDNN for infant cry emotion recognition.
//!
//! Everything runs on a small tape-based autodiff engine over `f64` tensors
//! ([`Graph`]), with parameters held in a [`ParamStore`] and evaluated through
//! a [`Session`]. On top of that sit the audio front-end ([`audio`]), the
//! attention blocks ([`blocks`]), the two model architectures ([`model`]) and
//! the training and evaluation loop ([`train`]).
//!
//! ```
//! use cryecapa::{Arch, Model, ModelConfig, Tensor};
//!
//! let cfg = ModelConfig::tiny();
//! let model = Model::build(Arch::Improved, &cfg, 7).unwrap();
//! let x = Tensor::zeros(&[2, cfg.input_coeffs, cfg.target_frames]);
//! let probs = model.probabilities(&x).unwrap();
//! assert_eq!(probs.shape(), &[2, cfg.num_classes]);
//! ```

pub mod audio;
pub mod blocks;
pub mod model;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Activation, Graph, NormMode, Padding, Var};
pub use params::{Mode, ParamId, ParamKind, ParamStore, Session};
pub use tensor::Tensor;

pub use audio::{AudioClip, FeatureMap, FrontendConfig, MfccConfig};
pub use model::{Arch, EmotionLabel, Model, ModelConfig};
pub use train::{ComplexityReport, ConfusionMatrix, TrainConfig};
