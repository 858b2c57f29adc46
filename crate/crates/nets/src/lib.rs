//! Neural components: layers and stages on top of candle, the two-stage
//! decomposer, the cVAE-GAN guidance predictor and evaluation protocols.

pub mod checkpoint;
pub mod data;
pub mod decomposer;
pub mod error;
pub mod evalkit;
pub mod netcore;
pub mod params;
pub mod predictor;

pub use decomposer::{matched_one_stage, train_decomposer, Decomposer, DecomposerConfig, EpochMetrics, TrainLog};
pub use error::{NetError, Result};
pub use netcore::{grad_check, gumbel_softmax, kl_divergence, GradCheckReport, Mode, Stage, StageConfig};
pub use params::ParamStore;
pub use predictor::{train_predictor, Predictor, PredictorConfig, PredictorLog};
