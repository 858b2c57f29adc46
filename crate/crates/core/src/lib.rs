//! Core building blocks for motion-guided blur decomposition: synthetic
//! scenes with exact flows, linear-space blur, quantized motion guidance,
//! an exact flow-constrained decomposition solver and image metrics.

pub mod annotation;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod flowest;
pub mod guidance;
pub mod image;
pub mod linsolve;
pub mod metrics;
pub mod scenegen;

pub use annotation::{rasterize_annotation, Annotation, Region};
pub use error::{Error, Result};
pub use flow::{aggregate_flow, FlowField};
pub use flowest::{guidance_from_adjacent, BlockMatcher, FlowEstimator, KnownFlow};
pub use guidance::{
    decode_guidance, encode_guidance, perturb_guidance, quantize, EncodedGuidance, GuidanceConfig, Morphology,
    MotionGuidance,
};
pub use image::{gamma_decode, gamma_encode, Image, DEFAULT_GAMMA};
pub use linsolve::{decompose_exact, ExactDecomposition, ExactOptions, ResidualReport, SolverRoute};
pub use metrics::{psnr, sequence_psnr, sequence_ssim, ssim};
pub use scenegen::{
    augment_inverse, build_triplet, generate_scene, sample_indices, synthesize_blur, BlurryImage, BoundaryPolicy,
    Scene, SceneConfig, SceneSampler, SharpSequence, SpriteShape, SpriteSpec, TrainingTriplet,
};
