//! Perceptually uniform sound morphing.
//!
//! Given a source and target clip and a morph generator `M(alpha)`, this crate
//! finds morph factors whose outputs step evenly in a log-mel distance
//! proportion (SPDP), assembles static, cyclostationary and dynamic morphs,
//! and scores trajectories with an objective metric suite. The diffusion-side
//! math (DDIM stepping, slerp, guidance) lives in [`latent`] and runs against
//! any [`latent::NoisePredictor`].

pub mod audio;
pub mod backend;
pub mod error;
pub mod eval;
pub mod features;
pub mod latent;
pub mod modes;
pub mod spdp;

pub use audio::{load_wav, prepare_pair, resample, write_wav, AudioClip, LengthPolicy, PreparedPair, CANONICAL_RATE};
pub use backend::{
    AdditiveSineBackend, BackendDescriptor, BackendKind, CrossfadeBackend, LinearMelBackend, MorphBackend, Probe,
    RemoteBackend, RemoteOptions, WarpedBackend,
};
pub use error::{Error, Result};
pub use eval::{
    evaluate, frechet_distance, EmbeddingExtractor, EvalSetup, Lmd, MelStats, MetricReport, PerceptualDistance,
    Pooling,
};
pub use features::{log_mel, LogMelSpectrogram, StftConfig, TimbrePoint};
pub use latent::{EmbeddingSet, LatentTensor, NoisePredictor, NoiseSchedule, Tensor};
pub use modes::{MorphMode, MorphTrajectory, TrajectoryManifest};
pub use spdp::{binary_search_alphas, spdp, AlphaSchedule, Feature, SearchConfig, SpdpContext, SpdpPoint};
