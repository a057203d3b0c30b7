//! Synthetic grounded scenes, a toy dual encoder and its training loop.
//!
//! Scenes are flat-coloured body parts on a noisy gray background. Every
//! identity owns a fixed palette, so same-identity scenes differ only in
//! jitter and noise. The encoder averages each grid cell, projects it
//! linearly and normalizes; text is a hashed bag of tokens projected the
//! same way.

mod encoder;
mod eval;
mod scene;
mod train;

pub use encoder::{
    fnv1a64, pixel_feature_dim, tokenize, BatchCache, EncoderGrads, PreparedSample, ToyEncoder, DEFAULT_HASH_DIM,
};
pub use eval::{eval_grounding, grounding_score, EvalSet, GroundingReport, PhraseGrounding};
pub use scene::{
    gen_dataset, normalize_image, PartGroup, Rect, ScenePart, SyntheticScene,
    ToyDataset, Color, COLORS,
};
pub use train::{prepare_samples, train, EpochLoss, TrainConfig, TrainOutcome};

/// Default grid, image size and batch layout of the toy world.
pub const DEFAULT_GRID: (usize, usize) = (4, 4);
pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (32, 32);
pub const DEFAULT_PHRASE_SLOTS: usize = 6;
