//! Phrase-patch interaction losses.
//!
//! For every sample the phrase embeddings `H` (P×D) are compared with the
//! patch embeddings `Z` (K×D). Each patch distributes a unit of assignment
//! mass over phrase slots (softmax over phrases), each phrase slot pools
//! the patches it attracted into a region vector, and the region vectors
//! are contrasted across the batch slot by slot using identity labels.
//!
//! Padded phrase slots are zero vectors. They take part in the per-patch
//! softmax (their similarity is zero) but are masked out of the coverage
//! term and of the contrastive rows and columns, so the coverage term is
//! what moves mass off padding and onto real phrases.

mod assign;
mod loss;
mod tal;

pub use assign::{
    phrase_patch_similarity, region_aggregate, soft_assignment, SampleForward,
};
pub use loss::{
    combined_loss, coverage_loss, part_coverage_loss, part_loss, per_phrase_loss, warmup,
    BaseLoss, BaseLossValue, CoverageLoss, PhraseLoss, SymmetricInfoNce,
};
pub use tal::{tal_row, TalRow};

use crate::diffmath::{norm, RealMatrix};
use crate::error::{Error, Result};

/// Per-sample embeddings for one training batch.
///
/// `patches[i]` is K×D, `phrases[i]` is P×D with padded rows all zero,
/// `phrase_mask[i][p]` marks the valid phrase slots.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub grid: (usize, usize),
    pub global_image: RealMatrix,
    pub global_text: RealMatrix,
    pub patches: Vec<RealMatrix>,
    pub phrases: Vec<RealMatrix>,
    pub phrase_mask: Vec<Vec<bool>>,
    pub identities: Vec<i32>,
}

/// Tolerance for the unit-norm invariants of stored embeddings.
pub const EMBEDDING_NORM_TOL: f64 = 1e-5;

impl EmbeddingBatch {
    /// Assembles a batch and checks that all shapes agree.
    pub fn new(
        grid: (usize, usize),
        global_image: RealMatrix,
        global_text: RealMatrix,
        patches: Vec<RealMatrix>,
        phrases: Vec<RealMatrix>,
        phrase_mask: Vec<Vec<bool>>,
        identities: Vec<i32>,
    ) -> Result<Self> {
        let batch = Self {
            grid,
            global_image,
            global_text,
            patches,
            phrases,
            phrase_mask,
            identities,
        };
        batch.check_shapes()?;
        Ok(batch)
    }

    pub fn batch_size(&self) -> usize {
        self.identities.len()
    }

    pub fn dim(&self) -> usize {
        self.global_image.cols()
    }

    pub fn num_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn num_phrases(&self) -> usize {
        self.phrase_mask.first().map_or(0, Vec::len)
    }

    /// Number of valid phrases of sample `i`.
    pub fn valid_phrases(&self, i: usize) -> usize {
        self.phrase_mask[i].iter().filter(|&&m| m).count()
    }

    /// Frequency of every phrase slot across the batch.
    pub fn slot_frequencies(&self) -> Vec<usize> {
        (0..self.num_phrases())
            .map(|p| self.phrase_mask.iter().filter(|m| m[p]).count())
            .collect()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let b = self.batch_size();
        let d = self.dim();
        let k = self.num_patches();
        let p = self.num_phrases();
        if b == 0 {
            return Err(Error::shape("empty batch"));
        }
        if self.global_image.shape() != (b, d) || self.global_text.shape() != (b, d) {
            return Err(Error::shape(format!(
                "global embeddings must be {b}x{d}, got {:?} and {:?}",
                self.global_image.shape(),
                self.global_text.shape()
            )));
        }
        if self.patches.len() != b || self.phrases.len() != b || self.phrase_mask.len() != b {
            return Err(Error::shape("per-sample lists must have one entry per sample"));
        }
        for i in 0..b {
            if self.patches[i].shape() != (k, d) {
                return Err(Error::shape(format!(
                    "patches of sample {i} are {:?}, expected ({k}, {d})",
                    self.patches[i].shape()
                )));
            }
            if self.phrases[i].shape() != (p, d) {
                return Err(Error::shape(format!(
                    "phrases of sample {i} are {:?}, expected ({p}, {d})",
                    self.phrases[i].shape()
                )));
            }
            if self.phrase_mask[i].len() != p {
                return Err(Error::shape(format!("mask of sample {i} has wrong length")));
            }
        }
        Ok(())
    }

    /// Checks the stored-embedding invariants: unit-norm globals, patches
    /// and valid phrases; exactly-zero padded phrases.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        let unit = |v: &[f64]| (norm(v) - 1.0).abs() <= EMBEDDING_NORM_TOL;
        for i in 0..self.batch_size() {
            if !unit(self.global_image.row(i)) || !unit(self.global_text.row(i)) {
                return Err(Error::data(format!("global embedding {i} is not unit norm")));
            }
            for k in 0..self.num_patches() {
                if !unit(self.patches[i].row(k)) {
                    return Err(Error::data(format!("patch {k} of sample {i} is not unit norm")));
                }
            }
            for p in 0..self.num_phrases() {
                let row = self.phrases[i].row(p);
                if self.phrase_mask[i][p] {
                    if !unit(row) {
                        return Err(Error::data(format!(
                            "phrase {p} of sample {i} is valid but not unit norm"
                        )));
                    }
                } else if row.iter().any(|&v| v != 0.0) {
                    return Err(Error::data(format!(
                        "phrase {p} of sample {i} is padding but not zero"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hyper-parameters of the part objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartLossConfig {
    /// Sharpness of the patch-to-phrase assignment.
    pub tau_part: f64,
    pub tau_tal: f64,
    pub margin_tal: f64,
    pub lambda_part: f64,
    pub lambda_cov: f64,
    /// Epochs over which the part term ramps up linearly.
    pub warmup_epochs: u32,
}

impl Default for PartLossConfig {
    fn default() -> Self {
        Self {
            tau_part: 0.07,
            tau_tal: 0.02,
            margin_tal: 0.1,
            lambda_part: 0.5,
            lambda_cov: 0.1,
            warmup_epochs: 5,
        }
    }
}

impl PartLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_part", self.tau_part), ("tau_tal", self.tau_tal)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("margin_tal", self.margin_tal),
            ("lambda_part", self.lambda_part),
            ("lambda_cov", self.lambda_cov),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.warmup_epochs == 0 {
            return Err(Error::param("warmup_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Gradients of a loss with respect to every embedding in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub global_image: RealMatrix,
    pub global_text: RealMatrix,
    pub patches: Vec<RealMatrix>,
    pub phrases: Vec<RealMatrix>,
}

impl BatchGradients {
    pub fn zeros_like(batch: &EmbeddingBatch) -> Self {
        let zeros = |m: &RealMatrix| RealMatrix::zeros(m.rows(), m.cols());
        Self {
            global_image: zeros(&batch.global_image),
            global_text: zeros(&batch.global_text),
            patches: batch.patches.iter().map(zeros).collect(),
            phrases: batch.phrases.iter().map(zeros).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &BatchGradients, scale: f64) -> Result<()> {
        self.global_image.add_scaled(&other.global_image, scale)?;
        self.global_text.add_scaled(&other.global_text, scale)?;
        for (a, b) in self.patches.iter_mut().zip(&other.patches) {
            a.add_scaled(b, scale)?;
        }
        for (a, b) in self.phrases.iter_mut().zip(&other.phrases) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }
}

/// Scalar loss, its named components and gradients.
///
/// `value = base + λ_part · warmup · (part + λ_cov · coverage)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub part: f64,
    pub coverage: f64,
    pub base: f64,
    pub warmup: f64,
    pub grads: BatchGradients,
    /// Samples left out of the coverage term because they have no valid phrase.
    pub excluded_samples: Vec<usize>,
    /// `(slot, row)` contrastive rows skipped for lack of positives.
    pub skipped_rows: Vec<(usize, usize)>,
}
