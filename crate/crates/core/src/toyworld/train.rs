use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppim::{combined_loss, PartLossConfig, SymmetricInfoNce};

use super::encoder::{PreparedSample, ToyEncoder, DEFAULT_HASH_DIM};
use super::scene::{normalize_image, ToyDataset};

/// Optimizer and model settings for toy training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: PartLossConfig,
    /// Temperature of the global contrastive loss.
    pub base_temperature: f64,
    pub learning_rate: f64,
    /// The step size is multiplied by `lr_decay` every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: u32,
    pub epochs: u32,
    pub batch_size: usize,
    /// Batches hold `batch_size / identities_per_batch` samples of each identity.
    pub identities_per_batch: usize,
    pub dim: usize,
    pub hash_dim: usize,
    pub phrase_slots: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: PartLossConfig::default(),
            base_temperature: 0.07,
            learning_rate: 0.05,
            lr_decay: 0.5,
            decay_every: 20,
            epochs: 60,
            batch_size: 16,
            identities_per_batch: 4,
            dim: 16,
            hash_dim: DEFAULT_HASH_DIM,
            phrase_slots: 6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) || !(self.base_temperature > 0.0) {
            return Err(Error::param("learning rate, decay and temperature must be positive"));
        }
        if self.decay_every == 0 || self.batch_size < 2 || self.identities_per_batch < 2 {
            return Err(Error::param("decay period ≥ 1, batch ≥ 2 and ≥ 2 identities per batch required"));
        }
        if self.identities_per_batch > self.batch_size {
            return Err(Error::param("more identities per batch than batch slots"));
        }
        if self.dim == 0 || self.hash_dim == 0 || self.phrase_slots == 0 {
            return Err(Error::param("model sizes must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: u32) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Batch-averaged loss components of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: u32,
    pub total: f64,
    pub base: f64,
    pub part: f64,
    pub coverage: f64,
    pub warmup: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub encoder: ToyEncoder,
    pub curve: Vec<EpochLoss>,
}

/// Encodes every scene's inputs once; they do not depend on the parameters.
pub fn prepare_samples(encoder: &ToyEncoder, dataset: &ToyDataset, phrase_slots: usize) -> Result<Vec<PreparedSample>> {
    dataset
        .scenes
        .iter()
        .map(|s| {
            let mut phrases = s.phrases();
            phrases.truncate(phrase_slots);
            PreparedSample::new(encoder, &normalize_image(&s.image), &s.caption, &phrases, s.identity)
        })
        .collect()
}

/// Identity-balanced batches for one epoch.
fn epoch_batches(by_identity: &[Vec<usize>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let per_id = (cfg.batch_size / cfg.identities_per_batch).max(1);
    let mut order: Vec<usize> = (0..by_identity.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for group in order.chunks(cfg.identities_per_batch) {
        if group.len() < 2 {
            continue;
        }
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for &id in group {
            let mut members = by_identity[id].clone();
            members.shuffle(rng);
            batch.extend(members.into_iter().take(per_id));
        }
        batches.push(batch);
    }
    batches
}

/// Plain gradient descent on both projections.
pub fn train(dataset: &ToyDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut ids: Vec<i32> = dataset.scenes.iter().map(|s| s.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::data("training needs at least two identities"));
    }
    let by_identity: Vec<Vec<usize>> = ids
        .iter()
        .map(|&id| (0..dataset.len()).filter(|&n| dataset.scenes[n].identity == id).collect())
        .collect();

    let mut encoder = ToyEncoder::init(dataset.grid, 3, cfg.hash_dim, cfg.dim, seed)?;
    let samples = prepare_samples(&encoder, dataset, cfg.phrase_slots)?;
    let base = SymmetricInfoNce {
        temperature: cfg.base_temperature,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e);
    let mut curve = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let batches = epoch_batches(&by_identity, cfg, &mut rng);
        let mut sums = [0.0; 4];
        let mut warm = 0.0;
        for batch in &batches {
            let refs: Vec<&PreparedSample> = batch.iter().map(|&n| &samples[n]).collect();
            let (emb, cache) = encoder.forward_batch(&refs, cfg.phrase_slots)?;
            let report = combined_loss(&emb, &base, epoch, &cfg.loss)?;
            if !report.value.is_finite() {
                return Err(Error::numeric(format!("loss diverged at epoch {epoch}")));
            }
            let grads = encoder.backward_batch(&refs, &cache, &report.grads)?;
            encoder.image_proj.add_scaled(&grads.image_proj, -lr)?;
            encoder.text_proj.add_scaled(&grads.text_proj, -lr)?;
            if !encoder.image_proj.is_finite() || !encoder.text_proj.is_finite() {
                return Err(Error::numeric(format!("parameters diverged at epoch {epoch}")));
            }
            sums[0] += report.value;
            sums[1] += report.base;
            sums[2] += report.part;
            sums[3] += report.coverage;
            warm = report.warmup;
        }
        let n = batches.len().max(1) as f64;
        let entry = EpochLoss {
            epoch,
            total: sums[0] / n,
            base: sums[1] / n,
            part: sums[2] / n,
            coverage: sums[3] / n,
            warmup: warm,
            learning_rate: lr,
        };
        debug!("epoch {epoch}: {entry:?}");
        curve.push(entry);
    }
    Ok(TrainOutcome { encoder, curve })
}
