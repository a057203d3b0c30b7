use log::warn;

use crate::diffmath::{dot, RealMatrix};
use crate::error::{Error, Result};

use super::assign::SampleForward;
use super::tal::tal_row;
use super::{BatchGradients, EmbeddingBatch, LossReport, PartLossConfig};

/// Linear warm-up factor `min(1, (e + 1) / E_warm)`.
pub fn warmup(epoch: u32, warmup_epochs: u32) -> f64 {
    let span = warmup_epochs.max(1) as f64;
    ((epoch as f64 + 1.0) / span).min(1.0)
}

/// Coverage term and its gradient with respect to each sample's P×K assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageLoss {
    pub value: f64,
    pub d_assignment: Vec<RealMatrix>,
    /// Samples with no valid phrase, left out of the average.
    pub excluded: Vec<usize>,
}

/// `−(1/B) Σ_i (1/n_i) Σ_p m_{i,p} c_{i,p}` with `c_{i,p} = Σ_k a[p, k]`.
///
/// `B` counts the admitted samples; samples with `n_i = 0` are excluded.
pub fn coverage_loss(
    assignments: &[RealMatrix],
    mask: &[Vec<bool>],
    num_patches: usize,
) -> Result<CoverageLoss> {
    if assignments.len() != mask.len() {
        return Err(Error::shape("one mask row per assignment matrix required"));
    }
    let mut excluded = Vec::new();
    for (i, (a, m)) in assignments.iter().zip(mask).enumerate() {
        if a.shape() != (m.len(), num_patches) {
            return Err(Error::shape(format!(
                "assignment {i} is {:?}, expected ({}, {num_patches})",
                a.shape(),
                m.len()
            )));
        }
        if !m.iter().any(|&v| v) {
            excluded.push(i);
        }
    }
    if !excluded.is_empty() {
        warn!("coverage: {} sample(s) without valid phrases excluded", excluded.len());
    }
    let admitted = assignments.len() - excluded.len();
    let mut d_assignment: Vec<RealMatrix> = assignments
        .iter()
        .map(|a| RealMatrix::zeros(a.rows(), a.cols()))
        .collect();
    if admitted == 0 {
        return Ok(CoverageLoss {
            value: 0.0,
            d_assignment,
            excluded,
        });
    }

    let mut value = 0.0;
    for (i, (a, m)) in assignments.iter().zip(mask).enumerate() {
        let n = m.iter().filter(|&&v| v).count();
        if n == 0 {
            continue;
        }
        let weight = 1.0 / (admitted as f64 * n as f64);
        let mut sample = 0.0;
        for (p, _) in m.iter().enumerate().filter(|(_, &v)| v) {
            sample += a.row(p).iter().sum::<f64>();
            d_assignment[i].row_mut(p).iter_mut().for_each(|g| *g = -weight);
        }
        value -= weight * sample;
    }
    Ok(CoverageLoss {
        value,
        d_assignment,
        excluded,
    })
}

/// Contrastive loss of a single phrase slot and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseLoss {
    pub value: f64,
    /// B×D gradient with respect to the slot's region vectors.
    pub d_regions: RealMatrix,
    /// B×D gradient with respect to the slot's phrase embeddings.
    pub d_phrases: RealMatrix,
    /// Number of samples with this slot valid.
    pub frequency: usize,
    pub skipped_rows: Vec<usize>,
}

/// Bidirectional smoothed-triplet loss for phrase slot `slot`.
///
/// `regions` is B×D with row `i` the region pooled for `(i, slot)`. The
/// score matrix is `Q[i, j] = ⟨ẑ_i, h_j⟩`; rows and columns of samples with
/// the slot padded are left out, and positives are the valid samples that
/// share the identity.
pub fn per_phrase_loss(
    batch: &EmbeddingBatch,
    regions: &RealMatrix,
    slot: usize,
    cfg: &PartLossConfig,
) -> Result<PhraseLoss> {
    let b = batch.batch_size();
    let d = batch.dim();
    if regions.shape() != (b, d) {
        return Err(Error::shape(format!(
            "regions must be {b}x{d}, got {:?}",
            regions.shape()
        )));
    }
    if slot >= batch.num_phrases() {
        return Err(Error::param(format!("phrase slot {slot} out of range")));
    }
    let phrases = RealMatrix::from_fn(b, d, |i, c| batch.phrases[i].get(slot, c));
    let valid: Vec<usize> = (0..b).filter(|&i| batch.phrase_mask[i][slot]).collect();
    let mut out = PhraseLoss {
        value: 0.0,
        d_regions: RealMatrix::zeros(b, d),
        d_phrases: RealMatrix::zeros(b, d),
        frequency: valid.len(),
        skipped_rows: Vec::new(),
    };
    if valid.is_empty() {
        return Ok(out);
    }

    let scale = 1.0 / (2.0 * b as f64);
    let y = &batch.identities;
    let mut scores = vec![0.0; b];
    for &i in &valid {
        let pos: Vec<usize> = valid.iter().copied().filter(|&j| y[j] == y[i]).collect();
        let neg: Vec<usize> = valid.iter().copied().filter(|&j| y[j] != y[i]).collect();

        // Row i: region i against every phrase.
        for &j in &valid {
            scores[j] = dot(regions.row(i), phrases.row(j));
        }
        match tal_row(&scores, &pos, &neg, cfg.tau_tal, cfg.margin_tal)? {
            Some(row) => {
                out.value += scale * row.value;
                for &j in &valid {
                    let g = scale * row.grad[j];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        out.d_regions.add_at(i, c, g * phrases.get(j, c));
                        out.d_phrases.add_at(j, c, g * regions.get(i, c));
                    }
                }
            }
            None => out.skipped_rows.push(i),
        }

        // Column i: phrase i against every region.
        for &j in &valid {
            scores[j] = dot(regions.row(j), phrases.row(i));
        }
        match tal_row(&scores, &pos, &neg, cfg.tau_tal, cfg.margin_tal)? {
            Some(col) => {
                out.value += scale * col.value;
                for &j in &valid {
                    let g = scale * col.grad[j];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        out.d_regions.add_at(j, c, g * phrases.get(i, c));
                        out.d_phrases.add_at(i, c, g * regions.get(j, c));
                    }
                }
            }
            None => out.skipped_rows.push(i),
        }
    }
    Ok(out)
}

struct PartPass {
    part: f64,
    coverage: f64,
    d_patches: Vec<RealMatrix>,
    d_phrases: Vec<RealMatrix>,
    excluded: Vec<usize>,
    skipped: Vec<(usize, usize)>,
}

/// Forward and backward of `part_weight · 𝓛_part + cov_weight · 𝓛_cov`.
fn part_pass(
    batch: &EmbeddingBatch,
    cfg: &PartLossConfig,
    part_weight: f64,
    cov_weight: f64,
) -> Result<PartPass> {
    batch.check_shapes()?;
    cfg.validate()?;
    let b = batch.batch_size();
    let d = batch.dim();
    let k = batch.num_patches();
    let freq = batch.slot_frequencies();
    let total_freq: usize = freq.iter().sum();
    if total_freq == 0 {
        return Err(Error::data("no valid phrases in batch"));
    }
    let first = batch.identities[0];
    if batch.identities.iter().all(|&y| y == first) {
        warn!("batch has a single identity; part loss has no negatives and is zero");
    }

    let forwards = (0..b)
        .map(|i| SampleForward::compute(&batch.patches[i], &batch.phrases[i], cfg.tau_part))
        .collect::<Result<Vec<_>>>()?;

    let assignments: Vec<RealMatrix> = forwards.iter().map(SampleForward::assignment).collect();
    let coverage = coverage_loss(&assignments, &batch.phrase_mask, k)?;

    let mut d_regions: Vec<RealMatrix> = (0..b)
        .map(|_| RealMatrix::zeros(batch.num_phrases(), d))
        .collect();
    let mut d_phrases_direct = d_regions.clone();
    let mut part = 0.0;
    let mut skipped = Vec::new();
    for (slot, &f) in freq.iter().enumerate() {
        if f == 0 {
            continue;
        }
        let w = f as f64 / total_freq as f64;
        let regions = RealMatrix::from_fn(b, d, |i, c| forwards[i].regions.get(slot, c));
        let loss = per_phrase_loss(batch, &regions, slot, cfg)?;
        part += w * loss.value;
        skipped.extend(loss.skipped_rows.iter().map(|&r| (slot, r)));
        let g = part_weight * w;
        for i in 0..b {
            for c in 0..d {
                d_regions[i].add_at(slot, c, g * loss.d_regions.get(i, c));
                d_phrases_direct[i].add_at(slot, c, g * loss.d_phrases.get(i, c));
            }
        }
    }

    let mut d_patches = Vec::with_capacity(b);
    let mut d_phrases = Vec::with_capacity(b);
    for i in 0..b {
        let mut d_assign = coverage.d_assignment[i].clone();
        d_assign.scale(cov_weight);
        let (dz, mut dh) = forwards[i].backward(
            &batch.patches[i],
            &batch.phrases[i],
            &d_regions[i],
            &d_assign,
            cfg.tau_part,
        )?;
        dh.add_scaled(&d_phrases_direct[i], 1.0)?;
        d_patches.push(dz);
        d_phrases.push(dh);
    }
    Ok(PartPass {
        part,
        coverage: coverage.value,
        d_patches,
        d_phrases,
        excluded: coverage.excluded,
        skipped,
    })
}

fn report_from_pass(batch: &EmbeddingBatch, pass: PartPass, value: f64, scale: f64) -> LossReport {
    let mut grads = BatchGradients::zeros_like(batch);
    for (dst, src) in grads.patches.iter_mut().zip(&pass.d_patches) {
        dst.add_scaled(src, scale).expect("shapes checked");
    }
    for (dst, src) in grads.phrases.iter_mut().zip(&pass.d_phrases) {
        dst.add_scaled(src, scale).expect("shapes checked");
    }
    LossReport {
        value,
        part: pass.part,
        coverage: pass.coverage,
        base: 0.0,
        warmup: 1.0,
        grads,
        excluded_samples: pass.excluded,
        skipped_rows: pass.skipped,
    }
}

/// `𝓛_part = Σ_{p: f_p>0} w_p 𝓛_p` with `w_p = f_p / Σ f`. Gradients are of
/// `𝓛_part` alone; the coverage value is reported alongside.
pub fn part_loss(batch: &EmbeddingBatch, cfg: &PartLossConfig) -> Result<LossReport> {
    let pass = part_pass(batch, cfg, 1.0, 0.0)?;
    let value = pass.part;
    Ok(report_from_pass(batch, pass, value, 1.0))
}

/// `𝓛_part + λ_cov · 𝓛_cov` with gradients.
pub fn part_coverage_loss(batch: &EmbeddingBatch, cfg: &PartLossConfig) -> Result<LossReport> {
    let pass = part_pass(batch, cfg, 1.0, cfg.lambda_cov)?;
    let value = pass.part + cfg.lambda_cov * pass.coverage;
    Ok(report_from_pass(batch, pass, value, 1.0))
}

/// Global retrieval loss evaluated on the batch's global embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLossValue {
    pub value: f64,
    pub d_global_image: RealMatrix,
    pub d_global_text: RealMatrix,
}

/// Pluggable global objective combined with the part terms.
pub trait BaseLoss {
    fn evaluate(&self, batch: &EmbeddingBatch) -> Result<BaseLossValue>;
}

impl<F> BaseLoss for F
where
    F: Fn(&EmbeddingBatch) -> Result<BaseLossValue>,
{
    fn evaluate(&self, batch: &EmbeddingBatch) -> Result<BaseLossValue> {
        self(batch)
    }
}

/// Symmetric temperature-scaled cross-entropy between global image and
/// text embeddings. Targets spread uniformly over same-identity entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricInfoNce {
    pub temperature: f64,
}

impl Default for SymmetricInfoNce {
    fn default() -> Self {
        Self { temperature: 0.07 }
    }
}

impl BaseLoss for SymmetricInfoNce {
    fn evaluate(&self, batch: &EmbeddingBatch) -> Result<BaseLossValue> {
        batch.check_shapes()?;
        let tau = self.temperature;
        if !(tau > 0.0) {
            return Err(Error::param("base temperature must be positive"));
        }
        let b = batch.batch_size();
        let v = &batch.global_image;
        let u = &batch.global_text;
        let y = &batch.identities;
        let mut d_v = RealMatrix::zeros(b, batch.dim());
        let mut d_u = RealMatrix::zeros(b, batch.dim());
        let mut value = 0.0;
        let scale = 0.5 / b as f64;

        // direction 0: image rows against texts; direction 1: text rows against images.
        for direction in 0..2 {
            let (rows, cols, d_rows, d_cols) = if direction == 0 {
                (v, u, &mut d_v, &mut d_u)
            } else {
                (u, v, &mut d_u, &mut d_v)
            };
            for i in 0..b {
                let mut logits: Vec<f64> =
                    (0..b).map(|j| dot(rows.row(i), cols.row(j)) / tau).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                let npos = (0..b).filter(|&j| y[j] == y[i]).count() as f64;
                for (j, l) in logits.iter_mut().enumerate() {
                    let target = if y[j] == y[i] { 1.0 / npos } else { 0.0 };
                    value -= scale * target * (*l - lse);
                    let g = scale * ((*l - lse).exp() - target) / tau;
                    for c in 0..batch.dim() {
                        d_rows.add_at(i, c, g * cols.get(j, c));
                        d_cols.add_at(j, c, g * rows.get(i, c));
                    }
                }
            }
        }
        Ok(BaseLossValue {
            value,
            d_global_image: d_v,
            d_global_text: d_u,
        })
    }
}

/// `𝓛 = 𝓛_base + λ_part r(e) (𝓛_part + λ_cov 𝓛_cov)`.
///
/// With `λ_part = 0` the part terms are not evaluated and the total equals
/// the base loss exactly.
pub fn combined_loss(
    batch: &EmbeddingBatch,
    base_loss: &dyn BaseLoss,
    epoch: u32,
    cfg: &PartLossConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    batch.check_shapes()?;
    let base = base_loss.evaluate(batch)?;
    if base.d_global_image.shape() != batch.global_image.shape()
        || base.d_global_text.shape() != batch.global_text.shape()
    {
        return Err(Error::shape("base loss gradients do not match the batch"));
    }
    let r = warmup(epoch, cfg.warmup_epochs);
    let scale = cfg.lambda_part * r;

    let mut report = if cfg.lambda_part > 0.0 {
        let pass = part_pass(batch, cfg, 1.0, cfg.lambda_cov)?;
        let part_value = pass.part + cfg.lambda_cov * pass.coverage;
        let value = base.value + scale * part_value;
        report_from_pass(batch, pass, value, scale)
    } else {
        LossReport {
            value: base.value,
            part: 0.0,
            coverage: 0.0,
            base: 0.0,
            warmup: r,
            grads: BatchGradients::zeros_like(batch),
            excluded_samples: Vec::new(),
            skipped_rows: Vec::new(),
        }
    };
    report.base = base.value;
    report.warmup = r;
    report.grads.global_image = base.d_global_image;
    report.grads.global_text = base.d_global_text;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::l2norm_rows;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rows: usize, cols: usize, rng: &mut impl Rng) -> RealMatrix {
        l2norm_rows(&RealMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)))
    }

    /// Random batch; slot `p` of sample `i` is padded when `pad(i, p)`.
    pub(crate) fn random_batch(
        seed: u64,
        b: usize,
        k: usize,
        p: usize,
        d: usize,
        identities: Vec<i32>,
        pad: impl Fn(usize, usize) -> bool,
    ) -> EmbeddingBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<Vec<bool>> = (0..b).map(|i| (0..p).map(|s| !pad(i, s)).collect()).collect();
        let phrases = (0..b)
            .map(|i| {
                let mut h = unit(p, d, &mut rng);
                for s in 0..p {
                    if !mask[i][s] {
                        h.row_mut(s).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                h
            })
            .collect();
        EmbeddingBatch::new(
            (1, k),
            unit(b, d, &mut rng),
            unit(b, d, &mut rng),
            (0..b).map(|_| unit(k, d, &mut rng)).collect(),
            phrases,
            mask,
            identities,
        )
        .unwrap()
    }

    #[test]
    fn warmup_values() {
        assert_abs_diff_eq!(warmup(0, 5), 0.2, epsilon = 1e-15);
        assert_eq!(warmup(4, 5), 1.0);
        assert_eq!(warmup(40, 5), 1.0);
        for e in 0..10 {
            assert_eq!(warmup(e, 1), 1.0);
        }
    }

    #[test]
    fn coverage_cases() {
        // uniform assignment, all valid: c_p = K/P
        let k = 6;
        let uniform = RealMatrix::from_fn(3, k, |_, _| 1.0 / 3.0);
        let cov = coverage_loss(&[uniform], &[vec![true; 3]], k).unwrap();
        assert_abs_diff_eq!(cov.value, -(k as f64) / 3.0, epsilon = 1e-12);

        // one of two slots valid and holding all mass
        let mut a = RealMatrix::zeros(2, k);
        a.row_mut(0).iter_mut().for_each(|v| *v = 1.0);
        let cov = coverage_loss(&[a], &[vec![true, false]], k).unwrap();
        assert_abs_diff_eq!(cov.value, -(k as f64), epsilon = 1e-12);

        // no valid phrase: excluded
        let a = RealMatrix::from_fn(2, k, |_, _| 0.5);
        let cov = coverage_loss(&[a.clone(), a], &[vec![false, false], vec![true, false]], k).unwrap();
        assert_eq!(cov.excluded, vec![0]);
        assert_abs_diff_eq!(cov.value, -(k as f64) * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn coverage_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (b, p, k) = (5, 4, 7);
        let assignments: Vec<RealMatrix> = (0..b)
            .map(|_| {
                let s = RealMatrix::from_fn(p, k, |_, _| rng.gen_range(-1.0..1.0));
                super::super::soft_assignment(&s, 0.3).unwrap()
            })
            .collect();
        let mask: Vec<Vec<bool>> = (0..b)
            .map(|i| (0..p).map(|s| s == 0 || (i + s) % 3 != 0).collect())
            .collect();
        let cov = coverage_loss(&assignments, &mask, k).unwrap();
        let mut oracle = 0.0;
        for i in 0..b {
            let n = mask[i].iter().filter(|&&m| m).count() as f64;
            let mut inner = 0.0;
            for s in 0..p {
                if mask[i][s] {
                    for kk in 0..k {
                        inner += assignments[i].get(s, kk);
                    }
                }
            }
            oracle -= inner / n;
        }
        oracle /= b as f64;
        assert_abs_diff_eq!(cov.value, oracle, epsilon = 1e-12);
    }

    #[test]
    fn per_phrase_identity_case() {
        let b = 4;
        let eye = RealMatrix::identity(b);
        let batch = EmbeddingBatch::new(
            (1, b),
            eye.clone(),
            eye.clone(),
            vec![eye.clone(); b],
            (0..b).map(|i| RealMatrix::from_rows(&[eye.row(i)]).unwrap()).collect(),
            vec![vec![true]; b],
            (0..b as i32).collect(),
        )
        .unwrap();
        let cfg = PartLossConfig {
            tau_tal: 0.05,
            margin_tal: 0.0,
            ..Default::default()
        };
        let loss = per_phrase_loss(&batch, &eye, 0, &cfg).unwrap();
        // Each of 2B rows is log(1 + (B−1)e^{−1/τ}); the 1/(2B) average leaves one row's value.
        let per_row = (1.0 + (b as f64 - 1.0) * (-1.0f64 / 0.05).exp()).ln();
        assert_abs_diff_eq!(loss.value, per_row, epsilon = 1e-15);
        assert!(loss.value < 1e-8);
    }

    #[test]
    fn per_phrase_masked_and_single_identity() {
        let batch = random_batch(3, 4, 6, 2, 8, vec![0, 1, 2, 3], |_, s| s == 1);
        let regions = RealMatrix::from_fn(4, 8, |i, c| batch.patches[i].get(0, c));
        let cfg = PartLossConfig::default();
        let loss = per_phrase_loss(&batch, &regions, 1, &cfg).unwrap();
        assert_eq!(loss.value, 0.0);
        assert_eq!(loss.frequency, 0);

        let same = random_batch(3, 2, 6, 1, 8, vec![5, 5], |_, _| false);
        let regions = RealMatrix::from_fn(2, 8, |i, c| same.patches[i].get(0, c));
        assert_eq!(per_phrase_loss(&same, &regions, 0, &cfg).unwrap().value, 0.0);
        assert_eq!(part_loss(&same, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn part_loss_weights() {
        // single valid slot: part = L_p of that slot
        let batch = random_batch(8, 4, 6, 3, 8, vec![0, 0, 1, 2], |_, s| s != 1);
        let cfg = PartLossConfig::default();
        let report = part_loss(&batch, &cfg).unwrap();
        let fwd: Vec<_> = (0..4)
            .map(|i| SampleForward::compute(&batch.patches[i], &batch.phrases[i], cfg.tau_part).unwrap())
            .collect();
        let regions = RealMatrix::from_fn(4, 8, |i, c| fwd[i].regions.get(1, c));
        let lp = per_phrase_loss(&batch, &regions, 1, &cfg).unwrap().value;
        assert_abs_diff_eq!(report.value, lp, epsilon = 1e-15);

        // frequencies 3 and 1 → weights 0.75 / 0.25
        let batch = random_batch(9, 4, 6, 2, 8, vec![0, 1, 2, 3], |i, s| s == 1 && i > 0);
        assert_eq!(batch.slot_frequencies(), vec![4, 1]);
        let batch = random_batch(9, 4, 6, 2, 8, vec![0, 1, 2, 3], |i, s| (s == 0 && i == 3) || (s == 1 && i > 0));
        assert_eq!(batch.slot_frequencies(), vec![3, 1]);
        let report = part_loss(&batch, &cfg).unwrap();
        let fwd: Vec<_> = (0..4)
            .map(|i| SampleForward::compute(&batch.patches[i], &batch.phrases[i], cfg.tau_part).unwrap())
            .collect();
        let l: Vec<f64> = (0..2)
            .map(|s| {
                let regions = RealMatrix::from_fn(4, 8, |i, c| fwd[i].regions.get(s, c));
                per_phrase_loss(&batch, &regions, s, &cfg).unwrap().value
            })
            .collect();
        assert_abs_diff_eq!(report.value, 0.75 * l[0] + 0.25 * l[1], epsilon = 1e-15);
    }

    #[test]
    fn part_loss_requires_a_phrase() {
        let batch = random_batch(1, 3, 4, 2, 4, vec![0, 1, 2], |_, _| true);
        match part_loss(&batch, &PartLossConfig::default()) {
            Err(Error::Data(msg)) => assert!(msg.contains("no valid phrases")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn combined_loss_switches() {
        let batch = random_batch(4, 4, 6, 3, 8, vec![0, 1, 1, 2], |i, s| s == 2 && i % 2 == 0);
        let base = SymmetricInfoNce::default();
        let ablated = PartLossConfig {
            lambda_part: 0.0,
            ..Default::default()
        };
        let r = combined_loss(&batch, &base, 3, &ablated).unwrap();
        assert_eq!(r.value, base.evaluate(&batch).unwrap().value);

        let zero_base = |b: &EmbeddingBatch| {
            Ok(BaseLossValue {
                value: 0.0,
                d_global_image: RealMatrix::zeros(b.batch_size(), b.dim()),
                d_global_text: RealMatrix::zeros(b.batch_size(), b.dim()),
            })
        };
        let cfg = PartLossConfig {
            lambda_cov: 0.0,
            lambda_part: 0.7,
            warmup_epochs: 1,
            ..Default::default()
        };
        let r = combined_loss(&batch, &zero_base, 0, &cfg).unwrap();
        let part = part_loss(&batch, &cfg).unwrap().value;
        assert_abs_diff_eq!(r.value, 0.7 * part, epsilon = 1e-15);

        let cfg = PartLossConfig::default();
        let r = combined_loss(&batch, &base, 1, &cfg).unwrap();
        let composed = base.evaluate(&batch).unwrap().value
            + cfg.lambda_part * warmup(1, cfg.warmup_epochs) * (r.part + cfg.lambda_cov * r.coverage);
        assert_abs_diff_eq!(r.value, composed, epsilon = 1e-12);
        assert_abs_diff_eq!(r.warmup, 0.4, epsilon = 1e-15);

        let bad = PartLossConfig {
            lambda_cov: -0.1,
            ..Default::default()
        };
        assert!(matches!(combined_loss(&batch, &base, 0, &bad), Err(Error::Param(_))));
    }

    #[test]
    fn base_loss_gradient_is_exact() {
        use crate::diffmath::{finite_diff_check, GradientTape};
        let batch = random_batch(21, 5, 4, 2, 6, vec![0, 1, 1, 2, 3], |_, _| false);
        let base = SymmetricInfoNce::default();
        let f = |xs: &[RealMatrix]| {
            let mut b = batch.clone();
            b.global_image = xs[0].clone();
            b.global_text = xs[1].clone();
            let out = base.evaluate(&b)?;
            Ok((out.value, GradientTape::from_grads(vec![out.d_global_image, out.d_global_text])))
        };
        let rep = finite_diff_check(
            f,
            &[batch.global_image.clone(), batch.global_text.clone()],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}
