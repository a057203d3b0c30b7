use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cfeval::{EncoderPort, ImageEncoding, ImageTensor};
use crate::diffmath::{l2norm_rows, l2norm_rows_backward, matmul, RealMatrix};
use crate::diffmath::{l2norm_in_place, l2norm_vec_backward};
use crate::error::{Error, Result};
use crate::ppim::{BatchGradients, EmbeddingBatch};

/// Default token-hash width.
pub const DEFAULT_HASH_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Width of the per-pixel feature vector for `channels` colour channels:
/// the channels, their pairwise products (squares included) and a constant.
pub fn pixel_feature_dim(channels: usize) -> usize {
    channels + channels * (channels + 1) / 2 + 1
}

fn push_pixel_features(px: &[f64], acc: &mut [f64]) {
    let c = px.len();
    let mut n = 0;
    for &v in px {
        acc[n] += v;
        n += 1;
    }
    for a in 0..c {
        for b in a..c {
            acc[n] += px[a] * px[b];
            n += 1;
        }
    }
    acc[n] += 1.0;
}

/// Trainable projections of the toy dual encoder.
///
/// A cell is described by the average of fixed quadratic pixel features
/// (see [`pixel_feature_dim`]); the image projection maps that descriptor
/// to `D`. The constant feature keeps mid-gray cells (all-zero colour in
/// normalized space) off the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub grid: (usize, usize),
    pub image_proj: RealMatrix,
    pub text_proj: RealMatrix,
}

impl ToyEncoder {
    /// Uniform init with variance `1 / fan_in`.
    pub fn init(grid: (usize, usize), channels: usize, hash_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if grid.0 == 0 || grid.1 == 0 || channels == 0 || hash_dim == 0 || dim == 0 {
            return Err(Error::param("encoder sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize| {
            let a = (3.0 / rows as f64).sqrt();
            RealMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
        };
        let image_proj = uniform(pixel_feature_dim(channels), dim);
        let text_proj = uniform(hash_dim, dim);
        Ok(Self {
            grid,
            image_proj,
            text_proj,
        })
    }

    pub fn from_parts(grid: (usize, usize), image_proj: RealMatrix, text_proj: RealMatrix) -> Result<Self> {
        let enc = Self {
            grid,
            image_proj,
            text_proj,
        };
        enc.validate()?;
        Ok(enc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_proj.cols() != self.text_proj.cols() {
            return Err(Error::shape("image and text projections must share D"));
        }
        if self.channels().is_none() || self.text_proj.rows() == 0 || self.grid.0 * self.grid.1 == 0 {
            return Err(Error::shape("degenerate encoder dimensions"));
        }
        if !self.image_proj.is_finite() || !self.text_proj.is_finite() {
            return Err(Error::numeric("encoder parameters are not finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.image_proj.cols()
    }

    /// Channel count implied by the image projection's row count.
    pub fn channels(&self) -> Option<usize> {
        (1..=self.image_proj.rows()).find(|&c| pixel_feature_dim(c) == self.image_proj.rows())
    }

    pub fn hash_dim(&self) -> usize {
        self.text_proj.rows()
    }

    pub fn num_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// K×F cell descriptors, cells in row-major grid order.
    pub fn cell_descriptors(&self, image: &ImageTensor) -> Result<RealMatrix> {
        let (gh, gw) = self.grid;
        if Some(image.channels) != self.channels() {
            return Err(Error::shape(format!(
                "encoder expects {:?} channels, image has {}",
                self.channels(),
                image.channels
            )));
        }
        if image.height % gh != 0 || image.width % gw != 0 || image.height == 0 || image.width == 0 {
            return Err(Error::shape(format!(
                "{}x{} image does not divide into a {gh}x{gw} grid",
                image.height, image.width
            )));
        }
        let (ch, cw) = (image.height / gh, image.width / gw);
        let inv = 1.0 / (ch * cw) as f64;
        let mut out = RealMatrix::zeros(gh * gw, self.image_proj.rows());
        for k in 0..gh * gw {
            let (gy, gx) = (k / gw, k % gw);
            let row = out.row_mut(k);
            for y in gy * ch..(gy + 1) * ch {
                for x in gx * cw..(gx + 1) * cw {
                    push_pixel_features(image.pixel(y, x), row);
                }
            }
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(out)
    }

    /// Summed one-hot token hashes.
    pub fn token_bag(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::param(format!("text {text:?} has no tokens")));
        }
        let mut bag = vec![0.0; self.hash_dim()];
        for t in tokens {
            bag[(fnv1a64(t.as_bytes()) % self.hash_dim() as u64) as usize] += 1.0;
        }
        Ok(bag)
    }

    /// Patches `l2norm(X W_img)` and global `l2norm(mean_k z_k)`.
    pub fn encode_descriptors(&self, descriptors: &RealMatrix) -> Result<ImageEncoding> {
        let patches = l2norm_rows(&matmul(descriptors, &self.image_proj, false)?);
        let global = mean_direction(&patches);
        Ok(ImageEncoding { global, patches })
    }

    pub fn encode_image(&self, image: &ImageTensor) -> Result<ImageEncoding> {
        self.encode_descriptors(&self.cell_descriptors(image)?)
    }

    pub fn encode_bag(&self, bag: &[f64]) -> Vec<f64> {
        let mut v = project(bag, &self.text_proj);
        l2norm_in_place(&mut v);
        v
    }

    /// Unit-norm embedding of a phrase or caption.
    pub fn encode_phrase(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.encode_bag(&self.token_bag(text)?))
    }
}

fn project(bag: &[f64], proj: &RealMatrix) -> Vec<f64> {
    let mut out = vec![0.0; proj.cols()];
    for (r, &b) in bag.iter().enumerate() {
        if b != 0.0 {
            for (o, w) in out.iter_mut().zip(proj.row(r)) {
                *o += b * w;
            }
        }
    }
    out
}

fn mean_patch(patches: &RealMatrix) -> Vec<f64> {
    let k = patches.rows() as f64;
    let mut m = vec![0.0; patches.cols()];
    for r in 0..patches.rows() {
        for (a, v) in m.iter_mut().zip(patches.row(r)) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= k);
    m
}

fn mean_direction(patches: &RealMatrix) -> Vec<f64> {
    let mut m = mean_patch(patches);
    l2norm_in_place(&mut m);
    m
}

impl EncoderPort for ToyEncoder {
    fn encode_image(&self, image: &ImageTensor) -> Result<ImageEncoding> {
        ToyEncoder::encode_image(self, image)
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.encode_phrase(text)
    }
}

/// Parameter-independent inputs of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// K×F cell descriptors of the normalized image.
    pub descriptors: RealMatrix,
    pub caption_bag: Vec<f64>,
    /// One bag per valid phrase, in slot order.
    pub phrase_bags: Vec<Vec<f64>>,
    pub identity: i32,
}

impl PreparedSample {
    pub fn new(
        encoder: &ToyEncoder,
        normalized_image: &ImageTensor,
        caption: &str,
        phrases: &[String],
        identity: i32,
    ) -> Result<Self> {
        Ok(Self {
            descriptors: encoder.cell_descriptors(normalized_image)?,
            caption_bag: encoder.token_bag(caption)?,
            phrase_bags: phrases.iter().map(|p| encoder.token_bag(p)).collect::<Result<_>>()?,
            identity,
        })
    }
}

/// Pre-normalization activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    samples: Vec<SampleCache>,
}

#[derive(Debug, Clone)]
struct SampleCache {
    pre_patches: RealMatrix,
    mean: Vec<f64>,
    pre_caption: Vec<f64>,
    pre_phrases: Vec<Vec<f64>>,
}

/// Gradients with respect to the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub image_proj: RealMatrix,
    pub text_proj: RealMatrix,
}

impl ToyEncoder {
    /// Embeds a batch with `p_slots` phrase slots per sample; extra phrases
    /// beyond `p_slots` are an error.
    pub fn forward_batch(&self, samples: &[&PreparedSample], p_slots: usize) -> Result<(EmbeddingBatch, BatchCache)> {
        let d = self.dim();
        let b = samples.len();
        let mut global_image = RealMatrix::zeros(b, d);
        let mut global_text = RealMatrix::zeros(b, d);
        let mut patches = Vec::with_capacity(b);
        let mut phrases = Vec::with_capacity(b);
        let mut mask = Vec::with_capacity(b);
        let mut cache = Vec::with_capacity(b);
        for (i, s) in samples.iter().enumerate() {
            if s.phrase_bags.len() > p_slots {
                return Err(Error::shape(format!(
                    "sample {i} has {} phrases for {p_slots} slots",
                    s.phrase_bags.len()
                )));
            }
            if s.descriptors.cols() != self.image_proj.rows() || s.caption_bag.len() != self.hash_dim() {
                return Err(Error::shape(format!("sample {i} does not match the encoder")));
            }
            let pre_patches = matmul(&s.descriptors, &self.image_proj, false)?;
            let z = l2norm_rows(&pre_patches);
            let mean = mean_patch(&z);
            let mut g = mean.clone();
            l2norm_in_place(&mut g);
            global_image.row_mut(i).copy_from_slice(&g);

            let pre_caption = project(&s.caption_bag, &self.text_proj);
            let mut t = pre_caption.clone();
            l2norm_in_place(&mut t);
            global_text.row_mut(i).copy_from_slice(&t);

            let mut h = RealMatrix::zeros(p_slots, d);
            let mut pre_phrases = Vec::with_capacity(s.phrase_bags.len());
            for (p, bag) in s.phrase_bags.iter().enumerate() {
                let pre = project(bag, &self.text_proj);
                let mut v = pre.clone();
                l2norm_in_place(&mut v);
                h.row_mut(p).copy_from_slice(&v);
                pre_phrases.push(pre);
            }
            mask.push((0..p_slots).map(|p| p < s.phrase_bags.len()).collect());
            patches.push(z);
            phrases.push(h);
            cache.push(SampleCache {
                pre_patches,
                mean,
                pre_caption,
                pre_phrases,
            });
        }
        let identities = samples.iter().map(|s| s.identity).collect();
        let batch = EmbeddingBatch::new(self.grid, global_image, global_text, patches, phrases, mask, identities)?;
        Ok((batch, BatchCache { samples: cache }))
    }

    /// Chains embedding gradients back to the projections.
    pub fn backward_batch(
        &self,
        samples: &[&PreparedSample],
        cache: &BatchCache,
        grads: &BatchGradients,
    ) -> Result<EncoderGrads> {
        if samples.len() != cache.samples.len() || grads.patches.len() != samples.len() {
            return Err(Error::shape("backward inputs do not match the forward batch"));
        }
        let d = self.dim();
        let mut d_img = RealMatrix::zeros(self.image_proj.rows(), d);
        let mut d_txt = RealMatrix::zeros(self.hash_dim(), d);
        let mut d_mean = vec![0.0; d];
        let mut d_pre = vec![0.0; d];
        for (i, (s, c)) in samples.iter().zip(&cache.samples).enumerate() {
            // global = l2norm(mean z); every patch receives d_mean / K
            l2norm_vec_backward(&c.mean, grads.global_image.row(i), &mut d_mean);
            let k = c.pre_patches.rows();
            let mut dz = grads.patches[i].clone();
            for r in 0..k {
                for (g, m) in dz.row_mut(r).iter_mut().zip(&d_mean) {
                    *g += m / k as f64;
                }
            }
            let du = l2norm_rows_backward(&c.pre_patches, &dz);
            d_img.add_scaled(&matmul(&s.descriptors.transpose(), &du, false)?, 1.0)?;

            l2norm_vec_backward(&c.pre_caption, grads.global_text.row(i), &mut d_pre);
            accumulate_outer(&mut d_txt, &s.caption_bag, &d_pre);
            for (p, (bag, pre)) in s.phrase_bags.iter().zip(&c.pre_phrases).enumerate() {
                l2norm_vec_backward(pre, grads.phrases[i].row(p), &mut d_pre);
                accumulate_outer(&mut d_txt, bag, &d_pre);
            }
        }
        Ok(EncoderGrads {
            image_proj: d_img,
            text_proj: d_txt,
        })
    }
}

fn accumulate_outer(out: &mut RealMatrix, bag: &[f64], g: &[f64]) {
    for (r, &b) in bag.iter().enumerate() {
        if b != 0.0 {
            for (o, v) in out.row_mut(r).iter_mut().zip(g) {
                *o += b * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_diff_check, norm, GradientTape};
    use crate::ppim::{part_coverage_loss, PartLossConfig};
    use crate::toyworld::scene::{gen_dataset, normalize_image};
    use approx::assert_abs_diff_eq;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn phrase_encoding() {
        let enc = ToyEncoder::init((4, 4), 3, 64, 16, 0).unwrap();
        let a = enc.encode_phrase("red torso").unwrap();
        assert_eq!(a, enc.encode_phrase("red torso").unwrap());
        assert_eq!(a, enc.encode_phrase("torso red").unwrap());
        assert_abs_diff_eq!(norm(&a), 1.0, epsilon = 1e-9);
        assert!(enc.encode_phrase("").is_err());
        assert!(enc.encode_phrase(" , ").is_err());
    }

    #[test]
    fn image_encoding() {
        let enc = ToyEncoder::init((4, 4), 3, 64, 16, 1).unwrap();
        let d = gen_dataset(2, 1, (4, 4), (32, 32), 2).unwrap();
        let img = normalize_image(&d.scenes[0].image);
        let a = enc.encode_image(&img).unwrap();
        assert_eq!(a, enc.encode_image(&img.clone()).unwrap());
        assert_abs_diff_eq!(norm(&a.global), 1.0, epsilon = 1e-9);
        for k in 0..16 {
            assert_abs_diff_eq!(norm(a.patches.row(k)), 1.0, epsilon = 1e-9);
        }
        assert!(enc.encode_image(&ImageTensor::filled(30, 32, 3, 0.0)).is_err());
    }

    #[test]
    fn swapping_cells_swaps_patch_rows() {
        let enc = ToyEncoder::init((4, 4), 3, 64, 16, 1).unwrap();
        let d = gen_dataset(1, 1, (4, 4), (32, 32), 9).unwrap();
        let img = normalize_image(&d.scenes[0].image);
        let (a, b) = (5usize, 10usize);
        let mut swapped = img.clone();
        for dy in 0..8 {
            for dx in 0..8 {
                let pa = ((a / 4) * 8 + dy, (a % 4) * 8 + dx);
                let pb = ((b / 4) * 8 + dy, (b % 4) * 8 + dx);
                let va = img.pixel(pa.0, pa.1).to_vec();
                let vb = img.pixel(pb.0, pb.1).to_vec();
                swapped.pixel_mut(pa.0, pa.1).copy_from_slice(&vb);
                swapped.pixel_mut(pb.0, pb.1).copy_from_slice(&va);
            }
        }
        let e0 = enc.encode_image(&img).unwrap();
        let e1 = enc.encode_image(&swapped).unwrap();
        for k in 0..16 {
            let src = if k == a { b } else if k == b { a } else { k };
            assert_eq!(e1.patches.row(k), e0.patches.row(src));
        }
    }

    fn small_samples(seed: u64) -> (ToyEncoder, Vec<PreparedSample>) {
        let d = gen_dataset(2, 2, (2, 3), (8, 12), seed).unwrap();
        let enc = ToyEncoder::init((2, 3), 3, 32, 8, seed).unwrap();
        let samples = d
            .scenes
            .iter()
            .map(|s| {
                let mut phrases = s.phrases();
                phrases.truncate(3);
                PreparedSample::new(&enc, &normalize_image(&s.image), &s.caption, &phrases, s.identity).unwrap()
            })
            .collect();
        (enc, samples)
    }

    #[test]
    fn part_loss_gradient_reaches_parameters() {
        let cfg = PartLossConfig::default();
        for seed in 0..3 {
            let (enc, samples) = small_samples(seed);
            let refs: Vec<&PreparedSample> = samples.iter().collect();
            let f = |inputs: &[RealMatrix]| -> Result<(f64, GradientTape)> {
                let e = ToyEncoder::from_parts(enc.grid, inputs[0].clone(), inputs[1].clone())?;
                let (batch, cache) = e.forward_batch(&refs, 3)?;
                let report = part_coverage_loss(&batch, &cfg)?;
                let g = e.backward_batch(&refs, &cache, &report.grads)?;
                Ok((report.value, GradientTape::from_grads(vec![g.image_proj, g.text_proj])))
            };
            let report = finite_diff_check(f, &[enc.image_proj.clone(), enc.text_proj.clone()], 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }
}
