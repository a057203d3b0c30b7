use rayon::prelude::*;

use crate::diffmath::{dot, RealMatrix};
use crate::error::{Error, Result};

use super::mask::{perturb, relevance_map, threshold_region, topp_mask, BinaryMask, MaskSpec, RelevanceMap};
use super::metrics::{metric_drops, MetricDrop, RetrievalMetrics};
use super::{argmax_first, similarity_matrix, top1, ImageTensor, SimilarityMatrix};

/// Global and patch embeddings of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoding {
    pub global: Vec<f64>,
    /// K×D, one row per grid cell.
    pub patches: RealMatrix,
}

/// Encoder used to re-embed perturbed gallery images.
///
/// Implementations must be deterministic and return unit-norm vectors.
/// An encoder that cannot serve concurrent calls returns `false` from
/// [`EncoderPort::concurrent`] and the pipeline calls it from one thread.
pub trait EncoderPort: Sync {
    fn encode_image(&self, image: &ImageTensor) -> Result<ImageEncoding>;
    fn encode_text(&self, text: &str) -> Result<Vec<f64>>;
    fn concurrent(&self) -> bool {
        true
    }
}

/// `⟨q, g̃⟩` with `g̃` the global embedding of the perturbed image.
pub fn counterfactual_similarity(
    query: &[f64],
    perturbed: &ImageTensor,
    encoder: &dyn EncoderPort,
) -> Result<f64> {
    let enc = encoder
        .encode_image(perturbed)
        .map_err(|e| Error::Encoder(format!("re-encoding perturbed image: {e}")))?;
    if enc.global.len() != query.len() {
        return Err(Error::shape("query and image embeddings differ in dimension"));
    }
    Ok(dot(query, &enc.global))
}

/// Phrase with the largest similarity drop; ties go to the lowest index.
pub fn rank1_part(deltas: &[f64]) -> Result<usize> {
    if deltas.is_empty() {
        return Err(Error::param("no phrase to rank"));
    }
    Ok(argmax_first(deltas))
}

/// Copies `s` and replaces cell `(i, j_i)` by `S̃_i` for every query with an
/// update. All other cells are left bit-identical.
pub fn cf_matrix_update(
    s: &SimilarityMatrix,
    updates: &[Option<(usize, f64)>],
) -> Result<SimilarityMatrix> {
    if updates.len() != s.num_queries() {
        return Err(Error::shape("one update slot per query required"));
    }
    let mut out = s.clone();
    for (i, update) in updates.iter().enumerate() {
        if let Some((j, value)) = *update {
            if j >= s.num_gallery() {
                return Err(Error::param(format!("gallery index {j} out of range")));
            }
            out.scores.set(i, j, value);
        }
    }
    Ok(out)
}

/// Everything the protocol needs about queries and gallery.
#[derive(Debug, Clone, Copy)]
pub struct CounterfactualInput<'a> {
    /// N_q×D query text embeddings.
    pub queries: &'a RealMatrix,
    /// Per query, the embeddings of its valid phrases (P_i×D).
    pub query_phrases: &'a [RealMatrix],
    pub query_ids: &'a [i32],
    /// Gallery images in the encoder's input space.
    pub gallery_images: &'a [ImageTensor],
    /// Baseline encodings of the gallery images.
    pub gallery: &'a [ImageEncoding],
    pub gallery_ids: &'a [i32],
    pub grid: (usize, usize),
}

impl CounterfactualInput<'_> {
    fn check(&self) -> Result<()> {
        let nq = self.queries.rows();
        let ng = self.gallery.len();
        if self.query_phrases.len() != nq || self.query_ids.len() != nq {
            return Err(Error::shape("query lists must have one entry per query"));
        }
        if self.gallery_images.len() != ng || self.gallery_ids.len() != ng {
            return Err(Error::shape("gallery lists must have one entry per item"));
        }
        if ng == 0 {
            return Err(Error::param("empty gallery"));
        }
        Ok(())
    }

    pub fn gallery_matrix(&self) -> Result<RealMatrix> {
        RealMatrix::from_rows(&self.gallery.iter().map(|g| g.global.clone()).collect::<Vec<_>>())
    }
}

/// Per-query trace of the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query: usize,
    pub top1: usize,
    /// Similarity drop for every phrase of the query.
    pub delta_s: Vec<f64>,
    /// Most influential phrase, `None` when the query has no phrase.
    pub chosen_phrase: Option<usize>,
    pub baseline_score: f64,
    pub counterfactual_score: f64,
    /// Pixels removed for the chosen phrase.
    pub masked_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualReport {
    pub spec: MaskSpec,
    pub baseline: RetrievalMetrics,
    pub counterfactual: RetrievalMetrics,
    pub drops: Vec<MetricDrop>,
    pub queries: Vec<QueryOutcome>,
    pub baseline_matrix: SimilarityMatrix,
    pub counterfactual_matrix: SimilarityMatrix,
}

/// Relevance map and mask of every phrase against one gallery image.
pub fn explain_pair(
    phrases: &RealMatrix,
    patches: &RealMatrix,
    grid: (usize, usize),
    image_size: (usize, usize),
    spec: MaskSpec,
) -> Result<Vec<(RelevanceMap, BinaryMask)>> {
    spec.validate()?;
    (0..phrases.rows())
        .map(|m| {
            let map = relevance_map(m, phrases.row(m), patches, grid, image_size)?;
            let region = threshold_region(&map, spec.alpha)?;
            let mask = topp_mask(&region, &map, spec.p)?;
            Ok((map, mask))
        })
        .collect()
}

fn process_query(
    input: &CounterfactualInput<'_>,
    s: &SimilarityMatrix,
    encoder: &dyn EncoderPort,
    spec: MaskSpec,
    i: usize,
) -> Result<QueryOutcome> {
    let j = top1(s, i)?;
    let baseline_score = s.scores.get(i, j);
    let image = &input.gallery_images[j];
    let explained = explain_pair(
        &input.query_phrases[i],
        &input.gallery[j].patches,
        input.grid,
        (image.height, image.width),
        spec,
    )?;
    let mut delta_s = Vec::with_capacity(explained.len());
    let mut scores = Vec::with_capacity(explained.len());
    for (_, mask) in &explained {
        // An empty mask leaves the image untouched, so the score is the baseline.
        let score = if mask.is_empty() {
            baseline_score
        } else {
            let perturbed = perturb(image, mask)?;
            counterfactual_similarity(input.queries.row(i), &perturbed, encoder)
                .map_err(|e| Error::Encoder(format!("query {i}, gallery {j}: {e}")))?
        };
        delta_s.push(baseline_score - score);
        scores.push(score);
    }
    let (chosen_phrase, counterfactual_score, masked_pixels) = if delta_s.is_empty() {
        (None, baseline_score, 0)
    } else {
        let m = rank1_part(&delta_s)?;
        (Some(m), scores[m], explained[m].1.count())
    };
    Ok(QueryOutcome {
        query: i,
        top1: j,
        delta_s,
        chosen_phrase,
        baseline_score,
        counterfactual_score,
        masked_pixels,
    })
}

/// Runs the full protocol for one `(α, p)` setting.
pub fn run_counterfactual(
    input: &CounterfactualInput<'_>,
    encoder: &dyn EncoderPort,
    spec: MaskSpec,
) -> Result<CounterfactualReport> {
    spec.validate()?;
    input.check()?;
    let s = similarity_matrix(
        input.queries,
        &input.gallery_matrix()?,
        input.query_ids,
        input.gallery_ids,
    )?;
    let nq = s.num_queries();
    let queries: Vec<QueryOutcome> = if encoder.concurrent() {
        (0..nq)
            .into_par_iter()
            .map(|i| process_query(input, &s, encoder, spec, i))
            .collect::<Result<_>>()?
    } else {
        (0..nq)
            .map(|i| process_query(input, &s, encoder, spec, i))
            .collect::<Result<_>>()?
    };
    let updates: Vec<Option<(usize, f64)>> = queries
        .iter()
        .map(|q| q.chosen_phrase.map(|_| (q.top1, q.counterfactual_score)))
        .collect();
    let cf = cf_matrix_update(&s, &updates)?;
    let baseline = RetrievalMetrics::evaluate(&s)?;
    let counterfactual = RetrievalMetrics::evaluate(&cf)?;
    Ok(CounterfactualReport {
        spec,
        baseline,
        counterfactual,
        drops: metric_drops(&baseline, &counterfactual),
        queries,
        baseline_matrix: s,
        counterfactual_matrix: cf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::l2norm_rows;
    use approx::assert_abs_diff_eq;

    /// 2×2 grid, one channel; the embedding of a cell is
    /// `l2norm([mean_pixel, 1])`, the global embedding the normalized mean.
    struct LinearToy;

    impl LinearToy {
        fn cells(image: &ImageTensor) -> Vec<f64> {
            let (ch, cw) = (image.height / 2, image.width / 2);
            (0..4)
                .map(|k| {
                    let (gy, gx) = (k / 2, k % 2);
                    let mut acc = 0.0;
                    for y in gy * ch..(gy + 1) * ch {
                        for x in gx * cw..(gx + 1) * cw {
                            acc += image.pixel(y, x)[0];
                        }
                    }
                    acc / (ch * cw) as f64
                })
                .collect()
        }
    }

    impl EncoderPort for LinearToy {
        fn encode_image(&self, image: &ImageTensor) -> Result<ImageEncoding> {
            let cells = Self::cells(image);
            let patches = l2norm_rows(&RealMatrix::from_fn(4, 2, |k, c| if c == 0 { cells[k] } else { 1.0 }));
            let mut g = vec![0.0; 2];
            for k in 0..4 {
                g[0] += patches.get(k, 0) / 4.0;
                g[1] += patches.get(k, 1) / 4.0;
            }
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
            Ok(ImageEncoding {
                global: vec![g[0] / n, g[1] / n],
                patches,
            })
        }

        fn encode_text(&self, _text: &str) -> Result<Vec<f64>> {
            Ok(vec![1.0, 0.0])
        }
    }

    fn toy_image(cells: [f64; 4]) -> ImageTensor {
        let mut img = ImageTensor::filled(4, 4, 1, 0.0);
        for y in 0..4 {
            for x in 0..4 {
                img.pixel_mut(y, x)[0] = cells[(y / 2) * 2 + x / 2];
            }
        }
        img
    }

    #[test]
    fn empty_mask_keeps_score_and_closed_form_drop() {
        let enc = LinearToy;
        let image = toy_image([1.0, 0.0, 0.0, 0.0]);
        let base = enc.encode_image(&image).unwrap();
        let q = [1.0, 0.0];
        let s0 = dot(&q, &base.global);
        let same = counterfactual_similarity(&q, &perturb(&image, &BinaryMask::empty(4, 4)).unwrap(), &enc).unwrap();
        assert_eq!(same, s0);
        assert_eq!(s0 - same, 0.0);

        // Zeroing cell 0 entirely: patches become [0,1] ×4, global [0,1], score 0.
        // Before: patch 0 is [1,1]/√2, others [0,1]; mean = [1/(4√2), (3 + 1/√2)/4].
        let mut mask = BinaryMask::empty(4, 4);
        for u in [0, 1, 4, 5] {
            mask.bits[u] = true;
        }
        let after = counterfactual_similarity(&q, &perturb(&image, &mask).unwrap(), &enc).unwrap();
        let r2 = 2f64.sqrt();
        let (gx, gy) = (1.0 / (4.0 * r2), (3.0 + 1.0 / r2) / 4.0);
        let expected_before = gx / (gx * gx + gy * gy).sqrt();
        assert_abs_diff_eq!(s0, expected_before, epsilon = 1e-15);
        assert_eq!(after, 0.0);
        assert_abs_diff_eq!(s0 - after, expected_before, epsilon = 1e-15);
    }

    #[test]
    fn rank1_cases() {
        assert_eq!(rank1_part(&[0.01, 0.2, 0.05]).unwrap(), 1);
        assert_eq!(rank1_part(&[-0.3]).unwrap(), 0);
        assert_eq!(rank1_part(&[0.2, 0.2]).unwrap(), 0);
        assert!(rank1_part(&[]).is_err());
    }

    #[test]
    fn matrix_update_cases() {
        let s = SimilarityMatrix::new(
            RealMatrix::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap(),
            vec![vec![true, false], vec![false, true]],
        )
        .unwrap();
        let same = cf_matrix_update(&s, &[Some((0, 0.9)), Some((1, 0.8))]).unwrap();
        assert_eq!(same, s);
        let one = cf_matrix_update(&s, &[None, Some((1, 0.05))]).unwrap();
        assert_eq!(s.diff_cells(&one), vec![(1, 1)]);
        assert!(cf_matrix_update(&s, &[None]).is_err());
        assert!(cf_matrix_update(&s, &[None, Some((5, 0.0))]).is_err());
    }

    #[test]
    fn protocol_on_toy_encoder() {
        let enc = LinearToy;
        let images = vec![
            toy_image([1.0, 0.0, 0.0, 0.0]),
            toy_image([0.0, 0.0, 0.0, 0.6]),
            toy_image([0.0, 0.5, 0.0, 0.0]),
        ];
        let gallery: Vec<ImageEncoding> = images.iter().map(|im| enc.encode_image(im).unwrap()).collect();
        let queries = RealMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let phrase = RealMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let phrases = vec![phrase.clone(), RealMatrix::zeros(0, 2)];
        let input = CounterfactualInput {
            queries: &queries,
            query_phrases: &phrases,
            query_ids: &[0, 1],
            gallery_images: &images,
            gallery: &gallery,
            gallery_ids: &[0, 1, 2],
            grid: (2, 2),
        };
        let report = run_counterfactual(&input, &enc, MaskSpec::new(0.3, 1.0).unwrap()).unwrap();
        assert_eq!(report.queries[0].top1, 0);
        assert_eq!(report.queries[0].chosen_phrase, Some(0));
        assert_eq!(report.queries[0].masked_pixels, 4);
        assert_eq!(report.queries[0].counterfactual_score, 0.0);
        assert_eq!(report.queries[1].chosen_phrase, None);
        assert_eq!(report.baseline.r1, 0.5);
        // query 0 loses its match: gallery 1 and 2 now outrank gallery 0.
        assert_eq!(report.counterfactual.r1, 0.0);
        assert_eq!(report.baseline_matrix.diff_cells(&report.counterfactual_matrix), vec![(0, 0)]);

        let null = run_counterfactual(&input, &enc, MaskSpec::new(0.3, 0.0).unwrap()).unwrap();
        assert_eq!(null.baseline_matrix, null.counterfactual_matrix);
        assert!(null.drops.iter().all(|d| d.delta == 0.0));
    }
}
