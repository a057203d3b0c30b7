use crate::diffmath::{
    l2norm_rows, l2norm_rows_backward, matmul, softmax_rows, softmax_rows_backward, RealMatrix,
};
use crate::error::{Error, Result};

use super::EmbeddingBatch;

/// `S_i = H_i Z_iᵀ` (P×K) for sample `i`.
pub fn phrase_patch_similarity(batch: &EmbeddingBatch, i: usize) -> Result<RealMatrix> {
    if i >= batch.batch_size() {
        return Err(Error::param(format!(
            "sample index {i} out of range for batch of {}",
            batch.batch_size()
        )));
    }
    matmul(&batch.phrases[i], &batch.patches[i], true)
}

/// Softmax over phrases for every patch column of `S` (P×K). Every column
/// of the result sums to one; padded slots are included.
pub fn soft_assignment(similarity: &RealMatrix, tau_part: f64) -> Result<RealMatrix> {
    Ok(softmax_rows(&similarity.transpose(), tau_part)?.transpose())
}

/// `ẑ_p = l2norm(Σ_k A[p,k] z_k)` for every phrase slot.
pub fn region_aggregate(patches: &RealMatrix, assignment: &RealMatrix) -> Result<RealMatrix> {
    Ok(l2norm_rows(&matmul(assignment, patches, false)?))
}

/// Forward intermediates of the assignment chain for one sample, kept for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct SampleForward {
    /// P×K phrase-to-patch similarity.
    pub similarity: RealMatrix,
    /// K×P, row `k` is the distribution of patch `k` over phrase slots.
    pub assignment_t: RealMatrix,
    /// P×D un-normalized pooled regions.
    pub pooled: RealMatrix,
    /// P×D unit-norm regions.
    pub regions: RealMatrix,
}

impl SampleForward {
    pub fn compute(patches: &RealMatrix, phrases: &RealMatrix, tau_part: f64) -> Result<Self> {
        let similarity = matmul(phrases, patches, true)?;
        let assignment_t = softmax_rows(&similarity.transpose(), tau_part)?;
        let pooled = matmul(&assignment_t.transpose(), patches, false)?;
        let regions = l2norm_rows(&pooled);
        Ok(Self {
            similarity,
            assignment_t,
            pooled,
            regions,
        })
    }

    /// P×K assignment `a[p, k]`.
    pub fn assignment(&self) -> RealMatrix {
        self.assignment_t.transpose()
    }

    /// Coverage `c_p = Σ_k a[p, k]` for every slot.
    pub fn coverage(&self) -> Vec<f64> {
        let p = self.assignment_t.cols();
        let mut c = vec![0.0; p];
        for k in 0..self.assignment_t.rows() {
            for (slot, v) in self.assignment_t.row(k).iter().enumerate() {
                c[slot] += v;
            }
        }
        c
    }

    /// Backpropagates `d_regions` (P×D) and a direct assignment gradient
    /// `d_assignment` (P×K) to the patches and phrases of this sample.
    pub fn backward(
        &self,
        patches: &RealMatrix,
        phrases: &RealMatrix,
        d_regions: &RealMatrix,
        d_assignment: &RealMatrix,
        tau_part: f64,
    ) -> Result<(RealMatrix, RealMatrix)> {
        let d_pooled = l2norm_rows_backward(&self.pooled, d_regions);
        // pooled = Aᵀᵀ Z, so dA = dPooled Zᵀ and dZ = Aᵀ dPooled.
        let mut d_assign = matmul(&d_pooled, patches, true)?;
        d_assign.add_scaled(d_assignment, 1.0)?;
        let mut d_patches = matmul(&self.assignment_t, &d_pooled, false)?;
        let d_sim_t = softmax_rows_backward(&self.assignment_t, &d_assign.transpose(), tau_part);
        // S = H Zᵀ: dH = dS Z, dZ += dSᵀ H.
        let d_phrases = matmul(&d_sim_t.transpose(), patches, false)?;
        d_patches.add_scaled(&matmul(&d_sim_t, phrases, false)?, 1.0)?;
        Ok((d_patches, d_phrases))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{dot, norm};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> RealMatrix {
        l2norm_rows(&RealMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)))
    }

    fn one_sample(patches: RealMatrix, phrases: RealMatrix) -> EmbeddingBatch {
        let d = patches.cols();
        let p = phrases.rows();
        let k = patches.rows();
        let mut g = RealMatrix::zeros(1, d);
        g.set(0, 0, 1.0);
        EmbeddingBatch::new(
            (1, k),
            g.clone(),
            g,
            vec![patches],
            vec![phrases],
            vec![vec![true; p]],
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn similarity_unit_and_orthogonal() {
        let patches = RealMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let phrases = RealMatrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let b = one_sample(patches, phrases);
        let s = phrase_patch_similarity(&b, 0).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.row(1), &[0.0, 0.0]);
        assert!(phrase_patch_similarity(&b, 1).is_err());
    }

    #[test]
    fn similarity_matches_per_entry_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let patches = unit_rows(6, 8, &mut rng);
        let phrases = unit_rows(3, 8, &mut rng);
        let b = one_sample(patches.clone(), phrases.clone());
        let s = phrase_patch_similarity(&b, 0).unwrap();
        for p in 0..3 {
            for k in 0..6 {
                let mut acc = 0.0;
                for d in 0..8 {
                    acc += phrases.get(p, d) * patches.get(k, d);
                }
                assert_abs_diff_eq!(s.get(p, k), acc, epsilon = 1e-12);
                assert!(s.get(p, k).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn assignment_cases() {
        let eq = RealMatrix::from_fn(4, 5, |_, _| 0.2);
        let a = soft_assignment(&eq, 0.07).unwrap();
        for &v in a.data() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
        let s = RealMatrix::from_rows(&[[1.0, 0.2], [0.0, 0.9]]).unwrap();
        let sharp = soft_assignment(&s, 1e-3).unwrap();
        assert!(sharp.get(0, 0) > 1.0 - 1e-12 && sharp.get(1, 1) > 1.0 - 1e-12);
        let col = RealMatrix::from_rows(&[[1.0], [0.0]]).unwrap();
        let a = soft_assignment(&col, 1.0).unwrap();
        assert_abs_diff_eq!(a.get(0, 0), 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(a.get(1, 0), 0.2689, epsilon = 1e-4);
        assert!(matches!(soft_assignment(&col, 0.0), Err(Error::Param(_))));
    }

    #[test]
    fn aggregate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patches = unit_rows(5, 4, &mut rng);
        let mut onehot = RealMatrix::zeros(2, 5);
        onehot.set(0, 3, 1.0);
        onehot.set(1, 1, 1.0);
        let r = region_aggregate(&patches, &onehot).unwrap();
        assert!(RealMatrix::from_rows(&[patches.row(3)]).unwrap().max_abs_diff(
            &RealMatrix::from_rows(&[r.row(0)]).unwrap()
        ) < 1e-15);

        let z = unit_rows(1, 4, &mut rng);
        let same = RealMatrix::from_fn(3, 4, |_, c| z.get(0, c));
        let uniform = RealMatrix::from_fn(2, 3, |_, _| 1.0 / 3.0);
        let r = region_aggregate(&same, &uniform).unwrap();
        for p in 0..2 {
            for c in 0..4 {
                assert_abs_diff_eq!(r.get(p, c), z.get(0, c), epsilon = 1e-15);
            }
        }

        // explicit weighted-sum-then-normalize oracle
        let a = soft_assignment(&unit_rows(3, 5, &mut rng), 0.3).unwrap();
        let r = region_aggregate(&patches, &a).unwrap();
        for p in 0..3 {
            let mut acc = vec![0.0; 4];
            for k in 0..5 {
                for d in 0..4 {
                    acc[d] += a.get(p, k) * patches.get(k, d);
                }
            }
            let n = norm(&acc);
            for d in 0..4 {
                assert_abs_diff_eq!(r.get(p, d), acc[d] / n, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_consistent_with_public_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let patches = unit_rows(6, 8, &mut rng);
        let phrases = unit_rows(3, 8, &mut rng);
        let fwd = SampleForward::compute(&patches, &phrases, 0.07).unwrap();
        let a = soft_assignment(&fwd.similarity, 0.07).unwrap();
        assert_eq!(fwd.assignment(), a);
        assert_eq!(fwd.regions, region_aggregate(&patches, &a).unwrap());
        let c: f64 = fwd.coverage().iter().sum();
        assert_abs_diff_eq!(c, 6.0, epsilon = 1e-12);
        for p in 0..3 {
            assert_abs_diff_eq!(dot(fwd.regions.row(p), fwd.regions.row(p)), 1.0, epsilon = 1e-12);
        }
    }
}
