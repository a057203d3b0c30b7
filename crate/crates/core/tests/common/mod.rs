//! Helpers shared by the integration tests.
#![allow(dead_code)]

use partlens::cfeval::SimilarityMatrix;
use partlens::diffmath::{l2norm_rows, RealMatrix};
use partlens::ppim::EmbeddingBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit(rows: usize, cols: usize, rng: &mut impl Rng) -> RealMatrix {
    l2norm_rows(&RealMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)))
}

/// Random unit-norm batch with identities in `0..3` and a random number of
/// valid phrase slots per sample; padded phrase rows are zero.
pub fn random_batch(seed: u64, b: usize, grid: (usize, usize), p: usize, d: usize) -> EmbeddingBatch {
    let k = grid.0 * grid.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identities: Vec<i32> = (0..b).map(|_| rng.gen_range(0..3)).collect();
    let mask: Vec<Vec<bool>> = (0..b)
        .map(|_| {
            let n = rng.gen_range(1..=p);
            (0..p).map(|s| s < n).collect()
        })
        .collect();
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
        grid,
        unit(b, d, &mut rng),
        unit(b, d, &mut rng),
        (0..b).map(|_| unit(k, d, &mut rng)).collect(),
        phrases,
        mask,
        identities,
    )
    .unwrap()
}

/// Random similarity matrix up to 5×7 with coarse scores (so ties occur)
/// and random relevance labels.
pub fn random_similarity(rng: &mut impl Rng) -> SimilarityMatrix {
    let q = rng.gen_range(1..=5);
    let g = rng.gen_range(1..=7);
    let levels = rng.gen_range(2..=6);
    let scores = RealMatrix::from_fn(q, g, |_, _| rng.gen_range(0..levels) as f64 / levels as f64);
    let relevant = (0..q).map(|_| (0..g).map(|_| rng.gen_bool(0.35)).collect()).collect();
    SimilarityMatrix::new(scores, relevant).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut v = rest.clone();
            v.insert(pos, n - 1);
            out.push(v);
        }
    }
    out
}

/// The unique gallery order that is non-increasing in score with ties in
/// ascending index, found by testing every permutation.
pub fn brute_force_order(row: &[f64]) -> Vec<usize> {
    let mut found = permutations(row.len()).into_iter().filter(|perm| {
        perm.windows(2)
            .all(|w| row[w[0]] > row[w[1]] || (row[w[0]] == row[w[1]] && w[0] < w[1]))
    });
    let order = found.next().expect("some order is consistent");
    assert!(found.next().is_none(), "tie rule must make the order unique");
    order
}

/// R@1, R@5, R@10, mAP and mINP computed from first principles. Queries
/// without a relevant item are excluded; `None` when none remain.
pub fn oracle_metrics(s: &SimilarityMatrix) -> Option<[f64; 5]> {
    let mut sums = [0.0; 5];
    let mut admitted = 0usize;
    for i in 0..s.num_queries() {
        let order = brute_force_order(s.scores.row(i));
        let rel: Vec<bool> = order.iter().map(|&j| s.relevant[i][j]).collect();
        let n_rel = rel.iter().filter(|&&r| r).count();
        if n_rel == 0 {
            continue;
        }
        admitted += 1;
        for (slot, k) in [1usize, 5, 10].iter().enumerate() {
            if rel.iter().take(*k).any(|&r| r) {
                sums[slot] += 1.0;
            }
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        let mut last = 0usize;
        for (pos, &r) in rel.iter().enumerate() {
            if r {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
                last = pos + 1;
            }
        }
        sums[3] += ap / n_rel as f64;
        sums[4] += n_rel as f64 / last as f64;
    }
    (admitted > 0).then(|| sums.map(|v| v / admitted as f64))
}
