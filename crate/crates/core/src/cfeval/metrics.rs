use std::fmt;

use log::warn;

use crate::error::{Error, Result};

use super::SimilarityMatrix;

/// Gallery indices of row `i` by descending score, ties by lowest index.
pub fn ranking(s: &SimilarityMatrix, i: usize) -> Vec<usize> {
    let row = s.scores.row(i);
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

/// 1-based ranks of the relevant items of query `i`, ascending. `None` for
/// queries without any relevant item.
fn relevant_ranks(s: &SimilarityMatrix, i: usize) -> Option<Vec<usize>> {
    let ranks: Vec<usize> = ranking(s, i)
        .into_iter()
        .enumerate()
        .filter(|&(_, j)| s.relevant[i][j])
        .map(|(pos, _)| pos + 1)
        .collect();
    (!ranks.is_empty()).then_some(ranks)
}

fn admitted_ranks(s: &SimilarityMatrix) -> Result<Vec<Vec<usize>>> {
    let all: Vec<Option<Vec<usize>>> = (0..s.num_queries()).map(|i| relevant_ranks(s, i)).collect();
    let excluded = all.iter().filter(|r| r.is_none()).count();
    if excluded > 0 {
        warn!("{excluded} quer(ies) without a relevant gallery item excluded from metrics");
    }
    let admitted: Vec<Vec<usize>> = all.into_iter().flatten().collect();
    if admitted.is_empty() {
        return Err(Error::data("no query has a relevant gallery item"));
    }
    Ok(admitted)
}

/// Fraction of admitted queries with a relevant item in the top `k`.
pub fn recall_at_k(s: &SimilarityMatrix, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let ranks = admitted_ranks(s)?;
    let hits = ranks.iter().filter(|r| r[0] <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean over admitted queries of the average precision at the ranks of the
/// relevant items.
pub fn mean_ap(s: &SimilarityMatrix) -> Result<f64> {
    let ranks = admitted_ranks(s)?;
    let total: f64 = ranks
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(n, &rank)| (n + 1) as f64 / rank as f64)
                .sum::<f64>()
                / r.len() as f64
        })
        .sum();
    Ok(total / ranks.len() as f64)
}

/// Mean inverse negative penalty: `|Pos_i| / R_hardest` averaged over
/// admitted queries, with `R_hardest` the rank of the last relevant item.
pub fn minp(s: &SimilarityMatrix) -> Result<f64> {
    let ranks = admitted_ranks(s)?;
    let total: f64 = ranks
        .iter()
        .map(|r| {
            let hardest = *r.last().expect("non-empty") as f64;
            let np = (hardest - r.len() as f64) / hardest;
            1.0 - np
        })
        .sum();
    Ok(total / ranks.len() as f64)
}

/// The reported retrieval metrics, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    R1,
    R5,
    R10,
    MeanAp,
    MeanInp,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::R1, Metric::R5, Metric::R10, Metric::MeanAp, Metric::MeanInp];

    pub fn name(self) -> &'static str {
        match self {
            Metric::R1 => "R@1",
            Metric::R5 => "R@5",
            Metric::R10 => "R@10",
            Metric::MeanAp => "mAP",
            Metric::MeanInp => "mINP",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub map: f64,
    pub minp: f64,
}

impl RetrievalMetrics {
    pub fn evaluate(s: &SimilarityMatrix) -> Result<Self> {
        Ok(Self {
            r1: recall_at_k(s, 1)?,
            r5: recall_at_k(s, 5)?,
            r10: recall_at_k(s, 10)?,
            map: mean_ap(s)?,
            minp: minp(s)?,
        })
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::R1 => self.r1,
            Metric::R5 => self.r5,
            Metric::R10 => self.r10,
            Metric::MeanAp => self.map,
            Metric::MeanInp => self.minp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDrop {
    pub metric: Metric,
    pub baseline: f64,
    pub counterfactual: f64,
    /// `M(S) − M(S^cf)`.
    pub delta: f64,
    /// `100 · ΔM / M(S)`; `None` when the baseline is zero.
    pub delta_pct: Option<f64>,
}

/// Absolute and relative drop of every metric.
pub fn metric_drops(baseline: &RetrievalMetrics, counterfactual: &RetrievalMetrics) -> Vec<MetricDrop> {
    Metric::ALL
        .iter()
        .map(|&m| {
            let b = baseline.get(m);
            let c = counterfactual.get(m);
            let delta = b - c;
            MetricDrop {
                metric: m,
                baseline: b,
                counterfactual: c,
                delta,
                delta_pct: (b != 0.0).then(|| 100.0 * delta / b),
            }
        })
        .collect()
}
