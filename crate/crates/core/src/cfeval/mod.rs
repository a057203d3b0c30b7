//! Counterfactual region-removal evaluation.
//!
//! For every text query the top-ranked gallery image is explained phrase
//! by phrase: a relevance map is built from phrase-to-patch similarities,
//! a two-stage `(α, p)` mask removes the most relevant pixels, the image is
//! re-encoded, and the phrase whose removal costs the most similarity is
//! kept. Only the attacked `(query, top-1)` cell of the similarity matrix
//! is replaced, and retrieval metrics are compared before and after.

mod mask;
mod metrics;
mod protocol;

pub use mask::{
    perturb, relevance_map, threshold_region, topp_mask, BinaryMask, MaskSpec, RelevanceMap,
};
pub use metrics::{
    mean_ap, metric_drops, minp, ranking, recall_at_k, Metric, MetricDrop, RetrievalMetrics,
};
pub use protocol::{
    cf_matrix_update, counterfactual_similarity, explain_pair, rank1_part, run_counterfactual,
    CounterfactualInput, CounterfactualReport, EncoderPort, ImageEncoding, QueryOutcome,
};

use crate::diffmath::{matmul, RealMatrix};
use crate::error::{Error, Result};

/// H×W×C image, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }
}

/// Query-by-gallery similarity scores with binary relevance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: RealMatrix,
    /// `relevant[i][j]`: gallery item `j` shares the identity of query `i`.
    pub relevant: Vec<Vec<bool>>,
}

impl SimilarityMatrix {
    pub fn new(scores: RealMatrix, relevant: Vec<Vec<bool>>) -> Result<Self> {
        if relevant.len() != scores.rows() || relevant.iter().any(|r| r.len() != scores.cols()) {
            return Err(Error::shape("relevance labels must match the score matrix"));
        }
        Ok(Self { scores, relevant })
    }

    pub fn num_queries(&self) -> usize {
        self.scores.rows()
    }

    pub fn num_gallery(&self) -> usize {
        self.scores.cols()
    }

    /// Cells where the two matrices differ (bitwise), in row-major order.
    pub fn diff_cells(&self, other: &SimilarityMatrix) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for i in 0..self.num_queries() {
            for j in 0..self.num_gallery() {
                if self.scores.get(i, j).to_bits() != other.scores.get(i, j).to_bits() {
                    cells.push((i, j));
                }
            }
        }
        cells
    }
}

/// `S_ij = ⟨q_i, g_j⟩`; relevance is identity equality.
pub fn similarity_matrix(
    queries: &RealMatrix,
    gallery: &RealMatrix,
    query_ids: &[i32],
    gallery_ids: &[i32],
) -> Result<SimilarityMatrix> {
    if query_ids.len() != queries.rows() || gallery_ids.len() != gallery.rows() {
        return Err(Error::shape("one identity per query and per gallery item required"));
    }
    let scores = matmul(queries, gallery, true)?;
    let relevant = query_ids
        .iter()
        .map(|q| gallery_ids.iter().map(|g| g == q).collect())
        .collect();
    SimilarityMatrix::new(scores, relevant)
}

/// Index of the highest score in row `i`; ties go to the lowest index.
pub fn top1(s: &SimilarityMatrix, i: usize) -> Result<usize> {
    if s.num_gallery() == 0 {
        return Err(Error::param("empty gallery"));
    }
    if i >= s.num_queries() {
        return Err(Error::param(format!("query {i} out of range")));
    }
    Ok(argmax_first(s.scores.row(i)))
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}
