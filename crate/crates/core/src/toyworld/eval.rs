use rayon::prelude::*;

use crate::cfeval::{
    relevance_map, run_counterfactual, CounterfactualInput, CounterfactualReport, ImageEncoding,
    ImageTensor, MaskSpec,
};
use crate::diffmath::RealMatrix;
use crate::error::{Error, Result};

use super::encoder::ToyEncoder;
use super::scene::{normalize_image, Rect, SyntheticScene};

/// Share of the map's mass inside `rect`. A map without mass counts as
/// uniform, which scores `rect_area / image_area`.
pub fn grounding_score(values: &[f64], width: usize, rect: &Rect) -> f64 {
    let height = values.len() / width.max(1);
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return rect.area() as f64 / (width * height) as f64;
    }
    let inside: f64 = values
        .iter()
        .enumerate()
        .filter(|(u, _)| rect.contains(u / width, u % width))
        .map(|(_, v)| v)
        .sum();
    inside / total
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseGrounding {
    pub scene: usize,
    pub phrase: String,
    pub score: f64,
    /// `rect_area / image_area` for the same phrase.
    pub uniform: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingReport {
    pub phrases: Vec<PhraseGrounding>,
    pub mean: f64,
    pub uniform_mean: f64,
}

/// Relevance-map mass inside each phrase's true rectangle.
pub fn eval_grounding(encoder: &ToyEncoder, scenes: &[SyntheticScene]) -> Result<GroundingReport> {
    let per_scene: Vec<Vec<PhraseGrounding>> = scenes
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            let img = &s.image;
            let enc = encoder.encode_image(&normalize_image(img))?;
            s.parts
                .iter()
                .enumerate()
                .map(|(m, part)| {
                    let h = encoder.encode_phrase(&part.phrase)?;
                    let map = relevance_map(m, &h, &enc.patches, encoder.grid, (img.height, img.width))?;
                    Ok(PhraseGrounding {
                        scene: n,
                        phrase: part.phrase.clone(),
                        score: grounding_score(&map.values, img.width, &part.rect),
                        uniform: part.rect.area() as f64 / (img.height * img.width) as f64,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let phrases: Vec<PhraseGrounding> = per_scene.into_iter().flatten().collect();
    if phrases.is_empty() {
        return Err(Error::data("no phrases to ground"));
    }
    let n = phrases.len() as f64;
    Ok(GroundingReport {
        mean: phrases.iter().map(|p| p.score).sum::<f64>() / n,
        uniform_mean: phrases.iter().map(|p| p.uniform).sum::<f64>() / n,
        phrases,
    })
}

/// Owned query and gallery embeddings for repeated counterfactual runs.
///
/// Every scene contributes its caption as a query and its image as a
/// gallery item; relevance is identity equality.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub queries: RealMatrix,
    pub query_phrases: Vec<RealMatrix>,
    pub query_ids: Vec<i32>,
    pub gallery_images: Vec<ImageTensor>,
    pub gallery: Vec<ImageEncoding>,
    pub gallery_ids: Vec<i32>,
    pub grid: (usize, usize),
}

impl EvalSet {
    pub fn build(encoder: &ToyEncoder, scenes: &[SyntheticScene], phrase_slots: usize) -> Result<Self> {
        let d = encoder.dim();
        let gallery_images: Vec<ImageTensor> = scenes.iter().map(|s| normalize_image(&s.image)).collect();
        let gallery = gallery_images
            .iter()
            .map(|im| encoder.encode_image(im))
            .collect::<Result<Vec<_>>>()?;
        let mut queries = RealMatrix::zeros(scenes.len(), d);
        let mut query_phrases = Vec::with_capacity(scenes.len());
        for (i, s) in scenes.iter().enumerate() {
            queries.row_mut(i).copy_from_slice(&encoder.encode_phrase(&s.caption)?);
            let mut phrases = s.phrases();
            phrases.truncate(phrase_slots);
            let mut h = RealMatrix::zeros(phrases.len(), d);
            for (p, text) in phrases.iter().enumerate() {
                h.row_mut(p).copy_from_slice(&encoder.encode_phrase(text)?);
            }
            query_phrases.push(h);
        }
        let ids: Vec<i32> = scenes.iter().map(|s| s.identity).collect();
        Ok(Self {
            queries,
            query_phrases,
            query_ids: ids.clone(),
            gallery_images,
            gallery,
            gallery_ids: ids,
            grid: encoder.grid,
        })
    }

    pub fn input(&self) -> CounterfactualInput<'_> {
        CounterfactualInput {
            queries: &self.queries,
            query_phrases: &self.query_phrases,
            query_ids: &self.query_ids,
            gallery_images: &self.gallery_images,
            gallery: &self.gallery,
            gallery_ids: &self.gallery_ids,
            grid: self.grid,
        }
    }

    pub fn run(&self, encoder: &ToyEncoder, spec: MaskSpec) -> Result<CounterfactualReport> {
        run_counterfactual(&self.input(), encoder, spec)
    }
}
