use crate::diffmath::{dot, RealMatrix};
use crate::error::{Error, Result};

use super::ImageTensor;

/// Phrase-conditioned relevance over the pixels of one gallery image,
/// min-max normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub phrase: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` values.
    pub values: Vec<f64>,
    pub grid: (usize, usize),
    /// Set when all patch scores were equal and the map was zeroed.
    pub degenerate: bool,
}

impl RelevanceMap {
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn num_pixels(&self) -> usize {
        self.values.len()
    }
}

/// Per-patch scores `⟨h, z_k⟩`, min-max normalized, then replicated to
/// pixel resolution by nearest-neighbor lookup.
pub fn relevance_map(
    phrase_id: usize,
    phrase: &[f64],
    patches: &RealMatrix,
    grid: (usize, usize),
    image_size: (usize, usize),
) -> Result<RelevanceMap> {
    let (gh, gw) = grid;
    let (height, width) = image_size;
    if gh * gw != patches.rows() {
        return Err(Error::shape(format!(
            "grid {gh}x{gw} does not match {} patches",
            patches.rows()
        )));
    }
    if phrase.len() != patches.cols() {
        return Err(Error::shape("phrase and patch dimensions differ"));
    }
    if height == 0 || width == 0 || gh == 0 || gw == 0 {
        return Err(Error::param("empty image or grid"));
    }
    let scores: Vec<f64> = (0..patches.rows()).map(|k| dot(phrase, patches.row(k))).collect();
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let degenerate = hi <= lo;
    let normalized: Vec<f64> = if degenerate {
        vec![0.0; scores.len()]
    } else {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    };
    let mut values = Vec::with_capacity(height * width);
    for y in 0..height {
        let cy = y * gh / height;
        for x in 0..width {
            let cx = x * gw / width;
            values.push(normalized[cy * gw + cx]);
        }
    }
    Ok(RelevanceMap {
        phrase: phrase_id,
        height,
        width,
        values,
        grid,
        degenerate,
    })
}

/// The `(α, p)` pair of the two-stage mask.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskSpec {
    /// Region threshold on the normalized relevance.
    pub alpha: f64,
    /// Fraction of the region removed, highest relevance first.
    pub p: f64,
}

impl MaskSpec {
    pub fn new(alpha: f64, p: f64) -> Result<Self> {
        let spec = Self { alpha, p };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("alpha", self.alpha)?;
        check_unit("p", self.p)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Pixels with relevance `≥ α`, as ascending row-major indices.
///
/// `α = 1` selects nothing, even pixels whose relevance is exactly one.
pub fn threshold_region(map: &RelevanceMap, alpha: f64) -> Result<Vec<usize>> {
    check_unit("alpha", alpha)?;
    if alpha >= 1.0 {
        return Ok(Vec::new());
    }
    Ok(map
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= alpha)
        .map(|(u, _)| u)
        .collect())
}

/// `⌈p · n⌉`, treating products within 1e-9 (relative) of an integer as
/// that integer so that e.g. `0.1 · 30` yields 3.
pub(crate) fn ceil_fraction(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let r = x.round();
    let count = if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (count as usize).min(n)
}

/// H×W binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// The `⌈p·|region|⌉` most relevant pixels of `region`. Ties are broken by
/// row-major order.
pub fn topp_mask(region: &[usize], map: &RelevanceMap, p: f64) -> Result<BinaryMask> {
    check_unit("p", p)?;
    let mut mask = BinaryMask::empty(map.height, map.width);
    let count = ceil_fraction(p, region.len());
    if count == 0 {
        return Ok(mask);
    }
    if let Some(&bad) = region.iter().find(|&&u| u >= map.num_pixels()) {
        return Err(Error::param(format!("pixel {bad} outside the map")));
    }
    let mut order = region.to_vec();
    order.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    for &u in &order[..count] {
        mask.bits[u] = true;
    }
    Ok(mask)
}

/// Zeroes every channel of the masked pixels; other pixels are copied as is.
pub fn perturb(image: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    if (image.height, image.width) != (mask.height, mask.width) {
        return Err(Error::shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height, mask.width, image.height, image.width
        )));
    }
    let mut out = image.clone();
    let c = image.channels;
    for (u, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        out.data[u * c..(u + 1) * c].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(out)
}
