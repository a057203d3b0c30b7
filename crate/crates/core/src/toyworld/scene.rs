use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cfeval::ImageTensor;
use crate::error::{Error, Result};
use crate::iocli::{PhraseAnnotation, ANNOTATION_SCHEMA};

/// Axis-aligned rectangle in pixel coordinates, `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// Annotation group a part is filed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartGroup {
    UpperBody,
    LowerBody,
    Footwear,
    Others,
    HairHead,
}

struct PartKind {
    noun: &'static str,
    /// Caption wording, never used in phrases.
    caption_nouns: [&'static str; 2],
    group: PartGroup,
    /// Base box as fractions of the image: (top, left, bottom, right).
    frame: (f64, f64, f64, f64),
}

// Listed in annotation flattening order. Frames are (top, left, bottom,
// right) fractions on a 4×4 layout: shirt and pants span full rows, shoes
// and bag share the bottom row, hair sits in the top centre. They never
// overlap.
const PARTS: [PartKind; 5] = [
    PartKind { noun: "shirt", caption_nouns: ["top", "blouse"], group: PartGroup::UpperBody, frame: (0.25, 0.00, 0.50, 1.00) },
    PartKind { noun: "pants", caption_nouns: ["trousers", "jeans"], group: PartGroup::LowerBody, frame: (0.50, 0.00, 0.75, 1.00) },
    PartKind { noun: "shoes", caption_nouns: ["sneakers", "boots"], group: PartGroup::Footwear, frame: (0.75, 0.00, 1.00, 0.50) },
    PartKind { noun: "bag", caption_nouns: ["handbag", "satchel"], group: PartGroup::Others, frame: (0.75, 0.50, 1.00, 1.00) },
    PartKind { noun: "hair", caption_nouns: ["hairdo", "haircut"], group: PartGroup::HairHead, frame: (0.00, 0.25, 0.25, 0.75) },
];

/// A colour of the closed vocabulary.
pub struct Color {
    /// Phrase word.
    pub name: &'static str,
    /// Caption wording, never used in phrases.
    pub caption_names: [&'static str; 2],
    /// RGB in `[0, 1]`.
    pub rgb: [f64; 3],
}

const fn color(name: &'static str, caption_names: [&'static str; 2], rgb: [f64; 3]) -> Color {
    Color { name, caption_names, rgb }
}

pub const COLORS: [Color; 10] = [
    color("red", ["crimson", "scarlet"], [0.90, 0.10, 0.10]),
    color("green", ["emerald", "lime"], [0.10, 0.75, 0.20]),
    color("blue", ["navy", "azure"], [0.10, 0.20, 0.90]),
    color("yellow", ["golden", "lemon"], [0.95, 0.90, 0.10]),
    color("cyan", ["teal", "aqua"], [0.10, 0.85, 0.90]),
    color("magenta", ["fuchsia", "pinkish"], [0.85, 0.10, 0.80]),
    color("orange", ["tangerine", "amber"], [1.00, 0.55, 0.05]),
    color("purple", ["violet", "lilac"], [0.45, 0.10, 0.60]),
    color("white", ["ivory", "snowy"], [0.97, 0.97, 0.97]),
    color("black", ["dark", "jet"], [0.03, 0.03, 0.03]),
];

const BACKGROUND: f64 = 0.5;
const TINT: f64 = 0.08;
const BACKGROUND_NOISE: f64 = 0.05;
const PART_NOISE: f64 = 0.03;

/// One coloured part drawn in a scene.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenePart {
    pub phrase: String,
    pub group: PartGroup,
    pub rect: Rect,
    pub color: [f64; 3],
}

/// Rendered scene with its ground-truth part layout.
///
/// The caption describes the same parts as the phrases but in its own
/// wording, drawn per scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// H×W×3, values in `[0, 1]`.
    pub image: ImageTensor,
    pub caption: String,
    pub parts: Vec<ScenePart>,
    pub identity: i32,
    pub noise_seed: u64,
}

impl SyntheticScene {
    pub fn phrases(&self) -> Vec<String> {
        self.parts.iter().map(|p| p.phrase.clone()).collect()
    }

    pub fn annotation(&self) -> PhraseAnnotation {
        let mut ann = PhraseAnnotation {
            schema: vec![ANNOTATION_SCHEMA.to_string()],
            ..Default::default()
        };
        ann.accessories.backpack.push("none".to_string());
        for part in &self.parts {
            let list = match part.group {
                PartGroup::UpperBody => &mut ann.clothing.upper_body,
                PartGroup::LowerBody => &mut ann.clothing.lower_body,
                PartGroup::Footwear => &mut ann.clothing.footwear,
                PartGroup::Others => &mut ann.accessories.others,
                PartGroup::HairHead => &mut ann.hair_head,
            };
            list.push(part.phrase.clone());
        }
        ann
    }
}

/// Maps `[0, 1]` pixels to the encoder's input space `(x − 0.5) / 0.5`, in
/// which zero is mid-gray.
pub fn normalize_image(image: &ImageTensor) -> ImageTensor {
    ImageTensor {
        data: image.data.iter().map(|v| (v - 0.5) / 0.5).collect(),
        ..image.clone()
    }
}

/// Generated scenes with their annotation documents.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub grid: (usize, usize),
    pub image_size: (usize, usize),
    pub scenes: Vec<SyntheticScene>,
    pub annotations: Vec<PhraseAnnotation>,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn num_identities(&self) -> usize {
        self.scenes.iter().map(|s| s.identity).collect::<HashSet<_>>().len()
    }
}

/// (part index, colour index) pairs, sorted by part.
type Palette = Vec<(usize, usize)>;

fn draw_palette(rng: &mut ChaCha8Rng) -> Palette {
    let n = rng.gen_range(2..=4);
    let mut parts: Vec<usize> = (0..PARTS.len()).collect();
    parts.shuffle(rng);
    parts.truncate(n);
    parts.sort_unstable();
    let mut colors: Vec<usize> = (0..COLORS.len()).collect();
    colors.shuffle(rng);
    parts.into_iter().zip(colors).collect()
}

fn frame_rect(frame: (f64, f64, f64, f64), h: usize, w: usize) -> Rect {
    let (t, l, b, r) = frame;
    let y0 = ((t * h as f64).round() as usize).min(h - 1);
    let x0 = ((l * w as f64).round() as usize).min(w - 1);
    let y1 = ((b * h as f64).round() as usize).clamp(y0 + 1, h);
    let x1 = ((r * w as f64).round() as usize).clamp(x0 + 1, w);
    Rect { y0, x0, y1, x1 }
}

/// Shrinks each edge inward by a random amount, keeping at least one pixel.
fn jitter(rect: Rect, max_shift: usize, rng: &mut ChaCha8Rng) -> Rect {
    let mut r = rect;
    let mut shrink = |lo: &mut usize, hi: &mut usize| {
        let room = (*hi - *lo).saturating_sub(1);
        let a = rng.gen_range(0..=max_shift.min(room / 2));
        let b = rng.gen_range(0..=max_shift.min(room - room / 2));
        *lo += a;
        *hi -= b;
    };
    shrink(&mut r.y0, &mut r.y1);
    shrink(&mut r.x0, &mut r.x1);
    r
}

fn render(
    palette: &Palette,
    identity: i32,
    size: (usize, usize),
    noise_seed: u64,
) -> SyntheticScene {
    let (h, w) = size;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let max_shift = (h.min(w) / 16).max(1);
    let parts: Vec<ScenePart> = palette
        .iter()
        .map(|&(pi, ci)| {
            let kind = &PARTS[pi];
            let c = &COLORS[ci];
            ScenePart {
                phrase: format!("{} {}", c.name, kind.noun),
                group: kind.group,
                rect: jitter(frame_rect(kind.frame, h, w), max_shift, &mut rng),
                color: c.rgb,
            }
        })
        .collect();
    let described: Vec<String> = palette
        .iter()
        .map(|&(pi, ci)| {
            let adj = COLORS[ci].caption_names[rng.gen_range(0..2)];
            let noun = PARTS[pi].caption_nouns[rng.gen_range(0..2)];
            format!("{adj} {noun}")
        })
        .collect();
    let caption = format!("a person with {}", described.join(", "));
    let tint: Vec<f64> = (0..3).map(|_| rng.gen_range(-TINT..=TINT)).collect();
    let mut image = ImageTensor::filled(h, w, 3, 0.0);
    for y in 0..h {
        for x in 0..w {
            let part = parts.iter().find(|p| p.rect.contains(y, x));
            let px = image.pixel_mut(y, x);
            for c in 0..3 {
                let v = match part {
                    Some(p) => p.color[c] + rng.gen_range(-PART_NOISE..=PART_NOISE),
                    None => BACKGROUND + tint[c] + rng.gen_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE),
                };
                px[c] = v.clamp(0.0, 1.0);
            }
        }
    }
    SyntheticScene {
        image,
        caption,
        parts,
        identity,
        noise_seed,
    }
}

/// Generates `num_identities × samples_per_identity` scenes. Each identity
/// owns a distinct palette of 2–4 coloured parts; its samples differ in
/// part jitter, background tint and pixel noise.
pub fn gen_dataset(
    num_identities: usize,
    samples_per_identity: usize,
    grid: (usize, usize),
    image_size: (usize, usize),
    seed: u64,
) -> Result<ToyDataset> {
    if num_identities == 0 || samples_per_identity == 0 {
        return Err(Error::param("identity and sample counts must be at least 1"));
    }
    let (h, w) = image_size;
    if grid.0 == 0 || grid.1 == 0 || h < grid.0 || w < grid.1 {
        return Err(Error::param(format!(
            "image {h}x{w} is smaller than the {}x{} grid",
            grid.0, grid.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut palettes = Vec::with_capacity(num_identities);
    while palettes.len() < num_identities {
        let palette = draw_palette(&mut rng);
        if seen.insert(palette.clone()) {
            palettes.push(palette);
        }
    }
    let jobs: Vec<(usize, u64)> = (0..num_identities * samples_per_identity)
        .map(|n| (n / samples_per_identity, rng.gen()))
        .collect();
    let scenes: Vec<SyntheticScene> = jobs
        .par_iter()
        .map(|&(id, noise)| render(&palettes[id], id as i32, image_size, noise))
        .collect();
    let annotations = scenes.iter().map(SyntheticScene::annotation).collect();
    Ok(ToyDataset {
        grid,
        image_size,
        scenes,
        annotations,
    })
}
