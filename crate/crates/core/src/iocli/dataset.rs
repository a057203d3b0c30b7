//! Dataset directories and trained parameter files.
//!
//! A dataset directory holds `images.bin` (`IPAIMG 1`, pixels in `[0, 1]`),
//! `scenes.json` (layout, captions and identities) and `annotations.jsonl`
//! (one phrase annotation per scene, in scene order).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfeval::ImageTensor;
use crate::diffmath::RealMatrix;
use crate::error::{Error, Result};
use crate::toyworld::{ScenePart, SyntheticScene, ToyDataset, ToyEncoder};

use super::annotation::{parse_annotation_documents, PhraseAnnotation};
use super::binfmt::{check_payload, header, parse_header, push_reals, read_file, write_file, WordReader};

pub const IMAGES_MAGIC: &str = "IPAIMG 1";
pub const PARAMS_MAGIC: &str = "IPAPAR 1";
pub const IMAGES_FILE: &str = "images.bin";
pub const SCENES_FILE: &str = "scenes.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

pub fn encode_images(images: &[ImageTensor]) -> Result<Vec<u8>> {
    let first = images.first().ok_or_else(|| Error::data("no images to write"))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    if images.iter().any(|im| (im.height, im.width, im.channels) != (h, w, c)) {
        return Err(Error::shape("images must share one size"));
    }
    if images.iter().any(|im| im.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::data("image holds non-finite values"));
    }
    let mut out = header(IMAGES_MAGIC, &[("N", images.len()), ("H", h), ("W", w), ("C", c)]);
    for im in images {
        push_reals(&mut out, &im.data);
    }
    Ok(out)
}

pub fn decode_images(bytes: &[u8]) -> Result<Vec<ImageTensor>> {
    let (v, start) = parse_header(bytes, IMAGES_MAGIC, &["N", "H", "W", "C"])?;
    let (n, h, w, c) = (v[0], v[1], v[2], v[3]);
    let per = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| Error::format(start as u64, "image size overflows"))?;
    check_payload(bytes, start, per.checked_mul(n).ok_or_else(|| Error::format(start as u64, "size overflows"))?)?;
    let mut r = WordReader::new(bytes, start);
    (0..n).map(|_| ImageTensor::new(h, w, c, r.reals(per)?)).collect()
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    identity: i32,
    noise_seed: u64,
    caption: String,
    parts: Vec<ScenePart>,
}

#[derive(Serialize, Deserialize)]
struct SceneIndex {
    grid: (usize, usize),
    image_size: (usize, usize),
    scenes: Vec<SceneRecord>,
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::data(format!("{}: {e}", path.display()))
}

/// Writes the three dataset files into `dir`, creating it when missing.
pub fn save_dataset(dataset: &ToyDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images: Vec<ImageTensor> = dataset.scenes.iter().map(|s| s.image.clone()).collect();
    write_file(&dir.join(IMAGES_FILE), &encode_images(&images)?)?;
    let index = SceneIndex {
        grid: dataset.grid,
        image_size: dataset.image_size,
        scenes: dataset
            .scenes
            .iter()
            .map(|s| SceneRecord {
                identity: s.identity,
                noise_seed: s.noise_seed,
                caption: s.caption.clone(),
                parts: s.parts.clone(),
            })
            .collect(),
    };
    let path = dir.join(SCENES_FILE);
    let mut json = serde_json::to_string_pretty(&index).map_err(|e| json_err(&path, e))?;
    json.push('\n');
    write_file(&path, json.as_bytes())?;
    let path = dir.join(ANNOTATIONS_FILE);
    let mut lines = String::new();
    for ann in &dataset.annotations {
        lines.push_str(&serde_json::to_string(ann).map_err(|e| json_err(&path, e))?);
        lines.push('\n');
    }
    write_file(&path, lines.as_bytes())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<ToyDataset> {
    let dir = dir.as_ref();
    let images = decode_images(&read_file(&dir.join(IMAGES_FILE))?)?;
    let path = dir.join(SCENES_FILE);
    let index: SceneIndex = serde_json::from_slice(&read_file(&path)?).map_err(|e| json_err(&path, e))?;
    if index.scenes.len() != images.len() {
        return Err(Error::data(format!(
            "{} scenes but {} images",
            index.scenes.len(),
            images.len()
        )));
    }
    let path = dir.join(ANNOTATIONS_FILE);
    let text = String::from_utf8(read_file(&path)?).map_err(|_| Error::data(format!("{} is not UTF-8", path.display())))?;
    let annotations = parse_annotation_documents(&text)?
        .into_iter()
        .map(|v| serde_json::from_value::<PhraseAnnotation>(v).map_err(|e| json_err(&path, e)))
        .collect::<Result<Vec<_>>>()?;
    if annotations.len() != images.len() {
        return Err(Error::data(format!(
            "{} annotations but {} images",
            annotations.len(),
            images.len()
        )));
    }
    let scenes = index
        .scenes
        .into_iter()
        .zip(images)
        .map(|(r, image)| SyntheticScene {
            image,
            caption: r.caption,
            parts: r.parts,
            identity: r.identity,
            noise_seed: r.noise_seed,
        })
        .collect();
    Ok(ToyDataset {
        grid: index.grid,
        image_size: index.image_size,
        scenes,
        annotations,
    })
}

pub fn encode_params(encoder: &ToyEncoder) -> Result<Vec<u8>> {
    encoder.validate()?;
    let (f, d) = encoder.image_proj.shape();
    let (gh, gw) = encoder.grid;
    let mut out = header(
        PARAMS_MAGIC,
        &[("GH", gh), ("GW", gw), ("F", f), ("HASH", encoder.hash_dim()), ("D", d)],
    );
    push_reals(&mut out, encoder.image_proj.data());
    push_reals(&mut out, encoder.text_proj.data());
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<ToyEncoder> {
    let (v, start) = parse_header(bytes, PARAMS_MAGIC, &["GH", "GW", "F", "HASH", "D"])?;
    let (gh, gw, f, hash, d) = (v[0], v[1], v[2], v[3], v[4]);
    let words = f
        .checked_add(hash)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::format(start as u64, "size overflows"))?;
    check_payload(bytes, start, words)?;
    let mut r = WordReader::new(bytes, start);
    let image_proj = RealMatrix::new(f, d, r.reals(f * d)?)?;
    let text_proj = RealMatrix::new(hash, d, r.reals(hash * d)?)?;
    ToyEncoder::from_parts((gh, gw), image_proj, text_proj)
        .map_err(|e| Error::format(0, format!("inconsistent parameter header: {e}")))
}

pub fn save_params(encoder: &ToyEncoder, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_params(encoder)?)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ToyEncoder> {
    decode_params(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::gen_dataset;

    #[test]
    fn dataset_round_trip() {
        let d = gen_dataset(3, 2, (2, 2), (8, 8), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.grid, d.grid);
        assert_eq!(back.annotations, d.annotations);
        for (a, b) in back.scenes.iter().zip(&d.scenes) {
            assert_eq!((a.identity, &a.caption, &a.parts), (b.identity, &b.caption, &b.parts));
            assert!(a.image.data.iter().zip(&b.image.data).all(|(x, y)| (x - y).abs() < 1e-7));
        }
        // A second save of the loaded set is byte-identical.
        let again = tempfile::tempdir().unwrap();
        save_dataset(&back, again.path()).unwrap();
        for f in [IMAGES_FILE, SCENES_FILE, ANNOTATIONS_FILE] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(load_dataset(again.path()).unwrap(), back);
    }

    #[test]
    fn mismatched_files_rejected() {
        let d = gen_dataset(2, 2, (2, 2), (8, 8), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let path = dir.path().join(ANNOTATIONS_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.lines().next().unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
        let bytes = std::fs::read(dir.path().join(IMAGES_FILE)).unwrap();
        assert!(matches!(
            decode_images(&bytes[..bytes.len() - 2]),
            Err(Error::Format { offset, .. }) if offset == bytes.len() as u64 - 2
        ));
    }

    #[test]
    fn params_round_trip() {
        let enc = ToyEncoder::init((2, 3), 3, 16, 4, 9).unwrap();
        let bytes = encode_params(&enc).unwrap();
        let back = decode_params(&bytes).unwrap();
        assert_eq!(encode_params(&back).unwrap(), bytes);
        assert!(back.image_proj.max_abs_diff(&enc.image_proj) < 1e-6);
        assert_eq!(back.grid, (2, 3));
        let mut bad = bytes.clone();
        bad[bytes.len() - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_params(&bad), Err(Error::Format { .. })));
    }
}
