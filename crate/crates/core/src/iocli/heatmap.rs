//! 8-bit binary PGM (`P5`) heatmaps.

use std::path::Path;

use crate::cfeval::RelevanceMap;
use crate::error::{Error, Result};

use super::binfmt::{read_file, write_file};

/// Quantized grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `floor(255·r + 0.5)`, so 0.5 maps to 128.
pub fn quantize(r: f64) -> u8 {
    (255.0 * r + 0.5).floor() as u8
}

impl HeatmapImage {
    pub fn from_relevance(map: &RelevanceMap) -> Result<Self> {
        if let Some(v) = map.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("relevance value {v} outside [0, 1]")));
        }
        if map.values.len() != map.height * map.width {
            return Err(Error::shape("relevance map size differs from its dimensions"));
        }
        Ok(Self {
            width: map.width,
            height: map.height,
            pixels: map.values.iter().map(|&v| quantize(v)).collect(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses the layout written by [`HeatmapImage::encode`]: single
    /// newlines between fields and no comments.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let line = |pos: &mut usize| -> Result<(usize, &str)> {
            let start = *pos;
            let n = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(bytes.len() as u64, "incomplete PGM header"))?;
            *pos = start + n + 1;
            let s = std::str::from_utf8(&bytes[start..start + n])
                .map_err(|_| Error::format(start as u64, "PGM header is not ASCII"))?;
            Ok((start, s))
        };
        let (at, magic) = line(&mut pos)?;
        if magic != "P5" {
            return Err(Error::format(at as u64, "expected P5 magic"));
        }
        let (at, dims) = line(&mut pos)?;
        let parsed: Vec<usize> = dims.split(' ').filter_map(|t| t.parse().ok()).collect();
        let &[width, height] = parsed.as_slice() else {
            return Err(Error::format(at as u64, format!("bad dimensions {dims:?}")));
        };
        let (at, maxval) = line(&mut pos)?;
        if maxval != "255" {
            return Err(Error::format(at as u64, "only maxval 255 is supported"));
        }
        let expected = pos + width * height;
        if bytes.len() != expected {
            return Err(Error::format(
                bytes.len().min(expected) as u64,
                format!("expected {} pixel bytes, found {}", width * height, bytes.len() - pos),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels: bytes[pos..].to_vec(),
        })
    }
}

pub fn write_heatmap(map: &RelevanceMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &HeatmapImage::from_relevance(map)?.encode())
}

pub fn read_heatmap(path: impl AsRef<Path>) -> Result<HeatmapImage> {
    HeatmapImage::decode(&read_file(path.as_ref())?)
}
