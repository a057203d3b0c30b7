//! `IPAEMB 1` embedding files.

use std::path::Path;

use crate::diffmath::RealMatrix;
use crate::error::{Error, Result};
use crate::ppim::EmbeddingBatch;

use super::binfmt::{check_payload, header, parse_header, push_reals, read_file, write_file, WordReader};

pub const EMBEDDING_MAGIC: &str = "IPAEMB 1";
const KEYS: [&str; 6] = ["B", "D", "K", "P", "GH", "GW"];

/// Serializes a batch. Values are stored as 32-bit reals.
pub fn encode_embeddings(batch: &EmbeddingBatch) -> Result<Vec<u8>> {
    batch.check_shapes()?;
    let finite = batch.global_image.is_finite()
        && batch.global_text.is_finite()
        && batch.patches.iter().all(RealMatrix::is_finite)
        && batch.phrases.iter().all(RealMatrix::is_finite);
    if !finite {
        return Err(Error::data("embedding batch holds non-finite values"));
    }
    let (b, d, k, p) = (batch.batch_size(), batch.dim(), batch.num_patches(), batch.num_phrases());
    let (gh, gw) = batch.grid;
    if gh * gw != k {
        return Err(Error::shape(format!("grid {gh}x{gw} does not match K={k}")));
    }
    let mut out = header(EMBEDDING_MAGIC, &[("B", b), ("D", d), ("K", k), ("P", p), ("GH", gh), ("GW", gw)]);
    out.reserve(4 * (2 * b * d + b * k * d + b * p * d + b * p + b));
    push_reals(&mut out, batch.global_image.data());
    push_reals(&mut out, batch.global_text.data());
    for z in &batch.patches {
        push_reals(&mut out, z.data());
    }
    for h in &batch.phrases {
        push_reals(&mut out, h.data());
    }
    for row in &batch.phrase_mask {
        for &m in row {
            out.extend_from_slice(&(if m { 1.0f32 } else { 0.0f32 }).to_le_bytes());
        }
    }
    for id in &batch.identities {
        out.extend_from_slice(&id.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingBatch> {
    let (v, start) = parse_header(bytes, EMBEDDING_MAGIC, &KEYS)?;
    let (b, d, k, p, gh, gw) = (v[0], v[1], v[2], v[3], v[4], v[5]);
    if gh.checked_mul(gw) != Some(k) {
        return Err(Error::format(0, format!("K={k} differs from GH·GW = {gh}·{gw}")));
    }
    if b == 0 || d == 0 || k == 0 {
        return Err(Error::format(0, "B, D and K must be positive"));
    }
    let words = [2 * b * d, b * k * d, b * p * d, b * p, b]
        .iter()
        .try_fold(0usize, |acc, &n| acc.checked_add(n))
        .ok_or_else(|| Error::format(start as u64, "header sizes overflow"))?;
    check_payload(bytes, start, words)?;
    let mut r = WordReader::new(bytes, start);
    let global_image = RealMatrix::new(b, d, r.reals(b * d)?)?;
    let global_text = RealMatrix::new(b, d, r.reals(b * d)?)?;
    let patches = (0..b)
        .map(|_| RealMatrix::new(k, d, r.reals(k * d)?))
        .collect::<Result<Vec<_>>>()?;
    let phrases = (0..b)
        .map(|_| RealMatrix::new(p, d, r.reals(p * d)?))
        .collect::<Result<Vec<_>>>()?;
    let mut phrase_mask = Vec::with_capacity(b);
    for _ in 0..b {
        let mut row = Vec::with_capacity(p);
        for _ in 0..p {
            let at = r.offset();
            row.push(match r.real()? {
                v if v == 1.0 => true,
                v if v == 0.0 => false,
                v => return Err(Error::format(at, format!("mask entry {v} is neither 0 nor 1"))),
            });
        }
        phrase_mask.push(row);
    }
    let identities = (0..b).map(|_| r.int()).collect::<Result<Vec<_>>>()?;
    EmbeddingBatch::new((gh, gw), global_image, global_text, patches, phrases, phrase_mask, identities)
}

pub fn write_embeddings(batch: &EmbeddingBatch, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_embeddings(batch)?)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingBatch> {
    decode_embeddings(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random batch whose values are exactly representable in 32 bits.
    fn random_batch(seed: u64, b: usize, grid: (usize, usize), p: usize, d: usize) -> EmbeddingBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = grid.0 * grid.1;
        let mut m = |r: usize, c: usize| RealMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0f32..1.0) as f64);
        let gi = m(b, d);
        let gt = m(b, d);
        let patches = (0..b).map(|_| m(k, d)).collect();
        let phrases = (0..b).map(|_| m(p, d)).collect();
        let mask = (0..b).map(|i| (0..p).map(|s| (i + s) % 3 != 0).collect()).collect();
        let ids = (0..b as i32).map(|i| i / 2 - 1).collect();
        EmbeddingBatch::new(grid, gi, gt, patches, phrases, mask, ids).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let batch = random_batch(1, 4, (2, 3), 3, 8);
        let bytes = encode_embeddings(&batch).unwrap();
        let back = decode_embeddings(&bytes).unwrap();
        assert_eq!(back, batch);
        assert_eq!(encode_embeddings(&back).unwrap(), bytes);
        let expected = bytes.len() - 4 * (2 * 4 * 8 + 4 * 6 * 8 + 4 * 3 * 8 + 4 * 3 + 4);
        assert_eq!(&bytes[..expected], b"IPAEMB 1\nB=4\nD=8\nK=6\nP=3\nGH=2\nGW=3\n\n");
    }

    #[test]
    fn truncation_reports_exact_offset() {
        let bytes = encode_embeddings(&random_batch(2, 3, (2, 2), 2, 4)).unwrap();
        let cut = &bytes[..bytes.len() - 1];
        match decode_embeddings(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_mismatch_and_bad_payload() {
        let bytes = encode_embeddings(&random_batch(3, 2, (2, 2), 2, 4)).unwrap();
        let end = bytes.windows(2).position(|w| w == b"\n\n").unwrap() + 2;
        let text = String::from_utf8_lossy(&bytes[..end]).replace("GW=2", "GW=3");
        let mut bad = text.into_bytes();
        bad.extend_from_slice(&bytes[end..]);
        assert!(matches!(decode_embeddings(&bad), Err(Error::Format { .. })));

        let start = bytes.len() - 4 * (2 * 2 * 4 + 2 * 4 * 4 + 2 * 2 * 4 + 2 * 2 + 2);
        let mut nan = bytes.clone();
        nan[start + 8..start + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_embeddings(&nan) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, start as u64 + 8),
            other => panic!("{other:?}"),
        }
        let mask_at = bytes.len() - 4 * (2 * 2 + 2);
        let mut mask = bytes.clone();
        mask[mask_at..mask_at + 4].copy_from_slice(&0.5f32.to_le_bytes());
        match decode_embeddings(&mask) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, mask_at as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn writer_rejects_non_finite() {
        let mut batch = random_batch(4, 2, (1, 2), 1, 3);
        batch.patches[1].set(0, 0, f64::INFINITY);
        assert!(encode_embeddings(&batch).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let batch = random_batch(5, 3, (2, 2), 2, 4);
        write_embeddings(&batch, &path).unwrap();
        assert_eq!(read_embeddings(&path).unwrap(), batch);
        assert!(matches!(read_embeddings(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
