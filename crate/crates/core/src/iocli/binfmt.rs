//! Shared layout of the binary formats: an ASCII magic line, `KEY=value`
//! lines in a fixed order, a blank line, then little-endian 32-bit words.

use std::path::Path;

use crate::error::{Error, Result};

/// Renders the header block including the terminating blank line.
pub(crate) fn header(magic: &str, fields: &[(&str, usize)]) -> Vec<u8> {
    let mut out = format!("{magic}\n");
    for (key, value) in fields {
        out.push_str(&format!("{key}={value}\n"));
    }
    out.push('\n');
    out.into_bytes()
}

/// Parses a header written by [`header`]. Returns the field values in
/// `keys` order and the offset of the first payload byte.
pub(crate) fn parse_header(bytes: &[u8], magic: &str, keys: &[&str]) -> Result<(Vec<usize>, usize)> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|n| start + n)
            .ok_or_else(|| Error::format(bytes.len() as u64, "header ends before its blank line"))?;
        let line = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| Error::format(start as u64, "header line is not ASCII"))?;
        *pos = end + 1;
        Ok((start, line.to_string()))
    };
    let (at, line) = next_line(&mut pos)?;
    if line != magic {
        return Err(Error::format(at as u64, format!("expected magic {magic:?}, found {line:?}")));
    }
    let mut values = Vec::with_capacity(keys.len());
    for key in keys {
        let (at, line) = next_line(&mut pos)?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| Error::format(at as u64, format!("expected {key}=, found {line:?}")))?;
        let v: usize = value
            .parse()
            .map_err(|_| Error::format((at + key.len() + 1) as u64, format!("{key} is not a count: {value:?}")))?;
        values.push(v);
    }
    let (at, line) = next_line(&mut pos)?;
    if !line.is_empty() {
        return Err(Error::format(at as u64, "header must end with a blank line"));
    }
    Ok((values, pos))
}

/// Checks that the payload holds exactly `words` 32-bit words.
pub(crate) fn check_payload(bytes: &[u8], start: usize, words: usize) -> Result<()> {
    let expected = words
        .checked_mul(4)
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| Error::format(start as u64, "header sizes overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("file truncated: {} bytes, header requires {expected}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected as u64, "trailing bytes after payload"));
    }
    Ok(())
}

/// Sequential little-endian word reader that knows its byte offset.
pub(crate) struct WordReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> WordReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn word(&mut self) -> Result<[u8; 4]> {
        let w = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::format(self.bytes.len() as u64, "unexpected end of payload"))?;
        self.pos += 4;
        Ok([w[0], w[1], w[2], w[3]])
    }

    /// Reads a finite real.
    pub(crate) fn real(&mut self) -> Result<f64> {
        let at = self.offset();
        let v = f32::from_le_bytes(self.word()?);
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite value {v}")));
        }
        Ok(v as f64)
    }

    pub(crate) fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.real()).collect()
    }

    pub(crate) fn int(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.word()?))
    }
}

pub(crate) fn push_reals(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
