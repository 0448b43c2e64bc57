//! Binary greyscale (P5) spectrogram images.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rui_core::spectral::spectrogram_pixels;
use rui_core::ComplexSpectrum;

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Log-magnitude image: one column per frame, one row per bin, low
/// frequencies at the bottom, −80..0 dB mapped to 0..255.
pub fn export_spectrogram(spec: &ComplexSpectrum, path: &Path) -> Result<()> {
    let (w, h, px) = spectrogram_pixels(spec);
    fs::write(path, encode_pgm(w, h, &px)).with_context(|| format!("writing {}", path.display()))
}

/// Parses a P5 image written by [`encode_pgm`].
pub fn decode_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    if fields[0] != "P5" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let data = bytes.get(pos + 1..)?;
    (data.len() == w * h).then(|| (w, h, data.to_vec()))
}
