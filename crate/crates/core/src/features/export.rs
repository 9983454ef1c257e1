//! Matrix dumps: raw `.mat` (`u32` rows, `u32` cols, then row-major `f32`,
//! all little-endian) and 8-bit binary PGM images.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn encode_mat(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * m.len());
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_mat(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let header = |i: usize| -> Result<usize> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| Error::Payload("truncated .mat header".into()))
    };
    let (rows, cols) = (header(0)?, header(4)?);
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Payload(format!(
            ".mat body has {} bytes, expected {}",
            body.len(),
            rows * cols * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    Ok(DMatrix::from_row_iterator(rows, cols, values))
}

pub fn write_mat(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mat(m)).map_err(|e| Error::io(path, e))
}

pub fn read_mat(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    decode_mat(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Renders a `time x frequency` matrix with time on x and the lowest
    /// frequency row at the bottom, min-max scaled to 0..=255. A constant
    /// matrix renders black.
    pub fn from_spectrogram(m: &DMatrix<f64>) -> Self {
        let (frames, bands) = m.shape();
        let (lo, hi) = m
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let mut pixels = Vec::with_capacity(frames * bands);
        for y in 0..bands {
            let band = bands - 1 - y;
            for x in 0..frames {
                let v = if span > 0.0 {
                    ((m[(x, band)] - lo) / span * 255.0).round() as u8
                } else {
                    0
                };
                pixels.push(v);
            }
        }
        Self {
            width: frames,
            height: bands,
            pixels,
        }
    }

    /// Places tiles side by side with `separator` white columns between them.
    /// Shorter tiles are padded black at the top.
    pub fn hstack(tiles: &[GrayImage], separator: usize) -> Self {
        let height = tiles.iter().map(|t| t.height).max().unwrap_or(0);
        let width = tiles.iter().map(|t| t.width).sum::<usize>()
            + separator * tiles.len().saturating_sub(1);
        let mut pixels = vec![0u8; width * height];
        let mut x0 = 0;
        for (i, tile) in tiles.iter().enumerate() {
            if i > 0 {
                for y in 0..height {
                    for dx in 0..separator {
                        pixels[y * width + x0 + dx] = 255;
                    }
                }
                x0 += separator;
            }
            let pad = height - tile.height;
            for y in 0..tile.height {
                let src = &tile.pixels[y * tile.width..(y + 1) * tile.width];
                let dst = (y + pad) * width + x0;
                pixels[dst..dst + tile.width].copy_from_slice(src);
            }
            x0 += tile.width;
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Payload("not a binary 8-bit PGM".into());
        // header: magic, width, height, maxval, each followed by one whitespace
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
                pos += 1;
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
        }
        pos += 1;
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(bad());
        }
        let width: usize = fields[1].parse().map_err(|_| bad())?;
        let height: usize = fields[2].parse().map_err(|_| bad())?;
        let pixels = bytes.get(pos..pos + width * height).ok_or_else(bad)?.to_vec();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}
