//! Binary PGM image grids for square grayscale inputs.

use std::path::Path;

use crate::checkpoint::write_atomic;
use crate::error::{HarnessError, Result};

/// Side length when `n` is a perfect square.
pub fn square_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s > 0 && s * s == n).then_some(s)
}

/// Lays `rows` of equally sized square images out as a grid with a 1-pixel
/// gap. Pixel values are clamped to `[0, 1]`.
pub fn grid_bytes(rows: &[Vec<&[f64]>]) -> Result<Vec<u8>> {
    let first = rows.iter().flatten().next().ok_or_else(|| HarnessError::Usage("no images to draw".into()))?;
    let side = square_side(first.len()).ok_or_else(|| HarnessError::Usage(format!("{} pixels is not a square image", first.len())))?;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (w, h) = (cols * (side + 1) + 1, rows.len() * (side + 1) + 1);
    let mut px = vec![0u8; w * h];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.len() != side * side {
                return Err(HarnessError::Usage("images differ in size".into()));
            }
            for i in 0..side {
                for j in 0..side {
                    let v = img[i * side + j].clamp(0.0, 1.0);
                    px[(r * (side + 1) + 1 + i) * w + c * (side + 1) + 1 + j] = (v * 255.0).round() as u8;
                }
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

pub fn write_grid(path: &Path, rows: &[Vec<&[f64]>]) -> Result<()> {
    write_atomic(path, &grid_bytes(rows)?)
}
