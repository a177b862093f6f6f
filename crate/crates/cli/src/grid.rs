//! Binary portable graymap (P5) sample sheets.

use std::io;
use std::path::Path;

use sae_core::tensor::ImageShape;
use sae_core::Tensor;

const SEPARATOR: u8 = 128;

/// Smallest near-square `(rows, cols)` holding `n` tiles.
pub fn grid_dims(n: usize) -> (usize, usize) {
    let mut cols = 1;
    while cols * cols < n {
        cols += 1;
    }
    (n.div_ceil(cols).max(1), cols)
}

/// Tiles the rows of `images` row-major into a `rows × cols` sheet with
/// 1-pixel separators, min-max scaled over the whole sheet. Returns
/// `(width, height, pixels)`.
pub fn tile(images: &Tensor, shape: ImageShape, rows: usize, cols: usize) -> io::Result<(usize, usize, Vec<u8>)> {
    let n = images.rows();
    if rows * cols < n {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{rows}×{cols} grid cannot hold {n} images"),
        ));
    }
    if images.cols() != shape.pixels() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("images have {} pixels, shape {}×{} needs {}", images.cols(), shape.height, shape.width, shape.pixels()),
        ));
    }
    let (h, w) = (shape.height, shape.width);
    let width = cols * w + cols - 1;
    let height = rows * h + rows - 1;
    let (lo, hi) = images
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let scale = |v: f64| -> u8 {
        if span > 0.0 && span.is_finite() {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    };
    let mut px = vec![SEPARATOR; width * height];
    for k in 0..rows * cols {
        let (gr, gc) = (k / cols, k % cols);
        let (oy, ox) = (gr * (h + 1), gc * (w + 1));
        for y in 0..h {
            for x in 0..w {
                px[(oy + y) * width + ox + x] = if k < n { scale(images.get2(k, y * w + x)) } else { 0 };
            }
        }
    }
    Ok((width, height, px))
}

pub fn render_image_grid(images: &Tensor, shape: ImageShape, rows: usize, cols: usize, path: &Path) -> io::Result<()> {
    let (width, height, px) = tile(images, shape, rows, cols)?;
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(px);
    std::fs::write(path, bytes)
}

/// Header dimensions and payload of a P5 file.
pub fn parse_p5(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
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
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let payload = bytes.get(pos + 1..)?;
    (payload.len() == w * h).then_some((w, h, payload))
}

/// One row per image, pixels comma-separated.
pub fn values_csv(images: &Tensor) -> String {
    let mut out: String = (0..images.cols()).map(|j| format!("p{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..images.rows() {
        let row: Vec<String> = images.row(i).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
