//! Binary PGM (P5) and PPM (P6) images.

use std::fs;
use std::path::Path;

use crate::error::{NfrError, Result};
use crate::tensor::{Shape, Tensor};

/// Channels, height and width of an image-like tensor: `(H, W)`, `(1, H, W)`
/// or `(3, H, W)`.
fn image_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [h, w] => Ok((1, h, w)),
        [c @ (1 | 3), h, w] => Ok((c, h, w)),
        _ => Err(NfrError::InvalidShape(format!(
            "images need (H, W), (1, H, W) or (3, H, W), got {}",
            t.shape()
        ))),
    }
}

fn encode(c: usize, h: usize, w: usize, bytes_chw: impl Fn(usize) -> u8) -> Vec<u8> {
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(bytes_chw((ch * h + y) * w + x));
            }
        }
    }
    out
}

/// Write values in `[0, 1]` as 8-bit pixels, `round(255 v)`.
pub fn write_image(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (c, h, w) = image_dims(t)?;
    let d = t.data();
    if let Some(i) = d.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(NfrError::OutOfRange(format!("pixel value {} at index {i} outside [0, 1]", d[i])));
    }
    fs::write(path, encode(c, h, w, |i| (d[i] * 255.0).round() as u8))?;
    Ok(())
}

/// Min-max normalized rendering of a saliency map; a constant map is mid-gray.
pub fn render_saliency(r: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (c, h, w) = image_dims(r)?;
    let (lo, hi) = (r.min(), r.max());
    let d = r.data();
    let pixel = |i: usize| {
        if hi == lo {
            128
        } else {
            ((d[i] - lo) / (hi - lo) * 255.0).round() as u8
        }
    };
    fs::write(path, encode(c, h, w, pixel))?;
    Ok(())
}

/// Shape to render a flat attribution with: square vectors become `side × side`,
/// others a single row.
pub fn display_shape(t: &Tensor) -> Result<Shape> {
    if t.shape().rank() != 1 {
        return Ok(t.shape().clone());
    }
    let n = t.numel();
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        Shape::new(vec![side, side])
    } else {
        Shape::new(vec![1, n])
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(NfrError::Image("header ended early".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| NfrError::Image(format!("bad {what} {:?}", String::from_utf8_lossy(tok))))
}

/// Parse a P5 or P6 image with maxval 255 into `[0, 1]` values: `(H, W)` for
/// P5, `(3, H, W)` for P6.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let c = match header_token(bytes, &mut pos)? {
        b"P5" => 1,
        b"P6" => 3,
        other => return Err(NfrError::Image(format!("unknown magic {:?}", String::from_utf8_lossy(other)))),
    };
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(NfrError::Image(format!("only maxval 255 is supported, got {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(NfrError::Image("missing separator after header".into()));
    }
    let pixels = &bytes[pos + 1..];
    if pixels.len() != c * h * w {
        return Err(NfrError::Image(format!("expected {} pixel bytes, found {}", c * h * w, pixels.len())));
    }
    let mut data = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = pixels[(y * w + x) * c + ch] as f64 / 255.0;
            }
        }
    }
    let shape = if c == 1 { Shape::new(vec![h, w])? } else { Shape::new(vec![3, h, w])? };
    Tensor::new(shape, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_image(&fs::read(path)?)
}
