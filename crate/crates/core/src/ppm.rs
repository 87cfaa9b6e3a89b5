//! Binary PPM (P6) images, 8 bits per channel.

use std::fs;
use std::path::Path;

use crate::error::{Result, VsaError};
use crate::tensor::Tensor;

/// Encode a `[3, H, W]` image with values in `[0, 1]` (clamped).
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(VsaError::shape(format!("PPM needs a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = d[(c * h + y) * w + x];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Decode a P6 file into a `[3, H, W]` image with values `byte / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |m: &str| VsaError::format(format!("PPM: {m}"));
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("header is not ASCII"))?.to_string());
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = bytes.get(i + 1..).ok_or_else(|| bad("missing raster"))?;
    if raster.len() != w * h * 3 {
        return Err(bad(&format!("raster has {} bytes, expected {}", raster.len(), w * h * 3)));
    }
    let mut data = vec![0.0f32; 3 * h * w];
    for (p, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new([3, h, w], data)
}

pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&fs::read(path)?)
}

/// Place `[c, H, W]` images side by side, separated by `gap` white columns.
pub fn hstack(images: &[&Tensor<f32>], gap: usize) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| VsaError::invalid("nothing to stack"))?;
    let (c, h) = (first.shape()[0], first.shape()[1]);
    if images.iter().any(|t| t.rank() != 3 || t.shape()[0] != c || t.shape()[1] != h) {
        return Err(VsaError::shape("hstack needs images of equal channels and height"));
    }
    let total_w: usize = images.iter().map(|t| t.shape()[2]).sum::<usize>() + gap * (images.len() - 1);
    let mut out = vec![1.0f32; c * h * total_w];
    let mut x0 = 0;
    for t in images {
        let w = t.shape()[2];
        for ch in 0..c {
            for y in 0..h {
                let src = &t.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
                out[(ch * h + y) * total_w + x0..][..w].copy_from_slice(src);
            }
        }
        x0 += w + gap;
    }
    Tensor::new([c, h, total_w], out)
}
