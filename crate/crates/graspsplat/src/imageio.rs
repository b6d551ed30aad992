//! PNG images and masks, and a raw `f32` image dump.

use std::io::Cursor;
use std::path::Path;

use graspsplat_core::image::{Image, Mask};
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::fsio::read_bytes;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn png(img: DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("PNG encoding into memory");
    out.into_inner()
}

/// 8-bit RGB PNG; values are clamped to [0, 1].
pub fn encode_png(img: &Image) -> Vec<u8> {
    let bytes: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("buffer matches size");
    png(DynamicImage::ImageRgb8(buf))
}

/// 8-bit gray PNG holding 0 or 255.
pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    let bytes: Vec<u8> = mask.data.iter().map(|m| if *m { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes).expect("buffer matches size");
    png(DynamicImage::ImageLuma8(buf))
}

fn decode(path: &Path, bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn read_png(path: &Path) -> Result<Image> {
    let rgb = decode(path, &read_bytes(path)?)?.to_rgb8();
    let data = rgb.as_raw().iter().map(|v| *v as f64 / 255.0).collect();
    Ok(Image::from_data(rgb.width() as usize, rgb.height() as usize, data)?)
}

/// Gray levels above 127 are set.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let gray = decode(path, &read_bytes(path)?)?.to_luma8();
    let data = gray.as_raw().iter().map(|v| *v > 127).collect();
    Ok(Mask { width: gray.width() as usize, height: gray.height() as usize, data })
}

pub const RAW_MAGIC: &[u8; 4] = b"GSRF";

/// `GSRF`, then width, height and channel count as `u32`, then `f32`
/// samples row-major with interleaved channels.
pub fn encode_raw(img: &Image) -> Vec<u8> {
    let mut out = RAW_MAGIC.to_vec();
    for v in [img.width as u32, img.height as u32, 3] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw(path: &Path, bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(bad("not a raw float image"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    if c != 3 {
        return Err(bad("only 3-channel dumps are supported"));
    }
    if bytes.len() != 16 + w * h * c * 4 {
        return Err(bad("size does not match header"));
    }
    let data = bytes[16..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    Ok(Image::from_data(w, h, data)?)
}

pub fn read_raw(path: &Path) -> Result<Image> {
    decode_raw(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsio::write_atomic;

    #[test]
    fn png_round_trips_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_data(3, 2, (0..18).map(|i| i as f64 / 17.0).collect()).unwrap();
        let p = dir.path().join("a.png");
        write_atomic(&p, &encode_png(&img)).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let mask = Mask::from_fn(5, 4, |x, y| (x + y) % 3 == 0);
        let mp = dir.path().join("m.png");
        write_atomic(&mp, &encode_mask_png(&mask)).unwrap();
        assert_eq!(read_mask_png(&mp).unwrap(), mask);
    }

    #[test]
    fn raw_dump_round_trip() {
        let img = Image::from_data(2, 2, vec![0.1, 0.2, 0.3, 1.5, -0.25, 0.0, 0.7, 0.8, 0.9, 0.0, 0.5, 1.0]).unwrap();
        let bytes = encode_raw(&img);
        let back = decode_raw(Path::new("x.raw"), &bytes).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(*a as f32 as f64, *b);
        }
        assert!(decode_raw(Path::new("x.raw"), &bytes[..bytes.len() - 4]).is_err());
    }
}
