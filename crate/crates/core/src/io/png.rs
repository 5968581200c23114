//! PNG images: 8-bit RGB for colors, 16-bit RGB for normal maps stored as
//! `0.5 n + 0.5`.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb};

use super::atomic_write;
use crate::buffer::Image;
use crate::error::{Error, Result};

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Encodes `[0, 1]` colors as an 8-bit RGB PNG.
pub fn encode_rgb8(img: &Image) -> Result<Vec<u8>> {
    let data: Vec<u8> = img.data.iter().map(|v| quantize(*v, 255.0) as u8).collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Encodes a normal map (components in `[-1, 1]`) as a 16-bit RGB PNG.
pub fn encode_normal16(img: &Image) -> Result<Vec<u8>> {
    let data: Vec<u16> = img.data.iter().map(|v| quantize(0.5 * v + 0.5, 65535.0) as u16).collect();
    let buf: ImageBuffer<Rgb<u16>, _> = ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

/// Decodes any PNG to `[0, 1]` RGB.
pub fn decode_rgb(bytes: &[u8]) -> Result<Image> {
    let rgb = decode(bytes)?.into_rgb16();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Image::from_data(w as usize, h as usize, data)
}

/// Decodes a normal map written by [`encode_normal16`].
pub fn decode_normal(bytes: &[u8]) -> Result<Image> {
    Ok(decode_rgb(bytes)?.map(|v| 2.0 * v - 1.0))
}

pub fn save_rgb(path: &Path, img: &Image) -> Result<()> {
    atomic_write(path, &encode_rgb8(img)?)
}

pub fn save_normal(path: &Path, img: &Image) -> Result<()> {
    atomic_write(path, &encode_normal16(img)?)
}

pub fn load_rgb(path: &Path) -> Result<Image> {
    decode_rgb(&std::fs::read(path)?)
}

pub fn load_normal(path: &Path) -> Result<Image> {
    decode_normal(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn zero_normal_encodes_to_mid_gray() {
        let img = Image::new(3, 2);
        let bytes = encode_normal16(&img).unwrap();
        let raw = decode(&bytes).unwrap().into_rgb16();
        assert!(raw.pixels().all(|p| p.0 == [32768; 3]));
        let back = decode_normal(&bytes).unwrap();
        assert!(back.data.iter().all(|v| v.abs() <= 1.0 / 65535.0));
    }

    #[test]
    fn eight_bit_values_round_trip_exactly() {
        let img = Image::filled(4, 4, Vector3::new(0.0, 128.0 / 255.0, 1.0));
        let back = decode_rgb(&encode_rgb8(&img).unwrap()).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
