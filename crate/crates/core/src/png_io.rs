//! PNG reading and writing for [`RgbImage8`].

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage, RgbaImage};

use crate::error::Result;
use crate::pixel::RgbImage8;

/// Decodes a PNG. Higher bit depths are reduced to 8 bits; an alpha
/// channel, when present, is kept alongside the RGB data.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage8> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    from_dynamic(img)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage8> {
    let bytes = std::fs::read(path)?;
    decode_png(&bytes)
}

fn from_dynamic(img: DynamicImage) -> Result<RgbImage8> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_alpha() {
        let rgba = img.into_rgba8();
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut alpha = Vec::with_capacity(w * h);
        for px in rgba.pixels() {
            rgb.extend_from_slice(&px.0[..3]);
            alpha.push(px.0[3]);
        }
        RgbImage8::new(w, h, rgb)?.with_alpha(alpha)
    } else {
        RgbImage8::new(w, h, img.into_rgb8().into_raw())
    }
}

pub fn encode_png(img: &RgbImage8) -> Result<Vec<u8>> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.alpha() {
        Some(alpha) => {
            let mut rgba = Vec::with_capacity(img.data().len() / 3 * 4);
            for (px, &a) in img.data().chunks_exact(3).zip(alpha) {
                rgba.extend_from_slice(px);
                rgba.push(a);
            }
            DynamicImage::ImageRgba8(
                RgbaImage::from_raw(w, h, rgba).expect("buffer sized from image dimensions"),
            )
        }
        None => DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, img.data().to_vec()).expect("buffer sized from image dimensions"),
        ),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_png(path: impl AsRef<Path>, img: &RgbImage8) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}
