//! Frequency separation into a low-pass diffusion (base) layer and a
//! high-pass texture layer.
//!
//! The blur is linear and acts per channel, and the chromophore map is linear
//! and acts per pixel, so the two commute. The pipeline therefore separates
//! layers after moving to chromophore space; the result is the same as
//! separating first.

use crate::error::{Error, Result};
use crate::pixel::PixelPatch;

/// Base and texture layers of one patch, both in the input's space.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPair {
    pub base: PixelPatch,
    pub texture: PixelPatch,
    pub sigma: f64,
}

/// Default blur for a region of the given width: 5 px per 200 px of width,
/// clamped to `[2, 12]`.
pub fn default_sigma(roi_width: usize) -> f64 {
    (5.0 * roi_width as f64 / 200.0).clamp(2.0, 12.0)
}

/// Normalized 1D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

fn convolve_rows(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; w * h];
    let mut line = vec![0.0; w + 2 * r as usize];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (j, v) in line.iter_mut().enumerate() {
            *v = row[reflect101(j as i64 - r, w)];
        }
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .zip(&line[x..x + taps.len()])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    out
}

fn convolve_cols(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; w * h];
    let rows: Vec<usize> = (-r..h as i64 + r).map(|i| reflect101(i, h)).collect();
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (t, &sy) in taps.iter().zip(&rows[y..y + taps.len()]) {
            let s = &src[sy * w..(sy + 1) * w];
            for (d, v) in dst.iter_mut().zip(s) {
                *d += t * v;
            }
        }
    }
    out
}

/// Separable Gaussian low-pass with reflect-101 borders.
pub fn gaussian_blur(p: &PixelPatch, sigma: f64) -> Result<PixelPatch> {
    let taps = gaussian_kernel(sigma)?;
    let (w, h) = (p.width(), p.height());
    let channels = std::array::from_fn(|k| {
        let horizontal = convolve_rows(p.channel(k), w, h, &taps);
        convolve_cols(&horizontal, w, h, &taps)
    });
    Ok(p.with_channels(p.space(), channels))
}

/// `base = blur(p)`, `texture = p - base`.
pub fn separate(p: &PixelPatch, sigma: f64) -> Result<LayerPair> {
    let base = gaussian_blur(p, sigma)?;
    let texture = std::array::from_fn(|k| {
        p.channel(k)
            .iter()
            .zip(base.channel(k))
            .map(|(v, b)| v - b)
            .collect()
    });
    let texture = p.with_channels(p.space(), texture);
    Ok(LayerPair {
        base,
        texture,
        sigma,
    })
}
