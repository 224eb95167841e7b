//! Image-quality and blemish-strength measurements.

use serde::Serialize;

use crate::chromophore::{to_chromophore, MixingMatrix};
use crate::error::{Error, Result};
use crate::json::{sig3, Sig17};
use crate::pixel::{linear_to_log_absorption, srgb_region_to_linear, RgbImage8, Roi};

/// Width of the reference ring around a region for [`blemish_contrast`].
pub const CONTRAST_RING: usize = 4;

/// How far a region stands out from its surroundings, per chromophore.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrast {
    pub per_channel: [f64; 3],
    pub total: f64,
}

impl Serialize for Contrast {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out {
            per_channel: [Sig17; 3],
            total: Sig17,
        }
        Out {
            per_channel: sig3(self.per_channel),
            total: Sig17(self.total),
        }
        .serialize(s)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean absolute deviation of the region's chromophore values from the
/// median of a 4 px ring around it, per channel and summed.
pub fn blemish_contrast(
    img: &RgbImage8,
    roi: Roi,
    mixing: &MixingMatrix,
    floor: f64,
) -> Result<Contrast> {
    roi.check_contained(img.width(), img.height())?;
    let m = CONTRAST_RING;
    if roi.x < m || roi.y < m || roi.x + roi.w + m > img.width() || roi.y + roi.h + m > img.height() {
        return Err(Error::InvalidRoi {
            roi,
            width: img.width(),
            height: img.height(),
            reason: "needs a 4 px margin inside the image",
        });
    }
    let outer = Roi::new(roi.x - m, roi.y - m, roi.w + 2 * m, roi.h + 2 * m);
    let lin = srgb_region_to_linear(img, outer)?;
    let conc = to_chromophore(&linear_to_log_absorption(&lin, floor)?, mixing)?;

    let mut per_channel = [0.0; 3];
    for (k, out) in per_channel.iter_mut().enumerate() {
        let mut ring = Vec::with_capacity(outer.area() - roi.area());
        let mut inner = Vec::with_capacity(roi.area());
        for y in 0..outer.h {
            for x in 0..outer.w {
                let v = conc.get(k, x, y);
                if roi.contains(outer.x + x, outer.y + y) {
                    inner.push(v);
                } else {
                    ring.push(v);
                }
            }
        }
        let med = median(ring);
        *out = inner.iter().map(|v| (v - med).abs()).sum::<f64>() / inner.len() as f64;
    }
    Ok(Contrast {
        per_channel,
        total: per_channel.iter().sum(),
    })
}

fn check_same_dims(a: &RgbImage8, b: &RgbImage8) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio over all RGB bytes, in dB. Identical images
/// give `f64::INFINITY`.
pub fn psnr(a: &RgbImage8, b: &RgbImage8) -> Result<f64> {
    check_same_dims(a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.data().len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn ssim_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// 'Valid' separable filtering: output is `(w-10) x (h-10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|t| taps[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|t| taps[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity, 11x11 Gaussian window (σ = 1.5), standard
/// constants for 8-bit data, averaged over valid window positions and the
/// three channels.
pub fn ssim(a: &RgbImage8, b: &RgbImage8) -> Result<f64> {
    check_same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "ssim needs at least 11x11 pixels, got {w}x{h}"
        )));
    }
    let taps = ssim_taps();
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(k).step_by(3).map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = b.data().iter().skip(k).step_by(3).map(|&v| f64::from(v)).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &taps);
        let my = filter_valid(&y, w, h, &taps);
        let sxx = filter_valid(&xx, w, h, &taps);
        let syy = filter_valid(&yy, w, h, &taps);
        let sxy = filter_valid(&xy, w, h, &taps);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            let num = (2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_pair(w: usize, h: usize, seed: u64) -> (RgbImage8, RgbImage8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
        let b: Vec<u8> = a
            .iter()
            .map(|&v| (i32::from(v) + rng.random_range(-20..=20)).clamp(0, 255) as u8)
            .collect();
        (
            RgbImage8::new(w, h, a).unwrap(),
            RgbImage8::new(w, h, b).unwrap(),
        )
    }

    /// Brute force: explicit 2D window at every valid position.
    fn ssim_reference(a: &RgbImage8, b: &RgbImage8) -> f64 {
        let (w, h) = (a.width(), a.height());
        let s = 1.5f64;
        let mut win = [[0.0f64; 11]; 11];
        let mut norm = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * s * s)).exp();
                norm += *v;
            }
        }
        let (c1, c2) = (6.5025, 58.5225);
        let mut sum = 0.0;
        let mut n = 0;
        for k in 0..3 {
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wt = win[i][j] / norm;
                            let p = f64::from(a.pixel(x0 + j, y0 + i)[k]);
                            let q = f64::from(b.pixel(x0 + j, y0 + i)[k]);
                            mx += wt * p;
                            my += wt * q;
                            xx += wt * p * p;
                            yy += wt * q * q;
                            xy += wt * p * q;
                        }
                    }
                    let (vx, vy, cv) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    sum += ((2.0 * mx * my + c1) * (2.0 * cv + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    n += 1;
                }
            }
        }
        sum / n as f64
    }

    #[test]
    fn identical_images() {
        let (a, _) = noisy_pair(16, 13, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn black_versus_white_is_zero_db() {
        let black = RgbImage8::filled(4, 4, [0; 3]).unwrap();
        let white = RgbImage8::filled(4, 4, [255; 3]).unwrap();
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
    }

    #[test]
    fn ssim_matches_brute_force() {
        for seed in 0..3 {
            let (a, b) = noisy_pair(23, 19, seed);
            let got = ssim(&a, &b).unwrap();
            let want = ssim_reference(&a, &b);
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            assert!((0.0..1.0).contains(&got));
        }
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let (a, b) = noisy_pair(9, 7, 4);
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            / (9.0 * 7.0 * 3.0);
        let want = 20.0 * 255.0f64.log10() - 10.0 * mse.log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn dimension_checks() {
        let a = RgbImage8::filled(12, 12, [1; 3]).unwrap();
        let b = RgbImage8::filled(12, 13, [1; 3]).unwrap();
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        let tiny = RgbImage8::filled(10, 12, [1; 3]).unwrap();
        assert!(ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn uniform_image_has_zero_contrast() {
        let img = RgbImage8::filled(30, 30, [200, 160, 150]).unwrap();
        let c = blemish_contrast(&img, Roi::new(8, 8, 12, 12), &MixingMatrix::bundled(), 1e-4).unwrap();
        assert_eq!(c.total, 0.0);
    }

    #[test]
    fn contrast_needs_a_margin() {
        let img = RgbImage8::filled(30, 30, [200, 160, 150]).unwrap();
        let e = MixingMatrix::bundled();
        assert!(blemish_contrast(&img, Roi::new(3, 8, 12, 12), &e, 1e-4).is_err());
        assert!(blemish_contrast(&img, Roi::new(8, 8, 19, 12), &e, 1e-4).is_err());
        assert!(blemish_contrast(&img, Roi::new(4, 4, 22, 22), &e, 1e-4).is_ok());
    }
}
