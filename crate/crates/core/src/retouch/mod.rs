//! Blemish editing: decompose a region, fit its blemish, scale the fitted
//! blemish per chromophore and recompose.
//!
//! For chromophore `K` the edited region is
//!
//! ```text
//! C'_K = texture_K + base_K + α_K · blemish_K
//! ```
//!
//! where `blemish_K` is the fitted sum of Gaussians (the plane is skin and is
//! left alone). `α = -1` removes the blemish, `α = +1` doubles it.

mod cache;
mod gain;
mod metrics;
mod report;
mod sequence;

use std::sync::Arc;

use serde::Serialize;

use crate::chromophore::{from_chromophore_counted, to_chromophore, MixingMatrix};
use crate::error::{Error, Result, Space};
use crate::layers::{default_sigma, separate, LayerPair};
use crate::pixel::{
    linear_to_log_absorption, linear_to_srgb, log_absorption_to_linear_counted,
    srgb_region_to_linear, PixelPatch, RgbImage8, Roi, DEFAULT_REFLECTANCE_FLOOR,
};
use crate::sog::{fit_blemish_channels, BlemishFit, Field, FitConfig};

pub use cache::{FitCache, FitKey};
pub use gain::{GainSchedule, GainVector, ScheduleEntry, MAX_GAIN};
pub use metrics::{blemish_contrast, psnr, ssim, Contrast, CONTRAST_RING, SSIM_WINDOW};
pub use report::{
    frame_file_name, sidecar_path, FadeFrameEntry, FadeReport, FitReference, FitReport,
    RetouchReport, REPORT_SCHEMA,
};
pub use sequence::{
    gain_matrix, simulate_fading, simulate_fading_prepared, FadeFrame, GainMatrix, GRID_SEPARATOR,
    ORIGINAL_MARK,
};

/// Context kept around a region in preview renders.
pub const PREVIEW_CONTEXT: usize = 16;

pub const DEFAULT_NOISE_ABSORBANCE: f64 = 0.01;

/// Width of the optional boundary ramp.
pub const FEATHER_WIDTH: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RetouchConfig {
    /// Base/texture blur; `None` picks [`default_sigma`] from the ROI width.
    pub sigma: Option<f64>,
    pub floor: f64,
    pub fit: FitConfig,
    /// Residual peaks smaller than this much log-absorption, mapped into
    /// each chromophore channel, are taken for 8-bit quantization ripple
    /// rather than blemish and get no lobe.
    pub noise_absorbance: f64,
    /// Ramp the edit linearly to zero over the outermost 2 px of the ROI.
    /// Off by default: the fitted lobes already fade out towards the edges.
    pub feather: bool,
}

impl Default for RetouchConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            floor: DEFAULT_REFLECTANCE_FLOOR,
            fit: FitConfig::default(),
            noise_absorbance: DEFAULT_NOISE_ABSORBANCE,
            feather: false,
        }
    }
}

impl RetouchConfig {
    pub fn sigma_for(&self, roi: Roi) -> Result<f64> {
        let sigma = self.sigma.unwrap_or_else(|| default_sigma(roi.w));
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!(
                "blur sigma must be positive, got {sigma}"
            )));
        }
        Ok(sigma)
    }

    /// Per-channel fit settings: the lobe amplitude floor of channel `k` is
    /// `noise_absorbance` scaled by how much row `k` of `E⁻¹` amplifies
    /// absorbance noise.
    pub fn channel_fit_configs(&self, mixing: &MixingMatrix) -> [FitConfig; 3] {
        let inv = mixing.inverse_rows();
        std::array::from_fn(|k| {
            let gain = inv[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            FitConfig {
                min_amplitude: self.fit.min_amplitude.max(self.noise_absorbance * gain),
                ..self.fit.clone()
            }
        })
    }
}

/// An image with a content fingerprint, so repeated fits can be cached.
#[derive(Debug, Clone)]
pub struct SourceImage {
    image: RgbImage8,
    fingerprint: u64,
}

impl SourceImage {
    pub fn new(image: RgbImage8) -> Self {
        let fingerprint = cache::image_fingerprint(&image);
        Self { image, fingerprint }
    }

    pub fn image(&self) -> &RgbImage8 {
        &self.image
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Everything about a region that does not depend on the gains.
#[derive(Debug, Clone)]
pub struct PreparedRoi {
    pub roi: Roi,
    pub sigma: f64,
    pub floor: f64,
    pub layers: LayerPair,
    pub fit: BlemishFit,
    blemish: [Field; 3],
}

impl PreparedRoi {
    pub fn new(img: &RgbImage8, roi: Roi, mixing: &MixingMatrix, cfg: &RetouchConfig) -> Result<Self> {
        roi.validate(img.width(), img.height())?;
        let sigma = cfg.sigma_for(roi)?;
        let lin = srgb_region_to_linear(img, roi)?;
        let conc = to_chromophore(&linear_to_log_absorption(&lin, cfg.floor)?, mixing)?;
        let layers = separate(&conc, sigma)?;
        if !(cfg.noise_absorbance >= 0.0) || !cfg.noise_absorbance.is_finite() {
            return Err(Error::Parameter("noise_absorbance must be a nonnegative number".into()));
        }
        let [h, m, r] = cfg.channel_fit_configs(mixing);
        let fit = fit_blemish_channels(&layers.base, [&h, &m, &r])?;
        let blemish = std::array::from_fn(|k| fit.blemish_field(k));
        Ok(Self {
            roi,
            sigma,
            floor: cfg.floor,
            layers,
            fit,
            blemish,
        })
    }

    /// Fitted blemish of chromophore `k` on the ROI grid.
    pub fn blemish(&self, k: usize) -> &Field {
        &self.blemish[k]
    }

    /// Recomposes the ROI with the given gains and encodes it.
    pub fn render(&self, mixing: &MixingMatrix, gains: GainVector, feather: bool) -> Result<(RgbImage8, ClampCounts)> {
        gains.validate()?;
        let base = &self.layers.base;
        let (w, h) = (base.width(), base.height());
        let alpha = gains.as_array();
        let channels: [Vec<f64>; 3] = std::array::from_fn(|k| {
            let b = base.channel(k);
            let t = self.layers.texture.channel(k);
            let blem = self.blemish[k].values();
            (0..w * h)
                .map(|i| {
                    let mut edit = alpha[k] * blem[i];
                    if feather {
                        edit *= feather_weight(i % w, i / w, w, h);
                    }
                    (b[i] + edit) + t[i]
                })
                .collect()
        });
        let edited = PixelPatch::new(w, h, Space::Chromophore, channels, base.origin())?;
        let (absorb, absorption) = from_chromophore_counted(&edited, mixing)?;
        let (lin, reflectance) = log_absorption_to_linear_counted(&absorb, self.floor)?;
        Ok((
            linear_to_srgb(&lin)?,
            ClampCounts {
                absorption,
                reflectance,
            },
        ))
    }
}

fn feather_weight(x: usize, y: usize, w: usize, h: usize) -> f64 {
    let d = x.min(y).min(w - 1 - x).min(h - 1 - y);
    if d >= FEATHER_WIDTH {
        1.0
    } else {
        (d + 1) as f64 / (FEATHER_WIDTH + 1) as f64
    }
}

/// `base_K + α_K · blemish_K` per channel. Texture is added back later.
pub fn apply_gain(base: &PixelPatch, fit: &BlemishFit, gains: GainVector) -> Result<PixelPatch> {
    if base.space() != Space::Chromophore {
        return Err(Error::SpaceMismatch {
            expected: Space::Chromophore,
            found: base.space(),
        });
    }
    if base.width() != fit.width || base.height() != fit.height {
        return Err(Error::DimensionMismatch(format!(
            "base is {}x{}, fit was made on {}x{}",
            base.width(),
            base.height(),
            fit.width,
            fit.height
        )));
    }
    gains.validate()?;
    let alpha = gains.as_array();
    let channels = std::array::from_fn(|k| {
        if alpha[k] == 0.0 {
            return base.channel(k).to_vec();
        }
        let blem = fit.blemish_field(k);
        base.channel(k)
            .iter()
            .zip(blem.values())
            .map(|(b, g)| b + alpha[k] * g)
            .collect()
    });
    PixelPatch::new(base.width(), base.height(), Space::Chromophore, channels, base.origin())
}

/// Values clamped while leaving chromophore space, per output channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClampCounts {
    /// Negative absorptions set to zero (R, G, B).
    pub absorption: [usize; 3],
    /// Reflectances forced into `[floor, 1]` (R, G, B).
    pub reflectance: [usize; 3],
}

impl ClampCounts {
    pub fn total(&self) -> usize {
        self.absorption.iter().chain(&self.reflectance).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RetouchResult {
    pub image: RgbImage8,
    pub roi: Roi,
    pub gains: GainVector,
    pub clamp_counts: ClampCounts,
    /// `None` when the ROI lacks the 4 px margin the metric needs.
    pub contrast_before: Option<Contrast>,
    pub contrast_after: Option<Contrast>,
    /// `None` for the zero-gain short-circuit, which never fits.
    pub prepared: Option<Arc<PreparedRoi>>,
}

impl RetouchResult {
    /// False when some channel's fit stopped before converging.
    pub fn converged(&self) -> bool {
        self.prepared.as_ref().is_none_or(|p| p.fit.converged())
    }
}

/// Fits and edits regions of images with one mixing matrix and
/// configuration, caching fits across calls.
#[derive(Debug)]
pub struct Retoucher {
    mixing: MixingMatrix,
    cfg: RetouchConfig,
    cache: FitCache,
}

impl Retoucher {
    pub fn new(mixing: MixingMatrix, cfg: RetouchConfig) -> Self {
        Self {
            mixing,
            cfg,
            cache: FitCache::default(),
        }
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn config(&self) -> &RetouchConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &FitCache {
        &self.cache
    }

    /// The fit for `roi`, computed at most once per distinct key. The flag
    /// says whether it came from the cache.
    pub fn prepare(&self, src: &SourceImage, roi: Roi) -> Result<(Arc<PreparedRoi>, bool)> {
        self.prepare_with_sigma(src, roi, self.cfg.sigma)
    }

    /// As [`Retoucher::prepare`] with the blur overridden for this call.
    pub fn prepare_with_sigma(
        &self,
        src: &SourceImage,
        roi: Roi,
        sigma: Option<f64>,
    ) -> Result<(Arc<PreparedRoi>, bool)> {
        let img = src.image();
        roi.validate(img.width(), img.height())?;
        let cfg = RetouchConfig {
            sigma,
            ..self.cfg.clone()
        };
        let key = FitKey::new(src.fingerprint(), roi, cfg.sigma_for(roi)?, &cfg, &self.mixing);
        self.cache
            .get_or_insert_with(key, || PreparedRoi::new(img, roi, &self.mixing, &cfg))
    }

    pub fn retouch(&self, src: &SourceImage, roi: Roi, gains: GainVector) -> Result<RetouchResult> {
        gains.validate()?;
        let img = src.image();
        roi.validate(img.width(), img.height())?;
        if gains.is_zero() {
            return Ok(self.unchanged(img, roi, gains));
        }
        let (prepared, _) = self.prepare(src, roi)?;
        self.render_full(img, prepared, gains)
    }

    fn unchanged(&self, img: &RgbImage8, roi: Roi, gains: GainVector) -> RetouchResult {
        let contrast = blemish_contrast(img, roi, &self.mixing, self.cfg.floor).ok();
        RetouchResult {
            image: img.clone(),
            roi,
            gains,
            clamp_counts: ClampCounts::default(),
            contrast_before: contrast,
            contrast_after: contrast,
            prepared: None,
        }
    }

    pub(crate) fn render_full(
        &self,
        img: &RgbImage8,
        prepared: Arc<PreparedRoi>,
        gains: GainVector,
    ) -> Result<RetouchResult> {
        let roi = prepared.roi;
        if gains.is_zero() {
            let mut out = self.unchanged(img, roi, gains);
            out.prepared = Some(prepared);
            return Ok(out);
        }
        let (patch, clamp_counts) = prepared.render(&self.mixing, gains, self.cfg.feather)?;
        let mut image = img.clone();
        image.paste(&patch, roi.x, roi.y)?;
        let before = blemish_contrast(img, roi, &self.mixing, self.cfg.floor).ok();
        let after = blemish_contrast(&image, roi, &self.mixing, self.cfg.floor).ok();
        Ok(RetouchResult {
            image,
            roi,
            gains,
            clamp_counts,
            contrast_before: before,
            contrast_after: after,
            prepared: Some(prepared),
        })
    }

    /// The retouched ROI with up to 16 px of untouched context around it.
    pub fn preview(&self, src: &SourceImage, prepared: &PreparedRoi, gains: GainVector) -> Result<RgbImage8> {
        gains.validate()?;
        let img = src.image();
        let roi = prepared.roi;
        let rect = roi.expand_clipped(PREVIEW_CONTEXT, img.width(), img.height());
        let mut out = img.crop(rect)?;
        if !gains.is_zero() {
            let (patch, _) = prepared.render(&self.mixing, gains, self.cfg.feather)?;
            out.paste(&patch, roi.x - rect.x, roi.y - rect.y)?;
        }
        Ok(out)
    }

    pub fn fade(&self, src: &SourceImage, roi: Roi, schedule: &GainSchedule) -> Result<Vec<FadeFrame>> {
        simulate_fading(self, src, roi, schedule)
    }

    /// Fading frames from an existing fit of the region.
    pub fn fade_prepared(
        &self,
        src: &SourceImage,
        prepared: Arc<PreparedRoi>,
        schedule: &GainSchedule,
    ) -> Result<Vec<FadeFrame>> {
        simulate_fading_prepared(self, src, prepared, schedule)
    }

    pub fn matrix(&self, src: &SourceImage, roi: Roi, alphas_h: &[f64], alphas_m: &[f64]) -> Result<GainMatrix> {
        gain_matrix(self, src, roi, alphas_h, alphas_m)
    }
}

/// One-shot edit without a cache.
pub fn retouch_roi(
    img: &RgbImage8,
    roi: Roi,
    gains: GainVector,
    mixing: &MixingMatrix,
    cfg: &RetouchConfig,
) -> Result<RetouchResult> {
    Retoucher::new(mixing.clone(), cfg.clone()).retouch(&SourceImage::new(img.clone()), roi, gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{blemish_fixture, reference_mixing};

    fn fixture() -> (RgbImage8, Roi) {
        let (scene, roi) = blemish_fixture(0);
        (scene.render(&reference_mixing()), roi)
    }

    #[test]
    fn zero_gain_is_byte_identical() {
        let (img, roi) = fixture();
        let r = retouch_roi(&img, roi, GainVector::ZERO, &reference_mixing(), &RetouchConfig::default()).unwrap();
        assert_eq!(r.image, img);
        assert!(r.prepared.is_none());
        assert_eq!(r.contrast_before, r.contrast_after);
    }

    #[test]
    fn edits_stay_inside_the_roi() {
        let (img, roi) = fixture();
        let g = GainVector::new(0.5, -1.0, 0.3).unwrap();
        let r = retouch_roi(&img, roi, g, &reference_mixing(), &RetouchConfig::default()).unwrap();
        let mut changed_inside = 0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if roi.contains(x, y) {
                    changed_inside += usize::from(r.image.pixel(x, y) != img.pixel(x, y));
                } else {
                    assert_eq!(r.image.pixel(x, y), img.pixel(x, y));
                }
            }
        }
        assert!(changed_inside > 100);
    }

    #[test]
    fn removal_reduces_contrast() {
        let (img, roi) = fixture();
        let r = retouch_roi(&img, roi, GainVector::melanin(-1.0).unwrap(), &reference_mixing(), &RetouchConfig::default()).unwrap();
        let (before, after) = (r.contrast_before.unwrap(), r.contrast_after.unwrap());
        // What remains is mostly 8-bit rounding carried through the texture.
        assert!(after.per_channel[1] < 0.3 * before.per_channel[1], "{before:?} -> {after:?}");
        assert!(after.total < before.total);
        assert!(r.converged());
        let counts: Vec<usize> = r.prepared.unwrap().fit.channels.iter().map(|c| c.gaussians.len()).collect();
        assert_eq!(counts, [0, 1, 0]);
    }

    #[test]
    fn apply_gain_is_linear() {
        let (img, roi) = fixture();
        let p = PreparedRoi::new(&img, roi, &reference_mixing(), &RetouchConfig::default()).unwrap();
        let base = &p.layers.base;
        let zero = apply_gain(base, &p.fit, GainVector::ZERO).unwrap();
        assert_eq!(&zero, base);
        let one = apply_gain(base, &p.fit, GainVector::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        let neg = apply_gain(base, &p.fit, GainVector::new(-1.0, -0.5, 2.0).unwrap()).unwrap();
        for (k, alpha) in [-1.0, -0.5, 2.0].into_iter().enumerate() {
            for i in 0..base.len() {
                let b = base.channel(k)[i];
                let want = alpha * (one.channel(k)[i] - b);
                assert!((neg.channel(k)[i] - b - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_gain_checks_shape() {
        let (img, roi) = fixture();
        let p = PreparedRoi::new(&img, roi, &reference_mixing(), &RetouchConfig::default()).unwrap();
        let other = PixelPatch::constant(8, 8, Space::Chromophore, [0.0; 3]).unwrap();
        assert!(apply_gain(&other, &p.fit, GainVector::ZERO).is_err());
        let wrong_space = PixelPatch::constant(64, 64, Space::Linear, [0.5; 3]).unwrap();
        assert!(apply_gain(&wrong_space, &p.fit, GainVector::ZERO).is_err());
    }

    #[test]
    fn feathering_leaves_the_border_closer_to_the_input() {
        let (img, roi) = fixture();
        let mixing = reference_mixing();
        let p = PreparedRoi::new(&img, roi, &mixing, &RetouchConfig::default()).unwrap();
        let g = GainVector::melanin(3.0).unwrap();
        let (plain, _) = p.render(&mixing, g, false).unwrap();
        let (soft, _) = p.render(&mixing, g, true).unwrap();
        let orig = img.crop(roi).unwrap();
        let dist = |a: &RgbImage8, x, y| {
            let (p, q) = (a.pixel(x, y), orig.pixel(x, y));
            (0..3).map(|c| (p[c] as i32 - q[c] as i32).abs()).sum::<i32>()
        };
        let (mut d_plain, mut d_soft) = (0, 0);
        for t in 0..64 {
            d_plain += dist(&plain, t, 0) + dist(&plain, 0, t);
            d_soft += dist(&soft, t, 0) + dist(&soft, 0, t);
        }
        assert!(d_soft <= d_plain);
        assert_eq!(plain.pixel(32, 32), soft.pixel(32, 32));
        assert_eq!(feather_weight(0, 5, 10, 10), 1.0 / 3.0);
        assert_eq!(feather_weight(1, 5, 10, 10), 2.0 / 3.0);
        assert_eq!(feather_weight(2, 5, 10, 10), 1.0);
    }

    #[test]
    fn repeated_prepare_hits_the_cache() {
        let (img, roi) = fixture();
        let r = Retoucher::new(reference_mixing(), RetouchConfig::default());
        let src = SourceImage::new(img);
        let (a, cached_a) = r.prepare(&src, roi).unwrap();
        let (b, cached_b) = r.prepare(&src, roi).unwrap();
        assert!(!cached_a && cached_b);
        assert!(Arc::ptr_eq(&a, &b));
        let (_, cached_c) = r.prepare_with_sigma(&src, roi, Some(3.0)).unwrap();
        assert!(!cached_c);
        assert_eq!(r.cache().len(), 2);
    }

    #[test]
    fn preview_has_a_context_ring() {
        let (img, roi) = fixture();
        let r = Retoucher::new(reference_mixing(), RetouchConfig::default());
        let src = SourceImage::new(img.clone());
        let (p, _) = r.prepare(&src, roi).unwrap();
        let zero = r.preview(&src, &p, GainVector::ZERO).unwrap();
        assert_eq!((zero.width(), zero.height()), (96, 96));
        assert_eq!(zero, img.crop(Roi::new(16, 16, 96, 96)).unwrap());
        let g = GainVector::melanin(-1.0).unwrap();
        let full = r.retouch(&src, roi, g).unwrap();
        let prev = r.preview(&src, &p, g).unwrap();
        assert_eq!(prev, full.image.crop(Roi::new(16, 16, 96, 96)).unwrap());
    }

    #[test]
    fn rejects_invalid_requests() {
        let (img, _) = fixture();
        let r = Retoucher::new(reference_mixing(), RetouchConfig::default());
        let src = SourceImage::new(img);
        assert!(r.retouch(&src, Roi::new(100, 100, 64, 64), GainVector::ZERO).is_err());
        assert!(r.retouch(&src, Roi::new(0, 0, 4, 64), GainVector::ZERO).is_err());
        let bad = GainVector { h: 0.0, m: 5.0, r: 0.0 };
        assert!(r.retouch(&src, Roi::new(0, 0, 16, 16), bad).is_err());
    }
}
