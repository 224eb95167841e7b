//! Forward-model synthetic skin.
//!
//! Images are built in chromophore space (smooth skin plus Gaussian
//! blemishes plus optional fine texture), pushed through a mixing matrix to
//! log-absorption, and encoded to 8-bit sRGB. Because the blemish is known
//! exactly, these images serve as oracles for the fitting and retouching
//! code and as the calibration source for the bundled mixing matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::chromophore::MixingMatrix;
use crate::error::Space;
use crate::pixel::{encode_channel, PixelPatch, RgbImage8, Roi};
use crate::sog::{eval_gaussian, GaussianParams};

/// Chromophore responses used to synthesize images: haemoglobin peaks in
/// green, melanin rises towards blue, the residual is flat-to-falling.
pub fn reference_mixing() -> MixingMatrix {
    MixingMatrix::new(
        [[0.10, 0.25, 0.40], [0.55, 0.45, 0.30], [0.35, 0.70, 0.25]],
        0,
    )
    .expect("reference matrix is well conditioned")
}

/// Typical healthy-skin concentrations under [`reference_mixing`].
pub const SKIN_CONCENTRATION: [f64; 3] = [0.8, 1.0, 0.3];

/// A blemish lobe in one chromophore channel, full-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticBlemish {
    pub chromophore: usize,
    pub lobe: GaussianParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinScene {
    pub width: usize,
    pub height: usize,
    pub skin: [f64; 3],
    /// Per-channel linear trend `[d/dx, d/dy]`.
    pub slope: [[f64; 2]; 3],
    pub blemishes: Vec<SyntheticBlemish>,
    /// Standard deviation of i.i.d. per-pixel texture, per channel.
    pub texture: f64,
    pub seed: u64,
}

impl SkinScene {
    pub fn flat(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            skin: SKIN_CONCENTRATION,
            slope: [[0.0; 2]; 3],
            blemishes: Vec::new(),
            texture: 0.0,
            seed: 0,
        }
    }

    pub fn with_blemish(mut self, chromophore: usize, lobe: GaussianParams) -> Self {
        self.blemishes.push(SyntheticBlemish { chromophore, lobe });
        self
    }

    /// Skin plus texture without any blemish.
    pub fn without_blemishes(&self) -> Self {
        Self {
            blemishes: Vec::new(),
            ..self.clone()
        }
    }

    /// Concentration maps, channels (H, M, r).
    pub fn concentrations(&self) -> PixelPatch {
        let (w, h) = (self.width, self.height);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.texture.max(0.0)).expect("finite texture level");
        let mut ch: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(w * h));
        for y in 0..h {
            for x in 0..w {
                for (k, c) in ch.iter_mut().enumerate() {
                    let (fx, fy) = (x as f64, y as f64);
                    let mut v = self.skin[k] + self.slope[k][0] * fx + self.slope[k][1] * fy;
                    for b in self.blemishes.iter().filter(|b| b.chromophore == k) {
                        v += eval_gaussian(&b.lobe, [fx, fy]);
                    }
                    if self.texture > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    c.push(v);
                }
            }
        }
        PixelPatch::new(w, h, Space::Chromophore, ch, (0, 0)).expect("finite synthetic values")
    }

    pub fn render(&self, mixing: &MixingMatrix) -> RgbImage8 {
        render_concentrations(&self.concentrations(), mixing)
    }
}

/// Mixes, exponentiates and encodes a concentration patch.
pub fn render_concentrations(c: &PixelPatch, mixing: &MixingMatrix) -> RgbImage8 {
    let mut data = Vec::with_capacity(c.len() * 3);
    for i in 0..c.len() {
        let a = mixing.mix(c.pixel(i));
        for v in a {
            data.push(encode_channel((-v.max(0.0)).exp()));
        }
    }
    RgbImage8::new(c.width(), c.height(), data).expect("sized from patch")
}

/// Skin with sparse, independent blotches in every chromophore channel.
///
/// The blotch amplitudes are exponential, so each concentration map is
/// strongly non-Gaussian and the three are independent: the setting ICA
/// needs to identify the mixing matrix.
pub fn sample_skin_image(width: usize, height: usize, seed: u64) -> RgbImage8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = SkinScene::flat(width, height);
    scene.skin = [0.5, 0.6, 0.15];
    let blotches = width * height / 900;
    for k in 0..3 {
        for _ in 0..blotches {
            let sigma: f64 = rng.random_range(2.5..9.0);
            let peak = 0.35 * Distribution::<f64>::sample(&Exp1, &mut rng);
            let lobe = GaussianParams::new(
                peak * 2.0 * std::f64::consts::PI * sigma * sigma,
                [
                    rng.random_range(0.0..width as f64),
                    rng.random_range(0.0..height as f64),
                ],
                sigma,
                sigma * rng.random_range(0.6..1.0),
                rng.random_range(0.0..std::f64::consts::PI),
            );
            scene = scene.with_blemish(k, lobe);
        }
    }
    scene.texture = 0.01;
    scene.seed = seed;
    scene.render(&reference_mixing())
}

/// A deterministic family of single-blemish fixtures: a 128x128 image with
/// one Gaussian blemish near the middle of a 64x64 ROI.
pub fn blemish_fixture(index: u64) -> (SkinScene, Roi) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1E5 + index);
    let chromophore = if index % 4 == 3 { 0 } else { 1 };
    let sigma_x: f64 = rng.random_range(6.0..8.5);
    let sigma_y: f64 = sigma_x * rng.random_range(0.65..1.0);
    let peak: f64 = rng.random_range(0.25..0.6) * if index % 5 == 4 { -1.0 } else { 1.0 };
    let lobe = GaussianParams::new(
        peak * 2.0 * std::f64::consts::PI * sigma_x * sigma_y,
        [64.0 + rng.random_range(-3.0..3.0), 64.0 + rng.random_range(-3.0..3.0)],
        sigma_x,
        sigma_y,
        rng.random_range(0.0..std::f64::consts::PI),
    );
    let mut scene = SkinScene::flat(128, 128).with_blemish(chromophore, lobe);
    scene.seed = index;
    (scene, Roi::new(32, 32, 64, 64))
}
