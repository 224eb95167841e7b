//! Chromophore color space.
//!
//! In log-absorption space the three camera channels are a linear mix of
//! haemoglobin (H), melanin (M) and a residual absorber (r):
//! `a = E c`, with `E` a 3x3 mixing matrix whose columns are the per-channel
//! responses of each chromophore. [`estimate_mixing_matrix`] recovers `E`
//! from skin pixels by FastICA; [`to_chromophore`] and [`from_chromophore`]
//! move patches across the map.
//!
//! The residual component has no physical interpretation of its own. It is
//! kept as a free third axis so the map is invertible.

mod ica;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Space};
use crate::json::{sig3, Sig17};
use crate::layers::gaussian_blur;
use crate::pixel::{linear_to_log_absorption, srgb_to_linear, PixelPatch, RgbImage8};

pub use ica::{estimate_mixing_matrix, IcaConfig, MIN_ICA_SAMPLES};

/// Index of the haemoglobin channel in chromophore-space patches.
pub const HAEMOGLOBIN: usize = 0;
/// Index of the melanin channel.
pub const MELANIN: usize = 1;
/// Index of the residual channel.
pub const RESIDUAL: usize = 2;

pub const CHROMOPHORE_NAMES: [&str; 3] = ["H", "M", "r"];

const MAX_CONDITION: f64 = 1e6;

/// One pixel's log-absorption triple, ordered (R, G, B).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChromophoreSample(pub [f64; 3]);

impl From<[f64; 3]> for ChromophoreSample {
    fn from(a: [f64; 3]) -> Self {
        Self(a)
    }
}

/// The 3x3 map from chromophore concentrations to log-absorption.
///
/// Rows are camera channels (R, G, B), columns are chromophores (H, M, r).
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    e: Matrix3<f64>,
    inv: Matrix3<f64>,
    seed: u64,
}

impl MixingMatrix {
    /// Wraps a row-major matrix. Fails when it is singular or its condition
    /// number exceeds 1e6.
    pub fn new(rows: [[f64; 3]; 3], seed: u64) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|i, j| rows[i][j]), seed)
    }

    pub(crate) fn from_matrix(e: Matrix3<f64>, seed: u64) -> Result<Self> {
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("mixing matrix has non-finite entries".into()));
        }
        let sv = e.singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        if lo <= 0.0 || hi / lo >= MAX_CONDITION {
            return Err(Error::Parameter(format!(
                "mixing matrix is singular or ill-conditioned (singular values {hi:e} / {lo:e})"
            )));
        }
        let inv = e
            .try_inverse()
            .ok_or_else(|| Error::Parameter("mixing matrix is not invertible".into()))?;
        Ok(Self { e, inv, seed })
    }

    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity(), 0).expect("identity is well conditioned")
    }

    /// The matrix shipped with the crate, estimated from `data/sample_skin.png`.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../../data/default_mixing.json"))
            .expect("bundled mixing matrix is valid")
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.e[(i, j)]))
    }

    pub fn inverse_rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.inv[(i, j)]))
    }

    /// Response of chromophore `k` in the (R, G, B) channels.
    pub fn column(&self, k: usize) -> [f64; 3] {
        std::array::from_fn(|i| self.e[(i, k)])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn condition_number(&self) -> f64 {
        let sv = self.e.singular_values();
        sv.max() / sv.min()
    }

    /// Concentrations of one log-absorption triple.
    pub fn unmix(&self, a: [f64; 3]) -> [f64; 3] {
        (self.inv * Vector3::from(a)).into()
    }

    /// Log-absorption of one concentration triple.
    pub fn mix(&self, c: [f64; 3]) -> [f64; 3] {
        (self.e * Vector3::from(c)).into()
    }

    pub fn to_json(&self) -> String {
        let file = MixingFile {
            channels: ["R", "G", "B"],
            chromophores: CHROMOPHORE_NAMES,
            e: self.rows().map(sig3),
            seed: self.seed,
        };
        serde_json::to_string(&file).expect("mixing matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MixingFileIn = serde_json::from_str(s)?;
        if file.channels != ["R", "G", "B"] || file.chromophores != CHROMOPHORE_NAMES {
            return Err(Error::Parameter(
                "mixing matrix JSON must use channels R,G,B and chromophores H,M,r".into(),
            ));
        }
        Self::new(file.e, file.seed)
    }

    /// Stable fingerprint of the matrix bits, for cache keys.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in self.e.iter() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

#[derive(Serialize)]
struct MixingFile {
    channels: [&'static str; 3],
    chromophores: [&'static str; 3],
    e: [[Sig17; 3]; 3],
    seed: u64,
}

#[derive(Deserialize)]
struct MixingFileIn {
    channels: [String; 3],
    chromophores: [String; 3],
    e: [[f64; 3]; 3],
    #[serde(default)]
    seed: u64,
}

/// `c = E⁻¹ a` per pixel. Channels come out ordered (H, M, r).
pub fn to_chromophore(p: &PixelPatch, e: &MixingMatrix) -> Result<PixelPatch> {
    p.expect_space(Space::LogAbsorption)?;
    Ok(p.map_pixels(Space::Chromophore, |a| e.unmix(a)))
}

/// `a = E c` per pixel, clamped to be nonnegative.
pub fn from_chromophore(p: &PixelPatch, e: &MixingMatrix) -> Result<PixelPatch> {
    from_chromophore_counted(p, e).map(|(patch, _)| patch)
}

/// As [`from_chromophore`], also reporting how many values per output
/// channel (R, G, B) came out negative and were clamped to zero.
pub fn from_chromophore_counted(
    p: &PixelPatch,
    e: &MixingMatrix,
) -> Result<(PixelPatch, [usize; 3])> {
    p.expect_space(Space::Chromophore)?;
    let mut counts = [0usize; 3];
    let out = p.map_pixels(Space::LogAbsorption, |c| {
        let mut a = e.mix(c);
        for (k, v) in a.iter_mut().enumerate() {
            if *v < 0.0 {
                counts[k] += 1;
                *v = 0.0;
            }
        }
        a
    });
    Ok((out, counts))
}

/// How ICA calibration pixels are drawn from an image.
#[derive(Debug, Clone)]
pub struct SamplingConfig {
    /// Blur applied first, so samples come from the diffusion layer.
    pub sigma: f64,
    pub floor: f64,
    /// Uniform subsampling cap.
    pub max_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            sigma: 5.0,
            floor: crate::pixel::DEFAULT_REFLECTANCE_FLOOR,
            max_samples: 50_000,
        }
    }
}

/// Log-absorption samples from the diffusion layer of `img`, optionally
/// restricted to `mask` (one flag per pixel, row-major).
pub fn collect_samples(
    img: &RgbImage8,
    mask: Option<&[bool]>,
    cfg: &SamplingConfig,
) -> Result<Vec<ChromophoreSample>> {
    if let Some(m) = mask {
        if m.len() != img.width() * img.height() {
            return Err(Error::DimensionMismatch(format!(
                "skin mask has {} entries for a {}x{} image",
                m.len(),
                img.width(),
                img.height()
            )));
        }
    }
    let absorption = linear_to_log_absorption(&srgb_to_linear(img), cfg.floor)?;
    let base = gaussian_blur(&absorption, cfg.sigma)?;
    let candidates: Vec<usize> = (0..base.len())
        .filter(|&i| mask.is_none_or(|m| m[i]))
        .collect();
    let stride = candidates.len().div_ceil(cfg.max_samples.max(1)).max(1);
    Ok(candidates
        .iter()
        .step_by(stride)
        .map(|&i| ChromophoreSample(base.pixel(i)))
        .collect())
}

/// Samples `img` and runs ICA on the samples.
pub fn estimate_from_image(
    img: &RgbImage8,
    mask: Option<&[bool]>,
    sampling: &SamplingConfig,
    ica: &IcaConfig,
) -> Result<MixingMatrix> {
    estimate_mixing_matrix(&collect_samples(img, mask, sampling)?, ica)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matrix_is_reproducible_from_the_sample_image() {
        let png = include_bytes!("../../data/sample_skin.png");
        let img = crate::png_io::decode_png(png).unwrap();
        let e = estimate_from_image(&img, None, &SamplingConfig::default(), &IcaConfig::default()).unwrap();
        assert_eq!(e.to_json(), MixingMatrix::bundled().to_json());
    }

    fn reference() -> MixingMatrix {
        MixingMatrix::new(
            [[0.30, 0.20, 0.60], [0.90, 0.45, 0.35], [0.50, 0.80, 0.25]],
            42,
        )
        .unwrap()
    }

    #[test]
    fn identity_conversion_is_a_no_op() {
        let p = PixelPatch::new(
            2,
            1,
            Space::LogAbsorption,
            [vec![0.1, 0.2], vec![1.5, 0.0], vec![3.0, 2.0]],
            (4, 5),
        )
        .unwrap();
        let c = to_chromophore(&p, &MixingMatrix::identity()).unwrap();
        assert_eq!(c.space(), Space::Chromophore);
        assert_eq!(c.channels(), p.channels());
        assert_eq!(c.origin(), (4, 5));
    }

    #[test]
    fn known_concentrations_are_recovered() {
        let e = reference();
        let a = e.mix([1.0, 2.0, 3.0]);
        let p = PixelPatch::new(
            1,
            1,
            Space::LogAbsorption,
            [vec![a[0]], vec![a[1]], vec![a[2]]],
            (0, 0),
        )
        .unwrap();
        let c = to_chromophore(&p, &e).unwrap();
        for (k, want) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            assert!((c.get(k, 0, 0) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_concentration_is_zero_absorption() {
        let c = PixelPatch::constant(3, 3, Space::Chromophore, [0.0; 3]).unwrap();
        let (a, counts) = from_chromophore_counted(&c, &reference()).unwrap();
        assert!(a.channels().iter().flatten().all(|&v| v == 0.0));
        assert_eq!(counts, [0; 3]);
    }

    #[test]
    fn negative_absorption_is_clamped_and_counted() {
        let c = PixelPatch::new(
            2,
            1,
            Space::Chromophore,
            [vec![-1.0, 0.1], vec![0.0, 0.1], vec![0.0, 0.1]],
            (0, 0),
        )
        .unwrap();
        let (a, counts) = from_chromophore_counted(&c, &reference()).unwrap();
        assert_eq!(counts, [1, 1, 1]);
        assert_eq!(a.pixel(0), [0.0; 3]);
        assert!(a.pixel(1).iter().all(|&v| v > 0.0));
    }

    #[test]
    fn space_mismatch() {
        let c = PixelPatch::constant(2, 2, Space::Chromophore, [0.0; 3]).unwrap();
        assert!(to_chromophore(&c, &reference()).is_err());
        let a = PixelPatch::constant(2, 2, Space::LogAbsorption, [0.0; 3]).unwrap();
        assert!(from_chromophore(&a, &reference()).is_err());
    }

    #[test]
    fn singular_matrices_are_rejected() {
        assert!(MixingMatrix::new([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]], 0).is_err());
        assert!(MixingMatrix::new([[1.0, 0.0, 0.0], [0.0, 1e-7, 0.0], [0.0, 0.0, 1.0]], 0).is_err());
    }

    #[test]
    fn json_layout() {
        let e = reference();
        let s = e.to_json();
        assert!(s.starts_with(r#"{"channels":["R","G","B"],"chromophores":["H","M","r"],"e":[["#));
        assert!(s.ends_with(r#"]],"seed":42}"#));
        assert!(s.contains("2.9999999999999999e-1"));
        let back = MixingMatrix::from_json(&s).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn bundled_matrix_loads() {
        let e = MixingMatrix::bundled();
        assert!(e.condition_number() < 1e6);
    }
}
