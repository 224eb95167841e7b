//! Symmetric FastICA with the log-cosh contrast, specialised to three
//! channels, followed by canonical ordering of the recovered columns.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ChromophoreSample, MixingMatrix, HAEMOGLOBIN, MELANIN, RESIDUAL};
use crate::error::{Error, Result};

pub const MIN_ICA_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct IcaConfig {
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

pub(crate) struct Whitened {
    pub mean: Vector3<f64>,
    /// `z = K (x - mean)`
    pub k: Matrix3<f64>,
    pub z: Vec<Vector3<f64>>,
}

fn covariance(z: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = z.len() as f64;
    z.iter().fold(Matrix3::zeros(), |acc, v| acc + v * v.transpose()) / n
}

pub(crate) fn whiten(samples: &[ChromophoreSample]) -> Result<Whitened> {
    let n = samples.len() as f64;
    let mean = samples
        .iter()
        .fold(Vector3::zeros(), |acc, s| acc + Vector3::from(s.0))
        / n;
    let centered: Vec<Vector3<f64>> = samples.iter().map(|s| Vector3::from(s.0) - mean).collect();
    let cov = covariance(&centered);

    let eig = SymmetricEigen::new(cov);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(hi > 0.0) || lo <= hi * 1e-12 {
        return Err(Error::DegenerateSamples(format!(
            "sample covariance is rank deficient (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let k = d * eig.eigenvectors.transpose();
    let z: Vec<Vector3<f64>> = centered.iter().map(|x| k * x).collect();

    let err = (covariance(&z) - Matrix3::identity()).amax();
    if err > 1e-8 {
        return Err(Error::DegenerateSamples(format!(
            "whitening failed to reach identity covariance (max deviation {err:e})"
        )));
    }
    Ok(Whitened { mean, k, z })
}

/// `(W Wᵀ)^{-1/2} W`
fn decorrelate(w: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose() * w
}

fn fixed_point(z: &[Vector3<f64>], cfg: &IcaConfig) -> Result<Matrix3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Matrix3::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let mut w = decorrelate(&init);
    let n = z.len() as f64;

    for _ in 0..cfg.max_iter {
        let mut gz = Matrix3::zeros();
        let mut gp = Vector3::zeros();
        for x in z {
            let y = (w * x).map(f64::tanh);
            gz += y * x.transpose();
            gp += y.map(|t| 1.0 - t * t);
        }
        let next = decorrelate(&(gz / n - Matrix3::from_diagonal(&(gp / n)) * w));
        let lim = (next * w.transpose())
            .diagonal()
            .iter()
            .map(|d| (d.abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if lim < cfg.tol {
            return Ok(w);
        }
    }
    Err(Error::Convergence {
        iterations: cfg.max_iter,
    })
}

/// How strictly a column increases from R to B. Positive only for a
/// monotone profile, which is what melanin's absorption looks like.
fn melanin_score(c: [f64; 3]) -> f64 {
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    (c[1] - c[0]).min(c[2] - c[1]) / norm
}

/// Dominance of the green channel, haemoglobin's absorption peak.
fn haemoglobin_score(c: [f64; 3]) -> f64 {
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    (c[1] - c[0].max(c[2])) / norm
}

/// Flips column signs so mean concentrations are nonnegative, then orders
/// columns as (H, M, r) by spectral shape.
fn canonicalize(mixing: Matrix3<f64>, mean: &Vector3<f64>) -> Matrix3<f64> {
    let unmix = mixing.try_inverse().expect("ICA mixing is invertible");
    let mean_conc = unmix * mean;
    let mut cols: Vec<[f64; 3]> = (0..3)
        .map(|j| {
            let col: [f64; 3] = std::array::from_fn(|i| mixing[(i, j)]);
            let m = mean_conc[j];
            let flip = if m.abs() > 1e-12 * mean.norm().max(1e-300) {
                m < 0.0
            } else {
                col.iter().sum::<f64>() < 0.0
            };
            if flip {
                col.map(|v| -v)
            } else {
                col
            }
        })
        .collect();

    let pick = |cols: &mut Vec<[f64; 3]>, score: fn([f64; 3]) -> f64| {
        let best = (0..cols.len())
            .max_by(|&a, &b| score(cols[a]).total_cmp(&score(cols[b])))
            .expect("non-empty");
        cols.remove(best)
    };
    let mut ordered = [[0.0; 3]; 3];
    ordered[MELANIN] = pick(&mut cols, melanin_score);
    ordered[HAEMOGLOBIN] = pick(&mut cols, haemoglobin_score);
    ordered[RESIDUAL] = cols[0];
    Matrix3::from_fn(|i, j| ordered[j][i])
}

/// Estimates the mixing matrix from log-absorption samples by FastICA.
///
/// Samples are centered and whitened, the symmetric fixed-point iteration
/// runs from a seeded random start, and the unmixing is inverted back to a
/// mixing matrix. The recovered columns are unit-variance sources; their
/// sign and order are fixed by [`MixingMatrix`] conventions, never by ICA
/// output order.
pub fn estimate_mixing_matrix(
    samples: &[ChromophoreSample],
    cfg: &IcaConfig,
) -> Result<MixingMatrix> {
    if samples.len() < MIN_ICA_SAMPLES {
        return Err(Error::TooFewSamples {
            required: MIN_ICA_SAMPLES,
            got: samples.len(),
        });
    }
    if samples
        .iter()
        .any(|s| s.0.iter().any(|v| !v.is_finite() || *v < 0.0))
    {
        return Err(Error::Parameter(
            "log-absorption samples must be finite and nonnegative".into(),
        ));
    }
    let white = whiten(samples)?;
    let w = fixed_point(&white.z, cfg)?;
    // W is orthogonal, so (W K)⁻¹ = K⁻¹ Wᵀ.
    let k_inv = white
        .k
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSamples("whitening matrix is singular".into()))?;
    let mixing = k_inv * w.transpose();
    MixingMatrix::from_matrix(canonicalize(mixing, &white.mean), cfg.seed)
}
