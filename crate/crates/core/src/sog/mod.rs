//! Sum-of-Gaussians blemish model.
//!
//! One chromophore channel of a base-layer region is modelled as a plane
//! (the surrounding skin) plus `N` rotated anisotropic Gaussian lobes (the
//! blemish, blurred by subsurface scattering):
//!
//! ```text
//! f(x) = k·x + d + Σᵢ aᵢ / (2π σxᵢ σyᵢ) · exp(-½ (x-μᵢ)ᵀ Σᵢ⁻¹ (x-μᵢ))
//! Σᵢ = R(θᵢ) diag(σxᵢ², σyᵢ²) R(θᵢ)ᵀ
//! ```
//!
//! [`fit_incremental`] adds lobes one at a time against the residual of the
//! frozen model, then refines everything jointly.

mod fit;
mod gaussian;
mod lm;
mod plane;

use nalgebra::DMatrix;

pub use fit::{fit_blemish, fit_blemish_channels, fit_incremental, BlemishFit, ChannelFit, FitConfig, FitSummary};
pub use gaussian::{build_covariance, eval_gaussian, wrap_angle, GaussianParams};
pub use lm::LmConfig;
pub use plane::{fit_plane, PlaneModel};

use gaussian::Lobe;

/// A scalar field on an integer pixel grid; `x` is the column, `y` the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> crate::Result<Self> {
        if values.len() != width * height {
            return Err(crate::Error::DimensionMismatch(format!(
                "{width}x{height} field needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..width * height)
            .map(|i| f((i % width) as f64, (i / width) as f64))
            .collect();
        Self {
            width,
            height,
            values,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

/// Sum of the lobes alone, without the plane.
pub fn eval_lobes(gaussians: &[GaussianParams], width: usize, height: usize) -> Field {
    let lobes: Vec<Lobe> = gaussians.iter().map(|g| Lobe::new(*g)).collect();
    Field::from_fn(width, height, |x, y| lobes.iter().map(|l| l.value(x, y)).sum())
}

/// `k·x + d + Σ Gᵢ(x)` sampled on a `width x height` grid.
pub fn eval_model(plane: &PlaneModel, gaussians: &[GaussianParams], width: usize, height: usize) -> Field {
    let lobes: Vec<Lobe> = gaussians.iter().map(|g| Lobe::new(*g)).collect();
    Field::from_fn(width, height, |x, y| {
        plane.value(x, y) + lobes.iter().map(|l| l.value(x, y)).sum::<f64>()
    })
}

/// Number of Jacobian columns per lobe.
pub const LOBE_PARAMS: usize = 6;

/// Residual `model - observed` and its analytic Jacobian.
///
/// Columns are `[a, μx, μy, σx, σy, θ]` for each lobe in order, followed
/// by `[kx, ky, d]` for the plane.
pub fn residual_jacobian(
    plane: &PlaneModel,
    gaussians: &[GaussianParams],
    observed: &Field,
) -> (Vec<f64>, DMatrix<f64>) {
    let (w, h) = (observed.width, observed.height);
    let lobes: Vec<Lobe> = gaussians.iter().map(|g| Lobe::new(*g)).collect();
    let cols = LOBE_PARAMS * lobes.len() + 3;
    let mut jac = DMatrix::zeros(w * h, cols);
    let mut res = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let mut v = plane.value(x, y);
        for (li, lobe) in lobes.iter().enumerate() {
            let (g, grad) = lobe.value_and_grad(x, y);
            v += g;
            for (c, d) in grad.iter().enumerate() {
                jac[(i, li * LOBE_PARAMS + c)] = *d;
            }
        }
        let p = LOBE_PARAMS * lobes.len();
        jac[(i, p)] = x;
        jac[(i, p + 1)] = y;
        jac[(i, p + 2)] = 1.0;
        res.push(v - observed.values[i]);
    }
    (res, jac)
}
