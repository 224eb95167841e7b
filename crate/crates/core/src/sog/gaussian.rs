use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::json::{sig2, Sig17};

/// One rotated, anisotropic 2D Gaussian lobe.
///
/// `a` is the integrated amplitude: the peak height is `a / (2π σx σy)`.
/// The covariance is `R(θ) diag(σx², σy²) R(θ)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub a: f64,
    pub mu: [f64; 2],
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub theta: f64,
}

impl GaussianParams {
    pub fn new(a: f64, mu: [f64; 2], sigma_x: f64, sigma_y: f64, theta: f64) -> Self {
        Self {
            a,
            mu,
            sigma_x,
            sigma_y,
            theta,
        }
    }

    pub fn peak(&self) -> f64 {
        self.a / (2.0 * PI * self.sigma_x * self.sigma_y)
    }

    /// The same lobe with `σx ≥ σy` and `θ ∈ [0, π)`.
    pub fn canonical(mut self) -> Self {
        if self.sigma_y > self.sigma_x {
            std::mem::swap(&mut self.sigma_x, &mut self.sigma_y);
            self.theta += PI / 2.0;
        }
        self.theta = wrap_angle(self.theta);
        self
    }

    pub(crate) fn json(&self) -> GaussianJson {
        GaussianJson {
            a: Sig17(self.a),
            mu: sig2(self.mu),
            sigma: sig2([self.sigma_x, self.sigma_y]),
            theta: Sig17(self.theta),
        }
    }
}

#[derive(Serialize)]
pub(crate) struct GaussianJson {
    a: Sig17,
    mu: [Sig17; 2],
    sigma: [Sig17; 2],
    theta: Sig17,
}

/// Wraps an angle into `[0, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs.
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(σx, σy)`.
pub fn build_covariance(sigma_x: f64, sigma_y: f64, theta: f64) -> Result<Matrix2<f64>> {
    if !(sigma_x > 0.0 && sigma_y > 0.0) {
        return Err(Error::Parameter(format!(
            "Gaussian widths must be positive, got ({sigma_x}, {sigma_y})"
        )));
    }
    let (s, c) = theta.sin_cos();
    let r = Matrix2::new(c, -s, s, c);
    let ss = Matrix2::new(sigma_x * sigma_x, 0.0, 0.0, sigma_y * sigma_y);
    Ok(r * ss * r.transpose())
}

/// Per-lobe values reused across evaluations at many points.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lobe {
    pub g: GaussianParams,
    pub cos: f64,
    pub sin: f64,
    pub inv_sx2: f64,
    pub inv_sy2: f64,
    pub norm: f64,
}

/// Partial derivatives of one lobe at one point, in
/// `[a, μx, μy, σx, σy, θ]` order.
pub(crate) type LobeGrad = [f64; 6];

impl Lobe {
    pub fn new(g: GaussianParams) -> Self {
        let (sin, cos) = g.theta.sin_cos();
        Self {
            g,
            cos,
            sin,
            inv_sx2: 1.0 / (g.sigma_x * g.sigma_x),
            inv_sy2: 1.0 / (g.sigma_y * g.sigma_y),
            norm: 1.0 / (2.0 * PI * g.sigma_x * g.sigma_y),
        }
    }

    /// Coordinates of `(x, y)` along the lobe's own axes.
    #[inline]
    fn axes(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.g.mu[0];
        let dy = y - self.g.mu[1];
        (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
    }

    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let (p, q) = self.axes(x, y);
        let quad = p * p * self.inv_sx2 + q * q * self.inv_sy2;
        self.g.a * self.norm * (-0.5 * quad).exp()
    }

    #[inline]
    pub fn value_and_grad(&self, x: f64, y: f64) -> (f64, LobeGrad) {
        let (p, q) = self.axes(x, y);
        let pa = p * self.inv_sx2;
        let qb = q * self.inv_sy2;
        let e = (-0.5 * (p * pa + q * qb)).exp();
        let unit = self.norm * e;
        let v = self.g.a * unit;
        let grad = [
            unit,
            v * (pa * self.cos - qb * self.sin),
            v * (pa * self.sin + qb * self.cos),
            v * (p * pa - 1.0) / self.g.sigma_x,
            v * (q * qb - 1.0) / self.g.sigma_y,
            -v * p * q * (self.inv_sx2 - self.inv_sy2),
        ];
        (v, grad)
    }
}

/// `G(x) = a / (2π σx σy) · exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`
pub fn eval_gaussian(g: &GaussianParams, x: [f64; 2]) -> f64 {
    Lobe::new(*g).value(x[0], x[1])
}
