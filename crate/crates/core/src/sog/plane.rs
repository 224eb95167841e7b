use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use super::Field;
use crate::error::{Error, Result};
use crate::json::{sig2, Sig17};

/// Local skin trend `k·x + d` in ROI pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlaneModel {
    pub k: [f64; 2],
    pub d: f64,
}

impl PlaneModel {
    pub fn new(k: [f64; 2], d: f64) -> Self {
        Self { k, d }
    }

    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.k[0] * x + self.k[1] * y + self.d
    }

    pub(crate) fn json(&self) -> PlaneJson {
        PlaneJson {
            k: sig2(self.k),
            d: Sig17(self.d),
        }
    }
}

#[derive(Serialize)]
pub(crate) struct PlaneJson {
    k: [Sig17; 2],
    d: Sig17,
}

/// Ordinary least squares plane through every sample of `field`.
///
/// Coordinates are centered before the normal equations are formed, which
/// keeps them well conditioned on large grids.
pub fn fit_plane(field: &Field) -> Result<PlaneModel> {
    let (w, h) = (field.width(), field.height());
    let n = (w * h) as f64;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;

    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for y in 0..h {
        for x in 0..w {
            let row = Vector3::new(x as f64 - cx, y as f64 - cy, 1.0);
            ata += row * row.transpose();
            atb += row * field.get(x, y);
        }
    }
    // Samples on one line leave a zero-variance direction.
    let sxx = ata[(0, 0)] / n;
    let syy = ata[(1, 1)] / n;
    let sxy = ata[(0, 1)] / n;
    if sxx * syy - sxy * sxy <= 1e-12 * (sxx + syy).max(1.0) {
        return Err(Error::Rank(format!("a {w}x{h} grid does not span a plane")));
    }
    let sol = ata
        .cholesky()
        .ok_or_else(|| Error::Rank("plane normal equations are singular".into()))?
        .solve(&atb);
    let k = [sol[0], sol[1]];
    Ok(PlaneModel {
        k,
        d: sol[2] - k[0] * cx - k[1] * cy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_plane() {
        let f = Field::from_fn(17, 11, |x, y| 2.0 * x + 3.0 * y + 1.0);
        let p = fit_plane(&f).unwrap();
        assert!((p.k[0] - 2.0).abs() < 1e-12);
        assert!((p.k[1] - 3.0).abs() < 1e-12);
        assert!((p.d - 1.0).abs() < 1e-11);
    }

    #[test]
    fn constant_field() {
        let f = Field::from_fn(9, 9, |_, _| -0.75);
        let p = fit_plane(&f).unwrap();
        assert!(p.k[0].abs() < 1e-15 && p.k[1].abs() < 1e-15);
        assert!((p.d + 0.75).abs() < 1e-14);
    }

    #[test]
    fn single_row_is_degenerate() {
        let f = Field::from_fn(10, 1, |x, _| x);
        assert!(matches!(fit_plane(&f), Err(Error::Rank(_))));
    }

    #[test]
    fn noisy_slopes_within_three_standard_errors() {
        // For OLS on a full grid the slope standard error is σ / sqrt(Σ (x - x̄)²).
        let (w, h, noise) = (32usize, 24usize, 0.01);
        let sxx: f64 = (0..w)
            .map(|x| (x as f64 - (w as f64 - 1.0) / 2.0).powi(2))
            .sum::<f64>()
            * h as f64;
        let syy: f64 = (0..h)
            .map(|y| (y as f64 - (h as f64 - 1.0) / 2.0).powi(2))
            .sum::<f64>()
            * w as f64;
        let (se_x, se_y) = (noise / sxx.sqrt(), noise / syy.sqrt());
        let dist = Normal::new(0.0, noise).unwrap();
        let (mut outside, mut mean_x, mut mean_y) = (0, 0.0, 0.0);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Field::from_fn(w, h, |x, y| {
                0.02 * x - 0.01 * y + 0.4 + dist.sample(&mut rng)
            });
            let p = fit_plane(&f).unwrap();
            let (ex, ey) = (p.k[0] - 0.02, p.k[1] + 0.01);
            outside += usize::from(ex.abs() > 3.0 * se_x) + usize::from(ey.abs() > 3.0 * se_y);
            mean_x += ex / 100.0;
            mean_y += ey / 100.0;
        }
        // 200 draws at a 0.27% two-sided tail: about 0.5 excursions expected.
        assert!(outside <= 3, "{outside} slopes outside 3 standard errors");
        assert!(mean_x.abs() < 3.0 * se_x / 10.0);
        assert!(mean_y.abs() < 3.0 * se_y / 10.0);
    }
}
