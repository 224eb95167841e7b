use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use super::gaussian::{GaussianJson, Lobe};
use super::lm::{minimize, LmConfig, Problem};
use super::plane::PlaneJson;
use super::{eval_lobes, fit_plane, Field, GaussianParams, PlaneModel, LOBE_PARAMS};
use crate::chromophore::CHROMOPHORE_NAMES;
use crate::error::{Error, Result, Space};
use crate::json::Sig17;
use crate::pixel::{PixelPatch, MIN_ROI_SIDE};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Upper bound on lobes per channel.
    pub max_gaussians: usize,
    /// Stop adding lobes once one improves the rms by less than this fraction.
    pub rel_tol: f64,
    /// A new lobe is only seeded where `|residual|` exceeds this many
    /// residual standard deviations...
    pub amp_threshold_std: f64,
    /// ...and this absolute level, in field units.
    pub min_amplitude: f64,
    /// Width of a freshly seeded lobe, in pixels.
    pub initial_sigma: f64,
    /// Smallest width a lobe may shrink to.
    pub sigma_min: f64,
    pub lm: LmConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_gaussians: 5,
            rel_tol: 1e-3,
            amp_threshold_std: 2.0,
            min_amplitude: 1e-6,
            initial_sigma: 3.0,
            sigma_min: 0.5,
            lm: LmConfig::default(),
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("fit config: {what}")));
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be nonnegative");
        }
        if !(self.amp_threshold_std >= 0.0) || !(self.min_amplitude >= 0.0) {
            return bad("amplitude thresholds must be nonnegative");
        }
        if !(self.sigma_min > 0.0) || !(self.initial_sigma > self.sigma_min) {
            return bad("need 0 < sigma_min < initial_sigma");
        }
        if self.lm.max_iter == 0 || !(self.lm.lambda_factor > 1.0) || !(self.lm.lambda0 > 0.0) {
            return bad("invalid Levenberg-Marquardt settings");
        }
        Ok(())
    }
}

/// Fitted model for one chromophore channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFit {
    /// Skin trend. Kept for diagnostics; edits only touch the lobes.
    pub plane: PlaneModel,
    /// Lobes in the order they were added, each in canonical form.
    pub gaussians: Vec<GaussianParams>,
    pub rms: f64,
    /// Rms of the plane-only fit.
    pub plane_rms: f64,
    /// Rms after the greedy phase, before joint refinement.
    pub greedy_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Box constraints for lobe parameters.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    sigma_min: f64,
    sigma_max: f64,
    mu_lo: [f64; 2],
    mu_hi: [f64; 2],
}

impl Bounds {
    fn new(width: usize, height: usize, sigma_min: f64) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            sigma_min,
            sigma_max: (w * w + h * h).sqrt(),
            mu_lo: [-0.25 * w, -0.25 * h],
            mu_hi: [1.25 * w, 1.25 * h],
        }
    }

    fn u_max(&self) -> f64 {
        inv_softplus(self.sigma_max - self.sigma_min)
    }
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

fn inv_softplus(z: f64) -> f64 {
    let z = z.max(1e-12);
    z + (-(-z).exp_m1()).ln()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Internal layout per lobe: `[a, μx, μy, ux, uy, θ]`, `σ = σmin + softplus(u)`.
fn lobe_from_internal(p: &[f64], b: &Bounds) -> GaussianParams {
    GaussianParams {
        a: p[0],
        mu: [p[1], p[2]],
        sigma_x: b.sigma_min + softplus(p[3]),
        sigma_y: b.sigma_min + softplus(p[4]),
        theta: p[5],
    }
}

fn lobe_to_internal(g: &GaussianParams, b: &Bounds) -> [f64; LOBE_PARAMS] {
    [
        g.a,
        g.mu[0],
        g.mu[1],
        inv_softplus(g.sigma_x - b.sigma_min),
        inv_softplus(g.sigma_y - b.sigma_min),
        g.theta,
    ]
}

/// Least squares over `lobes` (and optionally a plane) against `target`.
struct SogProblem<'a> {
    target: &'a Field,
    lobes: usize,
    with_plane: bool,
    bounds: Bounds,
}

impl SogProblem<'_> {
    fn split(&self, x: &[f64]) -> (Vec<GaussianParams>, PlaneModel) {
        let lobes = (0..self.lobes)
            .map(|i| lobe_from_internal(&x[i * LOBE_PARAMS..(i + 1) * LOBE_PARAMS], &self.bounds))
            .collect();
        let plane = if self.with_plane {
            let p = self.lobes * LOBE_PARAMS;
            PlaneModel::new([x[p], x[p + 1]], x[p + 2])
        } else {
            PlaneModel::default()
        };
        (lobes, plane)
    }
}

impl Problem for SogProblem<'_> {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let (gs, plane) = self.split(x);
        let lobes: Vec<Lobe> = gs.into_iter().map(Lobe::new).collect();
        let w = self.target.width();
        self.target
            .values()
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let (px, py) = ((i % w) as f64, (i / w) as f64);
                plane.value(px, py) + lobes.iter().map(|l| l.value(px, py)).sum::<f64>() - obs
            })
            .collect()
    }

    fn residuals_and_jacobian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (gs, plane) = self.split(x);
        let lobes: Vec<Lobe> = gs.iter().copied().map(Lobe::new).collect();
        // dσ/du for each lobe's two widths.
        let chain: Vec<[f64; 2]> = (0..self.lobes)
            .map(|i| [sigmoid(x[i * LOBE_PARAMS + 3]), sigmoid(x[i * LOBE_PARAMS + 4])])
            .collect();
        let w = self.target.width();
        let n = self.target.values().len();
        let cols = x.len();
        let mut jac = DMatrix::zeros(n, cols);
        let mut res = Vec::with_capacity(n);
        for (i, obs) in self.target.values().iter().enumerate() {
            let (px, py) = ((i % w) as f64, (i / w) as f64);
            let mut v = plane.value(px, py);
            for (li, lobe) in lobes.iter().enumerate() {
                let (g, mut grad) = lobe.value_and_grad(px, py);
                grad[3] *= chain[li][0];
                grad[4] *= chain[li][1];
                v += g;
                for (c, d) in grad.iter().enumerate() {
                    jac[(i, li * LOBE_PARAMS + c)] = *d;
                }
            }
            if self.with_plane {
                let p = self.lobes * LOBE_PARAMS;
                jac[(i, p)] = px;
                jac[(i, p + 1)] = py;
                jac[(i, p + 2)] = 1.0;
            }
            res.push(v - obs);
        }
        (res, jac)
    }

    fn project(&self, x: &mut [f64]) {
        let u_max = self.bounds.u_max();
        for i in 0..self.lobes {
            let p = &mut x[i * LOBE_PARAMS..(i + 1) * LOBE_PARAMS];
            p[1] = p[1].clamp(self.bounds.mu_lo[0], self.bounds.mu_hi[0]);
            p[2] = p[2].clamp(self.bounds.mu_lo[1], self.bounds.mu_hi[1]);
            p[3] = p[3].min(u_max);
            p[4] = p[4].min(u_max);
        }
    }
}

fn rms_of(sse: f64, n: usize) -> f64 {
    (sse / n as f64).sqrt()
}

fn residual_field(field: &Field, plane: &PlaneModel, gaussians: &[GaussianParams]) -> Field {
    let lobes = eval_lobes(gaussians, field.width(), field.height());
    let w = field.width();
    let values = field
        .values()
        .iter()
        .zip(lobes.values())
        .enumerate()
        .map(|(i, (f, l))| f - l - plane.value((i % w) as f64, (i / w) as f64))
        .collect();
    Field::new(field.width(), field.height(), values).expect("same shape")
}

/// Plane, then greedy lobe-by-lobe additions against the frozen model's
/// residual, then a joint refinement of every parameter.
///
/// Lobes are seeded at the residual's absolute maximum. Lobe addition
/// stops when the residual peak is within the noise threshold, when a new
/// lobe improves the rms by less than `rel_tol` (that lobe is dropped), or
/// at `max_gaussians`. Solver non-convergence never fails the fit; it only
/// clears `converged`.
pub fn fit_incremental(field: &Field, cfg: &FitConfig) -> Result<ChannelFit> {
    cfg.validate()?;
    let (w, h) = (field.width(), field.height());
    if w < MIN_ROI_SIDE || h < MIN_ROI_SIDE {
        return Err(Error::Parameter(format!(
            "fit needs at least an 8x8 field, got {w}x{h}"
        )));
    }
    if field.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("field contains non-finite values".into()));
    }
    let n = w * h;
    let bounds = Bounds::new(w, h, cfg.sigma_min);

    let mut plane = fit_plane(field)?;
    let mut gaussians: Vec<GaussianParams> = Vec::new();
    let plane_rms = residual_field(field, &plane, &[]).rms();
    let mut rms = plane_rms;
    let mut iterations = 0;
    let mut converged = true;

    while gaussians.len() < cfg.max_gaussians {
        let resid = residual_field(field, &plane, &gaussians);
        let (peak_idx, peak) = resid
            .values()
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty field");
        let mean = resid.values().iter().sum::<f64>() / n as f64;
        let std = (resid.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if peak.abs() <= (cfg.amp_threshold_std * std).max(cfg.min_amplitude) {
            break;
        }

        let s0 = cfg.initial_sigma;
        let seed = GaussianParams::new(
            peak * 2.0 * PI * s0 * s0,
            [(peak_idx % w) as f64, (peak_idx / w) as f64],
            s0,
            s0,
            0.0,
        );
        // The plane was estimated with the blemish still in the data, so it
        // is re-solved alongside each new lobe; earlier lobes stay frozen.
        let target = residual_field(field, &PlaneModel::default(), &gaussians);
        let problem = SogProblem {
            target: &target,
            lobes: 1,
            with_plane: true,
            bounds,
        };
        let mut x0 = lobe_to_internal(&seed, &bounds).to_vec();
        x0.extend([plane.k[0], plane.k[1], plane.d]);
        let out = minimize(&problem, x0, &cfg.lm);
        iterations += out.iterations;
        let new_rms = rms_of(out.sse, n);
        if !(new_rms < rms) || (rms - new_rms) < cfg.rel_tol * rms {
            break;
        }
        converged &= out.converged;
        let (mut lobe, new_plane) = problem.split(&out.x);
        gaussians.push(lobe.remove(0));
        plane = new_plane;
        rms = new_rms;
    }
    let greedy_rms = rms;

    if !gaussians.is_empty() {
        let mut x0: Vec<f64> = gaussians
            .iter()
            .flat_map(|g| lobe_to_internal(g, &bounds))
            .collect();
        x0.extend([plane.k[0], plane.k[1], plane.d]);
        let problem = SogProblem {
            target: field,
            lobes: gaussians.len(),
            with_plane: true,
            bounds,
        };
        let out = minimize(&problem, x0, &cfg.lm);
        iterations += out.iterations;
        converged &= out.converged;
        let refined = rms_of(out.sse, n);
        if refined <= rms {
            let (gs, p) = problem.split(&out.x);
            gaussians = gs;
            plane = p;
            rms = refined;
        }
    }

    Ok(ChannelFit {
        plane,
        gaussians: gaussians.into_iter().map(GaussianParams::canonical).collect(),
        rms,
        plane_rms,
        greedy_rms,
        iterations,
        converged,
    })
}

/// Per-channel fits of a chromophore-space base layer, channels (H, M, r).
#[derive(Debug, Clone, PartialEq)]
pub struct BlemishFit {
    pub width: usize,
    pub height: usize,
    pub channels: [ChannelFit; 3],
}

/// Fits every chromophore channel independently; channels run on separate
/// threads and the result does not depend on scheduling.
pub fn fit_blemish(base: &PixelPatch, cfg: &FitConfig) -> Result<BlemishFit> {
    fit_blemish_channels(base, [cfg, cfg, cfg])
}

/// As [`fit_blemish`] with a separate configuration per channel.
pub fn fit_blemish_channels(base: &PixelPatch, cfgs: [&FitConfig; 3]) -> Result<BlemishFit> {
    base.expect_space(Space::Chromophore)?;
    let (w, h) = (base.width(), base.height());
    let results: Vec<Result<ChannelFit>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3)
            .map(|k| {
                let cfg = cfgs[k];
                s.spawn(move || {
                    let field = Field::new(w, h, base.channel(k).to_vec())?;
                    fit_incremental(&field, cfg)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fit thread panicked"))
            .collect()
    });
    let mut it = results.into_iter();
    let mut next = || it.next().expect("three channels");
    Ok(BlemishFit {
        width: w,
        height: h,
        channels: [next()?, next()?, next()?],
    })
}

impl BlemishFit {
    /// The fitted blemish of channel `k` (lobes only, plane excluded).
    pub fn blemish_field(&self, k: usize) -> Field {
        eval_lobes(&self.channels[k].gaussians, self.width, self.height)
    }

    pub fn converged(&self) -> bool {
        self.channels.iter().all(|c| c.converged)
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            width: self.width,
            height: self.height,
            channels: std::array::from_fn(|k| {
                let c = &self.channels[k];
                ChannelSummary {
                    chromophore: CHROMOPHORE_NAMES[k],
                    n: c.gaussians.len(),
                    rms: Sig17(c.rms),
                    plane_rms: Sig17(c.plane_rms),
                    iterations: c.iterations,
                    converged: c.converged,
                }
            }),
        }
    }

    /// Per-channel JSON, coordinates ROI-local, floats at 17 significant digits.
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, c) in self.channels.iter().enumerate() {
            let body = ChannelJson {
                plane: c.plane.json(),
                gaussians: c.gaussians.iter().map(GaussianParams::json).collect(),
                rms: Sig17(c.rms),
                converged: c.converged,
                iterations: c.iterations,
            };
            map.insert(
                CHROMOPHORE_NAMES[k].to_string(),
                serde_json::to_value(body).expect("fit serializes"),
            );
        }
        serde_json::Value::Object(map)
    }
}

#[derive(Serialize)]
struct ChannelJson {
    plane: PlaneJson,
    gaussians: Vec<GaussianJson>,
    rms: Sig17,
    converged: bool,
    iterations: usize,
}

/// Compact per-channel fit report shared by the CLI and the studio API.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FitSummary {
    pub width: usize,
    pub height: usize,
    pub channels: [ChannelSummary; 3],
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ChannelSummary {
    pub chromophore: &'static str,
    pub n: usize,
    pub rms: Sig17,
    pub plane_rms: Sig17,
    pub iterations: usize,
    pub converged: bool,
}
