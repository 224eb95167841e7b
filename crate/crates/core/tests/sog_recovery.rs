use std::f64::consts::PI;

use blemish::sog::{
    eval_model, fit_blemish, fit_incremental, residual_jacobian, Field, FitConfig, GaussianParams,
    PlaneModel, LOBE_PARAMS,
};
use blemish::{PixelPatch, Space};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn recovers_a_negative_lobe() {
    let truth = GaussianParams::new(-6.0, [30.5, 22.0], 5.0, 3.0, 2.2);
    let plane = PlaneModel::new([-0.004, 0.002], 1.3);
    let field = eval_model(&plane, &[truth], 48, 48);
    let fit = fit_incremental(&field, &FitConfig::default()).unwrap();
    assert_eq!(fit.gaussians.len(), 1);
    let g = fit.gaussians[0];
    assert!(rel(g.a, truth.a) < 0.01);
    assert!((g.mu[0] - truth.mu[0]).abs() < 0.05 && (g.mu[1] - truth.mu[1]).abs() < 0.05);
    assert!(rel(g.sigma_x, truth.sigma_x) < 0.01 && rel(g.sigma_y, truth.sigma_y) < 0.01);
    assert!(angle_diff(g.theta, truth.theta) < 0.02);
    assert!(fit.converged);
}

#[test]
fn objective_never_worsens() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let truth = GaussianParams::new(
            rng.random_range(2.0..8.0),
            [rng.random_range(10.0..30.0), rng.random_range(10.0..30.0)],
            rng.random_range(2.0..5.0),
            rng.random_range(1.0..3.0),
            rng.random_range(0.0..PI),
        );
        let clean = eval_model(&PlaneModel::new([0.01, 0.0], 0.2), &[truth], 40, 40);
        let noisy: Vec<f64> = clean
            .values()
            .iter()
            .map(|v| v + rng.random_range(-0.01..0.01))
            .collect();
        let field = Field::new(40, 40, noisy).unwrap();
        let fit = fit_incremental(&field, &FitConfig::default()).unwrap();
        assert!(fit.greedy_rms <= fit.plane_rms);
        assert!(fit.rms <= fit.greedy_rms);
        assert!(fit.gaussians.len() <= 5);
        let model = eval_model(&fit.plane, &fit.gaussians, 40, 40);
        let rms = (field
            .values()
            .iter()
            .zip(model.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 1600.0)
            .sqrt();
        assert!((rms - fit.rms).abs() < 1e-9);
    }
}

#[test]
fn fit_is_bit_identical_across_runs() {
    let truth = [
        GaussianParams::new(4.0, [12.0, 14.0], 3.0, 2.0, 0.4),
        GaussianParams::new(-2.0, [20.0, 9.0], 2.0, 2.0, 0.0),
    ];
    let field = eval_model(&PlaneModel::new([0.003, -0.001], 0.7), &truth, 32, 24);
    let a = fit_incremental(&field, &FitConfig::default()).unwrap();
    let b = fit_incremental(&field, &FitConfig::default()).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn channels_without_a_blemish_get_no_lobes() {
    let (w, h) = (40, 40);
    let blemish = GaussianParams::new(5.0, [20.0, 18.0], 4.0, 3.0, 0.9);
    let m = eval_model(&PlaneModel::new([0.001, 0.002], 1.0), &[blemish], w, h);
    let hb = eval_model(&PlaneModel::new([-0.002, 0.0], 0.8), &[], w, h);
    let r = eval_model(&PlaneModel::new([0.0, 0.0], 0.3), &[], w, h);
    let base = PixelPatch::new(
        w,
        h,
        Space::Chromophore,
        [hb.into_values(), m.into_values(), r.into_values()],
        (0, 0),
    )
    .unwrap();
    let fit = fit_blemish(&base, &FitConfig::default()).unwrap();
    let counts: Vec<usize> = fit.channels.iter().map(|c| c.gaussians.len()).collect();
    assert_eq!(counts, [0, 1, 0]);
    for c in &fit.channels {
        assert!(c.rms <= c.plane_rms);
    }
    assert!(fit.blemish_field(0).values().iter().all(|v| *v == 0.0));
}

#[test]
fn wrong_space_is_rejected() {
    let p = PixelPatch::constant(16, 16, Space::LogAbsorption, [0.1; 3]).unwrap();
    assert!(fit_blemish(&p, &FitConfig::default()).is_err());
}

fn finite_difference_columns(
    plane: &PlaneModel,
    gs: &[GaussianParams],
    observed: &Field,
    h: f64,
) -> Vec<Vec<f64>> {
    let mut params: Vec<f64> = gs
        .iter()
        .flat_map(|g| [g.a, g.mu[0], g.mu[1], g.sigma_x, g.sigma_y, g.theta])
        .collect();
    params.extend([plane.k[0], plane.k[1], plane.d]);
    let unpack = |p: &[f64]| {
        let lobes: Vec<GaussianParams> = p[..gs.len() * LOBE_PARAMS]
            .chunks(LOBE_PARAMS)
            .map(|c| GaussianParams::new(c[0], [c[1], c[2]], c[3], c[4], c[5]))
            .collect();
        let n = gs.len() * LOBE_PARAMS;
        (lobes, PlaneModel::new([p[n], p[n + 1]], p[n + 2]))
    };
    (0..params.len())
        .map(|j| {
            let step = h * params[j].abs().max(1.0);
            let mut up = params.clone();
            let mut down = params.clone();
            up[j] += step;
            down[j] -= step;
            let (gu, pu) = unpack(&up);
            let (gd, pd) = unpack(&down);
            let fu = eval_model(&pu, &gu, observed.width(), observed.height());
            let fd = eval_model(&pd, &gd, observed.width(), observed.height());
            fu.values()
                .iter()
                .zip(fd.values())
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect()
        })
        .collect()
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let lobes: Vec<GaussianParams> = (0..rng.random_range(1..=3))
            .map(|_| {
                GaussianParams::new(
                    rng.random_range(-5.0..5.0),
                    [rng.random_range(0.0..16.0), rng.random_range(0.0..12.0)],
                    rng.random_range(0.8..6.0),
                    rng.random_range(0.8..6.0),
                    rng.random_range(0.0..PI),
                )
            })
            .collect();
        let plane = PlaneModel::new([rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)], 0.5);
        let observed = Field::from_fn(16, 12, |_, _| rng.random_range(-1.0..1.0));
        let (_, jac) = residual_jacobian(&plane, &lobes, &observed);
        let fd = finite_difference_columns(&plane, &lobes, &observed, 1e-5);
        for (j, col) in fd.iter().enumerate() {
            let scale = col
                .iter()
                .chain(jac.column(j).iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if scale < 1e-12 {
                continue;
            }
            let err = col
                .iter()
                .zip(jac.column(j).iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err / scale < 1e-4, "column {j}: {}", err / scale);
        }
    }
}
