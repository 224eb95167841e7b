//! Several edits of one region: fading sequences and gain grids.

use std::sync::Arc;

use super::{GainSchedule, GainVector, PreparedRoi, RetouchResult, Retoucher, SourceImage};
use crate::error::{Error, Result};
use crate::pixel::{RgbImage8, Roi};

/// Gap between grid tiles, in pixels.
pub const GRID_SEPARATOR: usize = 4;
/// Colour of the separator ring around the unedited `(0, 0)` tile.
pub const ORIGINAL_MARK: [u8; 3] = [220, 30, 30];
const SEPARATOR_FILL: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone)]
pub struct FadeFrame {
    pub label: String,
    pub result: RetouchResult,
}

/// One full-image render per schedule entry, all from a single fit.
pub fn simulate_fading(
    r: &Retoucher,
    src: &SourceImage,
    roi: Roi,
    schedule: &GainSchedule,
) -> Result<Vec<FadeFrame>> {
    let img = src.image();
    roi.validate(img.width(), img.height())?;
    let prepared = if needs_fit(schedule) {
        Some(r.prepare(src, roi)?.0)
    } else {
        None
    };
    render_frames(r, img, roi, prepared, schedule)
}

/// As [`simulate_fading`], reusing a fit made earlier.
pub fn simulate_fading_prepared(
    r: &Retoucher,
    src: &SourceImage,
    prepared: Arc<PreparedRoi>,
    schedule: &GainSchedule,
) -> Result<Vec<FadeFrame>> {
    let roi = prepared.roi;
    let prepared = needs_fit(schedule).then_some(prepared);
    render_frames(r, src.image(), roi, prepared, schedule)
}

fn needs_fit(schedule: &GainSchedule) -> bool {
    schedule.entries().iter().any(|e| !e.gains.is_zero())
}

fn render_frames(
    r: &Retoucher,
    img: &RgbImage8,
    roi: Roi,
    prepared: Option<Arc<PreparedRoi>>,
    schedule: &GainSchedule,
) -> Result<Vec<FadeFrame>> {
    schedule
        .entries()
        .iter()
        .map(|e| {
            let result = match &prepared {
                Some(p) => r.render_full(img, p.clone(), e.gains)?,
                None => r.unchanged(img, roi, e.gains),
            };
            Ok(FadeFrame {
                label: e.label.clone(),
                result,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GainMatrix {
    /// Tiles on a white background with [`GRID_SEPARATOR`] px gaps.
    pub image: RgbImage8,
    pub alphas_h: Vec<f64>,
    pub alphas_m: Vec<f64>,
    pub tile_width: usize,
    pub tile_height: usize,
    /// `(row, col)` of the unedited tile, if the grid has one.
    pub original: Option<(usize, usize)>,
}

impl GainMatrix {
    /// Top-left corner of tile `(row, col)`.
    pub fn tile_origin(&self, row: usize, col: usize) -> (usize, usize) {
        (
            GRID_SEPARATOR + col * (self.tile_width + GRID_SEPARATOR),
            GRID_SEPARATOR + row * (self.tile_height + GRID_SEPARATOR),
        )
    }

    pub fn tile(&self, row: usize, col: usize) -> Result<RgbImage8> {
        let (x, y) = self.tile_origin(row, col);
        self.image
            .crop(Roi::new(x, y, self.tile_width, self.tile_height))
    }
}

/// Grid of ROI crops: row `i` uses `alphas_h[i]`, column `j` uses
/// `alphas_m[j]`, with `α_r = 0` throughout.
pub fn gain_matrix(
    r: &Retoucher,
    src: &SourceImage,
    roi: Roi,
    alphas_h: &[f64],
    alphas_m: &[f64],
) -> Result<GainMatrix> {
    if alphas_h.is_empty() || alphas_m.is_empty() {
        return Err(Error::Parameter("gain matrix needs at least one gain per axis".into()));
    }
    let img = src.image();
    roi.validate(img.width(), img.height())?;
    let gains: Vec<Vec<GainVector>> = alphas_h
        .iter()
        .map(|&h| {
            alphas_m
                .iter()
                .map(|&m| GainVector::new(h, m, 0.0))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let (rows, cols) = (alphas_h.len(), alphas_m.len());
    let (tw, th) = (roi.w, roi.h);
    let width = cols * tw + (cols + 1) * GRID_SEPARATOR;
    let height = rows * th + (rows + 1) * GRID_SEPARATOR;
    let mut grid = GainMatrix {
        image: RgbImage8::filled(width, height, SEPARATOR_FILL)?,
        alphas_h: alphas_h.to_vec(),
        alphas_m: alphas_m.to_vec(),
        tile_width: tw,
        tile_height: th,
        original: None,
    };

    let original = img.crop(roi)?;
    let prepared = if gains.iter().flatten().any(|g| !g.is_zero()) {
        Some(r.prepare(src, roi)?.0)
    } else {
        None
    };
    for (i, row) in gains.iter().enumerate() {
        for (j, g) in row.iter().enumerate() {
            let tile = match &prepared {
                Some(p) if !g.is_zero() => p.render(r.mixing(), *g, r.config().feather)?.0,
                _ => original.clone(),
            };
            let (x, y) = grid.tile_origin(i, j);
            grid.image.paste(&tile, x, y)?;
            if g.is_zero() && grid.original.is_none() {
                grid.original = Some((i, j));
            }
        }
    }
    if let Some((i, j)) = grid.original {
        let (x, y) = grid.tile_origin(i, j);
        let s = GRID_SEPARATOR;
        for yy in y - s..y + th + s {
            for xx in x - s..x + tw + s {
                let inside = (x..x + tw).contains(&xx) && (y..y + th).contains(&yy);
                if !inside {
                    grid.image.set_pixel(xx, yy, ORIGINAL_MARK);
                }
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retouch::RetouchConfig;
    use crate::synth::{blemish_fixture, reference_mixing};

    fn setup() -> (Retoucher, SourceImage, Roi) {
        let (scene, roi) = blemish_fixture(2);
        let src = SourceImage::new(scene.render(&reference_mixing()));
        (Retoucher::new(reference_mixing(), RetouchConfig::default()), src, roi)
    }

    #[test]
    fn single_zero_tile_is_the_original_crop() {
        let (r, src, roi) = setup();
        let m = gain_matrix(&r, &src, roi, &[0.0], &[0.0]).unwrap();
        assert_eq!(m.tile(0, 0).unwrap(), src.image().crop(roi).unwrap());
        assert_eq!(m.original, Some((0, 0)));
        assert_eq!(m.image.pixel(0, 0), ORIGINAL_MARK);
        assert!(r.cache().is_empty());
    }

    #[test]
    fn tiles_match_individual_edits() {
        let (r, src, roi) = setup();
        let hs = [-1.0, 0.0, 1.0];
        let ms = [-1.0, 0.0, 0.5];
        let m = gain_matrix(&r, &src, roi, &hs, &ms).unwrap();
        assert_eq!(m.image.width(), 3 * roi.w + 4 * GRID_SEPARATOR);
        assert_eq!(m.image.height(), 3 * roi.h + 4 * GRID_SEPARATOR);
        for (i, &h) in hs.iter().enumerate() {
            for (j, &mm) in ms.iter().enumerate() {
                let single = r.retouch(&src, roi, GainVector::new(h, mm, 0.0).unwrap()).unwrap();
                assert_eq!(m.tile(i, j).unwrap(), single.image.crop(roi).unwrap());
            }
        }
        assert_eq!(m.original, Some((1, 1)));
        assert_eq!(r.cache().len(), 1);
    }

    #[test]
    fn fading_fits_once_and_keeps_labels() {
        let (r, src, roi) = setup();
        let sched = GainSchedule::parse_single_channel("0,-0.25,-0.5,-0.75,-1", 1).unwrap();
        let frames = simulate_fading(&r, &src, roi, &sched).unwrap();
        assert_eq!(frames.len(), 5);
        assert_eq!(r.cache().len(), 1);
        assert_eq!(frames[0].result.image, *src.image());
        let labels: Vec<_> = frames.iter().map(|f| f.label.as_str()).collect();
        assert_eq!(labels, ["0", "1", "2", "3", "4"]);
        let contrast: Vec<f64> = frames
            .iter()
            .map(|f| f.result.contrast_after.unwrap().total)
            .collect();
        assert!(contrast.windows(2).all(|w| w[1] <= w[0]), "{contrast:?}");
    }

    #[test]
    fn fading_from_an_earlier_fit_matches() {
        let (r, src, roi) = setup();
        let sched = GainSchedule::parse_single_channel("0,-0.5,-1", 1).unwrap();
        let fresh = simulate_fading(&r, &src, roi, &sched).unwrap();
        let (p, cached) = r.prepare(&src, roi).unwrap();
        assert!(cached);
        let reused = simulate_fading_prepared(&r, &src, p, &sched).unwrap();
        for (a, b) in fresh.iter().zip(&reused) {
            assert_eq!(a.result.image, b.result.image);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn zero_schedule_never_fits() {
        let (r, src, roi) = setup();
        let sched = GainSchedule::from_gains([GainVector::ZERO]).unwrap();
        let frames = simulate_fading(&r, &src, roi, &sched).unwrap();
        assert_eq!(frames[0].result.image, *src.image());
        assert!(r.cache().is_empty());
    }

    #[test]
    fn empty_axes_are_rejected() {
        let (r, src, roi) = setup();
        assert!(gain_matrix(&r, &src, roi, &[], &[0.0]).is_err());
        assert!(gain_matrix(&r, &src, roi, &[0.0], &[9.0]).is_err());
    }
}
