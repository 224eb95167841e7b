//! Image containers and the per-pixel transforms between 8-bit sRGB,
//! linear reflectance and log-absorption.
//!
//! All arithmetic is `f64`; quantization only happens in [`linear_to_srgb`].

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{Error, Result, Space};

/// Default reflectance floor applied before taking logarithms.
pub const DEFAULT_REFLECTANCE_FLOOR: f64 = 1e-4;

/// Smallest ROI side that still leaves enough support for a fit.
pub const MIN_ROI_SIDE: usize = 8;

/// An 8-bit sRGB image, row-major, 3 bytes per pixel.
///
/// An alpha plane read from disk is carried along untouched so it can be
/// written back out; nothing in the pipeline reads or edits it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
    alpha: Option<Vec<u8>>,
}

impl RgbImage8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            alpha: None,
        })
    }

    /// A solid-color image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn with_alpha(mut self, alpha: Vec<u8>) -> Result<Self> {
        if alpha.len() != self.width * self.height {
            return Err(Error::DimensionMismatch(format!(
                "alpha plane needs {} bytes, got {}",
                self.width * self.height,
                alpha.len()
            )));
        }
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn alpha(&self) -> Option<&[u8]> {
        self.alpha.as_deref()
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies out a rectangle, alpha included.
    pub fn crop(&self, rect: Roi) -> Result<RgbImage8> {
        rect.check_contained(self.width, self.height)?;
        let mut data = Vec::with_capacity(rect.w * rect.h * 3);
        for y in rect.y..rect.y + rect.h {
            let start = (y * self.width + rect.x) * 3;
            data.extend_from_slice(&self.data[start..start + rect.w * 3]);
        }
        let mut out = RgbImage8::new(rect.w, rect.h, data)?;
        if let Some(alpha) = &self.alpha {
            let mut a = Vec::with_capacity(rect.w * rect.h);
            for y in rect.y..rect.y + rect.h {
                let start = y * self.width + rect.x;
                a.extend_from_slice(&alpha[start..start + rect.w]);
            }
            out.alpha = Some(a);
        }
        Ok(out)
    }

    /// Writes `src` with its top-left corner at `(x, y)`. Alpha is left alone.
    pub fn paste(&mut self, src: &RgbImage8, x: usize, y: usize) -> Result<()> {
        Roi::new(x, y, src.width, src.height).check_contained(self.width, self.height)?;
        for row in 0..src.height {
            let dst = ((y + row) * self.width + x) * 3;
            let s = row * src.width * 3;
            self.data[dst..dst + src.width * 3].copy_from_slice(&src.data[s..s + src.width * 3]);
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in full-image pixel coordinates.
///
/// Used both for user-selected blemish regions, which must pass
/// [`Roi::validate`], and for plain crops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn check_contained(&self, width: usize, height: usize) -> Result<()> {
        let reason = if self.w == 0 || self.h == 0 {
            Some("empty rectangle")
        } else if self.x.checked_add(self.w).is_none_or(|r| r > width)
            || self.y.checked_add(self.h).is_none_or(|b| b > height)
        {
            Some("extends past the image bounds")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidRoi {
                roi: *self,
                width,
                height,
                reason,
            }),
            None => Ok(()),
        }
    }

    /// Containment plus the minimum fit support of 8x8.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.w < MIN_ROI_SIDE || self.h < MIN_ROI_SIDE {
            return Err(Error::InvalidRoi {
                roi: *self,
                width,
                height,
                reason: "smaller than 8x8",
            });
        }
        self.check_contained(width, height)
    }

    /// Grows the rectangle by `margin` on every side, clipped to the image.
    pub fn expand_clipped(&self, margin: usize, width: usize, height: usize) -> Roi {
        let x0 = self.x.saturating_sub(margin);
        let y0 = self.y.saturating_sub(margin);
        let x1 = (self.x + self.w + margin).min(width);
        let y1 = (self.y + self.h + margin).min(height);
        Roi::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn diagonal(&self) -> f64 {
        ((self.w * self.w + self.h * self.h) as f64).sqrt()
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for Roi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, w, h] = parts.as_slice() else {
            return Err(Error::Parameter(format!(
                "roi must be `x,y,w,h`, got `{s}`"
            )));
        };
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Parameter(format!("roi component `{v}` is not a pixel count")))
        };
        Ok(Roi::new(parse(x)?, parse(y)?, parse(w)?, parse(h)?))
    }
}

/// A rectangular float image in one of the working color spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPatch {
    width: usize,
    height: usize,
    space: Space,
    channels: [Vec<f64>; 3],
    origin: (usize, usize),
}

impl PixelPatch {
    pub fn new(
        width: usize,
        height: usize,
        space: Space,
        channels: [Vec<f64>; 3],
        origin: (usize, usize),
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "patch dimensions must be positive, got {width}x{height}"
            )));
        }
        for c in &channels {
            if c.len() != width * height {
                return Err(Error::DimensionMismatch(format!(
                    "{width}x{height} patch needs {} values per channel, got {}",
                    width * height,
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter("patch contains non-finite values".into()));
            }
        }
        Ok(Self {
            width,
            height,
            space,
            channels,
            origin,
        })
    }

    /// A patch with every channel equal to `value`.
    pub fn constant(width: usize, height: usize, space: Space, value: [f64; 3]) -> Result<Self> {
        let n = width * height;
        Self::new(
            width,
            height,
            space,
            value.map(|v| vec![v; n]),
            (0, 0),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        &self.channels[k]
    }

    pub fn channels(&self) -> &[Vec<f64>; 3] {
        &self.channels
    }

    pub fn get(&self, k: usize, x: usize, y: usize) -> f64 {
        self.channels[k][y * self.width + x]
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.channels[0][i], self.channels[1][i], self.channels[2][i]]
    }

    pub fn same_shape(&self, other: &PixelPatch) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn expect_space(&self, expected: Space) -> Result<()> {
        if self.space == expected {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                expected,
                found: self.space,
            })
        }
    }

    /// Same geometry, new values and tag. Values are trusted to be finite.
    pub(crate) fn with_channels(&self, space: Space, channels: [Vec<f64>; 3]) -> PixelPatch {
        debug_assert!(channels.iter().all(|c| c.len() == self.len()));
        PixelPatch {
            width: self.width,
            height: self.height,
            space,
            channels,
            origin: self.origin,
        }
    }

    pub(crate) fn map_pixels(&self, space: Space, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> PixelPatch {
        let n = self.len();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let v = f(self.pixel(i));
            out[0][i] = v[0];
            out[1][i] = v[1];
            out[2][i] = v[2];
        }
        self.with_channels(space, out)
    }
}

fn srgb_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|code| srgb_eotf(code as f64 / 255.0)))
}

/// IEC 61966-2-1 decoding: encoded value in `[0,1]` to linear light.
pub fn srgb_eotf(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// IEC 61966-2-1 encoding: linear light in `[0,1]` to encoded value.
pub fn srgb_oetf(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Decodes one 8-bit sRGB code to linear light.
pub fn decode_channel(code: u8) -> f64 {
    srgb_lut()[code as usize]
}

/// Clamps to `[0,1]`, encodes, and rounds to the nearest 8-bit code.
pub fn encode_channel(linear: f64) -> u8 {
    let v = srgb_oetf(linear.clamp(0.0, 1.0));
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Whole-image sRGB decode.
pub fn srgb_to_linear(img: &RgbImage8) -> PixelPatch {
    let rect = Roi::new(0, 0, img.width(), img.height());
    srgb_region_to_linear(img, rect).expect("full-image rectangle is always contained")
}

/// sRGB decode of one rectangle; the patch remembers `rect`'s origin.
pub fn srgb_region_to_linear(img: &RgbImage8, rect: Roi) -> Result<PixelPatch> {
    rect.check_contained(img.width(), img.height())?;
    let lut = srgb_lut();
    let n = rect.area();
    let mut ch = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for y in rect.y..rect.y + rect.h {
        let row = &img.data()[(y * img.width() + rect.x) * 3..(y * img.width() + rect.x + rect.w) * 3];
        for px in row.chunks_exact(3) {
            for k in 0..3 {
                ch[k].push(lut[px[k] as usize]);
            }
        }
    }
    Ok(PixelPatch {
        width: rect.w,
        height: rect.h,
        space: Space::Linear,
        channels: ch,
        origin: (rect.x, rect.y),
    })
}

/// Quantizes a linear patch back to 8-bit sRGB.
pub fn linear_to_srgb(p: &PixelPatch) -> Result<RgbImage8> {
    p.expect_space(Space::Linear)?;
    let mut data = Vec::with_capacity(p.len() * 3);
    for i in 0..p.len() {
        for k in 0..3 {
            data.push(encode_channel(p.channels[k][i]));
        }
    }
    RgbImage8::new(p.width, p.height, data)
}

fn check_floor(floor: f64) -> Result<()> {
    if floor > 0.0 && floor < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "reflectance floor must lie in (0, 1), got {floor}"
        )))
    }
}

/// `A = -ln(max(R, floor))` per pixel and channel.
pub fn linear_to_log_absorption(p: &PixelPatch, floor: f64) -> Result<PixelPatch> {
    p.expect_space(Space::Linear)?;
    check_floor(floor)?;
    Ok(p.map_pixels(Space::LogAbsorption, |px| px.map(|r| -(r.max(floor)).ln())))
}

/// Inverse of [`linear_to_log_absorption`]; `R = exp(-A)` clamped to `[floor, 1]`.
pub fn log_absorption_to_linear(p: &PixelPatch, floor: f64) -> Result<PixelPatch> {
    log_absorption_to_linear_counted(p, floor).map(|(patch, _)| patch)
}

/// As [`log_absorption_to_linear`], also returning how many values per
/// channel had to be clamped.
pub fn log_absorption_to_linear_counted(
    p: &PixelPatch,
    floor: f64,
) -> Result<(PixelPatch, [usize; 3])> {
    p.expect_space(Space::LogAbsorption)?;
    check_floor(floor)?;
    let mut counts = [0usize; 3];
    let n = p.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in 0..3 {
        for (o, &a) in out[k].iter_mut().zip(&p.channels[k]) {
            let r = (-a).exp();
            if r > 1.0 || r < floor {
                counts[k] += 1;
            }
            *o = r.clamp(floor, 1.0);
        }
    }
    Ok((p.with_channels(Space::Linear, out), counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eotf_oracle(code: u8) -> f64 {
        // Straight from the published piecewise definition.
        let c = f64::from(code) / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(decode_channel(0), 0.0);
        assert_eq!(decode_channel(255), 1.0);
        let mid = decode_channel(128);
        assert_eq!(mid, eotf_oracle(128));
        assert!((mid - 0.2158).abs() < 1e-4, "{mid}");
        assert_eq!(encode_channel(0.0), 0);
        assert_eq!(encode_channel(1.0), 255);
        assert_eq!(encode_channel(-3.0), 0);
        assert_eq!(encode_channel(7.0), 255);
    }

    #[test]
    fn eight_bit_round_trip_is_exact() {
        for code in 0..=255u8 {
            assert_eq!(encode_channel(decode_channel(code)), code);
        }
    }

    #[test]
    fn log_absorption_examples() {
        let p = PixelPatch::new(
            3,
            1,
            Space::Linear,
            [
                vec![1.0, (-1.0f64).exp(), 0.0],
                vec![1.0; 3],
                vec![1.0; 3],
            ],
            (0, 0),
        )
        .unwrap();
        let a = linear_to_log_absorption(&p, 1e-4).unwrap();
        assert_eq!(a.space(), Space::LogAbsorption);
        assert_eq!(a.get(0, 0, 0), 0.0);
        assert!((a.get(0, 1, 0) - 1.0).abs() < 1e-15);
        assert!((a.get(0, 2, 0) - 9.210_340_371_976_184).abs() < 1e-12);

        let back = log_absorption_to_linear(&a, 1e-4).unwrap();
        assert_eq!(back.get(0, 0, 0), 1.0);
        assert!((back.get(0, 1, 0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn floor_must_be_open_unit_interval() {
        let p = PixelPatch::constant(2, 2, Space::Linear, [0.5; 3]).unwrap();
        for bad in [0.0, 1.0, -0.1, 2.0, f64::NAN] {
            assert!(matches!(
                linear_to_log_absorption(&p, bad),
                Err(Error::Parameter(_))
            ));
        }
    }

    #[test]
    fn wrong_space_is_rejected() {
        let p = PixelPatch::constant(2, 2, Space::LogAbsorption, [0.5; 3]).unwrap();
        assert!(matches!(
            linear_to_srgb(&p),
            Err(Error::SpaceMismatch {
                expected: Space::Linear,
                found: Space::LogAbsorption
            })
        ));
        assert!(linear_to_log_absorption(&p, 1e-4).is_err());
        let l = PixelPatch::constant(2, 2, Space::Linear, [0.5; 3]).unwrap();
        assert!(log_absorption_to_linear(&l, 1e-4).is_err());
    }

    #[test]
    fn clamp_counts() {
        let a = PixelPatch::new(
            2,
            1,
            Space::LogAbsorption,
            [vec![-0.5, 0.2], vec![20.0, 0.1], vec![0.0, 0.0]],
            (0, 0),
        )
        .unwrap();
        let (r, counts) = log_absorption_to_linear_counted(&a, 1e-4).unwrap();
        assert_eq!(counts, [1, 1, 0]);
        assert_eq!(r.get(0, 0, 0), 1.0);
        assert_eq!(r.get(1, 0, 0), 1e-4);
    }

    #[test]
    fn roi_parse_and_validate() {
        let roi: Roi = "120, 88,64,64".parse().unwrap();
        assert_eq!(roi, Roi::new(120, 88, 64, 64));
        assert_eq!(roi.to_string(), "120,88,64,64");
        assert!("1,2,3".parse::<Roi>().is_err());
        assert!("1,2,3,x".parse::<Roi>().is_err());
        assert!(roi.validate(184, 152).is_ok());
        assert!(roi.validate(183, 152).is_err());
        assert!(Roi::new(0, 0, 7, 30).validate(100, 100).is_err());
        assert!(Roi::new(usize::MAX, 0, 8, 8).validate(100, 100).is_err());
    }

    #[test]
    fn region_decode_is_per_pixel() {
        let mut img = RgbImage8::filled(6, 5, [10, 20, 30]).unwrap();
        img.set_pixel(3, 2, [200, 100, 50]);
        let p = srgb_region_to_linear(&img, Roi::new(2, 1, 3, 3)).unwrap();
        assert_eq!(p.origin(), (2, 1));
        assert_eq!(p.get(0, 1, 1), decode_channel(200));
        assert_eq!(p.get(2, 1, 1), decode_channel(50));
        assert_eq!(p.get(0, 0, 0), decode_channel(10));
    }

    #[test]
    fn crop_and_paste() {
        let mut img = RgbImage8::filled(8, 8, [1, 2, 3]).unwrap();
        let patch = RgbImage8::filled(2, 3, [9, 9, 9]).unwrap();
        img.paste(&patch, 5, 4).unwrap();
        assert_eq!(img.pixel(6, 6), [9, 9, 9]);
        assert_eq!(img.pixel(4, 6), [1, 2, 3]);
        assert_eq!(img.crop(Roi::new(5, 4, 2, 3)).unwrap(), patch);
        assert!(img.paste(&patch, 7, 0).is_err());
    }
}
