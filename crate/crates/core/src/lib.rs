pub mod chromophore;
mod error;
mod json;
pub mod layers;
pub mod pixel;
pub mod png_io;
pub mod retouch;
pub mod sog;
pub mod synth;

pub use error::{Error, Result, Space};
pub use json::{format_sig17, Sig17};
pub use pixel::{PixelPatch, RgbImage8, Roi};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pixel-spaces.md")]
    mod pixel_spaces {}
    #[doc = include_str!("../../../book/src/chromophores.md")]
    mod chromophores {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/retouching.md")]
    mod retouching {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/studio.md")]
    mod studio {}
}
