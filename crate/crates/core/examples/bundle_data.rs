//! Regenerates `data/sample_skin.png` and the bundled mixing matrix
//! estimated from it.

use blemish::chromophore::{estimate_from_image, IcaConfig, SamplingConfig};
use blemish::png_io::write_png;
use blemish::synth::sample_skin_image;

fn main() -> blemish::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let img = sample_skin_image(256, 256, 7);
    write_png(dir.join("sample_skin.png"), &img)?;
    let e = estimate_from_image(&img, None, &SamplingConfig::default(), &IcaConfig::default())?;
    std::fs::write(dir.join("default_mixing.json"), e.to_json() + "\n")?;
    println!("{}", e.to_json());
    Ok(())
}
