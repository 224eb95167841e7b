//! The `blemish` command line.
//!
//! Every command parses and validates its inputs and renders all of its
//! outputs in memory before the first file is written, so a failed
//! invocation leaves nothing behind.
//!
//! Exit codes: `0` success, `2` invalid invocation or input, `3` I/O failure.

mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use blemish::chromophore::{collect_samples, estimate_mixing_matrix, MixingMatrix};
use blemish::png_io::{decode_png, encode_png};
use blemish::retouch::{
    blemish_contrast, frame_file_name, psnr, sidecar_path, ssim, Contrast, FadeReport, FitReport,
    GainSchedule, RetouchReport, Retoucher, SourceImage, PREVIEW_CONTEXT,
    REPORT_SCHEMA,
};
use blemish::{RgbImage8, Roi, Sig17};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::ConfigFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<blemish::Error> for CliError {
    fn from(e: blemish::Error) -> Self {
        let code = match e {
            blemish::Error::Io(_) => EXIT_IO,
            _ => EXIT_INVALID,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "blemish", version, about = "Fit and retouch skin blemishes in chromophore space")]
pub struct Cli {
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Mixing matrix JSON, as written by `estimate-ica`. Defaults to the bundled matrix.
    #[arg(long = "mixing-matrix", global = true, value_name = "JSON")]
    pub mixing_matrix: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the mixing matrix of an image by ICA.
    EstimateIca(EstimateIcaArgs),
    /// Fit the blemish model to a region and print the fit.
    Fit(FitArgs),
    /// Scale the fitted blemish of a region by per-chromophore gains.
    Retouch(RetouchArgs),
    /// Render one frame per entry of a gain schedule.
    Fade(FadeArgs),
    /// Render a grid of region crops over haemoglobin and melanin gains.
    Matrix(MatrixArgs),
    /// Compare an image against a reference (PSNR, SSIM, blemish contrast).
    Eval(EvalArgs),
}

fn parse_roi(s: &str) -> Result<Roi, String> {
    s.parse().map_err(|e: blemish::Error| e.to_string())
}

/// A comma-separated list of gains, e.g. `0,-0.5,-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<GainList, String> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| format!("`{v}` is not a number")))
        .collect::<Result<_, _>>()
        .map(GainList)
}

#[derive(Debug, Args)]
pub struct EstimateIcaArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    /// Where to write the matrix JSON.
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
    /// Optional PNG of the same size; non-black pixels are sampled.
    #[arg(long, value_name = "PNG")]
    pub mask: Option<PathBuf>,
    /// Blur applied before sampling.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_roi, value_name = "X,Y,W,H")]
    pub roi: Option<Roi>,
    /// Base/texture blur; defaults to one scaled by the region width.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Where to write the fit; standard output when absent.
    #[arg(long, visible_alias = "out", value_name = "JSON")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetouchArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_roi, value_name = "X,Y,W,H")]
    pub roi: Option<Roi>,
    #[arg(long = "alpha-h", allow_negative_numbers = true)]
    pub alpha_h: Option<f64>,
    #[arg(long = "alpha-m", allow_negative_numbers = true)]
    pub alpha_m: Option<f64>,
    #[arg(long = "alpha-r", allow_negative_numbers = true)]
    pub alpha_r: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Ramp the edit to zero over the outer 2 px of the region.
    #[arg(long)]
    pub feather: bool,
    /// Report path; defaults to `<out>.retouch.json`.
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
    /// Also write the region with its context ring, as the studio previews it.
    #[arg(long = "preview-out", value_name = "PNG")]
    pub preview_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Channel {
    H,
    M,
    R,
}

#[derive(Debug, Args)]
pub struct FadeArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    /// Directory for `frame_000.png`, `frame_001.png`, ...
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_roi, value_name = "X,Y,W,H")]
    pub roi: Option<Roi>,
    /// Comma-separated gains for `--channel`, e.g. `0,-0.25,-0.5`.
    #[arg(long, allow_hyphen_values = true)]
    pub schedule: Option<String>,
    #[arg(long, value_enum, default_value = "m")]
    pub channel: Channel,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub feather: bool,
    /// Report path; defaults to `<out>/fade.json`.
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_roi, value_name = "X,Y,W,H")]
    pub roi: Option<Roi>,
    /// Haemoglobin gain per row.
    #[arg(long = "alphas-h", value_parser = parse_list, allow_hyphen_values = true, default_value = "0,-0.5,-1")]
    pub alphas_h: GainList,
    /// Melanin gain per column.
    #[arg(long = "alphas-m", value_parser = parse_list, allow_hyphen_values = true, default_value = "0,-0.5,-1")]
    pub alphas_m: GainList,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub feather: bool,
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long = "ref", value_name = "PNG")]
    pub reference: PathBuf,
    /// Also report blemish contrast of this region in both images.
    #[arg(long, value_parser = parse_roi, value_name = "X,Y,W,H")]
    pub roi: Option<Roi>,
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command. Messages go to
/// standard error; the return value is the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Everything a command produces, held until validation and rendering are done.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    /// Directories to create before writing.
    pub dirs: Vec<PathBuf>,
    pub stdout: Option<String>,
}

impl Outputs {
    fn file(&mut self, path: &Path, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.to_path_buf(), bytes.into()));
    }

    fn report(&mut self, path: Option<&Path>, json: String) {
        match path {
            Some(p) => self.file(p, json + "\n"),
            None => self.stdout = Some(json),
        }
    }

    fn commit(self) -> Result<(), CliError> {
        for d in &self.dirs {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        for (path, bytes) in &self.files {
            std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        }
        if let Some(s) = self.stdout {
            println!("{s}");
        }
        Ok(())
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    plan(cli)?.commit()
}

/// Parses `args` (program name first) and plans the command; nothing is written.
pub fn plan_from<I, T>(args: I) -> Result<Outputs, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::invalid(e.to_string()))?;
    plan(&cli)
}

/// Runs a command without writing anything.
pub fn plan(cli: &Cli) -> Result<Outputs, CliError> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let mixing = load_mixing(cli.mixing_matrix.as_deref())?;
    match &cli.command {
        Command::EstimateIca(a) => estimate_ica(a, &cfg),
        Command::Fit(a) => fit(a, &cfg, mixing),
        Command::Retouch(a) => retouch(a, &cfg, mixing),
        Command::Fade(a) => fade(a, &cfg, mixing),
        Command::Matrix(a) => matrix(a, &cfg, mixing),
        Command::Eval(a) => eval(a, &cfg, mixing),
    }
}

pub(crate) fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    if !path.exists() {
        return Err(CliError::invalid(format!("{}: no such file", path.display())));
    }
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_image(path: &Path) -> Result<(Vec<u8>, RgbImage8), CliError> {
    let bytes = read_input(path)?;
    let img = decode_png(&bytes)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    Ok((bytes, img))
}

fn load_mixing(path: Option<&Path>) -> Result<MixingMatrix, CliError> {
    let Some(path) = path else {
        return Ok(MixingMatrix::bundled());
    };
    let bytes = read_input(path)?;
    let text = String::from_utf8_lossy(&bytes);
    MixingMatrix::from_json(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn png(img: &RgbImage8) -> Result<Vec<u8>, CliError> {
    Ok(encode_png(img)?)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

#[derive(Serialize)]
struct IcaReport {
    schema: u32,
    seed: u64,
    samples: usize,
    sampling_sigma: Sig17,
    condition_number: Sig17,
}

fn estimate_ica(a: &EstimateIcaArgs, cfg: &ConfigFile) -> Result<Outputs, CliError> {
    let (_, img) = read_image(&a.input)?;
    let mask = match &a.mask {
        Some(p) => {
            let (_, m) = read_image(p)?;
            if (m.width(), m.height()) != (img.width(), img.height()) {
                return Err(CliError::invalid(format!(
                    "mask is {}x{} but the image is {}x{}",
                    m.width(),
                    m.height(),
                    img.width(),
                    img.height()
                )));
            }
            Some(m.data().chunks_exact(3).map(|px| px.iter().any(|&v| v > 0)).collect::<Vec<bool>>())
        }
        None => None,
    };
    let (sampling, ica) = cfg.ica_configs(a.sigma, a.seed);
    let samples = collect_samples(&img, mask.as_deref(), &sampling)?;
    let e = estimate_mixing_matrix(&samples, &ica)?;
    let mut out = Outputs::default();
    out.file(&a.out, e.to_json() + "\n");
    if let Some(p) = &a.report {
        let report = IcaReport {
            schema: REPORT_SCHEMA,
            seed: ica.seed,
            samples: samples.len(),
            sampling_sigma: Sig17(sampling.sigma),
            condition_number: Sig17(e.condition_number()),
        };
        out.file(p, to_json(&report) + "\n");
    }
    Ok(out)
}

fn fit(a: &FitArgs, cfg: &ConfigFile, mixing: MixingMatrix) -> Result<Outputs, CliError> {
    let (_, img) = read_image(&a.input)?;
    let roi = cfg.roi(a.roi)?;
    let r = Retoucher::new(mixing, cfg.retouch_config(a.sigma, false));
    let (prepared, _) = r.prepare(&SourceImage::new(img), roi)?;
    let mut out = Outputs::default();
    out.report(a.report.as_deref(), FitReport::new(&prepared, r.mixing()).to_json_pretty());
    Ok(out)
}

fn retouch(a: &RetouchArgs, cfg: &ConfigFile, mixing: MixingMatrix) -> Result<Outputs, CliError> {
    let (bytes, img) = read_image(&a.input)?;
    let roi = cfg.roi(a.roi)?;
    let gains = cfg.gains(a.alpha_h, a.alpha_m, a.alpha_r)?;
    let r = Retoucher::new(mixing, cfg.retouch_config(a.sigma, a.feather));
    let src = SourceImage::new(img);
    let result = r.retouch(&src, roi, gains)?;
    let mut out = Outputs::default();
    if gains.is_zero() {
        out.file(&a.out, bytes);
    } else {
        out.file(&a.out, png(&result.image)?);
    }
    let report = RetouchReport::new(&result, r.mixing(), None);
    let report_path = a.report.clone().unwrap_or_else(|| sidecar_path(&a.out));
    out.file(&report_path, report.to_json_pretty() + "\n");
    if let Some(p) = &a.preview_out {
        let preview = match &result.prepared {
            Some(prepared) => r.preview(&src, prepared, gains)?,
            None => {
                let img = src.image();
                img.crop(roi.expand_clipped(PREVIEW_CONTEXT, img.width(), img.height()))?
            }
        };
        out.file(p, png(&preview)?);
    }
    Ok(out)
}

fn fade(a: &FadeArgs, cfg: &ConfigFile, mixing: MixingMatrix) -> Result<Outputs, CliError> {
    let (_, img) = read_image(&a.input)?;
    let roi = cfg.roi(a.roi)?;
    let schedule = match (&a.schedule, &cfg.schedule) {
        (Some(s), _) => GainSchedule::parse_single_channel(s, a.channel as usize)?,
        (None, Some(gains)) => GainSchedule::from_gains(gains.iter().copied())?,
        (None, None) => return Err(CliError::invalid("no schedule given: pass --schedule")),
    };
    let r = Retoucher::new(mixing, cfg.retouch_config(a.sigma, a.feather));
    let frames = r.fade(&SourceImage::new(img), roi, &schedule)?;
    let mut out = Outputs {
        dirs: vec![a.out.clone()],
        ..Outputs::default()
    };
    for (i, f) in frames.iter().enumerate() {
        out.file(&a.out.join(frame_file_name(i)), png(&f.result.image)?);
    }
    let report_path = a.report.clone().unwrap_or_else(|| a.out.join("fade.json"));
    out.file(&report_path, FadeReport::new(&frames, r.mixing()).to_json_pretty() + "\n");
    Ok(out)
}

#[derive(Serialize)]
struct MatrixReport {
    schema: u32,
    roi: [usize; 4],
    alphas_h: Vec<Sig17>,
    alphas_m: Vec<Sig17>,
    tile: [usize; 2],
    separator: usize,
    /// `[row, col]` of the unedited tile.
    original: Option<[usize; 2]>,
}

fn matrix(a: &MatrixArgs, cfg: &ConfigFile, mixing: MixingMatrix) -> Result<Outputs, CliError> {
    let (_, img) = read_image(&a.input)?;
    let roi = cfg.roi(a.roi)?;
    let r = Retoucher::new(mixing, cfg.retouch_config(a.sigma, a.feather));
    let grid = r.matrix(&SourceImage::new(img), roi, &a.alphas_h.0, &a.alphas_m.0)?;
    let mut out = Outputs::default();
    out.file(&a.out, png(&grid.image)?);
    if let Some(p) = &a.report {
        let report = MatrixReport {
            schema: REPORT_SCHEMA,
            roi: [roi.x, roi.y, roi.w, roi.h],
            alphas_h: grid.alphas_h.iter().copied().map(Sig17).collect(),
            alphas_m: grid.alphas_m.iter().copied().map(Sig17).collect(),
            tile: [grid.tile_width, grid.tile_height],
            separator: blemish::retouch::GRID_SEPARATOR,
            original: grid.original.map(|(i, j)| [i, j]),
        };
        out.file(p, to_json(&report) + "\n");
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalReport {
    schema: u32,
    /// `null` when the images are identical.
    psnr: Sig17,
    identical: bool,
    ssim: Sig17,
    #[serde(skip_serializing_if = "Option::is_none")]
    roi: Option<[usize; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    contrast: Option<Contrast>,
    #[serde(skip_serializing_if = "Option::is_none")]
    contrast_ref: Option<Contrast>,
}

fn eval(a: &EvalArgs, cfg: &ConfigFile, mixing: MixingMatrix) -> Result<Outputs, CliError> {
    let (_, img) = read_image(&a.input)?;
    let (_, reference) = read_image(&a.reference)?;
    let roi = a.roi.or(cfg.roi.map(|[x, y, w, h]| Roi::new(x, y, w, h)));
    let floor = cfg.retouch_config(None, false).floor;
    let p = psnr(&img, &reference)?;
    let (contrast, contrast_ref) = match roi {
        Some(roi) => (
            Some(blemish_contrast(&img, roi, &mixing, floor)?),
            Some(blemish_contrast(&reference, roi, &mixing, floor)?),
        ),
        None => (None, None),
    };
    let report = EvalReport {
        schema: REPORT_SCHEMA,
        psnr: Sig17(p),
        identical: p.is_infinite(),
        ssim: Sig17(ssim(&img, &reference)?),
        roi: roi.map(|r| [r.x, r.y, r.w, r.h]),
        contrast,
        contrast_ref,
    };
    let mut out = Outputs::default();
    out.report(a.report.as_deref(), to_json(&report));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_regions_parse() {
        assert_eq!(parse_list("0, -0.5,-1").unwrap().0, [0.0, -0.5, -1.0]);
        assert!(parse_list("0,a").is_err());
        assert_eq!(parse_roi("1,2,30,40").unwrap(), Roi::new(1, 2, 30, 40));
        assert!(parse_roi("1,2,30").is_err());
    }

    #[test]
    fn negative_gains_are_values_not_flags() {
        let cli = Cli::try_parse_from([
            "blemish", "retouch", "--in", "a.png", "--out", "b.png", "--roi", "0,0,8,8", "--alpha-m", "-1",
        ])
        .unwrap();
        let Command::Retouch(a) = cli.command else { panic!() };
        assert_eq!(a.alpha_m, Some(-1.0));
        let cli = Cli::try_parse_from(["blemish", "fade", "--in", "a", "--out", "d", "--schedule", "-0.5,-1"]).unwrap();
        let Command::Fade(a) = cli.command else { panic!() };
        assert_eq!(a.schedule.as_deref(), Some("-0.5,-1"));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
