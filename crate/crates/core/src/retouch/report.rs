use serde::Serialize;

use super::{ClampCounts, Contrast, FadeFrame, GainVector, PreparedRoi, RetouchResult};
use crate::chromophore::MixingMatrix;
use crate::json::Sig17;
use crate::sog::FitSummary;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct FitReference {
    pub sigma: Sig17,
    pub mixing: String,
    pub converged: bool,
    pub summary: FitSummary,
}

/// Metadata written next to a retouched image as `<name>.retouch.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RetouchReport {
    pub schema: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub roi: [usize; 4],
    pub gains: GainVector,
    pub clamp_counts: ClampCounts,
    pub contrast_before: Option<Contrast>,
    pub contrast_after: Option<Contrast>,
    /// `null` when nothing was fitted (all gains zero).
    pub fit: Option<FitReference>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RetouchReport {
    pub fn new(result: &RetouchResult, mixing: &MixingMatrix, label: Option<&str>) -> Self {
        let roi = result.roi;
        let mut warnings = Vec::new();
        if !result.converged() {
            warnings.push("blemish fit did not converge in every channel".to_string());
        }
        if result.clamp_counts.total() > 0 {
            warnings.push(format!(
                "{} values were clamped back into range",
                result.clamp_counts.total()
            ));
        }
        Self {
            schema: REPORT_SCHEMA,
            label: label.map(str::to_string),
            roi: [roi.x, roi.y, roi.w, roi.h],
            gains: result.gains,
            clamp_counts: result.clamp_counts,
            contrast_before: result.contrast_before,
            contrast_after: result.contrast_after,
            fit: result.prepared.as_ref().map(|p| FitReference {
                sigma: Sig17(p.sigma),
                mixing: format!("{:016x}", mixing.fingerprint()),
                converged: p.fit.converged(),
                summary: p.fit.summary(),
            }),
            warnings,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Result of fitting one region, as printed by `blemish fit` and returned
/// by the studio's fit endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub schema: u32,
    pub roi: [usize; 4],
    pub sigma: Sig17,
    pub mixing: String,
    pub converged: bool,
    pub summary: FitSummary,
    /// Plane and lobes per chromophore, ROI-local coordinates.
    pub channels: serde_json::Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn new(prepared: &PreparedRoi, mixing: &MixingMatrix) -> Self {
        let roi = prepared.roi;
        let converged = prepared.fit.converged();
        let mut warnings = Vec::new();
        if !converged {
            warnings.push("blemish fit did not converge in every channel".to_string());
        }
        Self {
            schema: REPORT_SCHEMA,
            roi: [roi.x, roi.y, roi.w, roi.h],
            sigma: Sig17(prepared.sigma),
            mixing: format!("{:016x}", mixing.fingerprint()),
            converged,
            summary: prepared.fit.summary(),
            channels: prepared.fit.to_json_value(),
            warnings,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// File name of frame `i` in a fading sequence.
pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:03}.png")
}

#[derive(Debug, Clone, Serialize)]
pub struct FadeFrameEntry {
    pub file: String,
    pub report: RetouchReport,
}

/// Index of a fading sequence: one entry per frame, in schedule order.
#[derive(Debug, Clone, Serialize)]
pub struct FadeReport {
    pub schema: u32,
    pub roi: [usize; 4],
    pub frames: Vec<FadeFrameEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FadeReport {
    pub fn new(frames: &[FadeFrame], mixing: &MixingMatrix) -> Self {
        let roi = frames.first().map_or([0; 4], |f| {
            let r = f.result.roi;
            [r.x, r.y, r.w, r.h]
        });
        let frames: Vec<FadeFrameEntry> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| FadeFrameEntry {
                file: frame_file_name(i),
                report: RetouchReport::new(&f.result, mixing, Some(&f.label)),
            })
            .collect();
        let mut warnings: Vec<String> = Vec::new();
        for w in frames.iter().flat_map(|f| &f.report.warnings) {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        Self {
            schema: REPORT_SCHEMA,
            roi,
            frames,
            warnings,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `out.png` becomes `out.retouch.json`.
pub fn sidecar_path(image_path: &std::path::Path) -> std::path::PathBuf {
    image_path.with_extension("retouch.json")
}
