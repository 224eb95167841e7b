//! The `--config` file. Every field is optional; command-line flags win.

use std::path::Path;

use blemish::chromophore::{IcaConfig, SamplingConfig};
use blemish::retouch::{GainVector, RetouchConfig};
use blemish::Roi;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub roi: Option<[usize; 4]>,
    pub alpha: Option<PartialGains>,
    pub schedule: Option<Vec<GainVector>>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub floor: Option<f64>,
    pub noise_absorbance: Option<f64>,
    pub feather: Option<bool>,
    #[serde(default)]
    pub fit: FitOverrides,
    #[serde(default)]
    pub ica: IcaOverrides,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialGains {
    pub h: Option<f64>,
    pub m: Option<f64>,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOverrides {
    pub max_gaussians: Option<usize>,
    pub rel_tol: Option<f64>,
    pub amp_threshold_std: Option<f64>,
    pub min_amplitude: Option<f64>,
    pub initial_sigma: Option<f64>,
    pub sigma_min: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcaOverrides {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_samples: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = crate::read_input(path)?;
        let text = String::from_utf8(text)
            .map_err(|_| CliError::invalid(format!("{}: config is not UTF-8", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn roi(&self, flag: Option<Roi>) -> Result<Roi, CliError> {
        flag.or(self.roi.map(|[x, y, w, h]| Roi::new(x, y, w, h)))
            .ok_or_else(|| CliError::invalid("no region given: pass --roi x,y,w,h"))
    }

    /// Gains from the flags, falling back per channel to the config, then 0.
    pub fn gains(&self, h: Option<f64>, m: Option<f64>, r: Option<f64>) -> Result<GainVector, CliError> {
        let c = self.alpha.unwrap_or_default();
        Ok(GainVector::new(
            h.or(c.h).unwrap_or(0.0),
            m.or(c.m).unwrap_or(0.0),
            r.or(c.r).unwrap_or(0.0),
        )?)
    }

    pub fn retouch_config(&self, sigma: Option<f64>, feather: bool) -> RetouchConfig {
        let mut cfg = RetouchConfig {
            sigma: sigma.or(self.sigma),
            feather: feather || self.feather.unwrap_or(false),
            ..RetouchConfig::default()
        };
        if let Some(v) = self.floor {
            cfg.floor = v;
        }
        if let Some(v) = self.noise_absorbance {
            cfg.noise_absorbance = v;
        }
        let f = &self.fit;
        let fit = &mut cfg.fit;
        if let Some(v) = f.max_gaussians {
            fit.max_gaussians = v;
        }
        if let Some(v) = f.rel_tol {
            fit.rel_tol = v;
        }
        if let Some(v) = f.amp_threshold_std {
            fit.amp_threshold_std = v;
        }
        if let Some(v) = f.min_amplitude {
            fit.min_amplitude = v;
        }
        if let Some(v) = f.initial_sigma {
            fit.initial_sigma = v;
        }
        if let Some(v) = f.sigma_min {
            fit.sigma_min = v;
        }
        if let Some(v) = f.max_iter {
            fit.lm.max_iter = v;
        }
        cfg
    }

    pub fn ica_configs(&self, sigma: Option<f64>, seed: Option<u64>) -> (SamplingConfig, IcaConfig) {
        let mut sampling = SamplingConfig::default();
        if let Some(v) = sigma.or(self.sigma) {
            sampling.sigma = v;
        }
        if let Some(v) = self.floor {
            sampling.floor = v;
        }
        if let Some(v) = self.ica.max_samples {
            sampling.max_samples = v;
        }
        let mut ica = IcaConfig::default();
        if let Some(v) = seed.or(self.seed) {
            ica.seed = v;
        }
        if let Some(v) = self.ica.tol {
            ica.tol = v;
        }
        if let Some(v) = self.ica.max_iter {
            ica.max_iter = v;
        }
        (sampling, ica)
    }
}
