use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest gain magnitude accepted on any channel.
pub const MAX_GAIN: f64 = 4.0;

/// Per-chromophore multipliers on the fitted blemish.
///
/// `-1` removes a channel's blemish, `0` leaves it alone, `+1` doubles it.
/// Channels missing from JSON input are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainVector {
    pub h: f64,
    pub m: f64,
    pub r: f64,
}

impl GainVector {
    pub const ZERO: GainVector = GainVector {
        h: 0.0,
        m: 0.0,
        r: 0.0,
    };

    pub fn new(h: f64, m: f64, r: f64) -> Result<Self> {
        let g = Self { h, m, r };
        g.validate()?;
        Ok(g)
    }

    /// Only melanin, the common fading case.
    pub fn melanin(m: f64) -> Result<Self> {
        Self::new(0.0, m, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("h", self.h), ("m", self.m), ("r", self.r)] {
            if !v.is_finite() || v.abs() > MAX_GAIN {
                return Err(Error::Parameter(format!(
                    "gain alpha_{name} = {v} is outside [-{MAX_GAIN}, {MAX_GAIN}]"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.h, self.m, self.r]
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleEntry {
    pub label: String,
    pub gains: GainVector,
}

/// An ordered, non-empty list of gain vectors, e.g. one per simulated week.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSchedule {
    entries: Vec<ScheduleEntry>,
}

impl GainSchedule {
    pub fn new(entries: Vec<ScheduleEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Parameter("gain schedule is empty".into()));
        }
        for e in &entries {
            e.gains.validate()?;
        }
        Ok(Self { entries })
    }

    /// Entries labelled `0, 1, 2, ...`.
    pub fn from_gains(gains: impl IntoIterator<Item = GainVector>) -> Result<Self> {
        Self::new(
            gains
                .into_iter()
                .enumerate()
                .map(|(i, gains)| ScheduleEntry {
                    label: i.to_string(),
                    gains,
                })
                .collect(),
        )
    }

    /// Parses `0,-0.25,-0.5` into a schedule driving one chromophore
    /// (`0` = H, `1` = M, `2` = r) with the others at zero.
    pub fn parse_single_channel(spec: &str, channel: usize) -> Result<Self> {
        let values = spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parameter(format!("schedule entry `{s}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::from_gains(values.into_iter().map(|v| {
            let mut g = [0.0; 3];
            g[channel] = v;
            GainVector {
                h: g[0],
                m: g[1],
                r: g[2],
            }
        }))
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
