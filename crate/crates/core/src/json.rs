//! Float formatting for the JSON artifacts: every float is written with 17
//! significant digits so files are reproducible and round-trip exactly.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// An `f64` that serializes as a 17-significant-digit decimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sig17(pub f64);

pub fn format_sig17(v: f64) -> String {
    if v == 0.0 {
        // Keeps -0.0 and 0.0 apart in the output.
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    format!("{v:.16e}")
}

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw = RawValue::from_string(format_sig17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

pub(crate) fn sig2(v: [f64; 2]) -> [Sig17; 2] {
    v.map(Sig17)
}

pub(crate) fn sig3(v: [f64; 3]) -> [Sig17; 3] {
    v.map(Sig17)
}
