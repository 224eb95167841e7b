use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::{Arc, OnceLock, RwLock};

use super::{PreparedRoi, RetouchConfig};
use crate::chromophore::MixingMatrix;
use crate::error::{Error, Result};
use crate::pixel::{RgbImage8, Roi};

pub(crate) fn image_fingerprint(img: &RgbImage8) -> u64 {
    let mut h = DefaultHasher::new();
    (img.width(), img.height()).hash(&mut h);
    img.data().hash(&mut h);
    h.finish()
}

/// Everything a fit depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FitKey {
    pub image: u64,
    pub roi: Roi,
    pub sigma_bits: u64,
    pub config: u64,
    pub mixing: u64,
}

impl FitKey {
    pub fn new(image: u64, roi: Roi, sigma: f64, cfg: &RetouchConfig, mixing: &MixingMatrix) -> Self {
        let mut h = DefaultHasher::new();
        cfg.floor.to_bits().hash(&mut h);
        cfg.noise_absorbance.to_bits().hash(&mut h);
        format!("{:?}", cfg.fit).hash(&mut h);
        Self {
            image,
            roi,
            sigma_bits: sigma.to_bits(),
            config: h.finish(),
            mixing: mixing.fingerprint(),
        }
    }
}

type Slot = Arc<OnceLock<std::result::Result<Arc<PreparedRoi>, String>>>;

/// Fits by key. Concurrent requests for the same key compute it once; the
/// others wait for that result.
#[derive(Debug, Default)]
pub struct FitCache {
    slots: RwLock<HashMap<FitKey, Slot>>,
}

impl FitCache {
    pub fn get(&self, key: &FitKey) -> Option<Arc<PreparedRoi>> {
        let slots = self.slots.read().expect("cache lock");
        slots.get(key)?.get()?.as_ref().ok().cloned()
    }

    /// Returns the cached value, or runs `init` exactly once for this key.
    /// The flag is true when the value was already there.
    pub fn get_or_insert_with(
        &self,
        key: FitKey,
        init: impl FnOnce() -> Result<PreparedRoi>,
    ) -> Result<(Arc<PreparedRoi>, bool)> {
        if let Some(hit) = self.get(&key) {
            return Ok((hit, true));
        }
        let slot = self
            .slots
            .write()
            .expect("cache lock")
            .entry(key)
            .or_default()
            .clone();
        let mut ran = false;
        let value = slot.get_or_init(|| {
            ran = true;
            init().map(Arc::new).map_err(|e| e.to_string())
        });
        match value {
            Ok(p) => Ok((p.clone(), !ran)),
            Err(msg) => {
                let mut slots = self.slots.write().expect("cache lock");
                if slots.get(&key).is_some_and(|s| Arc::ptr_eq(s, &slot)) {
                    slots.remove(&key);
                }
                Err(Error::Parameter(format!("fit failed: {msg}")))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.slots.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.slots.write().expect("cache lock").clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{blemish_fixture, reference_mixing};
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn concurrent_requests_fit_once() {
        let (scene, roi) = blemish_fixture(1);
        let img = scene.render(&reference_mixing());
        let cfg = RetouchConfig::default();
        let key = FitKey::new(image_fingerprint(&img), roi, 1.6, &cfg, &reference_mixing());
        let cache = FitCache::default();
        let calls = AtomicUsize::new(0);
        let hits = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let (_, cached) = cache
                        .get_or_insert_with(key, || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            PreparedRoi::new(&img, roi, &reference_mixing(), &cfg)
                        })
                        .unwrap();
                    hits.fetch_add(usize::from(cached), Ordering::SeqCst);
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(hits.load(Ordering::SeqCst), 7);
    }

    #[test]
    fn failures_are_not_cached() {
        let cache = FitCache::default();
        let cfg = RetouchConfig::default();
        let key = FitKey::new(1, Roi::new(0, 0, 8, 8), 2.0, &cfg, &reference_mixing());
        let err = cache.get_or_insert_with(key, || Err(Error::Parameter("boom".into())));
        assert!(err.is_err());
        assert!(cache.is_empty());
    }

    #[test]
    fn keys_separate_inputs() {
        let cfg = RetouchConfig::default();
        let e = reference_mixing();
        let roi = Roi::new(0, 0, 8, 8);
        let k = FitKey::new(1, roi, 2.0, &cfg, &e);
        assert_eq!(k, FitKey::new(1, roi, 2.0, &cfg, &e));
        assert_ne!(k, FitKey::new(2, roi, 2.0, &cfg, &e));
        assert_ne!(k, FitKey::new(1, roi, 2.5, &cfg, &e));
        assert_ne!(k, FitKey::new(1, roi, 2.0, &cfg, &MixingMatrix::identity()));
        let mut other = cfg.clone();
        other.fit.max_gaussians = 2;
        assert_ne!(k, FitKey::new(1, roi, 2.0, &other, &e));
    }
}
