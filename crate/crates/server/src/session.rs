use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use blemish::chromophore::MixingMatrix;
use blemish::retouch::{GainVector, PreparedRoi, RetouchConfig, Retoucher, SourceImage};
use blemish::{RgbImage8, Roi};

/// Sessions idle this long are dropped.
pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

/// One uploaded image and the fits made on it.
#[derive(Debug)]
pub struct Session {
    id: String,
    source: SourceImage,
    retoucher: Retoucher,
    /// Latest fit per region; previews and exports use it.
    fits: RwLock<HashMap<Roi, Arc<PreparedRoi>>>,
    last_preview: Mutex<Option<Arc<Vec<u8>>>>,
    last_used: Mutex<Instant>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &SourceImage {
        &self.source
    }

    pub fn retoucher(&self) -> &Retoucher {
        &self.retoucher
    }

    /// Fits `roi`, or returns the cached fit for the same `(roi, σ)`.
    pub fn fit(&self, roi: Roi, sigma: Option<f64>) -> blemish::Result<(Arc<PreparedRoi>, bool)> {
        let sigma = sigma.or(self.retoucher.config().sigma);
        let (prepared, cached) = self.retoucher.prepare_with_sigma(&self.source, roi, sigma)?;
        self.fits
            .write()
            .expect("session lock")
            .insert(roi, prepared.clone());
        Ok((prepared, cached))
    }

    pub fn fitted(&self, roi: Roi) -> Option<Arc<PreparedRoi>> {
        self.fits.read().expect("session lock").get(&roi).cloned()
    }

    pub fn remember_preview(&self, png: Arc<Vec<u8>>) {
        *self.last_preview.lock().expect("session lock") = Some(png);
    }

    pub fn last_preview(&self) -> Option<Arc<Vec<u8>>> {
        self.last_preview.lock().expect("session lock").clone()
    }

    /// Renders the preview crop for a fitted region.
    pub fn preview(&self, prepared: &PreparedRoi, gains: GainVector) -> blemish::Result<RgbImage8> {
        self.retoucher.preview(&self.source, prepared, gains)
    }

    fn touch(&self, now: Instant) {
        *self.last_used.lock().expect("session lock") = now;
    }

    fn idle_since(&self) -> Instant {
        *self.last_used.lock().expect("session lock")
    }
}

/// In-memory sessions with idle expiry.
#[derive(Debug)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    mixing: MixingMatrix,
    cfg: RetouchConfig,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(mixing: MixingMatrix, cfg: RetouchConfig, ttl: Duration) -> Self {
        Self {
            sessions: RwLock::default(),
            mixing,
            cfg,
            ttl,
        }
    }

    pub fn create(&self, image: RgbImage8) -> Arc<Session> {
        self.create_at(image, Instant::now())
    }

    pub fn create_at(&self, image: RgbImage8, now: Instant) -> Arc<Session> {
        let mut sessions = self.sessions.write().expect("store lock");
        let id = loop {
            let id = format!("{:032x}", rand::random::<u128>());
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let session = Arc::new(Session {
            id: id.clone(),
            source: SourceImage::new(image),
            retoucher: Retoucher::new(self.mixing.clone(), self.cfg.clone()),
            fits: RwLock::default(),
            last_preview: Mutex::default(),
            last_used: Mutex::new(now),
        });
        sessions.insert(id, session.clone());
        session
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.get_at(id, Instant::now())
    }

    /// Looks up a live session and marks it used at `now`.
    pub fn get_at(&self, id: &str, now: Instant) -> Option<Arc<Session>> {
        let session = self.sessions.read().expect("store lock").get(id).cloned()?;
        if now.saturating_duration_since(session.idle_since()) > self.ttl {
            self.sessions.write().expect("store lock").remove(id);
            return None;
        }
        session.touch(now);
        Some(session)
    }

    /// Drops every session idle for longer than the TTL; returns how many.
    pub fn evict_expired(&self, now: Instant) -> usize {
        let mut sessions = self.sessions.write().expect("store lock");
        let before = sessions.len();
        sessions.retain(|_, s| now.saturating_duration_since(s.idle_since()) <= self.ttl);
        before - sessions.len()
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
