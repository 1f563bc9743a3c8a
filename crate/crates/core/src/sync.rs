//! PSS generation and frame-timing recovery.
//!
//! The PSS is a length-127 Zadoff-Chu sequence mapped onto the 127 central
//! data subcarriers (DC excluded) of the first OFDM symbol of the frame. The
//! receiver correlates the incoming samples against the time-domain PSS
//! symbol, prefix included, and takes the lag of the correlation peak within
//! one frame as the frame start.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerology::Numerology;
use crate::ofdm::OfdmModem;

pub const PSS_LEN: usize = 127;
/// Default peak-to-median ratio required to declare sync.
pub const DEFAULT_THRESHOLD: f64 = 8.0;

/// Sync settings exposed in the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    /// Zadoff-Chu root index.
    pub root: u32,
    pub threshold: f64,
    /// Monte-Carlo trials of `sync-test`.
    pub trials: usize,
    /// PSS sample power over noise variance; `None` is noise free.
    pub snr_db: Option<f64>,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            root: 29,
            threshold: DEFAULT_THRESHOLD,
            trials: 100,
            snr_db: Some(0.0),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("ZC root {0} outside 1..=126")]
    RootOutOfRange(u32),
    #[error("numerology maps {0} data subcarriers, PSS needs at least 128")]
    TooFewSubcarriers(usize),
    #[error("received {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("no PSS found: peak/median {peak_metric:.2} below threshold {threshold}")]
    NoSync { peak_metric: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PssSequence {
    pub root: u32,
    pub seq: Vec<Complex64>,
}

impl PssSequence {
    /// `z[n] = exp(-j pi u n (n + 1) / 127)`.
    pub fn zadoff_chu(root: u32) -> Result<Self, SyncError> {
        if !(1..PSS_LEN as u32).contains(&root) {
            return Err(SyncError::RootOutOfRange(root));
        }
        let n_len = PSS_LEN as u64;
        let seq = (0..n_len)
            .map(|n| {
                // reduce the quadratic phase exactly before converting to f64
                let q = (root as u64 * n * (n + 1)) % (2 * n_len);
                Complex64::cis(-PI * q as f64 / n_len as f64)
            })
            .collect();
        Ok(Self { root, seq })
    }

    /// Data-subcarrier indices carrying the sequence: the 63 subcarriers
    /// below DC and the 64 above.
    pub fn subcarriers(numerology: &Numerology) -> Result<std::ops::Range<usize>, SyncError> {
        if numerology.n_data_sc < PSS_LEN + 1 {
            return Err(SyncError::TooFewSubcarriers(numerology.n_data_sc));
        }
        let half = numerology.n_data_sc / 2;
        Ok(half - 63..half + 64)
    }

    /// Frequency-domain PSS symbol over all data subcarriers.
    pub fn symbol(&self, numerology: &Numerology) -> Result<Vec<Complex64>, SyncError> {
        let mut row = vec![Complex64::new(0.0, 0.0); numerology.n_data_sc];
        let range = Self::subcarriers(numerology)?;
        row[range].copy_from_slice(&self.seq);
        Ok(row)
    }
}

/// Time-domain PSS symbol of frame symbol 0, prefix included.
pub fn pss_waveform(modem: &OfdmModem, pss: &PssSequence) -> Result<Vec<Complex64>, SyncError> {
    let num = modem.numerology();
    let body = modem.symbol_body(&pss.symbol(num)?);
    let cp = num.cp_len(0);
    let mut out = Vec::with_capacity(cp + body.len());
    out.extend_from_slice(&body[num.fft_size - cp..]);
    out.extend_from_slice(&body);
    Ok(out)
}

/// One frame of samples carrying only the PSS at sample 0.
pub fn pss_frame(modem: &OfdmModem, pss: &PssSequence) -> Result<Vec<Complex64>, SyncError> {
    let mut frame = vec![Complex64::new(0.0, 0.0); modem.numerology().frame_samples()];
    let wave = pss_waveform(modem, pss)?;
    frame[..wave.len()].copy_from_slice(&wave);
    Ok(frame)
}

/// Average power per sample of the PSS symbol body.
pub fn pss_sample_power(numerology: &Numerology) -> f64 {
    PSS_LEN as f64 / numerology.fft_size as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub offset_samples: usize,
    pub peak_metric: f64,
}

struct CachedPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    template_spectrum: Vec<Complex64>,
}

/// Correlation-based PSS detector for one numerology and root.
pub struct PssDetector {
    template: Vec<Complex64>,
    frame_len: usize,
    threshold: f64,
    plan: CachedPlan,
}

impl std::fmt::Debug for PssDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PssDetector")
            .field("frame_len", &self.frame_len)
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl PssDetector {
    pub fn new(modem: &OfdmModem, local: &PssSequence, threshold: f64) -> Result<Self, SyncError> {
        let template = pss_waveform(modem, local)?;
        let frame_len = modem.numerology().frame_samples();
        let plan = Self::plan_for(&template, frame_len);
        Ok(Self {
            template,
            frame_len,
            threshold,
            plan,
        })
    }

    fn plan_for(template: &[Complex64], len: usize) -> CachedPlan {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
        spectrum[..template.len()].copy_from_slice(template);
        forward.process(&mut spectrum);
        for v in &mut spectrum {
            *v = v.conj();
        }
        CachedPlan {
            len,
            forward,
            inverse,
            template_spectrum: spectrum,
        }
    }

    pub fn template(&self) -> &[Complex64] {
        &self.template
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Circular cross-correlation magnitude of `rx` against the template
    /// for every lag in `0..rx.len()`.
    pub fn correlate(&self, rx: &[Complex64]) -> Vec<f64> {
        let owned;
        let plan = if rx.len() == self.plan.len {
            &self.plan
        } else {
            owned = Self::plan_for(&self.template, rx.len());
            &owned
        };
        let mut buf = rx.to_vec();
        plan.forward.process(&mut buf);
        for (b, t) in buf.iter_mut().zip(&plan.template_spectrum) {
            *b *= t;
        }
        plan.inverse.process(&mut buf);
        let scale = 1.0 / rx.len() as f64;
        buf.iter().map(|v| v.norm() * scale).collect()
    }

    /// Locates the PSS within the first frame of `rx`.
    pub fn detect(&self, rx: &[Complex64]) -> Result<SyncResult, SyncError> {
        if rx.len() < self.frame_len {
            return Err(SyncError::TooShort {
                got: rx.len(),
                need: self.frame_len,
            });
        }
        let mut corr = self.correlate(rx);
        corr.truncate(self.frame_len);
        let (offset, peak) =
            corr.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
        let mid = corr.len() / 2;
        let (_, median, _) = corr.select_nth_unstable_by(mid, f64::total_cmp);
        let median = *median;
        let peak_metric = if median > 0.0 {
            peak / median
        } else if peak > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if !(peak_metric >= self.threshold) {
            return Err(SyncError::NoSync {
                peak_metric,
                threshold: self.threshold,
            });
        }
        Ok(SyncResult {
            offset_samples: offset,
            peak_metric,
        })
    }
}

/// Rotates `stream` left by `offset` so the detected frame start becomes
/// sample 0.
pub fn align_frame(stream: &[Complex64], offset: usize) -> Vec<Complex64> {
    if stream.is_empty() {
        return Vec::new();
    }
    let offset = offset % stream.len();
    let mut out = Vec::with_capacity(stream.len());
    out.extend_from_slice(&stream[offset..]);
    out.extend_from_slice(&stream[..offset]);
    out
}

/// Inverse of [`align_frame`]: delays `stream` circularly by `delay`.
pub fn delay_circular(stream: &[Complex64], delay: usize) -> Vec<Complex64> {
    if stream.is_empty() {
        return Vec::new();
    }
    let len = stream.len();
    align_frame(stream, (len - delay % len) % len)
}
