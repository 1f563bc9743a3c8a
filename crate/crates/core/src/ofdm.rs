//! OFDM modulation and demodulation between resource grids and sample
//! streams.
//!
//! Data subcarriers are mapped symmetrically around a nulled DC bin. Both
//! transforms are unitary (`1/sqrt(N_fft)`), so energy is preserved between
//! the mapped subcarriers and the prefix-free symbol body.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerology::Numerology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OfdmError {
    #[error("grid has {grid} subcarriers, numerology maps {numerology}")]
    SubcarrierMismatch { grid: usize, numerology: usize },
    #[error("stream of {len} samples does not end on a symbol boundary (leftover {leftover})")]
    Framing { len: usize, leftover: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Frequency-domain symbols indexed `(stream, symbol, subcarrier)`.
///
/// `start_symbol` is the frame-relative index of the grid's first OFDM
/// symbol; it decides which symbols use the long cyclic prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceGrid {
    pub n_sc: usize,
    pub n_symbols: usize,
    pub n_streams: usize,
    pub start_symbol: usize,
    pub data: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(n_sc: usize, n_symbols: usize, n_streams: usize) -> Self {
        Self {
            n_sc,
            n_symbols,
            n_streams,
            start_symbol: 0,
            data: vec![Complex64::new(0.0, 0.0); n_sc * n_symbols * n_streams],
        }
    }

    pub fn with_start_symbol(mut self, start_symbol: usize) -> Self {
        self.start_symbol = start_symbol;
        self
    }

    #[inline]
    pub fn index(&self, stream: usize, symbol: usize, sc: usize) -> usize {
        (stream * self.n_symbols + symbol) * self.n_sc + sc
    }

    #[inline]
    pub fn get(&self, stream: usize, symbol: usize, sc: usize) -> Complex64 {
        self.data[self.index(stream, symbol, sc)]
    }

    #[inline]
    pub fn set(&mut self, stream: usize, symbol: usize, sc: usize, v: Complex64) {
        let i = self.index(stream, symbol, sc);
        self.data[i] = v;
    }

    /// Subcarrier row of one stream and symbol.
    pub fn symbol(&self, stream: usize, symbol: usize) -> &[Complex64] {
        let i = self.index(stream, symbol, 0);
        &self.data[i..i + self.n_sc]
    }

    pub fn symbol_mut(&mut self, stream: usize, symbol: usize) -> &mut [Complex64] {
        let i = self.index(stream, symbol, 0);
        &mut self.data[i..i + self.n_sc]
    }

    /// Copy restricted to streams `streams` and subcarriers `subcarriers`.
    pub fn slice(
        &self,
        streams: std::ops::Range<usize>,
        subcarriers: std::ops::Range<usize>,
    ) -> ResourceGrid {
        let mut out = ResourceGrid::zeros(subcarriers.len(), self.n_symbols, streams.len());
        out.start_symbol = self.start_symbol;
        for (so, si) in streams.enumerate() {
            for t in 0..self.n_symbols {
                out.symbol_mut(so, t)
                    .copy_from_slice(&self.symbol(si, t)[subcarriers.clone()]);
            }
        }
        out
    }

    /// Writes `block` into this grid at stream offset `stream0` and
    /// subcarrier offset `sc0`.
    pub fn paste(&mut self, block: &ResourceGrid, stream0: usize, sc0: usize) {
        for s in 0..block.n_streams {
            for t in 0..block.n_symbols {
                self.symbol_mut(stream0 + s, t)[sc0..sc0 + block.n_sc]
                    .copy_from_slice(block.symbol(s, t));
            }
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Complex baseband samples, one sequence per stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStream {
    pub sample_rate_hz: f64,
    pub streams: Vec<Vec<Complex64>>,
}

impl SampleStream {
    pub fn len(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn energy(&self) -> f64 {
        self.streams
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v.norm_sqr())
            .sum()
    }
}

/// OFDM modulator/demodulator for one numerology.
#[derive(Clone)]
pub struct OfdmModem {
    numerology: Numerology,
    ifft: Arc<dyn Fft<f64>>,
    fft: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for OfdmModem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OfdmModem")
            .field("numerology", &self.numerology)
            .finish()
    }
}

impl OfdmModem {
    pub fn new(numerology: &Numerology) -> Self {
        let mut planner = FftPlanner::new();
        let n = numerology.fft_size;
        Self {
            numerology: numerology.clone(),
            ifft: planner.plan_fft_inverse(n),
            fft: planner.plan_fft_forward(n),
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn numerology(&self) -> &Numerology {
        &self.numerology
    }

    /// Time-domain body (no prefix) of one OFDM symbol.
    pub fn symbol_body(&self, subcarriers: &[Complex64]) -> Vec<Complex64> {
        let num = &self.numerology;
        let mut buf = vec![Complex64::new(0.0, 0.0); num.fft_size];
        for (j, &x) in subcarriers.iter().enumerate() {
            buf[num.fft_bin(j)] = x;
        }
        self.ifft.process(&mut buf);
        for v in &mut buf {
            *v *= self.scale;
        }
        buf
    }

    /// Modulates every stream of `grid` into a sample stream.
    pub fn modulate(&self, grid: &ResourceGrid) -> Result<SampleStream, OfdmError> {
        let num = &self.numerology;
        if grid.n_sc != num.n_data_sc {
            return Err(OfdmError::SubcarrierMismatch {
                grid: grid.n_sc,
                numerology: num.n_data_sc,
            });
        }
        let total: usize = (0..grid.n_symbols)
            .map(|t| num.symbol_samples(grid.start_symbol + t))
            .sum();
        let mut streams = Vec::with_capacity(grid.n_streams);
        for s in 0..grid.n_streams {
            let mut out = Vec::with_capacity(total);
            for t in 0..grid.n_symbols {
                let body = self.symbol_body(grid.symbol(s, t));
                let cp = num.cp_len(grid.start_symbol + t);
                out.extend_from_slice(&body[num.fft_size - cp..]);
                out.extend_from_slice(&body);
            }
            streams.push(out);
        }
        Ok(SampleStream {
            sample_rate_hz: num.sample_rate_hz,
            streams,
        })
    }

    /// Number of whole symbols in `len` samples starting at `start_symbol`.
    fn count_symbols(&self, len: usize, start_symbol: usize) -> Result<usize, OfdmError> {
        let mut pos = 0;
        let mut t = 0;
        while pos < len {
            let step = self.numerology.symbol_samples(start_symbol + t);
            if pos + step > len {
                return Err(OfdmError::Framing {
                    len,
                    leftover: len - pos,
                });
            }
            pos += step;
            t += 1;
        }
        Ok(t)
    }

    /// Demodulates a stream whose first sample starts symbol `start_symbol`.
    pub fn demodulate(
        &self,
        stream: &SampleStream,
        start_symbol: usize,
    ) -> Result<ResourceGrid, OfdmError> {
        let num = &self.numerology;
        let len = stream.len();
        if stream.streams.iter().any(|s| s.len() != len) {
            return Err(OfdmError::Dimension("streams differ in length".into()));
        }
        let n_symbols = self.count_symbols(len, start_symbol)?;
        let mut grid = ResourceGrid::zeros(num.n_data_sc, n_symbols, stream.streams.len())
            .with_start_symbol(start_symbol);
        let mut buf = vec![Complex64::new(0.0, 0.0); num.fft_size];
        for (s, samples) in stream.streams.iter().enumerate() {
            let mut pos = 0;
            for t in 0..n_symbols {
                let cp = num.cp_len(start_symbol + t);
                buf.copy_from_slice(&samples[pos + cp..pos + cp + num.fft_size]);
                self.fft.process(&mut buf);
                let row = grid.symbol_mut(s, t);
                for (j, out) in row.iter_mut().enumerate() {
                    *out = buf[num.fft_bin(j)] * self.scale;
                }
                pos += cp + num.fft_size;
            }
        }
        Ok(grid)
    }
}
