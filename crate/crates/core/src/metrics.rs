//! Link-quality and channel-analysis metrics, plus the throughput and
//! spectral-efficiency calculators.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::Constellation;
use crate::linalg::{self, CMat};
use crate::mimo::ChannelMatrices;

/// Singular-value ratio below which a matrix counts as rank deficient.
pub const UNBOUNDED_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for MetricsError {
    fn from(e: std::io::Error) -> Self {
        MetricsError::Io(e.to_string())
    }
}

impl From<csv::Error> for MetricsError {
    fn from(e: csv::Error) -> Self {
        MetricsError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvmSer {
    pub evm_rms: f64,
    pub ser: f64,
    pub symbols: usize,
}

impl EvmSer {
    pub fn evm_db(&self) -> f64 {
        20.0 * self.evm_rms.log10()
    }
}

/// Running EVM/SER sums over any number of symbol batches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvmAccumulator {
    pub error_energy: f64,
    pub reference_energy: f64,
    pub errors: usize,
    pub symbols: usize,
}

impl EvmAccumulator {
    pub fn push(
        &mut self,
        detected: Complex64,
        reference: Complex64,
        constellation: Constellation,
    ) {
        self.error_energy += (detected - reference).norm_sqr();
        self.reference_energy += reference.norm_sqr();
        if constellation.slice(detected) != constellation.slice(reference) {
            self.errors += 1;
        }
        self.symbols += 1;
    }

    pub fn merge(&mut self, other: &EvmAccumulator) {
        self.error_energy += other.error_energy;
        self.reference_energy += other.reference_energy;
        self.errors += other.errors;
        self.symbols += other.symbols;
    }

    pub fn finish(&self) -> EvmSer {
        EvmSer {
            evm_rms: if self.reference_energy > 0.0 {
                (self.error_energy / self.reference_energy).sqrt()
            } else {
                0.0
            },
            ser: if self.symbols > 0 {
                self.errors as f64 / self.symbols as f64
            } else {
                0.0
            },
            symbols: self.symbols,
        }
    }
}

/// RMS error over RMS reference, and the fraction of symbols whose nearest
/// constellation point differs from the reference's.
pub fn evm_ser(
    detected: &[Complex64],
    reference: &[Complex64],
    constellation: Constellation,
) -> Result<EvmSer, MetricsError> {
    if detected.len() != reference.len() {
        return Err(MetricsError::Dimension(format!(
            "{} detected vs {} reference symbols",
            detected.len(),
            reference.len()
        )));
    }
    let mut acc = EvmAccumulator::default();
    for (d, r) in detected.iter().zip(reference) {
        acc.push(*d, *r, constellation);
    }
    Ok(acc.finish())
}

/// Per-subcarrier spread samples and their empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    /// `(subcarrier or trial index, sigma_max / sigma_min)`.
    pub samples: Vec<(usize, f64)>,
    /// Sorted spread values.
    pub cdf: Vec<f64>,
    /// Samples whose smallest singular value vanished (spread = inf).
    pub unbounded: usize,
}

impl SpreadReport {
    pub fn from_samples(samples: Vec<(usize, f64)>) -> Self {
        let mut cdf: Vec<f64> = samples.iter().map(|s| s.1).collect();
        cdf.sort_by(f64::total_cmp);
        let unbounded = cdf.iter().filter(|v| v.is_infinite()).count();
        Self {
            samples,
            cdf,
            unbounded,
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        if self.cdf.is_empty() {
            return f64::NAN;
        }
        let pos = q.clamp(0.0, 1.0) * (self.cdf.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi || self.cdf[hi].is_infinite() {
            return self.cdf[lo];
        }
        let w = pos - lo as f64;
        self.cdf[lo] * (1.0 - w) + self.cdf[hi] * w
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// CSV rows `index,spread,cdf` with the CDF evaluated at each sample.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "spread", "cdf"])?;
        let n = self.cdf.len() as f64;
        for &(i, s) in &self.samples {
            let rank = self.cdf.partition_point(|v| v.total_cmp(&s).is_le());
            wr.write_record([i.to_string(), s.to_string(), (rank as f64 / n).to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Divides every column by its Euclidean norm.
pub fn normalize_columns(h: &CMat) -> Result<CMat, MetricsError> {
    let mut out = h.clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(MetricsError::Domain(format!("column {k} is zero")));
        }
        col /= Complex64::new(norm, 0.0);
    }
    Ok(out)
}

/// `sigma_max / sigma_min` of one `N x K` matrix; infinite when rank deficient.
pub fn matrix_spread(h: &CMat, normalize: bool) -> Result<f64, MetricsError> {
    if h.nrows() < h.ncols() || h.ncols() == 0 {
        return Err(MetricsError::Dimension(format!(
            "need N >= K >= 1, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let sv = if normalize {
        linalg::singular_values(&normalize_columns(h)?)
    } else {
        linalg::singular_values(h)
    };
    let (max, min) = (sv[0], sv[sv.len() - 1]);
    if max == 0.0 {
        return Err(MetricsError::Domain("all-zero matrix".into()));
    }
    if min <= max * UNBOUNDED_RATIO {
        return Ok(f64::INFINITY);
    }
    Ok((max / min).max(1.0))
}

/// Spread of every subcarrier of `channel`.
pub fn singular_value_spread<C: ChannelMatrices>(
    channel: &C,
    normalize: bool,
) -> Result<SpreadReport, MetricsError> {
    let samples = (0..channel.n_sc())
        .map(|m| matrix_spread(&channel.matrix(m), normalize).map(|s| (m, s)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpreadReport::from_samples(samples))
}

/// Per-element power of `user` averaged over subcarriers, normalized to its
/// maximum.
pub fn element_power_profile<C: ChannelMatrices>(
    channel: &C,
    user: usize,
) -> Result<Vec<f64>, MetricsError> {
    if user >= channel.n_users() {
        return Err(MetricsError::Dimension(format!(
            "user {user} of {}",
            channel.n_users()
        )));
    }
    let mut power = vec![0.0; channel.n_elem()];
    for m in 0..channel.n_sc() {
        let h = channel.matrix(m);
        for (n, p) in power.iter_mut().enumerate() {
            *p += h[(n, user)].norm_sqr();
        }
    }
    let max = power.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(MetricsError::Domain(format!(
            "user {user} channel is all zero"
        )));
    }
    Ok(power.into_iter().map(|p| p / max).collect())
}

/// Power profile in dB relative to the peak element.
pub fn profile_db(profile: &[f64]) -> Vec<f64> {
    profile.iter().map(|p| 10.0 * p.log10()).collect()
}

/// Inputs of the throughput formula
/// `n_sc * symbols * bits * users / window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSpec {
    pub n_sc: usize,
    pub symbols_per_window: usize,
    pub bits_per_symbol: usize,
    pub users: usize,
    pub window_s: f64,
    pub bandwidth_hz: f64,
}

impl ThroughputSpec {
    /// 256-QAM over one 0.5 ms pair of slots on a 200 MHz carrier.
    pub fn prototype(n_sc: usize, symbols_per_window: usize, users: usize) -> Self {
        Self {
            n_sc,
            symbols_per_window,
            bits_per_symbol: 8,
            users,
            window_s: 0.5e-3,
            bandwidth_hz: 200e6,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.n_sc == 0
            || self.symbols_per_window == 0
            || self.bits_per_symbol == 0
            || self.users == 0
            || !(self.window_s > 0.0)
            || !(self.bandwidth_hz > 0.0)
        {
            return Err(MetricsError::Domain(format!(
                "non-positive field in {self:?}"
            )));
        }
        Ok(())
    }
}

/// Bits per second.
pub fn throughput(spec: &ThroughputSpec) -> f64 {
    spec.n_sc as f64
        * spec.symbols_per_window as f64
        * spec.bits_per_symbol as f64
        * spec.users as f64
        / spec.window_s
}

/// Bits per second per hertz.
pub fn spectral_efficiency(spec: &ThroughputSpec) -> f64 {
    throughput(spec) / spec.bandwidth_hz
}
