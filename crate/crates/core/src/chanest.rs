//! Comb-type pilot allocation and least-squares channel estimation.
//!
//! Every `K` consecutive subcarriers form a sub-band. User `k` sends its
//! pilot on subcarrier `i K + k` of every sub-band `i`, so the users are
//! orthogonal in frequency and the `N x K` uplink estimate of sub-band `i` is
//! `H_i = Y_i X_i^H`. The estimate is then expanded to the remaining
//! subcarriers of the sub-band by zero-order hold (or, optionally, linear
//! interpolation between neighbouring pilots of the same user).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelTensor;
use crate::linalg::CMat;
use crate::ofdm::ResourceGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("{users} users do not divide {n_sc} subcarriers")]
    Indivisible { users: usize, n_sc: usize },
    #[error("pilot of user {user} in sub-band {subband} is zero")]
    ZeroPilot { subband: usize, user: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Comb pilot assignment of `K` users over `N_sc` subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotMap {
    pub n_users: usize,
    pub n_sc: usize,
}

impl PilotMap {
    pub fn new(n_users: usize, n_sc: usize) -> Result<Self, EstimationError> {
        if n_users == 0 || !n_sc.is_multiple_of(n_users) {
            return Err(EstimationError::Indivisible {
                users: n_users,
                n_sc,
            });
        }
        Ok(Self { n_users, n_sc })
    }

    pub fn n_subbands(&self) -> usize {
        self.n_sc / self.n_users
    }

    /// User whose pilot occupies subcarrier `m`.
    pub fn owner(&self, m: usize) -> usize {
        m % self.n_users
    }

    pub fn subband(&self, m: usize) -> usize {
        m / self.n_users
    }

    pub fn pilot_subcarrier(&self, subband: usize, user: usize) -> usize {
        subband * self.n_users + user
    }

    pub fn subcarriers_of(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_subbands()).map(move |i| self.pilot_subcarrier(i, user))
    }
}

/// Pilot values indexed `(sub-band, user)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSymbols {
    pub n_subbands: usize,
    pub n_users: usize,
    pub values: Vec<Complex64>,
}

impl PilotSymbols {
    /// Random unit-modulus QPSK pilots.
    pub fn random_qpsk(map: &PilotMap, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let values = (0..map.n_sc)
            .map(|_| {
                let re = if rng.random::<bool>() { s } else { -s };
                let im = if rng.random::<bool>() { s } else { -s };
                Complex64::new(re, im)
            })
            .collect();
        Self {
            n_subbands: map.n_subbands(),
            n_users: map.n_users,
            values,
        }
    }

    pub fn all_ones(map: &PilotMap) -> Self {
        Self {
            n_subbands: map.n_subbands(),
            n_users: map.n_users,
            values: vec![Complex64::new(1.0, 0.0); map.n_sc],
        }
    }

    pub fn get(&self, subband: usize, user: usize) -> Complex64 {
        self.values[subband * self.n_users + user]
    }

    /// Pilots of sub-bands `range`, re-indexed from zero.
    pub fn subbands(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            n_subbands: range.len(),
            n_users: self.n_users,
            values: self.values[range.start * self.n_users..range.end * self.n_users].to_vec(),
        }
    }

    /// Scales every pilot by `amplitude`.
    pub fn scaled(&self, amplitude: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * amplitude).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    ZeroOrderHold,
    Linear,
}

/// Per-sub-band LS estimates `(sub-band, element, user)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub n_subbands: usize,
    pub n_elem: usize,
    pub n_users: usize,
    pub interpolation: Interpolation,
    pub per_subband: Vec<Complex64>,
}

impl ChannelEstimate {
    pub fn n_sc(&self) -> usize {
        self.n_subbands * self.n_users
    }

    #[inline]
    fn idx(&self, i: usize, n: usize, k: usize) -> usize {
        (i * self.n_elem + n) * self.n_users + k
    }

    pub fn subband_entry(&self, i: usize, n: usize, k: usize) -> Complex64 {
        self.per_subband[self.idx(i, n, k)]
    }

    /// `N x K` estimate of sub-band `i`.
    pub fn subband_matrix(&self, i: usize) -> CMat {
        let base = i * self.n_elem * self.n_users;
        CMat::from_row_slice(
            self.n_elem,
            self.n_users,
            &self.per_subband[base..base + self.n_elem * self.n_users],
        )
    }

    /// Expanded estimate for element `n`, user `k` at subcarrier `m`.
    pub fn entry(&self, m: usize, n: usize, k: usize) -> Complex64 {
        match self.interpolation {
            Interpolation::ZeroOrderHold => self.subband_entry(m / self.n_users, n, k),
            Interpolation::Linear => {
                let kk = self.n_users as f64;
                // pilot of user k in sub-band i sits at i K + k
                let pos = (m as f64 - k as f64) / kk;
                let last = self.n_subbands - 1;
                if pos <= 0.0 {
                    return self.subband_entry(0, n, k);
                }
                let i0 = pos.floor() as usize;
                if i0 >= last {
                    return self.subband_entry(last, n, k);
                }
                let w = pos - i0 as f64;
                self.subband_entry(i0, n, k) * (1.0 - w) + self.subband_entry(i0 + 1, n, k) * w
            }
        }
    }

    /// `N x K` estimate at subcarrier `m`.
    pub fn subcarrier_matrix(&self, m: usize) -> CMat {
        match self.interpolation {
            Interpolation::ZeroOrderHold => self.subband_matrix(m / self.n_users),
            Interpolation::Linear => {
                CMat::from_fn(self.n_elem, self.n_users, |n, k| self.entry(m, n, k))
            }
        }
    }

    /// Expanded estimate over all subcarriers.
    pub fn to_tensor(&self, f_c: f64, scs_hz: f64) -> ChannelTensor {
        let mut t = ChannelTensor::zeros(self.n_sc(), self.n_elem, self.n_users, f_c, scs_hz);
        for m in 0..self.n_sc() {
            for n in 0..self.n_elem {
                for k in 0..self.n_users {
                    t.set(m, n, k, self.entry(m, n, k));
                }
            }
        }
        t
    }

    /// Builds per-sub-band estimates by sampling a known channel at the
    /// pilot subcarriers (noise-free LS).
    pub fn from_channel_at_pilots(h: &ChannelTensor, map: &PilotMap) -> Self {
        let mut per_subband = Vec::with_capacity(h.data.len() / map.n_users);
        for i in 0..map.n_subbands() {
            for n in 0..h.n_elem {
                for k in 0..map.n_users {
                    per_subband.push(h.get(map.pilot_subcarrier(i, k), n, k));
                }
            }
        }
        Self {
            n_subbands: map.n_subbands(),
            n_elem: h.n_elem,
            n_users: map.n_users,
            interpolation: Interpolation::ZeroOrderHold,
            per_subband,
        }
    }
}

/// Uplink LS estimate from pilot symbol `symbol` of the per-chain received
/// grid `obs` (`N` streams).
///
/// Column `k` of sub-band `i` is `y[iK + k] x[i,k]^* / |x[i,k]|^2`, which is
/// `Y_i X_i^H` for unit-modulus pilots.
pub fn ls_estimate_ul(
    obs: &ResourceGrid,
    symbol: usize,
    pilots: &PilotSymbols,
    map: &PilotMap,
    interpolation: Interpolation,
) -> Result<ChannelEstimate, EstimationError> {
    if obs.n_sc != map.n_sc {
        return Err(EstimationError::Dimension(format!(
            "grid has {} subcarriers, pilot map {}",
            obs.n_sc, map.n_sc
        )));
    }
    if pilots.n_subbands != map.n_subbands() || pilots.n_users != map.n_users {
        return Err(EstimationError::Dimension(format!(
            "pilot table is {}x{}, map needs {}x{}",
            pilots.n_subbands,
            pilots.n_users,
            map.n_subbands(),
            map.n_users
        )));
    }
    if symbol >= obs.n_symbols {
        return Err(EstimationError::Dimension(format!(
            "pilot symbol {symbol} outside grid of {} symbols",
            obs.n_symbols
        )));
    }
    let n_elem = obs.n_streams;
    let k_users = map.n_users;
    let mut inv = Vec::with_capacity(pilots.values.len());
    for i in 0..map.n_subbands() {
        for k in 0..k_users {
            let x = pilots.get(i, k);
            let p = x.norm_sqr();
            if p == 0.0 {
                return Err(EstimationError::ZeroPilot {
                    subband: i,
                    user: k,
                });
            }
            inv.push(x.conj() / p);
        }
    }
    let mut per_subband = vec![Complex64::new(0.0, 0.0); map.n_subbands() * n_elem * k_users];
    for n in 0..n_elem {
        let row = obs.symbol(n, symbol);
        for i in 0..map.n_subbands() {
            for k in 0..k_users {
                let y = row[map.pilot_subcarrier(i, k)];
                per_subband[(i * n_elem + n) * k_users + k] = y * inv[i * k_users + k];
            }
        }
    }
    Ok(ChannelEstimate {
        n_subbands: map.n_subbands(),
        n_elem,
        n_users: k_users,
        interpolation,
        per_subband,
    })
}

/// Downlink effective-channel estimate `y x^*` from one pilot observation.
pub fn estimate_dl(y_p: Complex64, x_p: Complex64) -> Complex64 {
    y_p * x_p.conj()
}

/// Per-sub-band downlink estimates of user `k` from its received pilot
/// symbol `rx` (all subcarriers), expanded by zero-order hold.
pub fn estimate_dl_user(
    rx: &[Complex64],
    user: usize,
    pilots: &PilotSymbols,
    map: &PilotMap,
) -> Vec<Complex64> {
    let per_subband: Vec<Complex64> = (0..map.n_subbands())
        .map(|i| estimate_dl(rx[map.pilot_subcarrier(i, user)], pilots.get(i, user)))
        .collect();
    (0..map.n_sc).map(|m| per_subband[map.subband(m)]).collect()
}
