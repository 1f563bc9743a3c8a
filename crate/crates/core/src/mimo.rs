//! Linear multiuser detection and precoding.
//!
//! | scheme | detection `W`                 | precoding `F`                 |
//! |--------|-------------------------------|-------------------------------|
//! | MR     | `H^H`                         | `H^*`                         |
//! | ZF     | `(H^H H)^-1 H^H`              | `H^* (H^H H)^-T`              |
//! | LMMSE  | `(H^H H + s2 I)^-1 H^H`       | `H^* (H^H H + s2 I)^-T`       |
//!
//! Every precoder equals the transpose of the matching detector, which is
//! what reciprocity (`H_dl = H_ul^T`) requires. Precoders are scaled by one
//! band-wide factor so that the average of `trace(F_m^H F_m)` over
//! subcarriers equals `P_dl`.
//!
//! The base station's LMMSE detector does not form `H^H H`: it solves the
//! regularized least-squares problem through a Householder QR of the stacked
//! matrix `[H; s I]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chanest::{ChannelEstimate, Interpolation};
use crate::channel::ChannelTensor;
use crate::linalg::{self, CMat, HouseholderQr, LinalgError};
use crate::ofdm::ResourceGrid;

/// ZF refuses to invert when `s_min < ZF_CONDITION_LIMIT * s_max`.
pub const ZF_CONDITION_LIMIT: f64 = 1e-10;
/// QR solves fail when `min |R_ii| / max |R_ii|` drops below this.
pub const QR_RANK_LIMIT: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MimoError {
    #[error("channel matrix is rank deficient (singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("{scheme:?} needs at least as many antennas as users ({n_elem} < {n_users})")]
    TooFewAntennas {
        scheme: Scheme,
        n_elem: usize,
        n_users: usize,
    },
    #[error("LMMSE needs a positive noise variance, got {0}")]
    NoiseVariance(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Mr,
    Zf,
    Lmmse,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mr" | "mrc" | "mrt" => Ok(Scheme::Mr),
            "zf" => Ok(Scheme::Zf),
            "lmmse" | "mmse" => Ok(Scheme::Lmmse),
            other => Err(format!(
                "unknown scheme '{other}' (expected mr, zf or lmmse)"
            )),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Mr => "mr",
            Scheme::Zf => "zf",
            Scheme::Lmmse => "lmmse",
        })
    }
}

/// Source of per-subcarrier `N x K` channel matrices.
pub trait ChannelMatrices {
    fn n_sc(&self) -> usize;
    fn n_elem(&self) -> usize;
    fn n_users(&self) -> usize;
    fn matrix(&self, m: usize) -> CMat;
    /// Number of consecutive subcarriers that share one matrix.
    fn block_len(&self) -> usize {
        1
    }
}

impl ChannelMatrices for ChannelEstimate {
    fn n_sc(&self) -> usize {
        ChannelEstimate::n_sc(self)
    }
    fn n_elem(&self) -> usize {
        self.n_elem
    }
    fn n_users(&self) -> usize {
        self.n_users
    }
    fn matrix(&self, m: usize) -> CMat {
        self.subcarrier_matrix(m)
    }
    fn block_len(&self) -> usize {
        match self.interpolation {
            Interpolation::ZeroOrderHold => self.n_users,
            Interpolation::Linear => 1,
        }
    }
}

impl ChannelMatrices for ChannelTensor {
    fn n_sc(&self) -> usize {
        self.n_sc
    }
    fn n_elem(&self) -> usize {
        self.n_elem
    }
    fn n_users(&self) -> usize {
        self.n_users
    }
    fn matrix(&self, m: usize) -> CMat {
        ChannelTensor::matrix(self, m)
    }
}

fn check_zf(h: &CMat) -> Result<(), MimoError> {
    let (n, k) = h.shape();
    if n < k {
        return Err(MimoError::TooFewAntennas {
            scheme: Scheme::Zf,
            n_elem: n,
            n_users: k,
        });
    }
    let sv = linalg::singular_values(h);
    let ratio = if sv[0] > 0.0 { sv[k - 1] / sv[0] } else { 0.0 };
    if !(ratio >= ZF_CONDITION_LIMIT) {
        return Err(MimoError::RankDeficient { ratio });
    }
    Ok(())
}

/// Detection filter `W` (`K x N`) for one subcarrier.
pub fn detection_filter(h: &CMat, scheme: Scheme, noise_var: f64) -> Result<CMat, MimoError> {
    let hh = h.adjoint();
    match scheme {
        Scheme::Mr => Ok(hh),
        Scheme::Zf => {
            check_zf(h)?;
            let gram = &hh * h;
            let inv =
                linalg::inverse(&gram).map_err(|_| MimoError::RankDeficient { ratio: 0.0 })?;
            Ok(inv * hh)
        }
        Scheme::Lmmse => {
            if !(noise_var > 0.0) {
                return Err(MimoError::NoiseVariance(noise_var));
            }
            let k = h.ncols();
            let reg = &hh * h + CMat::identity(k, k) * Complex64::new(noise_var, 0.0);
            let inv = linalg::inverse(&reg).map_err(|_| MimoError::RankDeficient { ratio: 0.0 })?;
            Ok(inv * hh)
        }
    }
}

/// Unnormalized precoding filter `F` (`N x K`) for one subcarrier.
pub fn precoding_filter(h: &CMat, scheme: Scheme, noise_var: f64) -> Result<CMat, MimoError> {
    Ok(detection_filter(h, scheme, noise_var)?.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Detection,
    Precoding,
}

/// Per-subcarrier detection (`K x N`) or precoding (`N x K`) matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    pub scheme: Scheme,
    pub kind: TransformKind,
    pub noise_var: f64,
    pub power_dl: Option<f64>,
    pub matrices: Vec<CMat>,
}

impl LinearTransform {
    pub fn n_sc(&self) -> usize {
        self.matrices.len()
    }

    /// Matrices of subcarriers `range`.
    pub fn subcarriers(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            matrices: self.matrices[range].to_vec(),
            ..self.clone()
        }
    }
}

fn per_subcarrier<C: ChannelMatrices>(
    channel: &C,
    mut f: impl FnMut(&CMat) -> Result<CMat, MimoError>,
) -> Result<Vec<CMat>, MimoError> {
    let block = channel.block_len().max(1);
    let mut out = Vec::with_capacity(channel.n_sc());
    let mut m = 0;
    while m < channel.n_sc() {
        let w = f(&channel.matrix(m))?;
        let end = (m + block).min(channel.n_sc());
        for _ in m..end {
            out.push(w.clone());
        }
        m = end;
    }
    Ok(out)
}

pub fn detection_matrix<C: ChannelMatrices>(
    channel: &C,
    scheme: Scheme,
    noise_var: f64,
) -> Result<LinearTransform, MimoError> {
    let matrices = per_subcarrier(channel, |h| detection_filter(h, scheme, noise_var))?;
    Ok(LinearTransform {
        scheme,
        kind: TransformKind::Detection,
        noise_var,
        power_dl: None,
        matrices,
    })
}

/// Band-wide scaling so the mean of `trace(F^H F)` equals `power_dl`.
pub fn precoding_matrix<C: ChannelMatrices>(
    channel: &C,
    scheme: Scheme,
    noise_var: f64,
    power_dl: f64,
) -> Result<LinearTransform, MimoError> {
    let mut matrices = per_subcarrier(channel, |h| precoding_filter(h, scheme, noise_var))?;
    let total: f64 = matrices.iter().map(|f| f.norm_squared()).sum();
    if total > 0.0 {
        let beta = (matrices.len() as f64 * power_dl / total).sqrt();
        for f in &mut matrices {
            *f *= Complex64::new(beta, 0.0);
        }
    }
    Ok(LinearTransform {
        scheme,
        kind: TransformKind::Precoding,
        noise_var,
        power_dl: Some(power_dl),
        matrices,
    })
}

fn apply(
    transform: &LinearTransform,
    grid: &ResourceGrid,
    out_streams: usize,
    in_streams: usize,
) -> Result<ResourceGrid, MimoError> {
    if grid.n_sc != transform.n_sc() {
        return Err(MimoError::Dimension(format!(
            "grid has {} subcarriers, transform {}",
            grid.n_sc,
            transform.n_sc()
        )));
    }
    if grid.n_streams != in_streams {
        return Err(MimoError::Dimension(format!(
            "grid has {} streams, transform expects {in_streams}",
            grid.n_streams
        )));
    }
    let mut out = ResourceGrid::zeros(grid.n_sc, grid.n_symbols, out_streams)
        .with_start_symbol(grid.start_symbol);
    let mut v = vec![Complex64::new(0.0, 0.0); in_streams];
    for (m, mat) in transform.matrices.iter().enumerate() {
        for t in 0..grid.n_symbols {
            for (s, slot) in v.iter_mut().enumerate() {
                *slot = grid.get(s, t, m);
            }
            for r in 0..out_streams {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, x) in v.iter().enumerate() {
                    acc += mat[(r, c)] * x;
                }
                out.set(r, t, m, acc);
            }
        }
    }
    Ok(out)
}

/// `s_m = W_m y_m` on every symbol of the per-chain grid `y`.
pub fn detect(w: &LinearTransform, y: &ResourceGrid) -> Result<ResourceGrid, MimoError> {
    let (k, n) = w.matrices.first().map_or((0, 0), |m| m.shape());
    apply(w, y, k, n)
}

/// `t_m = F_m x_m` on every symbol of the per-user grid `x`.
pub fn precode(f: &LinearTransform, x: &ResourceGrid) -> Result<ResourceGrid, MimoError> {
    let (n, k) = f.matrices.first().map_or((0, 0), |m| m.shape());
    apply(f, x, n, k)
}

/// LMMSE estimate `(H^H H + s2 I)^-1 H^H Y` computed as the least-squares
/// solution of `[H; sqrt(s2) I] S = [Y; 0]`.
pub fn qr_lmmse_solve(h: &CMat, noise_var: f64, y: &CMat) -> Result<CMat, MimoError> {
    QrLmmse::new(h, noise_var)?.solve(y)
}

/// Factored LMMSE system reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct QrLmmse {
    qr: HouseholderQr,
    n_elem: usize,
    n_users: usize,
}

impl QrLmmse {
    pub fn new(h: &CMat, noise_var: f64) -> Result<Self, MimoError> {
        if !(noise_var > 0.0) {
            return Err(MimoError::NoiseVariance(noise_var));
        }
        let (n, k) = h.shape();
        let sigma = Complex64::new(noise_var.sqrt(), 0.0);
        let mut stacked = CMat::zeros(n + k, k);
        stacked.rows_mut(0, n).copy_from(h);
        for i in 0..k {
            stacked[(n + i, i)] = sigma;
        }
        let qr = HouseholderQr::new(&stacked)?;
        Ok(Self {
            qr,
            n_elem: n,
            n_users: k,
        })
    }

    pub fn solve(&self, y: &CMat) -> Result<CMat, MimoError> {
        if y.nrows() != self.n_elem {
            return Err(MimoError::Dimension(format!(
                "observation has {} rows, channel has {}",
                y.nrows(),
                self.n_elem
            )));
        }
        let mut rhs = CMat::zeros(self.n_elem + self.n_users, y.ncols());
        rhs.rows_mut(0, self.n_elem).copy_from(y);
        self.qr
            .solve_least_squares(&rhs, QR_RANK_LIMIT)
            .map_err(|e| match e {
                LinalgError::RankDeficient { ratio } => MimoError::RankDeficient { ratio },
                other => MimoError::Linalg(other),
            })
    }

    /// Explicit detection matrix `R^-1 Q_1^H`.
    pub fn matrix(&self) -> Result<CMat, MimoError> {
        self.solve(&CMat::identity(self.n_elem, self.n_elem))
    }
}

/// Detects symbols `symbols` of the per-chain grid `y` (all subcarriers).
///
/// LMMSE runs through the QR solver; MR and ZF apply their filter matrix.
/// Output has one stream per user and one symbol per entry of `symbols`.
pub fn detect_symbols<C: ChannelMatrices>(
    channel: &C,
    y: &ResourceGrid,
    symbols: &[usize],
    scheme: Scheme,
    noise_var: f64,
) -> Result<ResourceGrid, MimoError> {
    let n_sc = channel.n_sc();
    let n = channel.n_elem();
    let k = channel.n_users();
    if y.n_sc != n_sc || y.n_streams != n {
        return Err(MimoError::Dimension(format!(
            "grid is {} streams x {} subcarriers, channel is {n} x {n_sc}",
            y.n_streams, y.n_sc
        )));
    }
    if let Some(&bad) = symbols.iter().find(|&&t| t >= y.n_symbols) {
        return Err(MimoError::Dimension(format!("symbol {bad} outside grid")));
    }
    let t_len = symbols.len();
    let mut out = ResourceGrid::zeros(n_sc, t_len, k);
    let block = channel.block_len().max(1);
    let mut m0 = 0;
    while m0 < n_sc {
        let m1 = (m0 + block).min(n_sc);
        let h = channel.matrix(m0);
        // observations of the whole block as columns (subcarrier-major)
        let obs = CMat::from_fn(n, (m1 - m0) * t_len, |r, c| {
            y.get(r, symbols[c % t_len], m0 + c / t_len)
        });
        let est = match scheme {
            Scheme::Lmmse => QrLmmse::new(&h, noise_var)?.solve(&obs)?,
            _ => detection_filter(&h, scheme, noise_var)? * obs,
        };
        for c in 0..est.ncols() {
            let (m, t) = (m0 + c / t_len, c % t_len);
            for u in 0..k {
                out.set(u, t, m, est[(u, c)]);
            }
        }
        m0 = m1;
    }
    Ok(out)
}

/// Downlink channel `H_dl = (D H_ul)^T` with optional per-chain
/// calibration errors `D = diag(calibration)`.
pub fn reciprocal_downlink(h_ul: &CMat, calibration: Option<&[Complex64]>) -> CMat {
    match calibration {
        None => h_ul.transpose(),
        Some(cal) => {
            let mut h = h_ul.clone();
            for (r, c) in cal.iter().enumerate() {
                let mut row = h.row_mut(r);
                row *= *c;
            }
            h.transpose()
        }
    }
}
