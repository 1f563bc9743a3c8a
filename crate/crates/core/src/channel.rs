//! Near-field, spatially non-stationary multiuser channel model.
//!
//! The channel of user `k` on subcarrier `m` is a sum over clusters of the
//! ray-weighted near-field steering vectors, masked elementwise by the
//! cluster's visibility weights:
//!
//! ```text
//! h[k,m] = sum_s ( sum_l alpha[k,s,l](m) * b(ray) ) .* p(V[k,s])
//! b_n    = exp(+j 2 pi (f_c + m df) D_n / c)
//! alpha  = g exp(j phi0) exp(-j 2 pi (f_c + m df) tau) exp(j 2 pi nu t)
//! ```
//!
//! where `D_n` is the exact Euclidean distance from the ray's source point to
//! element `n`. Here `m` is the signed frequency bin of the subcarrier.
//!
//! Array elements lie in the y-z plane, facing +x. Azimuth is measured from
//! broadside in the horizontal plane, downtilt is the angle below horizontal.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::CMat;
use crate::numerology::Numerology;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("source point coincides with array element {0}")]
    SourceOnElement(usize),
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("invalid visibility parameter: {0}")]
    InvalidVisibility(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

pub fn wavelength(freq_hz: f64) -> f64 {
    SPEED_OF_LIGHT / freq_hz
}

/// Boundary between near and far field, `2 D^2 / lambda`.
pub fn rayleigh_distance(aperture_m: f64, wavelength_m: f64) -> f64 {
    2.0 * aperture_m * aperture_m / wavelength_m
}

/// Positions of the base-station array elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub positions: Vec<[f64; 3]>,
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub reference_freq_hz: f64,
}

impl ArrayGeometry {
    /// Uniform planar array with half-wavelength spacing at
    /// `reference_freq_hz`, centered at the origin. Columns run along y
    /// (horizontal), rows along z. Element index is `row * cols + col`.
    pub fn upa(rows: usize, cols: usize, reference_freq_hz: f64) -> Result<Self, ChannelError> {
        if rows == 0 || cols == 0 || !(reference_freq_hz > 0.0) {
            return Err(ChannelError::Geometry(format!(
                "need rows, cols and frequency > 0 (got {rows}x{cols}, {reference_freq_hz} Hz)"
            )));
        }
        let spacing = wavelength(reference_freq_hz) / 2.0;
        let cy = (cols as f64 - 1.0) / 2.0;
        let cz = (rows as f64 - 1.0) / 2.0;
        let positions = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| [0.0, (c as f64 - cy) * spacing, (r as f64 - cz) * spacing])
            })
            .collect();
        Ok(Self {
            positions,
            rows,
            cols,
            spacing_m: spacing,
            reference_freq_hz,
        })
    }

    /// Horizontal uniform linear array (a single-row UPA).
    pub fn ula(n: usize, reference_freq_hz: f64) -> Result<Self, ChannelError> {
        Self::upa(1, n, reference_freq_hz)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Extent of the array along the horizontal (y) axis.
    pub fn horizontal_aperture(&self) -> f64 {
        self.cols.saturating_sub(1) as f64 * self.spacing_m
    }

    /// Largest distance between any two elements.
    pub fn aperture(&self) -> f64 {
        let dy = self.cols.saturating_sub(1) as f64 * self.spacing_m;
        let dz = self.rows.saturating_sub(1) as f64 * self.spacing_m;
        dy.hypot(dz)
    }
}

/// Parameters of one propagation ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayParams {
    pub r_m: f64,
    pub theta_rad: f64,
    pub phi_rad: f64,
    /// Path amplitude and initial phase, `g exp(j phi0)`.
    pub gain: Complex64,
    #[serde(default)]
    pub delay_s: f64,
    #[serde(default)]
    pub doppler_hz: f64,
}

impl RayParams {
    pub fn new(r_m: f64, theta_rad: f64, phi_rad: f64, gain: Complex64) -> Self {
        Self {
            r_m,
            theta_rad,
            phi_rad,
            gain,
            delay_s: 0.0,
            doppler_hz: 0.0,
        }
    }

    /// Cartesian position of the ray's source point.
    pub fn source_position(&self) -> [f64; 3] {
        let (st, ct) = self.theta_rad.sin_cos();
        let (sp, cp) = self.phi_rad.sin_cos();
        [self.r_m * cp * ct, self.r_m * cp * st, -self.r_m * sp]
    }

    fn validate(&self) -> Result<(), ChannelError> {
        if !(self.r_m > 0.0) || !self.r_m.is_finite() {
            return Err(ChannelError::InvalidRay(format!("distance {} m", self.r_m)));
        }
        if !self.gain.re.is_finite() || !self.gain.im.is_finite() {
            return Err(ChannelError::InvalidRay("non-finite gain".into()));
        }
        if !self.delay_s.is_finite() || !self.doppler_hz.is_finite() {
            return Err(ChannelError::InvalidRay(
                "non-finite delay or doppler".into(),
            ));
        }
        Ok(())
    }

    /// Complex ray coefficient at absolute frequency `freq_hz` and time `t_s`.
    pub fn coefficient(&self, freq_hz: f64, t_s: f64) -> Complex64 {
        let delay = Complex64::cis(-2.0 * PI * freq_hz * self.delay_s);
        let doppler = Complex64::cis(2.0 * PI * self.doppler_hz * t_s);
        self.gain * delay * doppler
    }
}

/// Per-element visibility weights of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityMask {
    pub weights: Vec<f64>,
}

impl VisibilityMask {
    pub fn all_ones(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
        }
    }

    /// Ones on `start..start + width`, zeros elsewhere.
    pub fn window(n: usize, start: usize, width: usize) -> Result<Self, ChannelError> {
        if start + width > n {
            return Err(ChannelError::InvalidVisibility(format!(
                "window {start}+{width} exceeds {n} elements"
            )));
        }
        let mut weights = vec![0.0; n];
        weights[start..start + width].fill(1.0);
        Ok(Self { weights })
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self, ChannelError> {
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(ChannelError::InvalidVisibility(format!(
                "weight {w} outside [0, 1]"
            )));
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn visible_fraction(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisibilityModel {
    /// Every element independently visible with probability `p`.
    Bernoulli { p: f64 },
    /// A contiguous run of `width` visible elements at a random start.
    ContiguousWindow { width: usize },
}

pub fn sample_visibility(
    model: VisibilityModel,
    n: usize,
    seed: u64,
) -> Result<VisibilityMask, ChannelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_visibility_with(model, n, &mut rng)
}

pub fn sample_visibility_with<R: Rng>(
    model: VisibilityModel,
    n: usize,
    rng: &mut R,
) -> Result<VisibilityMask, ChannelError> {
    match model {
        VisibilityModel::Bernoulli { p } => {
            let dist = Bernoulli::new(p)
                .map_err(|_| ChannelError::InvalidVisibility(format!("probability {p}")))?;
            let weights = (0..n)
                .map(|_| if dist.sample(rng) { 1.0 } else { 0.0 })
                .collect();
            Ok(VisibilityMask { weights })
        }
        VisibilityModel::ContiguousWindow { width } => {
            if width == 0 || width > n {
                return Err(ChannelError::InvalidVisibility(format!(
                    "window width {width} for {n} elements"
                )));
            }
            let start = rng.random_range(0..=n - width);
            VisibilityMask::window(n, start, width)
        }
    }
}

/// A cluster of rays sharing one visibility region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub rays: Vec<RayParams>,
    pub visibility: VisibilityMask,
}

/// Near-field steering vector of `ray` at signed subcarrier bin `m`.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    ray: &RayParams,
    m: i64,
    f_c: f64,
    scs_hz: f64,
) -> Result<Vec<Complex64>, ChannelError> {
    ray.validate()?;
    let distances = element_distances(geometry, ray)?;
    let k = 2.0 * PI * (f_c + m as f64 * scs_hz) / SPEED_OF_LIGHT;
    Ok(distances.iter().map(|d| Complex64::cis(k * d)).collect())
}

fn element_distances(geometry: &ArrayGeometry, ray: &RayParams) -> Result<Vec<f64>, ChannelError> {
    let src = ray.source_position();
    geometry
        .positions
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let d = ((src[0] - p[0]).powi(2) + (src[1] - p[1]).powi(2) + (src[2] - p[2]).powi(2))
                .sqrt();
            if d <= 1e-12 * ray.r_m.max(1.0) {
                Err(ChannelError::SourceOnElement(n))
            } else {
                Ok(d)
            }
        })
        .collect()
}

/// Complex channel coefficients indexed `(subcarrier, element, user)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub n_sc: usize,
    pub n_elem: usize,
    pub n_users: usize,
    pub f_c: f64,
    pub scs_hz: f64,
    /// Row-major `(m, n, k)`.
    pub data: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn zeros(n_sc: usize, n_elem: usize, n_users: usize, f_c: f64, scs_hz: f64) -> Self {
        Self {
            n_sc,
            n_elem,
            n_users,
            f_c,
            scs_hz,
            data: vec![Complex64::new(0.0, 0.0); n_sc * n_elem * n_users],
        }
    }

    #[inline]
    pub fn index(&self, m: usize, n: usize, k: usize) -> usize {
        (m * self.n_elem + n) * self.n_users + k
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, k: usize) -> Complex64 {
        self.data[self.index(m, n, k)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, k: usize, v: Complex64) {
        let i = self.index(m, n, k);
        self.data[i] = v;
    }

    /// `N x K` channel matrix of subcarrier `m`.
    pub fn matrix(&self, m: usize) -> CMat {
        let base = m * self.n_elem * self.n_users;
        // row-major (n, k) block
        CMat::from_row_slice(
            self.n_elem,
            self.n_users,
            &self.data[base..base + self.n_elem * self.n_users],
        )
    }

    pub fn user_vector(&self, m: usize, k: usize) -> Vec<Complex64> {
        (0..self.n_elem).map(|n| self.get(m, n, k)).collect()
    }

    /// Subcarriers `range` as a standalone tensor.
    pub fn subcarriers(&self, range: std::ops::Range<usize>) -> Self {
        let per = self.n_elem * self.n_users;
        Self {
            n_sc: range.len(),
            n_elem: self.n_elem,
            n_users: self.n_users,
            f_c: self.f_c,
            scs_hz: self.scs_hz,
            data: self.data[range.start * per..range.end * per].to_vec(),
        }
    }

    /// Keeps only the users in `users`, in that order.
    pub fn select_users(&self, users: &[usize]) -> Self {
        let mut out = Self::zeros(self.n_sc, self.n_elem, users.len(), self.f_c, self.scs_hz);
        for m in 0..self.n_sc {
            for n in 0..self.n_elem {
                for (j, &k) in users.iter().enumerate() {
                    out.set(m, n, j, self.get(m, n, k));
                }
            }
        }
        out
    }

    /// Average of `|h|^2` over subcarriers and elements for each user.
    pub fn user_power(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_users];
        for (i, v) in self.data.iter().enumerate() {
            acc[i % self.n_users] += v.norm_sqr();
        }
        let count = (self.n_sc * self.n_elem) as f64;
        acc.iter().map(|a| a / count).collect()
    }

    /// Scales each user to unit average per-element power.
    pub fn normalize_users(&mut self) {
        let power = self.user_power();
        let scale: Vec<f64> = power
            .iter()
            .map(|&p| if p > 0.0 { 1.0 / p.sqrt() } else { 1.0 })
            .collect();
        for (i, v) in self.data.iter_mut().enumerate() {
            *v *= scale[i % self.n_users];
        }
    }

    /// i.i.d. `CN(0, 1)` entries, held constant over blocks of `block`
    /// consecutive subcarriers.
    pub fn iid_rayleigh(
        n_sc: usize,
        n_elem: usize,
        n_users: usize,
        block: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Self::zeros(n_sc, n_elem, n_users, 0.0, 0.0);
        let block = block.max(1);
        let per = n_elem * n_users;
        for m in 0..n_sc {
            let base = m * per;
            if m % block == 0 {
                for v in &mut t.data[base..base + per] {
                    *v = complex_normal(&mut rng, 1.0);
                }
            } else {
                let prev = base - per;
                t.data.copy_within(prev..prev + per, base);
            }
        }
        t
    }
}

/// Draws one `CN(0, variance)` sample.
pub fn complex_normal<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationOptions {
    /// Snapshot time used in the Doppler term.
    #[serde(default)]
    pub time_s: f64,
    /// Evaluate every subcarrier at the carrier (bin 0).
    #[serde(default)]
    pub flat: bool,
}

/// Generates the channel tensor for `users[k]` (a list of clusters per
/// user) over the data subcarriers of `numerology`.
pub fn generate_channel(
    geometry: &ArrayGeometry,
    users: &[Vec<ClusterSpec>],
    numerology: &Numerology,
    f_c: f64,
    options: GenerationOptions,
) -> Result<ChannelTensor, ChannelError> {
    let n_elem = geometry.len();
    let n_sc = numerology.n_data_sc;
    let n_users = users.len();
    let scs = numerology.scs_hz;

    // per user: list of (ray, distances, mask)
    let mut prepared = Vec::with_capacity(n_users);
    for (k, clusters) in users.iter().enumerate() {
        let mut rays = Vec::new();
        for (s, cluster) in clusters.iter().enumerate() {
            if cluster.visibility.len() != n_elem {
                return Err(ChannelError::Dimension(format!(
                    "user {k} cluster {s}: mask length {} != {n_elem} elements",
                    cluster.visibility.len()
                )));
            }
            if cluster.rays.is_empty() {
                return Err(ChannelError::Dimension(format!(
                    "user {k} cluster {s} has no rays"
                )));
            }
            for ray in &cluster.rays {
                ray.validate()?;
                rays.push((*ray, element_distances(geometry, ray)?, s));
            }
        }
        prepared.push(rays);
    }

    let mut tensor = ChannelTensor::zeros(n_sc, n_elem, n_users, f_c, scs);
    let mut cluster_sum = vec![Complex64::new(0.0, 0.0); n_elem];
    for m in 0..n_sc {
        let bin = if options.flat {
            0
        } else {
            numerology.subcarrier_offset(m)
        };
        let freq = f_c + bin as f64 * scs;
        let k_wave = 2.0 * PI * freq / SPEED_OF_LIGHT;
        for (k, rays) in prepared.iter().enumerate() {
            let clusters = &users[k];
            let mut current = usize::MAX;
            let flush = |sum: &mut [Complex64], s: usize, tensor: &mut ChannelTensor| {
                let mask = &clusters[s].visibility.weights;
                for n in 0..n_elem {
                    let i = tensor.index(m, n, k);
                    tensor.data[i] += sum[n] * mask[n];
                    sum[n] = Complex64::new(0.0, 0.0);
                }
            };
            for (ray, dist, s) in rays {
                if *s != current {
                    if current != usize::MAX {
                        flush(&mut cluster_sum, current, &mut tensor);
                    }
                    current = *s;
                }
                let alpha = ray.coefficient(freq, options.time_s);
                for (acc, d) in cluster_sum.iter_mut().zip(dist) {
                    *acc += alpha * Complex64::cis(k_wave * d);
                }
            }
            if current != usize::MAX {
                flush(&mut cluster_sum, current, &mut tensor);
            }
        }
    }
    Ok(tensor)
}

/// Random placement of users and scatterers around the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLayout {
    /// Range of user distances (m).
    pub distance_m: (f64, f64),
    /// Range of user azimuths (rad).
    pub azimuth_rad: (f64, f64),
    /// Scattering clusters besides the line-of-sight cluster.
    #[serde(default)]
    pub scatter_clusters: usize,
    #[serde(default = "default_rays")]
    pub rays_per_cluster: usize,
    /// Amplitude of scattered rays relative to line of sight.
    #[serde(default = "default_scatter_gain")]
    pub scatter_gain: f64,
    /// Visibility model of the scattering clusters. The line-of-sight
    /// cluster is always fully visible.
    #[serde(default)]
    pub visibility: Option<VisibilityModel>,
}

fn default_rays() -> usize {
    4
}

fn default_scatter_gain() -> f64 {
    0.3
}

impl Default for UserLayout {
    fn default() -> Self {
        Self {
            distance_m: (3.0, 12.0),
            azimuth_rad: (-PI / 3.0, PI / 3.0),
            scatter_clusters: 2,
            rays_per_cluster: default_rays(),
            scatter_gain: default_scatter_gain(),
            visibility: Some(VisibilityModel::Bernoulli { p: 0.7 }),
        }
    }
}

/// Draws clusters for `n_users` users. Ray amplitudes follow free-space
/// `1/r` scaling and delays follow the path length.
pub fn sample_users(
    geometry: &ArrayGeometry,
    layout: &UserLayout,
    n_users: usize,
    seed: u64,
) -> Result<Vec<Vec<ClusterSpec>>, ChannelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = geometry.len();
    let (dmin, dmax) = layout.distance_m;
    let (amin, amax) = layout.azimuth_rad;
    if !(dmin > 0.0 && dmax >= dmin && amax >= amin) {
        return Err(ChannelError::InvalidRay(
            "invalid user layout ranges".into(),
        ));
    }
    let mut users = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let r = dmin + (dmax - dmin) * rng.random::<f64>();
        let theta = amin + (amax - amin) * rng.random::<f64>();
        let los = RayParams {
            r_m: r,
            theta_rad: theta,
            phi_rad: 0.0,
            gain: Complex64::from_polar(1.0 / r, 2.0 * PI * rng.random::<f64>()),
            delay_s: r / SPEED_OF_LIGHT,
            doppler_hz: 0.0,
        };
        let mut clusters = vec![ClusterSpec {
            rays: vec![los],
            visibility: VisibilityMask::all_ones(n),
        }];
        for _ in 0..layout.scatter_clusters {
            let rs = r * (0.8 + 0.8 * rng.random::<f64>());
            let ts = amin + (amax - amin) * rng.random::<f64>();
            let rays = (0..layout.rays_per_cluster.max(1))
                .map(|_| {
                    let rr = rs * (1.0 + 0.05 * (rng.random::<f64>() - 0.5));
                    let tt = ts + 0.05 * (rng.random::<f64>() - 0.5);
                    let excess = (rr + r) / SPEED_OF_LIGHT;
                    RayParams {
                        r_m: rr,
                        theta_rad: tt,
                        phi_rad: 0.1 * (rng.random::<f64>() - 0.5),
                        gain: Complex64::from_polar(
                            layout.scatter_gain / (rr + r),
                            2.0 * PI * rng.random::<f64>(),
                        ),
                        delay_s: excess,
                        doppler_hz: 0.0,
                    }
                })
                .collect();
            let visibility = match layout.visibility {
                Some(model) => sample_visibility_with(model, n, &mut rng)?,
                None => VisibilityMask::all_ones(n),
            };
            clusters.push(ClusterSpec { rays, visibility });
        }
        users.push(clusters);
    }
    Ok(users)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FC: f64 = 6.8e9;

    fn small_numerology() -> Numerology {
        Numerology::new(60e3, 64, 16, 60e3 * 64.0).unwrap()
    }

    #[test]
    fn single_element_phase() {
        let geo = ArrayGeometry {
            positions: vec![[0.0, 0.0, 0.0]],
            rows: 1,
            cols: 1,
            spacing_m: 0.0,
            reference_freq_hz: FC,
        };
        let ray = RayParams::new(7.3, 0.4, 0.1, Complex64::new(1.0, 0.0));
        let b = steering_vector(&geo, &ray, 5, FC, 60e3).unwrap();
        let expected = Complex64::cis(2.0 * PI * (FC + 5.0 * 60e3) * 7.3 / SPEED_OF_LIGHT);
        assert!((b[0] - expected).norm() < 1e-9);
    }

    #[test]
    fn steering_unit_modulus() {
        let geo = ArrayGeometry::upa(4, 16, FC).unwrap();
        let ray = RayParams::new(3.0, -0.7, 0.2, Complex64::new(1.0, 0.0));
        for m in [-100, 0, 77] {
            let b = steering_vector(&geo, &ray, m, FC, 60e3).unwrap();
            assert!(b.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn source_on_element_is_domain_error() {
        let geo = ArrayGeometry::ula(3, FC).unwrap();
        // element 2 sits at y = +spacing
        let ray = RayParams::new(geo.spacing_m, PI / 2.0, 0.0, Complex64::new(1.0, 0.0));
        assert_eq!(
            steering_vector(&geo, &ray, 0, FC, 60e3),
            Err(ChannelError::SourceOnElement(2))
        );
    }

    #[test]
    fn ula_far_field_increments_converge() {
        let geo = ArrayGeometry::ula(16, FC).unwrap();
        let ray = RayParams::new(1e6, 0.5, 0.0, Complex64::new(1.0, 0.0));
        let b = steering_vector(&geo, &ray, 0, FC, 60e3).unwrap();
        let inc: Vec<f64> = b.windows(2).map(|w| (w[1] * w[0].conj()).arg()).collect();
        let dev = inc.iter().map(|i| (i - inc[0]).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "deviation {dev}");
        // near field does not have constant increments
        let near = RayParams::new(1.0, 0.5, 0.0, Complex64::new(1.0, 0.0));
        let b = steering_vector(&geo, &near, 0, FC, 60e3).unwrap();
        let inc: Vec<f64> = b.windows(2).map(|w| (w[1] * w[0].conj()).arg()).collect();
        let dev = inc.iter().map(|i| (i - inc[0]).abs()).fold(0.0, f64::max);
        assert!(dev > 1e-3);
    }

    #[test]
    fn rayleigh_distances() {
        let lambda = wavelength(FC);
        assert!((lambda - 0.044087).abs() < 1e-5);
        let d = rayleigh_distance(63.0 * lambda / 2.0, lambda);
        assert!((d - 87.5).abs() < 0.2, "{d}");
        assert!((rayleigh_distance(lambda, lambda) - 2.0 * lambda).abs() < 1e-15);
        assert!((rayleigh_distance(1.0, 0.05) - 40.0).abs() < 1e-12);
        let geo = ArrayGeometry::upa(4, 64, FC).unwrap();
        assert!((geo.horizontal_aperture() - 63.0 * lambda / 2.0).abs() < 1e-12);
    }

    #[test]
    fn visibility_extremes() {
        let ones = sample_visibility(VisibilityModel::Bernoulli { p: 1.0 }, 50, 3).unwrap();
        assert!(ones.weights.iter().all(|&w| w == 1.0));
        let zeros = sample_visibility(VisibilityModel::Bernoulli { p: 0.0 }, 50, 3).unwrap();
        assert!(zeros.weights.iter().all(|&w| w == 0.0));
        let half = sample_visibility(VisibilityModel::Bernoulli { p: 0.5 }, 10_000, 9).unwrap();
        let frac = half.visible_fraction();
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn visibility_window_and_errors() {
        let w = sample_visibility(VisibilityModel::ContiguousWindow { width: 5 }, 20, 1).unwrap();
        let ones: Vec<usize> = (0..20).filter(|&i| w.weights[i] == 1.0).collect();
        assert_eq!(ones.len(), 5);
        assert_eq!(ones[4] - ones[0], 4);
        assert!(sample_visibility(VisibilityModel::ContiguousWindow { width: 0 }, 20, 1).is_err());
        assert!(sample_visibility(VisibilityModel::ContiguousWindow { width: 21 }, 20, 1).is_err());
        assert!(sample_visibility(VisibilityModel::Bernoulli { p: 1.5 }, 20, 1).is_err());
        assert!(VisibilityMask::from_weights(vec![0.5, -0.1]).is_err());
    }

    #[test]
    fn visibility_is_seeded() {
        let m = VisibilityModel::Bernoulli { p: 0.3 };
        assert_eq!(
            sample_visibility(m, 100, 42).unwrap(),
            sample_visibility(m, 100, 42).unwrap()
        );
    }

    #[test]
    fn single_ray_channel_is_steering_vector() {
        let geo = ArrayGeometry::ula(8, FC).unwrap();
        let num = small_numerology();
        let ray = RayParams::new(4.0, 0.3, 0.0, Complex64::new(1.0, 0.0));
        let users = vec![vec![ClusterSpec {
            rays: vec![ray],
            visibility: VisibilityMask::all_ones(8),
        }]];
        let h = generate_channel(&geo, &users, &num, FC, GenerationOptions::default()).unwrap();
        for m in 0..num.n_data_sc {
            let b = steering_vector(&geo, &ray, num.subcarrier_offset(m), FC, num.scs_hz).unwrap();
            for n in 0..8 {
                assert!((h.get(m, n, 0) - b[n]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_cluster_contributes_nothing() {
        let geo = ArrayGeometry::ula(8, FC).unwrap();
        let num = small_numerology();
        let ray = RayParams::new(4.0, 0.3, 0.0, Complex64::new(0.5, 0.2));
        let users = vec![vec![ClusterSpec {
            rays: vec![ray, ray],
            visibility: VisibilityMask::from_weights(vec![0.0; 8]).unwrap(),
        }]];
        let h = generate_channel(&geo, &users, &num, FC, GenerationOptions::default()).unwrap();
        assert!(h.data.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn mask_length_mismatch() {
        let geo = ArrayGeometry::ula(8, FC).unwrap();
        let users = vec![vec![ClusterSpec {
            rays: vec![RayParams::new(4.0, 0.3, 0.0, Complex64::new(1.0, 0.0))],
            visibility: VisibilityMask::all_ones(7),
        }]];
        assert!(matches!(
            generate_channel(&geo, &users, &small_numerology(), FC, Default::default()),
            Err(ChannelError::Dimension(_))
        ));
    }

    #[test]
    fn iid_blocks_are_held() {
        let t = ChannelTensor::iid_rayleigh(12, 3, 2, 4, 1);
        for m in 0..12 {
            let base = m - m % 4;
            for n in 0..3 {
                for k in 0..2 {
                    assert_eq!(t.get(m, n, k), t.get(base, n, k));
                }
            }
        }
        assert_ne!(t.get(0, 0, 0), t.get(4, 0, 0));
    }

    #[test]
    fn matrix_layout() {
        let mut t = ChannelTensor::zeros(2, 3, 2, FC, 60e3);
        t.set(1, 2, 1, Complex64::new(3.0, -1.0));
        let h = t.matrix(1);
        assert_eq!(h.shape(), (3, 2));
        assert_eq!(h[(2, 1)], Complex64::new(3.0, -1.0));
    }

    #[test]
    fn normalized_users_have_unit_power() {
        let geo = ArrayGeometry::ula(16, FC).unwrap();
        let users = sample_users(&geo, &UserLayout::default(), 3, 5).unwrap();
        let mut h =
            generate_channel(&geo, &users, &small_numerology(), FC, Default::default()).unwrap();
        h.normalize_users();
        for p in h.user_power() {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }
}
