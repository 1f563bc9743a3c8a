//! End-to-end uplink and downlink slot simulation.
//!
//! Uplink: every user transmits its comb pilots and data over one uplink
//! slot, `y_m = sqrt(P_ul) H_m s_m + z_m` is formed per subcarrier, and the
//! base station estimates the channel from the pilot symbol and detects the
//! data, either centrally or sharded over `P` processors.
//!
//! Downlink: the base station sounds the uplink pilots, builds precoders
//! from that estimate, and transmits precoded pilots and data over the
//! reciprocal channel `H_dl = (D H_ul)^T`. Each user estimates its effective
//! gain `g` from its own pilots and equalizes `x_hat = g^* r / |g|^2`.
//!
//! SNR convention: `snr_db` is the average per-receive-element SNR
//! `P_ul E||h_k||^2 / (N sigma^2)`. The same noise variance is used at the
//! downlink receivers. Noise is added per subcarrier in the frequency
//! domain unless `time_domain` is set, in which case every user stream goes
//! through the OFDM modulator and noise is added per sample (flat channels
//! only).

use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chanest::{self, EstimationError, Interpolation, PilotMap, PilotSymbols};
use crate::channel::{
    self, complex_normal, ArrayGeometry, ChannelError, ChannelTensor, ClusterSpec,
    GenerationOptions, UserLayout,
};
use crate::constellation::Constellation;
use crate::distributed::{
    self, CsiSource, DistributedError, ExchangeReport, LinkUsage, PartitionPlan, RateBudget,
    CHAINS_PER_RADIO, DEFAULT_LINK_CAPACITY_BPS, RADIOS_PER_LINK,
};
use crate::linalg::CMat;
use crate::metrics::{self, EvmAccumulator, MetricsError, ThroughputSpec};
use crate::mimo::{self, LinearTransform, MimoError, Scheme};
use crate::numerology::{ConfigError, Direction, FrameSchedule, Numerology, SymbolRole};
use crate::ofdm::{OfdmError, OfdmModem, ResourceGrid, SampleStream};
use crate::sync::{self, PssDetector, PssSequence, SyncConfig, SyncError};

/// Regularization used by LMMSE when the scenario is noise free.
pub const LMMSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Ofdm(#[from] OfdmError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Mimo(#[from] MimoError),
    #[error(transparent)]
    Distributed(#[from] DistributedError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sync(#[from] SyncError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumerologyConfig {
    pub scs_hz: f64,
    pub fft_size: usize,
    pub n_data_sc: usize,
    pub sample_rate_hz: f64,
}

impl Default for NumerologyConfig {
    fn default() -> Self {
        Self {
            scs_hz: 60e3,
            fft_size: 4096,
            n_data_sc: 3168,
            sample_rate_hz: 245.76e6,
        }
    }
}

impl NumerologyConfig {
    pub fn build(&self) -> Result<Numerology, ConfigError> {
        Numerology::new(
            self.scs_hz,
            self.fft_size,
            self.n_data_sc,
            self.sample_rate_hz,
        )
    }
}

/// Uniform planar array dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { rows: 4, cols: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ChannelModel {
    /// i.i.d. `CN(0, 1)` entries held over blocks of subcarriers.
    Iid {
        #[serde(default = "one")]
        coherence_subcarriers: usize,
    },
    /// Near-field cluster model. Explicit `users` take precedence over a
    /// random `layout`.
    Geometric {
        #[serde(default)]
        layout: UserLayout,
        #[serde(default)]
        users: Option<Vec<Vec<ClusterSpec>>>,
        #[serde(default)]
        options: GenerationOptions,
    },
}

fn one() -> usize {
    1
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel::Geometric {
            layout: UserLayout::default(),
            users: None,
            options: GenerationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    #[default]
    Estimated,
    Perfect,
}

fn default_carrier() -> f64 {
    6.8e9
}
fn default_users() -> usize {
    4
}
fn default_max_users() -> usize {
    12
}
fn default_scheme() -> Scheme {
    Scheme::Zf
}
fn default_power() -> f64 {
    1.0
}
fn default_constellations() -> Vec<Constellation> {
    vec![Constellation::Qam256]
}
fn default_directions() -> Vec<Direction> {
    vec![Direction::Uplink, Direction::Downlink]
}
fn default_width() -> u32 {
    16
}
fn default_capacity() -> f64 {
    DEFAULT_LINK_CAPACITY_BPS
}
fn default_bandwidth() -> f64 {
    200e6
}
fn default_true() -> bool {
    true
}

/// Everything needed to run a simulation. All fields have defaults, so an
/// empty TOML document is the prototype configuration with four users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub numerology: NumerologyConfig,
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub channel: ChannelModel,
    /// Scale each user to unit average per-element power.
    #[serde(default = "default_true")]
    pub normalize_channel: bool,
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_max_users")]
    pub max_users: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Per-element SNR; exclusive with `noise_var`. Neither means noise free.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub noise_var: Option<f64>,
    #[serde(default = "default_power")]
    pub p_ul: f64,
    #[serde(default = "default_power")]
    pub p_dl: f64,
    #[serde(default = "one")]
    pub processors: usize,
    /// One per user, or a single entry for all users.
    #[serde(default = "default_constellations")]
    pub constellations: Vec<Constellation>,
    /// Direction of slots 1.. of the frame.
    #[serde(default = "default_directions")]
    pub directions: Vec<Direction>,
    /// Independent slots simulated (shared channel, fresh data and noise).
    #[serde(default = "one")]
    pub slots: usize,
    #[serde(default)]
    pub csi: CsiMode,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default)]
    pub time_domain: bool,
    /// Standard deviation (rad) of per-chain reciprocity calibration phase.
    #[serde(default)]
    pub calibration_error_rad: f64,
    #[serde(default = "default_width")]
    pub sample_width_bits: u32,
    #[serde(default = "default_capacity")]
    pub link_capacity_bps: f64,
    /// Bandwidth used for spectral efficiency.
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub sync: SyncConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        toml::from_str("").expect("empty scenario uses defaults")
    }
}

impl Scenario {
    pub fn n_elements(&self) -> usize {
        self.array.rows * self.array.cols
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::Scenario(m));
        let k = self.users;
        let n = self.n_elements();
        if k == 0 || k > self.max_users {
            return bad(format!("{k} users outside 1..={}", self.max_users));
        }
        if n == 0 {
            return bad("array has no elements".into());
        }
        if self.scheme == Scheme::Zf && n < k {
            return bad(format!(
                "ZF needs at least as many elements ({n}) as users ({k})"
            ));
        }
        if self.snr_db.is_some() && self.noise_var.is_some() {
            return bad("set at most one of snr_db and noise_var".into());
        }
        if let Some(v) = self.noise_var {
            if !(v >= 0.0) {
                return bad(format!("noise variance {v}"));
            }
        }
        if !(self.p_ul > 0.0 && self.p_dl > 0.0) {
            return bad("transmit powers must be positive".into());
        }
        if self.constellations.len() != 1 && self.constellations.len() != k {
            return bad(format!(
                "{} constellations for {k} users",
                self.constellations.len()
            ));
        }
        if self.processors == 0 || self.slots == 0 {
            return bad("processors and slots must be at least 1".into());
        }
        if !self.numerology.n_data_sc.is_multiple_of(k) {
            return bad(format!(
                "{k} users do not tile {} subcarriers into pilot sub-bands",
                self.numerology.n_data_sc
            ));
        }
        if !(self.calibration_error_rad >= 0.0) {
            return bad("calibration error must be non-negative".into());
        }
        Ok(())
    }

    pub fn constellation(&self, user: usize) -> Constellation {
        if self.constellations.len() == 1 {
            self.constellations[0]
        } else {
            self.constellations[user]
        }
    }
}

impl Scenario {
    /// Reads a TOML scenario file.
    pub fn from_file(path: &std::path::Path) -> Result<Self, LinkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LinkError::Scenario(format!("{}: {e}", path.display())))?;
        text.parse()
    }
}

impl FromStr for Scenario {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        toml::from_str(s).map_err(|e| LinkError::Scenario(e.to_string()))
    }
}

// Independent random streams derived from the scenario seed.
const STREAM_CHANNEL: u64 = 1;
const STREAM_UL_PILOTS: u64 = 2;
const STREAM_DL_PILOTS: u64 = 3;
const STREAM_CALIBRATION: u64 = 4;
const STREAM_SOUNDING: u64 = 5;
const STREAM_SYNC: u64 = 6;
const STREAM_SLOT: u64 = 1 << 32;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    use rand::Rng;
    rng_for(seed, stream).random()
}

/// Resolved scenario: numerology, frame, channel, pilots and noise level.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub numerology: Numerology,
    pub schedule: FrameSchedule,
    pub geometry: ArrayGeometry,
    /// True channel `(m, n, k)`, without transmit power.
    pub channel: ChannelTensor,
    pub noise_var: f64,
    /// Noise variance given to the LMMSE filters.
    pub filter_noise_var: f64,
    pub map: PilotMap,
    pub ul_pilots: PilotSymbols,
    pub dl_pilots: PilotSymbols,
    pub plan: PartitionPlan,
}

/// Symbol layout of one active slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotLayout {
    /// Frame-relative index of the slot's first symbol.
    pub first_symbol: usize,
    pub n_symbols: usize,
    pub pilot: usize,
    pub data: Vec<usize>,
}

impl Setup {
    pub fn new(scenario: &Scenario) -> Result<Self, LinkError> {
        scenario.validate()?;
        let numerology = scenario.numerology.build()?;
        let schedule = FrameSchedule::new(&numerology, &scenario.directions)?;
        let geometry = ArrayGeometry::upa(
            scenario.array.rows,
            scenario.array.cols,
            scenario.carrier_hz,
        )?;
        let k = scenario.users;
        let seed = scenario.seed;
        let mut channel = match &scenario.channel {
            ChannelModel::Iid {
                coherence_subcarriers,
            } => {
                let mut t = ChannelTensor::iid_rayleigh(
                    numerology.n_data_sc,
                    geometry.len(),
                    k,
                    *coherence_subcarriers,
                    sub_seed(seed, STREAM_CHANNEL),
                );
                t.f_c = scenario.carrier_hz;
                t.scs_hz = numerology.scs_hz;
                t
            }
            ChannelModel::Geometric {
                layout,
                users,
                options,
            } => {
                let clusters = match users {
                    Some(u) => {
                        if u.len() != k {
                            return Err(LinkError::Scenario(format!(
                                "{} explicit users for K = {k}",
                                u.len()
                            )));
                        }
                        u.clone()
                    }
                    None => {
                        channel::sample_users(&geometry, layout, k, sub_seed(seed, STREAM_CHANNEL))?
                    }
                };
                channel::generate_channel(
                    &geometry,
                    &clusters,
                    &numerology,
                    scenario.carrier_hz,
                    *options,
                )?
            }
        };
        if scenario.normalize_channel {
            channel.normalize_users();
        }
        let n = geometry.len();
        let noise_var = match (scenario.snr_db, scenario.noise_var) {
            (Some(snr), _) => {
                let power = channel.user_power();
                let mean = power.iter().sum::<f64>() / power.len() as f64;
                scenario.p_ul * mean / 10f64.powf(snr / 10.0)
            }
            (None, Some(v)) => v,
            (None, None) => 0.0,
        };
        let filter_noise_var = if noise_var > 0.0 {
            noise_var
        } else {
            LMMSE_FLOOR
        };
        let map = PilotMap::new(k, numerology.n_data_sc)?;
        let ul_pilots = PilotSymbols::random_qpsk(&map, sub_seed(seed, STREAM_UL_PILOTS));
        let dl_pilots = PilotSymbols::random_qpsk(&map, sub_seed(seed, STREAM_DL_PILOTS));
        let plan = PartitionPlan::even(scenario.processors, n, numerology.n_data_sc, k)?;
        Ok(Self {
            scenario: scenario.clone(),
            numerology,
            schedule,
            geometry,
            channel,
            noise_var,
            filter_noise_var,
            map,
            ul_pilots,
            dl_pilots,
            plan,
        })
    }

    pub fn n_users(&self) -> usize {
        self.scenario.users
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.len()
    }

    pub fn n_sc(&self) -> usize {
        self.numerology.n_data_sc
    }

    /// Per-element SNR implied by the noise variance (dB), if noisy.
    pub fn snr_db(&self) -> Option<f64> {
        if self.noise_var > 0.0 {
            let power = self.channel.user_power();
            let mean = power.iter().sum::<f64>() / power.len() as f64;
            Some(10.0 * (self.scenario.p_ul * mean / self.noise_var).log10())
        } else {
            None
        }
    }

    /// Layout of the first slot scheduled in `direction`.
    pub fn slot_layout(&self, direction: Direction) -> Result<SlotLayout, LinkError> {
        let (slot, plan) = self
            .schedule
            .slots
            .iter()
            .enumerate()
            .find(|(_, s)| s.direction == Some(direction))
            .ok_or_else(|| LinkError::Scenario(format!("no {direction:?} slot in the frame")))?;
        let pilot = plan
            .roles
            .iter()
            .position(|r| r.is_pilot())
            .expect("active slot has a pilot");
        let data = plan
            .roles
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_data())
            .map(|(i, _)| i)
            .collect();
        Ok(SlotLayout {
            first_symbol: slot * self.numerology.symbols_per_slot,
            n_symbols: plan.roles.len(),
            pilot,
            data,
        })
    }

    /// `sqrt(P_ul) H`, the channel seen by the uplink detector.
    pub fn effective_uplink_channel(&self) -> ChannelTensor {
        let mut h = self.channel.clone();
        let a = self.scenario.p_ul.sqrt();
        for v in &mut h.data {
            *v *= a;
        }
        h
    }

    fn is_flat(&self) -> bool {
        let h0 = self.channel.matrix(0);
        (1..self.n_sc()).all(|m| self.channel.matrix(m) == h0)
    }
}

/// Per-user uplink quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub constellation: Constellation,
    pub evm_rms: f64,
    pub evm_db: f64,
    pub ser: f64,
    pub symbols: usize,
}

fn user_metrics(acc: &[EvmAccumulator], setup: &Setup) -> Vec<UserMetrics> {
    acc.iter()
        .enumerate()
        .map(|(k, a)| {
            let m = a.finish();
            UserMetrics {
                user: k,
                constellation: setup.scenario.constellation(k),
                evm_rms: m.evm_rms,
                evm_db: m.evm_db(),
                ser: m.ser,
                symbols: m.symbols,
            }
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Random data points on `symbols` of stream `user`.
fn fill_data(
    grid: &mut ResourceGrid,
    user: usize,
    symbols: &[usize],
    constellation: Constellation,
    rng: &mut ChaCha8Rng,
) {
    for &t in symbols {
        let idx = constellation.random_indices(rng, grid.n_sc);
        for (v, i) in grid.symbol_mut(user, t).iter_mut().zip(idx) {
            *v = constellation.map(i);
        }
    }
}

/// Comb pilots: user `k` sends `x[i, k]` on subcarrier `iK + k`.
fn fill_pilots(grid: &mut ResourceGrid, symbol: usize, pilots: &PilotSymbols, map: &PilotMap) {
    for k in 0..map.n_users {
        for i in 0..map.n_subbands() {
            grid.set(k, symbol, map.pilot_subcarrier(i, k), pilots.get(i, k));
        }
    }
}

fn add_noise(grid: &mut ResourceGrid, noise_var: f64, rng: &mut ChaCha8Rng) {
    if noise_var > 0.0 {
        for v in &mut grid.data {
            *v += complex_normal(rng, noise_var);
        }
    }
}

/// `sqrt(P_ul) H_m s_m` per subcarrier and symbol, plus noise.
pub fn uplink_receive(
    setup: &Setup,
    tx: &ResourceGrid,
    rng: &mut ChaCha8Rng,
) -> Result<ResourceGrid, LinkError> {
    let n = setup.n_elements();
    let k = setup.n_users();
    if tx.n_streams != k || tx.n_sc != setup.n_sc() {
        return Err(LinkError::Scenario(format!(
            "transmit grid is {}x{}, expected {k} users x {} subcarriers",
            tx.n_streams,
            tx.n_sc,
            setup.n_sc()
        )));
    }
    let amp = Complex64::new(setup.scenario.p_ul.sqrt(), 0.0);
    if setup.scenario.time_domain {
        if !setup.is_flat() {
            return Err(LinkError::Scenario(
                "the time-domain path needs a frequency-flat channel".into(),
            ));
        }
        let modem = OfdmModem::new(&setup.numerology);
        let x = modem.modulate(tx)?;
        let h = setup.channel.matrix(0) * amp;
        let len = x.len();
        let mut streams = vec![vec![Complex64::new(0.0, 0.0); len]; n];
        for (r, out) in streams.iter_mut().enumerate() {
            for (u, xs) in x.streams.iter().enumerate() {
                let g = h[(r, u)];
                for (o, s) in out.iter_mut().zip(xs) {
                    *o += g * s;
                }
            }
            if setup.noise_var > 0.0 {
                for o in out.iter_mut() {
                    *o += complex_normal(rng, setup.noise_var);
                }
            }
        }
        let y = SampleStream {
            sample_rate_hz: x.sample_rate_hz,
            streams,
        };
        return Ok(modem.demodulate(&y, tx.start_symbol)?);
    }
    let t_len = tx.n_symbols;
    let mut y = ResourceGrid::zeros(tx.n_sc, t_len, n).with_start_symbol(tx.start_symbol);
    for m in 0..tx.n_sc {
        let h = setup.channel.matrix(m) * amp;
        let s = CMat::from_fn(k, t_len, |u, t| tx.get(u, t, m));
        let ym = h * s;
        for r in 0..n {
            for t in 0..t_len {
                y.set(r, t, m, ym[(r, t)]);
            }
        }
    }
    add_noise(&mut y, setup.noise_var, rng);
    Ok(y)
}

/// One simulated uplink slot.
#[derive(Debug, Clone)]
pub struct UplinkSlot {
    /// User grid (`K` streams, whole slot): pilots and data.
    pub tx: ResourceGrid,
    /// Received grid (`N` streams, whole slot).
    pub rx: ResourceGrid,
    /// Detected data (`K` streams, one symbol per data symbol).
    pub detected: ResourceGrid,
    pub layout: SlotLayout,
    pub exchange: Option<ExchangeReport>,
}

/// Simulates uplink slot number `index` of the scenario.
pub fn uplink_slot(setup: &Setup, index: usize) -> Result<UplinkSlot, LinkError> {
    let layout = setup.slot_layout(Direction::Uplink)?;
    let k = setup.n_users();
    let mut rng = rng_for(setup.scenario.seed, STREAM_SLOT + 2 * index as u64);
    let mut tx = ResourceGrid::zeros(setup.n_sc(), layout.n_symbols, k)
        .with_start_symbol(layout.first_symbol);
    fill_pilots(&mut tx, layout.pilot, &setup.ul_pilots, &setup.map);
    for u in 0..k {
        fill_data(
            &mut tx,
            u,
            &layout.data,
            setup.scenario.constellation(u),
            &mut rng,
        );
    }
    let mut noise_rng = rng_for(setup.scenario.seed, STREAM_SLOT + 2 * index as u64 + 1);
    let rx = uplink_receive(setup, &tx, &mut noise_rng)?;

    let perfect;
    let csi = match setup.scenario.csi {
        CsiMode::Estimated => CsiSource::Pilots {
            pilots: &setup.ul_pilots,
            symbol: layout.pilot,
            interpolation: setup.scenario.interpolation,
        },
        CsiMode::Perfect => {
            perfect = setup.effective_uplink_channel();
            CsiSource::Perfect(&perfect)
        }
    };
    let scheme = setup.scenario.scheme;
    let (detected, exchange) = if setup.plan.processors() > 1 {
        let shards = distributed::partition_uplink(&rx, &setup.plan)?;
        let (bands, report) =
            distributed::exchange(shards, &setup.plan, setup.scenario.sample_width_bits)?;
        let det = distributed::process_distributed(
            &bands,
            &setup.plan,
            csi,
            k,
            &layout.data,
            scheme,
            setup.filter_noise_var,
        )?;
        (det, Some(report))
    } else {
        let det = distributed::process_centralized(
            &rx,
            csi,
            k,
            &layout.data,
            scheme,
            setup.filter_noise_var,
        )?;
        (det, None)
    };
    Ok(UplinkSlot {
        tx,
        rx,
        detected,
        layout,
        exchange,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UplinkReport {
    pub scheme: Scheme,
    pub users: usize,
    pub elements: usize,
    pub processors: usize,
    pub snr_db: Option<f64>,
    pub noise_var: f64,
    pub slots: usize,
    pub per_user: Vec<UserMetrics>,
    pub mean_evm: f64,
    pub mean_ser: f64,
    pub exchange: Option<ExchangeReport>,
    pub link_usage: Vec<LinkUsage>,
}

#[derive(Debug, Clone)]
pub struct UplinkRun {
    pub report: UplinkReport,
    /// Detected and transmitted data of the last slot (`K` streams each).
    pub detected: ResourceGrid,
    pub reference: ResourceGrid,
}

fn data_reference(tx: &ResourceGrid, data: &[usize]) -> ResourceGrid {
    let mut out = ResourceGrid::zeros(tx.n_sc, data.len(), tx.n_streams);
    for s in 0..tx.n_streams {
        for (j, &t) in data.iter().enumerate() {
            out.symbol_mut(s, j).copy_from_slice(tx.symbol(s, t));
        }
    }
    out
}

fn link_usage(setup: &Setup, report: &Option<ExchangeReport>) -> Vec<LinkUsage> {
    report
        .as_ref()
        .map(|r| {
            distributed::utilization_report(
                r,
                setup.numerology.slot_duration_s(),
                setup.scenario.link_capacity_bps,
            )
        })
        .unwrap_or_default()
}

pub fn run_uplink_with(setup: &Setup) -> Result<UplinkRun, LinkError> {
    let k = setup.n_users();
    let mut acc = vec![EvmAccumulator::default(); k];
    let mut last = None;
    for s in 0..setup.scenario.slots {
        let slot = uplink_slot(setup, s)?;
        for (u, a) in acc.iter_mut().enumerate() {
            let c = setup.scenario.constellation(u);
            for (j, &t) in slot.layout.data.iter().enumerate() {
                for (d, r) in slot.detected.symbol(u, j).iter().zip(slot.tx.symbol(u, t)) {
                    a.push(*d, *r, c);
                }
            }
        }
        last = Some(slot);
    }
    let slot = last.expect("at least one slot");
    let per_user = user_metrics(&acc, setup);
    let report = UplinkReport {
        scheme: setup.scenario.scheme,
        users: k,
        elements: setup.n_elements(),
        processors: setup.plan.processors(),
        snr_db: setup.snr_db(),
        noise_var: setup.noise_var,
        slots: setup.scenario.slots,
        mean_evm: mean(per_user.iter().map(|u| u.evm_rms)),
        mean_ser: mean(per_user.iter().map(|u| u.ser)),
        per_user,
        link_usage: link_usage(setup, &slot.exchange),
        exchange: slot.exchange,
    };
    Ok(UplinkRun {
        report,
        reference: data_reference(&slot.tx, &slot.layout.data),
        detected: slot.detected,
    })
}

pub fn run_uplink(scenario: &Scenario) -> Result<UplinkRun, LinkError> {
    run_uplink_with(&Setup::new(scenario)?)
}

/// Per-user downlink quality and power breakdown (per resource element).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownlinkUserMetrics {
    pub user: usize,
    pub constellation: Constellation,
    pub evm_rms: f64,
    pub evm_db: f64,
    pub ser: f64,
    pub symbols: usize,
    pub signal_power: f64,
    pub interference_power: f64,
    pub noise_power: f64,
    pub sinr_db: f64,
    /// Mean noise-free received power.
    pub received_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownlinkReport {
    pub scheme: Scheme,
    pub users: usize,
    pub elements: usize,
    pub processors: usize,
    pub snr_db: Option<f64>,
    pub noise_var: f64,
    pub slots: usize,
    pub per_user: Vec<DownlinkUserMetrics>,
    pub mean_evm: f64,
    pub mean_ser: f64,
    pub exchange: Option<ExchangeReport>,
    pub link_usage: Vec<LinkUsage>,
}

#[derive(Debug, Clone)]
pub struct DownlinkRun {
    pub report: DownlinkReport,
    /// Equalized and transmitted data of the last slot (`K` streams each).
    pub equalized: ResourceGrid,
    pub reference: ResourceGrid,
    /// Precoders built from the uplink sounding.
    pub precoder: LinearTransform,
    /// Chain-domain transmit grid of the last slot (`N` streams).
    pub transmitted: ResourceGrid,
}

/// Per-chain calibration factors `D`, unit modulus with Gaussian phase.
fn calibration(setup: &Setup) -> Option<Vec<Complex64>> {
    let std = setup.scenario.calibration_error_rad;
    if std == 0.0 {
        return None;
    }
    let mut rng = rng_for(setup.scenario.seed, STREAM_CALIBRATION);
    let normal = Normal::new(0.0, std).expect("finite std");
    Some(
        (0..setup.n_elements())
            .map(|_| Complex64::cis(normal.sample(&mut rng)))
            .collect(),
    )
}

/// Uplink sounding followed by precoder construction.
pub fn downlink_precoder(setup: &Setup) -> Result<LinearTransform, LinkError> {
    let layout = setup.slot_layout(Direction::Uplink)?;
    let scheme = setup.scenario.scheme;
    let p_dl = setup.scenario.p_dl;
    match setup.scenario.csi {
        CsiMode::Perfect => Ok(mimo::precoding_matrix(
            &setup.effective_uplink_channel(),
            scheme,
            setup.filter_noise_var,
            p_dl,
        )?),
        CsiMode::Estimated => {
            let mut tx = ResourceGrid::zeros(setup.n_sc(), 1, setup.n_users())
                .with_start_symbol(layout.first_symbol + layout.pilot);
            fill_pilots(&mut tx, 0, &setup.ul_pilots, &setup.map);
            let mut rng = rng_for(setup.scenario.seed, STREAM_SOUNDING);
            let rx = uplink_receive(setup, &tx, &mut rng)?;
            let est = chanest::ls_estimate_ul(
                &rx,
                0,
                &setup.ul_pilots,
                &setup.map,
                setup.scenario.interpolation,
            )?;
            Ok(mimo::precoding_matrix(
                &est,
                scheme,
                setup.filter_noise_var,
                p_dl,
            )?)
        }
    }
}

/// True downlink channels `(D H_m)^T`, one `K x N` matrix per subcarrier.
pub fn downlink_channel(setup: &Setup) -> Vec<CMat> {
    let cal = calibration(setup);
    (0..setup.n_sc())
        .map(|m| mimo::reciprocal_downlink(&setup.channel.matrix(m), cal.as_deref()))
        .collect()
}

pub fn run_downlink_with(setup: &Setup) -> Result<DownlinkRun, LinkError> {
    let layout = setup.slot_layout(Direction::Downlink)?;
    let k = setup.n_users();
    let n_sc = setup.n_sc();
    let precoder = downlink_precoder(setup)?;
    let h_dl = downlink_channel(setup);
    // effective gains G_m = H_dl F_m
    let gains: Vec<CMat> = h_dl
        .iter()
        .zip(&precoder.matrices)
        .map(|(h, f)| h * f)
        .collect();

    let mut acc = vec![EvmAccumulator::default(); k];
    let mut signal = vec![0.0; k];
    let mut interference = vec![0.0; k];
    let mut received = vec![0.0; k];
    let mut count = 0usize;
    let mut last = None;
    for s in 0..setup.scenario.slots {
        let mut rng = rng_for(setup.scenario.seed, STREAM_SLOT + (1 << 20) + 2 * s as u64);
        let mut x =
            ResourceGrid::zeros(n_sc, layout.n_symbols, k).with_start_symbol(layout.first_symbol);
        fill_pilots(&mut x, layout.pilot, &setup.dl_pilots, &setup.map);
        for u in 0..k {
            fill_data(
                &mut x,
                u,
                &layout.data,
                setup.scenario.constellation(u),
                &mut rng,
            );
        }
        let (t, exchange) = if setup.plan.processors() > 1 {
            let (shards, report) = distributed::process_distributed_dl(
                &x,
                &setup.plan,
                &precoder,
                setup.scenario.sample_width_bits,
            )?;
            (
                distributed::reassemble_chains(&shards, &setup.plan)?,
                Some(report),
            )
        } else {
            (mimo::precode(&precoder, &x)?, None)
        };

        // r = H_dl t + n
        let mut r =
            ResourceGrid::zeros(n_sc, layout.n_symbols, k).with_start_symbol(layout.first_symbol);
        for (m, h) in h_dl.iter().enumerate() {
            let tm = CMat::from_fn(t.n_streams, layout.n_symbols, |c, sym| t.get(c, sym, m));
            let rm = h * tm;
            for u in 0..k {
                for sym in 0..layout.n_symbols {
                    r.set(u, sym, m, rm[(u, sym)]);
                }
            }
        }
        for &sym in &layout.data {
            for u in 0..k {
                for (m, g) in gains.iter().enumerate() {
                    let own = g[(u, u)] * x.get(u, sym, m);
                    let total = r.get(u, sym, m);
                    signal[u] += own.norm_sqr();
                    interference[u] += (total - own).norm_sqr();
                    received[u] += total.norm_sqr();
                }
            }
            count += n_sc;
        }
        let mut noise_rng = rng_for(
            setup.scenario.seed,
            STREAM_SLOT + (1 << 20) + 2 * s as u64 + 1,
        );
        add_noise(&mut r, setup.noise_var, &mut noise_rng);

        let mut eq = ResourceGrid::zeros(n_sc, layout.data.len(), k);
        for u in 0..k {
            let g_hat: Vec<Complex64> = match setup.scenario.csi {
                CsiMode::Perfect => gains.iter().map(|g| g[(u, u)]).collect(),
                CsiMode::Estimated => chanest::estimate_dl_user(
                    r.symbol(u, layout.pilot),
                    u,
                    &setup.dl_pilots,
                    &setup.map,
                ),
            };
            let c = setup.scenario.constellation(u);
            for (j, &sym) in layout.data.iter().enumerate() {
                for m in 0..n_sc {
                    let g = g_hat[m];
                    let p = g.norm_sqr();
                    let v = if p > 0.0 {
                        g.conj() * r.get(u, sym, m) / p
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    eq.set(u, j, m, v);
                    acc[u].push(v, x.get(u, sym, m), c);
                }
            }
        }
        last = Some((x, t, eq, exchange));
    }
    let (x, t, eq, exchange) = last.expect("at least one slot");
    let count = count.max(1) as f64;
    let per_user: Vec<DownlinkUserMetrics> = (0..k)
        .map(|u| {
            let m = acc[u].finish();
            let sp = signal[u] / count;
            let ip = interference[u] / count;
            DownlinkUserMetrics {
                user: u,
                constellation: setup.scenario.constellation(u),
                evm_rms: m.evm_rms,
                evm_db: m.evm_db(),
                ser: m.ser,
                symbols: m.symbols,
                signal_power: sp,
                interference_power: ip,
                noise_power: setup.noise_var,
                sinr_db: 10.0 * (sp / (ip + setup.noise_var)).log10(),
                received_power: received[u] / count,
            }
        })
        .collect();
    let report = DownlinkReport {
        scheme: setup.scenario.scheme,
        users: k,
        elements: setup.n_elements(),
        processors: setup.plan.processors(),
        snr_db: setup.snr_db(),
        noise_var: setup.noise_var,
        slots: setup.scenario.slots,
        mean_evm: mean(per_user.iter().map(|u| u.evm_rms)),
        mean_ser: mean(per_user.iter().map(|u| u.ser)),
        per_user,
        link_usage: link_usage(setup, &exchange),
        exchange,
    };
    Ok(DownlinkRun {
        report,
        equalized: eq,
        reference: data_reference(&x, &layout.data),
        precoder,
        transmitted: t,
    })
}

pub fn run_downlink(scenario: &Scenario) -> Result<DownlinkRun, LinkError> {
    run_downlink_with(&Setup::new(scenario)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Snr,
    K,
    N,
    Scheme,
    P,
}

impl FromStr for SweepAxis {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "snr" => Ok(SweepAxis::Snr),
            "k" | "users" => Ok(SweepAxis::K),
            "n" | "elements" => Ok(SweepAxis::N),
            "scheme" => Ok(SweepAxis::Scheme),
            "p" | "processors" => Ok(SweepAxis::P),
            other => Err(LinkError::Scenario(format!(
                "unknown sweep axis '{other}' (expected snr, k, n, scheme or p)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub scheme: Scheme,
    pub users: usize,
    pub elements: usize,
    pub processors: usize,
    pub snr_db: Option<f64>,
    pub noise_var: f64,
    pub mean_evm: f64,
    pub mean_ser: f64,
    /// Median per-subcarrier spread of the column-normalized channel.
    pub median_spread: f64,
}

fn parse_value<T: FromStr>(axis: SweepAxis, v: &str) -> Result<T, LinkError> {
    v.trim()
        .parse()
        .map_err(|_| LinkError::Scenario(format!("bad {axis:?} value '{v}'")))
}

/// Applies one sweep value to a copy of `template`. The N axis switches to
/// a single-row array of N elements.
pub fn apply_axis(
    template: &Scenario,
    axis: SweepAxis,
    value: &str,
) -> Result<Scenario, LinkError> {
    let mut s = template.clone();
    match axis {
        SweepAxis::Snr => {
            s.snr_db = Some(parse_value(axis, value)?);
            s.noise_var = None;
        }
        SweepAxis::K => s.users = parse_value(axis, value)?,
        SweepAxis::N => {
            s.array = ArrayConfig {
                rows: 1,
                cols: parse_value(axis, value)?,
            }
        }
        SweepAxis::Scheme => {
            s.scheme = value.parse().map_err(LinkError::Scenario)?;
        }
        SweepAxis::P => s.processors = parse_value(axis, value)?,
    }
    Ok(s)
}

/// One uplink run per value, all with the template's seed.
pub fn run_sweep(
    template: &Scenario,
    axis: SweepAxis,
    values: &[String],
) -> Result<Vec<SweepRow>, LinkError> {
    values
        .iter()
        .map(|v| {
            let scenario = apply_axis(template, axis, v)?;
            let setup = Setup::new(&scenario)?;
            let run = run_uplink_with(&setup)?;
            let spread = metrics::singular_value_spread(&setup.channel, true)?;
            Ok(SweepRow {
                axis,
                value: v.clone(),
                scheme: scenario.scheme,
                users: scenario.users,
                elements: setup.n_elements(),
                processors: setup.plan.processors(),
                snr_db: run.report.snr_db,
                noise_var: run.report.noise_var,
                mean_evm: run.report.mean_evm,
                mean_ser: run.report.mean_ser,
                median_spread: spread.median(),
            })
        })
        .collect()
}

/// Fronthaul and throughput figures for a scenario's numerology and array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub n_sc: usize,
    pub chains: usize,
    pub window_s: f64,
    pub symbols_per_window: usize,
    pub aggregate_sample_rate_bps: f64,
    pub link_chains: usize,
    pub link_sample_rate_bps: f64,
    pub users: usize,
    pub bits_per_symbol: usize,
    /// Data symbols per window with both slots uplink.
    pub ul_data_symbols: usize,
    /// Data symbols per window with an uplink and a downlink slot.
    pub dl_data_symbols: usize,
    pub ul_throughput_bps: f64,
    pub dl_throughput_bps: f64,
    pub spectral_efficiency: f64,
}

/// Rates over one window of the two slots following the PSS slot.
pub fn rate_summary(scenario: &Scenario) -> Result<RateSummary, LinkError> {
    scenario.validate()?;
    let num = scenario.numerology.build()?;
    let window = 1..3;
    let window_s = 2.0 * num.slot_duration_s();
    let count = |dirs: &[Direction]| -> Result<usize, LinkError> {
        Ok(FrameSchedule::new(&num, dirs)?.count_data_symbols(window.clone()))
    };
    let ul_data_symbols = count(&[Direction::Uplink, Direction::Uplink])?;
    let dl_data_symbols = count(&[Direction::Uplink, Direction::Downlink])?;
    let budget = RateBudget {
        n_sc: num.n_data_sc,
        symbols_per_window: 2 * num.symbols_per_slot,
        window_s,
        sample_width_bits: scenario.sample_width_bits,
        iq_factor: 2,
        chains: scenario.n_elements(),
    };
    let link_chains = (CHAINS_PER_RADIO * RADIOS_PER_LINK).min(budget.chains);
    let bits = scenario.constellation(0).bits_per_symbol();
    let spec = |symbols| ThroughputSpec {
        n_sc: num.n_data_sc,
        symbols_per_window: symbols,
        bits_per_symbol: bits,
        users: scenario.users,
        window_s,
        bandwidth_hz: scenario.bandwidth_hz,
    };
    let ul = spec(ul_data_symbols);
    ul.validate()?;
    Ok(RateSummary {
        n_sc: num.n_data_sc,
        chains: budget.chains,
        window_s,
        symbols_per_window: budget.symbols_per_window,
        aggregate_sample_rate_bps: distributed::aggregate_sample_rate(&budget),
        link_chains,
        link_sample_rate_bps: distributed::link_sample_rate(&budget, link_chains),
        users: scenario.users,
        bits_per_symbol: bits,
        ul_data_symbols,
        dl_data_symbols,
        ul_throughput_bps: metrics::throughput(&ul),
        dl_throughput_bps: metrics::throughput(&spec(dl_data_symbols)),
        spectral_efficiency: metrics::spectral_efficiency(&ul),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub root: u32,
    pub threshold: f64,
    pub snr_db: Option<f64>,
    pub noise_var: f64,
    pub trials: usize,
    /// Trials whose detected offset equals the true delay.
    pub hits: usize,
    /// Trials below threshold.
    pub misses: usize,
    pub detection_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trials_detail: Vec<SyncTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncTrial {
    pub delay: usize,
    pub detected: Option<usize>,
    pub peak_metric: f64,
}

/// PSS frame with a random circular delay and AWGN per trial, detected
/// with the scenario's sync settings.
pub fn run_sync_test(scenario: &Scenario) -> Result<SyncReport, LinkError> {
    let cfg = &scenario.sync;
    if cfg.trials == 0 {
        return Err(LinkError::Scenario("sync trials must be at least 1".into()));
    }
    let num = scenario.numerology.build()?;
    let modem = OfdmModem::new(&num);
    let pss = PssSequence::zadoff_chu(cfg.root)?;
    let detector = PssDetector::new(&modem, &pss, cfg.threshold)?;
    let frame = sync::pss_frame(&modem, &pss)?;
    let noise_var = cfg.snr_db.map_or(0.0, |snr| {
        sync::pss_sample_power(&num) / 10f64.powf(snr / 10.0)
    });
    let mut rng = rng_for(scenario.seed, STREAM_SYNC);
    let mut detail = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        use rand::Rng;
        let delay = rng.random_range(0..frame.len());
        let mut rx = sync::delay_circular(&frame, delay);
        if noise_var > 0.0 {
            for v in &mut rx {
                *v += complex_normal(&mut rng, noise_var);
            }
        }
        let trial = match detector.detect(&rx) {
            Ok(r) => SyncTrial {
                delay,
                detected: Some(r.offset_samples),
                peak_metric: r.peak_metric,
            },
            Err(SyncError::NoSync { peak_metric, .. }) => SyncTrial {
                delay,
                detected: None,
                peak_metric,
            },
            Err(e) => return Err(e.into()),
        };
        detail.push(trial);
    }
    let hits = detail
        .iter()
        .filter(|t| t.detected == Some(t.delay))
        .count();
    let misses = detail.iter().filter(|t| t.detected.is_none()).count();
    Ok(SyncReport {
        root: cfg.root,
        threshold: cfg.threshold,
        snr_db: cfg.snr_db,
        noise_var,
        trials: cfg.trials,
        hits,
        misses,
        detection_rate: hits as f64 / cfg.trials as f64,
        trials_detail: detail,
    })
}

/// Roles of the frame as `(slot, symbol, role)` rows.
pub fn frame_roles(setup: &Setup) -> Vec<(usize, usize, SymbolRole)> {
    setup
        .schedule
        .slots
        .iter()
        .enumerate()
        .flat_map(|(s, p)| p.roles.iter().enumerate().map(move |(t, r)| (s, t, *r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        let mut s: Scenario = r#"
            users = 4
            scheme = "zf"
            constellations = ["qpsk"]
            [numerology]
            scs_hz = 60e3
            fft_size = 256
            n_data_sc = 192
            sample_rate_hz = 15.36e6
            [array]
            rows = 2
            cols = 8
            [channel]
            model = "iid"
            coherence_subcarriers = 4
        "#
        .parse()
        .unwrap();
        s.seed = 7;
        s
    }

    #[test]
    fn default_scenario_is_prototype() {
        let s = Scenario::default();
        assert_eq!(s.numerology.build().unwrap(), Numerology::prototype());
        assert_eq!(s.n_elements(), 256);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn validation() {
        let mut s = small();
        s.users = 13;
        assert!(s.validate().is_err());
        let mut s = small();
        s.users = 5;
        assert!(s.validate().is_err());
        let mut s = small();
        s.snr_db = Some(10.0);
        s.noise_var = Some(0.1);
        assert!(s.validate().is_err());
        let mut s = small();
        s.constellations = vec![Constellation::Qpsk; 3];
        assert!(s.validate().is_err());
        assert!("bogus = 1".parse::<Scenario>().is_err());
    }

    #[test]
    fn noise_free_uplink_is_exact() {
        let run = run_uplink(&small()).unwrap();
        assert_eq!(run.report.mean_ser, 0.0);
        assert!(run.report.mean_evm < 1e-10);
    }

    #[test]
    fn noise_free_downlink_is_exact() {
        let run = run_downlink(&small()).unwrap();
        assert_eq!(run.report.mean_ser, 0.0);
        assert!(run.report.mean_evm < 1e-10);
        for u in &run.report.per_user {
            assert!(u.interference_power < 1e-20 * u.signal_power.max(1.0));
        }
    }

    #[test]
    fn deterministic() {
        let mut s = small();
        s.snr_db = Some(5.0);
        let a = run_uplink(&s).unwrap();
        let b = run_uplink(&s).unwrap();
        assert_eq!(a.detected, b.detected);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn no_uplink_slot() {
        let mut s = small();
        s.directions = vec![Direction::Downlink];
        assert!(run_uplink(&s).is_err());
        assert!(run_downlink(&s).is_err());
    }

    #[test]
    fn sweep_axis_parsing() {
        assert_eq!("SNR".parse::<SweepAxis>().unwrap(), SweepAxis::Snr);
        assert_eq!("processors".parse::<SweepAxis>().unwrap(), SweepAxis::P);
        assert!("q".parse::<SweepAxis>().is_err());
        assert!(apply_axis(&small(), SweepAxis::K, "x").is_err());
    }

    #[test]
    fn time_domain_needs_flat_channel() {
        let mut s = small();
        s.time_domain = true;
        assert!(run_uplink(&s).is_err());
        s.channel = ChannelModel::Iid {
            coherence_subcarriers: 192,
        };
        let run = run_uplink(&s).unwrap();
        assert!(run.report.mean_evm < 1e-9);
    }

    #[test]
    fn sync_test_runs_from_config() {
        let mut s = small();
        s.sync = "root = 25\ntrials = 20\nsnr_db = 10.0"
            .parse::<toml::Table>()
            .unwrap()
            .try_into()
            .unwrap();
        let r = run_sync_test(&s).unwrap();
        assert_eq!(r.root, 25);
        assert_eq!(r.hits, 20);
        s.sync.root = 0;
        assert!(matches!(run_sync_test(&s), Err(LinkError::Sync(_))));
    }

    #[test]
    fn rate_summary_of_prototype() {
        let mut s = Scenario::default();
        s.users = 8;
        let r = rate_summary(&s).unwrap();
        assert_eq!((r.ul_data_symbols, r.dl_data_symbols), (26, 22));
        assert!((r.aggregate_sample_rate_bps / 1e9 - 1453.33).abs() < 0.01);
        assert!((r.link_sample_rate_bps / 1e9 - 90.83).abs() < 0.01);
        assert!((r.ul_throughput_bps / 1e9 - 10.543).abs() < 1e-3);
    }
}
