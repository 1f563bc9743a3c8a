//! Sharded base-station dataflow.
//!
//! Radio units deliver chain-major data: each processor first receives every
//! subcarrier for its own group of chains. An all-to-all exchange re-tiles
//! the data so that each processor holds every chain for its own contiguous
//! band of subcarriers, where it runs channel estimation and detection
//! independently. Downlink runs the same way in reverse: precode per band,
//! then exchange back to chain-major shards for the radios.
//!
//! Band boundaries are aligned to pilot sub-bands so each processor sees
//! complete pilot combs. The per-subcarrier arithmetic is identical to the
//! centralized path, so sharded and centralized outputs agree bit for bit
//! under zero-order-hold estimation.

use std::ops::Range;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chanest::{self, EstimationError, Interpolation, PilotMap, PilotSymbols};
use crate::channel::ChannelTensor;
use crate::mimo::{self, LinearTransform, MimoError, Scheme};
use crate::ofdm::ResourceGrid;

/// Default capacity of one processor link (bit/s).
pub const DEFAULT_LINK_CAPACITY_BPS: f64 = 100e9;
/// Transceiver chains per radio unit.
pub const CHAINS_PER_RADIO: usize = 4;
/// Radio units aggregated onto one processor link.
pub const RADIOS_PER_LINK: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributedError {
    #[error("invalid partition plan: {0}")]
    Plan(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("processor {processor}: {source}")]
    Estimation {
        processor: usize,
        source: EstimationError,
    },
    #[error("processor {processor}: {source}")]
    Mimo { processor: usize, source: MimoError },
}

/// Assignment of chains and subcarriers to `P` processors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_chains: usize,
    pub n_sc: usize,
    /// Pilot sub-band width; band boundaries are multiples of it.
    pub subband_width: usize,
    pub chain_groups: Vec<Range<usize>>,
    pub subband_groups: Vec<Range<usize>>,
}

fn split_even(total: usize, parts: usize) -> Vec<Range<usize>> {
    (0..parts)
        .map(|i| i * total / parts..(i + 1) * total / parts)
        .collect()
}

fn check_partition(
    groups: &[Range<usize>],
    total: usize,
    what: &str,
) -> Result<(), DistributedError> {
    let mut next = 0;
    for (p, g) in groups.iter().enumerate() {
        if g.start != next || g.end <= g.start {
            return Err(DistributedError::Plan(format!(
                "{what} group {p} ({g:?}) does not continue a contiguous partition at {next}"
            )));
        }
        next = g.end;
    }
    if next != total {
        return Err(DistributedError::Plan(format!(
            "{what} groups cover {next} of {total}"
        )));
    }
    Ok(())
}

impl PartitionPlan {
    pub fn new(
        n_chains: usize,
        n_sc: usize,
        subband_width: usize,
        chain_groups: Vec<Range<usize>>,
        subband_groups: Vec<Range<usize>>,
    ) -> Result<Self, DistributedError> {
        if chain_groups.is_empty() || chain_groups.len() != subband_groups.len() {
            return Err(DistributedError::Plan(format!(
                "{} chain groups and {} band groups",
                chain_groups.len(),
                subband_groups.len()
            )));
        }
        if subband_width == 0 || !n_sc.is_multiple_of(subband_width) {
            return Err(DistributedError::Plan(format!(
                "sub-band width {subband_width} does not divide {n_sc} subcarriers"
            )));
        }
        check_partition(&chain_groups, n_chains, "chain")?;
        check_partition(&subband_groups, n_sc, "band")?;
        if let Some(g) = subband_groups
            .iter()
            .find(|g| g.start % subband_width != 0 || g.end % subband_width != 0)
        {
            return Err(DistributedError::Plan(format!(
                "band {g:?} is not aligned to sub-bands of {subband_width}"
            )));
        }
        Ok(Self {
            n_chains,
            n_sc,
            subband_width,
            chain_groups,
            subband_groups,
        })
    }

    /// Splits chains and sub-bands as evenly as possible over `processors`.
    pub fn even(
        processors: usize,
        n_chains: usize,
        n_sc: usize,
        subband_width: usize,
    ) -> Result<Self, DistributedError> {
        if processors == 0 {
            return Err(DistributedError::Plan("need at least one processor".into()));
        }
        if subband_width == 0 || !n_sc.is_multiple_of(subband_width) {
            return Err(DistributedError::Plan(format!(
                "sub-band width {subband_width} does not divide {n_sc} subcarriers"
            )));
        }
        let bands = split_even(n_sc / subband_width, processors)
            .into_iter()
            .map(|r| r.start * subband_width..r.end * subband_width)
            .collect();
        Self::new(
            n_chains,
            n_sc,
            subband_width,
            split_even(n_chains, processors),
            bands,
        )
    }

    pub fn processors(&self) -> usize {
        self.chain_groups.len()
    }
}

/// One processor's chain-major data: its chains, every subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainShard {
    pub chains: Range<usize>,
    pub grid: ResourceGrid,
}

/// One processor's band-major data: every chain, its subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct BandShard {
    pub subcarriers: Range<usize>,
    pub grid: ResourceGrid,
}

/// Bytes moved between processors during one exchange, `[src][dst]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeReport {
    pub bytes: Vec<Vec<u64>>,
}

impl ExchangeReport {
    /// Bytes that crossed a link between distinct processors.
    pub fn inter_processor_bytes(&self) -> u64 {
        self.bytes
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().enumerate().filter(move |(d, _)| *d != s))
            .map(|(_, b)| *b)
            .sum()
    }
}

/// Wire size of one complex sample with `width_bits` per I and Q.
fn sample_bytes(width_bits: u32) -> u64 {
    2 * u64::from(width_bits).div_ceil(8)
}

fn check_grid(grid: &ResourceGrid, plan: &PartitionPlan) -> Result<(), DistributedError> {
    if grid.n_streams != plan.n_chains || grid.n_sc != plan.n_sc {
        return Err(DistributedError::Dimension(format!(
            "grid is {} chains x {} subcarriers, plan expects {} x {}",
            grid.n_streams, grid.n_sc, plan.n_chains, plan.n_sc
        )));
    }
    Ok(())
}

pub fn partition_uplink(
    grid: &ResourceGrid,
    plan: &PartitionPlan,
) -> Result<Vec<ChainShard>, DistributedError> {
    check_grid(grid, plan)?;
    Ok(plan
        .chain_groups
        .iter()
        .map(|chains| ChainShard {
            chains: chains.clone(),
            grid: grid.slice(chains.clone(), 0..plan.n_sc),
        })
        .collect())
}

pub fn reassemble_chains(
    shards: &[ChainShard],
    plan: &PartitionPlan,
) -> Result<ResourceGrid, DistributedError> {
    let first = shards
        .first()
        .ok_or_else(|| DistributedError::Dimension("no shards".into()))?;
    let mut out = ResourceGrid::zeros(plan.n_sc, first.grid.n_symbols, plan.n_chains)
        .with_start_symbol(first.grid.start_symbol);
    for s in shards {
        out.paste(&s.grid, s.chains.start, 0);
    }
    Ok(out)
}

pub fn reassemble_bands(
    shards: &[BandShard],
    plan: &PartitionPlan,
) -> Result<ResourceGrid, DistributedError> {
    let first = shards
        .first()
        .ok_or_else(|| DistributedError::Dimension("no shards".into()))?;
    let mut out = ResourceGrid::zeros(plan.n_sc, first.grid.n_symbols, first.grid.n_streams)
        .with_start_symbol(first.grid.start_symbol);
    for s in shards {
        out.paste(&s.grid, 0, s.subcarriers.start);
    }
    Ok(out)
}

/// A tile sent from processor `src` to processor `dst`.
struct Piece {
    src: usize,
    grid: ResourceGrid,
}

/// All-to-all re-tiling. Every source splits its grid into one piece per
/// destination (`split(src, dst)`), the pieces travel over per-destination
/// channels, and each destination assembles what it receives with
/// `assemble(dst, pieces)`.
fn all_to_all<S, A>(
    sources: Vec<ResourceGrid>,
    split: S,
    assemble: A,
    width_bits: u32,
) -> (Vec<ResourceGrid>, ExchangeReport)
where
    S: Fn(usize, usize, &ResourceGrid) -> ResourceGrid + Sync,
    A: Fn(usize, Vec<Piece>) -> ResourceGrid + Sync,
{
    let p = sources.len();
    let mut bytes = vec![vec![0u64; p]; p];
    let per_sample = sample_bytes(width_bits);
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..p).map(|_| mpsc::channel::<Piece>()).unzip();
    let outputs = thread::scope(|scope| {
        for (src, grid) in sources.iter().enumerate() {
            let senders = senders.clone();
            let split = &split;
            scope.spawn(move || {
                for (dst, tx) in senders.iter().enumerate() {
                    let piece = split(src, dst, grid);
                    tx.send(Piece { src, grid: piece })
                        .expect("destination alive until all pieces arrive");
                }
            });
        }
        drop(senders);
        let handles: Vec<_> = receivers
            .into_iter()
            .enumerate()
            .map(|(dst, rx)| {
                let assemble = &assemble;
                scope.spawn(move || {
                    let pieces: Vec<Piece> = rx.iter().take(p).collect();
                    let sizes: Vec<(usize, u64)> = pieces
                        .iter()
                        .map(|pc| (pc.src, pc.grid.data.len() as u64 * per_sample))
                        .collect();
                    (assemble(dst, pieces), sizes)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("exchange worker panicked"))
            .collect::<Vec<_>>()
    });
    let mut grids = Vec::with_capacity(p);
    for (dst, (grid, sizes)) in outputs.into_iter().enumerate() {
        for (src, b) in sizes {
            bytes[src][dst] += b;
        }
        grids.push(grid);
    }
    (grids, ExchangeReport { bytes })
}

/// Re-tiles chain-major shards into band-major shards.
pub fn exchange(
    shards: Vec<ChainShard>,
    plan: &PartitionPlan,
    sample_width_bits: u32,
) -> Result<(Vec<BandShard>, ExchangeReport), DistributedError> {
    if shards.len() != plan.processors() {
        return Err(DistributedError::Dimension(format!(
            "{} shards for {} processors",
            shards.len(),
            plan.processors()
        )));
    }
    for (s, g) in shards.iter().zip(&plan.chain_groups) {
        if s.chains != *g || s.grid.n_sc != plan.n_sc || s.grid.n_streams != g.len() {
            return Err(DistributedError::Dimension(format!(
                "shard for chains {:?} does not match plan group {g:?}",
                s.chains
            )));
        }
    }
    let n_symbols = shards[0].grid.n_symbols;
    let start_symbol = shards[0].grid.start_symbol;
    let sources = shards.into_iter().map(|s| s.grid).collect();
    let (grids, report) = all_to_all(
        sources,
        |_, dst, grid| grid.slice(0..grid.n_streams, plan.subband_groups[dst].clone()),
        |dst, pieces| {
            let band = &plan.subband_groups[dst];
            let mut out = ResourceGrid::zeros(band.len(), n_symbols, plan.n_chains)
                .with_start_symbol(start_symbol);
            for pc in pieces {
                out.paste(&pc.grid, plan.chain_groups[pc.src].start, 0);
            }
            out
        },
        sample_width_bits,
    );
    let shards = grids
        .into_iter()
        .zip(&plan.subband_groups)
        .map(|(grid, sc)| BandShard {
            subcarriers: sc.clone(),
            grid,
        })
        .collect();
    Ok((shards, report))
}

/// Inverse of [`exchange`]: band-major shards back to chain-major shards.
pub fn exchange_to_chains(
    shards: Vec<BandShard>,
    plan: &PartitionPlan,
    sample_width_bits: u32,
) -> Result<(Vec<ChainShard>, ExchangeReport), DistributedError> {
    if shards.len() != plan.processors() {
        return Err(DistributedError::Dimension(format!(
            "{} shards for {} processors",
            shards.len(),
            plan.processors()
        )));
    }
    for (s, g) in shards.iter().zip(&plan.subband_groups) {
        if s.subcarriers != *g || s.grid.n_sc != g.len() || s.grid.n_streams != plan.n_chains {
            return Err(DistributedError::Dimension(format!(
                "shard for band {:?} does not match plan group {g:?}",
                s.subcarriers
            )));
        }
    }
    let n_symbols = shards[0].grid.n_symbols;
    let start_symbol = shards[0].grid.start_symbol;
    let sources = shards.into_iter().map(|s| s.grid).collect();
    let (grids, report) = all_to_all(
        sources,
        |_, dst, grid| grid.slice(plan.chain_groups[dst].clone(), 0..grid.n_sc),
        |dst, pieces| {
            let chains = &plan.chain_groups[dst];
            let mut out = ResourceGrid::zeros(plan.n_sc, n_symbols, chains.len())
                .with_start_symbol(start_symbol);
            for pc in pieces {
                out.paste(&pc.grid, 0, plan.subband_groups[pc.src].start);
            }
            out
        },
        sample_width_bits,
    );
    let shards = grids
        .into_iter()
        .zip(&plan.chain_groups)
        .map(|(grid, chains)| ChainShard {
            chains: chains.clone(),
            grid,
        })
        .collect();
    Ok((shards, report))
}

/// Where a processor gets its channel knowledge from.
#[derive(Debug, Clone, Copy)]
pub enum CsiSource<'a> {
    /// LS estimation from the pilot symbol of the received grid.
    Pilots {
        pilots: &'a PilotSymbols,
        symbol: usize,
        interpolation: Interpolation,
    },
    /// The true channel (full band); each processor slices its band.
    Perfect(&'a ChannelTensor),
}

/// Estimation plus detection for one band of subcarriers.
///
/// `band` is the band's subcarrier range within the full carrier, `grid`
/// holds every chain for exactly those subcarriers.
pub fn process_band(
    grid: &ResourceGrid,
    band: Range<usize>,
    csi: CsiSource<'_>,
    n_users: usize,
    data_symbols: &[usize],
    scheme: Scheme,
    noise_var: f64,
) -> Result<ResourceGrid, DistributedError> {
    let at = |source| DistributedError::Mimo {
        processor: 0,
        source,
    };
    match csi {
        CsiSource::Pilots {
            pilots,
            symbol,
            interpolation,
        } => {
            let est_err = |source| DistributedError::Estimation {
                processor: 0,
                source,
            };
            let map = PilotMap::new(n_users, band.len()).map_err(est_err)?;
            if !band.start.is_multiple_of(n_users) {
                return Err(est_err(EstimationError::Dimension(format!(
                    "band {band:?} not aligned to sub-bands of {n_users}"
                ))));
            }
            let sb = band.start / n_users..band.end / n_users;
            let local = pilots.subbands(sb);
            let est = chanest::ls_estimate_ul(grid, symbol, &local, &map, interpolation)
                .map_err(est_err)?;
            mimo::detect_symbols(&est, grid, data_symbols, scheme, noise_var).map_err(at)
        }
        CsiSource::Perfect(h) => {
            let local = h.subcarriers(band);
            mimo::detect_symbols(&local, grid, data_symbols, scheme, noise_var).map_err(at)
        }
    }
}

fn tag(processor: usize, e: DistributedError) -> DistributedError {
    match e {
        DistributedError::Estimation { source, .. } => {
            DistributedError::Estimation { processor, source }
        }
        DistributedError::Mimo { source, .. } => DistributedError::Mimo { processor, source },
        other => other,
    }
}

/// Runs every band shard on its own worker and concatenates the detected
/// symbols (one stream per user) over the full band.
pub fn process_distributed(
    shards: &[BandShard],
    plan: &PartitionPlan,
    csi: CsiSource<'_>,
    n_users: usize,
    data_symbols: &[usize],
    scheme: Scheme,
    noise_var: f64,
) -> Result<ResourceGrid, DistributedError> {
    let results: Vec<Result<ResourceGrid, DistributedError>> = thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .map(|shard| {
                scope.spawn(move || {
                    process_band(
                        &shard.grid,
                        shard.subcarriers.clone(),
                        csi,
                        n_users,
                        data_symbols,
                        scheme,
                        noise_var,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("processor worker panicked"))
            .collect()
    });
    let mut out = ResourceGrid::zeros(plan.n_sc, data_symbols.len(), n_users);
    for (p, (res, shard)) in results.into_iter().zip(shards).enumerate() {
        let grid = res.map_err(|e| tag(p, e))?;
        out.paste(&grid, 0, shard.subcarriers.start);
    }
    Ok(out)
}

/// Centralized reference: one processor over the full band.
pub fn process_centralized(
    grid: &ResourceGrid,
    csi: CsiSource<'_>,
    n_users: usize,
    data_symbols: &[usize],
    scheme: Scheme,
    noise_var: f64,
) -> Result<ResourceGrid, DistributedError> {
    process_band(
        grid,
        0..grid.n_sc,
        csi,
        n_users,
        data_symbols,
        scheme,
        noise_var,
    )
}

/// Precodes each processor's band and exchanges the result back to
/// chain-major shards for the radio units.
pub fn process_distributed_dl(
    x: &ResourceGrid,
    plan: &PartitionPlan,
    transforms: &LinearTransform,
    sample_width_bits: u32,
) -> Result<(Vec<ChainShard>, ExchangeReport), DistributedError> {
    if x.n_sc != plan.n_sc || transforms.n_sc() != plan.n_sc {
        return Err(DistributedError::Dimension(format!(
            "data has {} subcarriers, transforms {}, plan {}",
            x.n_sc,
            transforms.n_sc(),
            plan.n_sc
        )));
    }
    let results: Vec<Result<ResourceGrid, MimoError>> = thread::scope(|scope| {
        let handles: Vec<_> = plan
            .subband_groups
            .iter()
            .map(|band| {
                scope.spawn(move || {
                    let local_x = x.slice(0..x.n_streams, band.clone());
                    mimo::precode(&transforms.subcarriers(band.clone()), &local_x)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("processor worker panicked"))
            .collect()
    });
    let mut bands = Vec::with_capacity(plan.processors());
    for (p, (res, band)) in results.into_iter().zip(&plan.subband_groups).enumerate() {
        let grid = res.map_err(|source| DistributedError::Mimo {
            processor: p,
            source,
        })?;
        bands.push(BandShard {
            subcarriers: band.clone(),
            grid,
        });
    }
    exchange_to_chains(bands, plan, sample_width_bits)
}

/// Parameters of the radio-to-baseband sample stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBudget {
    pub n_sc: usize,
    /// OFDM symbols per accounting window.
    pub symbols_per_window: usize,
    pub window_s: f64,
    pub sample_width_bits: u32,
    pub iq_factor: u32,
    pub chains: usize,
}

impl RateBudget {
    /// The prototype: 3168 subcarriers, 28 symbols per 0.5 ms, 16-bit I/Q,
    /// 256 chains.
    pub fn prototype() -> Self {
        Self {
            n_sc: 3168,
            symbols_per_window: 28,
            window_s: 0.5e-3,
            sample_width_bits: 16,
            iq_factor: 2,
            chains: 256,
        }
    }
}

/// Aggregate frequency-domain sample rate (bit/s) of all chains.
pub fn aggregate_sample_rate(budget: &RateBudget) -> f64 {
    let per_chain = budget.n_sc as f64 * budget.symbols_per_window as f64 / budget.window_s
        * f64::from(budget.sample_width_bits)
        * f64::from(budget.iq_factor);
    per_chain * budget.chains as f64
}

/// Sample rate (bit/s) carried by one link aggregating `chains` chains.
pub fn link_sample_rate(budget: &RateBudget, chains: usize) -> f64 {
    aggregate_sample_rate(&RateBudget { chains, ..*budget })
}

/// Load of one link in the utilization report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkUsage {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
    pub rate_bps: f64,
    pub capacity_bps: f64,
    pub utilization: f64,
}

/// Per-link utilization of an exchange that repeats every `window_s`.
pub fn utilization_report(
    report: &ExchangeReport,
    window_s: f64,
    capacity_bps: f64,
) -> Vec<LinkUsage> {
    let mut out = Vec::new();
    for (src, row) in report.bytes.iter().enumerate() {
        for (dst, &bytes) in row.iter().enumerate() {
            if src == dst {
                continue;
            }
            let rate = bytes as f64 * 8.0 / window_s;
            out.push(LinkUsage {
                src,
                dst,
                bytes,
                rate_bps: rate,
                capacity_bps,
                utilization: rate / capacity_bps,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(n_sc: usize, symbols: usize, streams: usize, seed: u64) -> ResourceGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ResourceGrid::zeros(n_sc, symbols, streams);
        for v in &mut g.data {
            *v = complex_normal(&mut rng, 1.0);
        }
        g
    }

    #[test]
    fn even_plan_prototype() {
        let plan = PartitionPlan::even(4, 256, 3168, 12).unwrap();
        assert!(plan.chain_groups.iter().all(|g| g.len() == 64));
        assert!(plan.subband_groups.iter().all(|g| g.len() == 792));
    }

    #[test]
    fn plan_validation() {
        assert!(PartitionPlan::new(8, 16, 4, vec![0..4, 5..8], vec![0..8, 8..16]).is_err());
        assert!(PartitionPlan::new(8, 16, 4, vec![0..4, 4..8], vec![0..6, 6..16]).is_err());
        assert!(PartitionPlan::new(8, 16, 4, vec![0..8], vec![0..8, 8..16]).is_err());
        assert!(PartitionPlan::new(8, 16, 4, vec![0..4, 4..8], vec![0..4, 4..16]).is_ok());
        assert!(PartitionPlan::even(0, 8, 16, 4).is_err());
        assert!(PartitionPlan::even(2, 8, 18, 4).is_err());
    }

    #[test]
    fn single_processor_is_identity() {
        let g = random_grid(16, 2, 6, 1);
        let plan = PartitionPlan::even(1, 6, 16, 4).unwrap();
        let shards = partition_uplink(&g, &plan).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].grid, g);
        let (bands, report) = exchange(shards, &plan, 16).unwrap();
        assert_eq!(bands[0].grid, g);
        assert_eq!(report.inter_processor_bytes(), 0);
    }

    #[test]
    fn shards_reassemble_bit_exact() {
        let g = random_grid(24, 3, 10, 2);
        let plan = PartitionPlan::new(
            10,
            24,
            4,
            vec![0..3, 3..7, 7..10],
            vec![0..4, 4..16, 16..24],
        )
        .unwrap();
        let shards = partition_uplink(&g, &plan).unwrap();
        assert_eq!(reassemble_chains(&shards, &plan).unwrap(), g);
        let (bands, _) = exchange(shards, &plan, 16).unwrap();
        assert_eq!(bands[1].grid.n_sc, 12);
        assert_eq!(bands[1].grid.n_streams, 10);
        assert_eq!(reassemble_bands(&bands, &plan).unwrap(), g);
        let (back, _) = exchange_to_chains(bands, &plan, 16).unwrap();
        assert_eq!(reassemble_chains(&back, &plan).unwrap(), g);
    }

    #[test]
    fn exchange_byte_accounting() {
        let g = random_grid(16, 2, 8, 3);
        let plan = PartitionPlan::even(2, 8, 16, 4).unwrap();
        let (_, report) = exchange(partition_uplink(&g, &plan).unwrap(), &plan, 16).unwrap();
        // each piece: 4 chains x 8 subcarriers x 2 symbols x 4 bytes
        assert_eq!(report.bytes, vec![vec![256, 256], vec![256, 256]]);
        assert_eq!(report.inter_processor_bytes(), 512);
        let usage = utilization_report(&report, 0.5e-3, DEFAULT_LINK_CAPACITY_BPS);
        assert_eq!(usage.len(), 2);
        assert!((usage[0].rate_bps - 256.0 * 8.0 / 0.5e-3).abs() < 1e-6);
    }

    #[test]
    fn prototype_rates() {
        let b = RateBudget::prototype();
        assert!((aggregate_sample_rate(&b) / 1e9 - 1453.33).abs() < 0.01);
        assert!((link_sample_rate(&b, 1) / 1e9 - 5.6771).abs() < 1e-4);
        let link = link_sample_rate(&b, CHAINS_PER_RADIO * RADIOS_PER_LINK);
        assert!((link / 1e9 - 90.83).abs() < 0.01);
        assert!(link < DEFAULT_LINK_CAPACITY_BPS);
    }

    #[test]
    fn rate_is_linear() {
        let b = RateBudget::prototype();
        let r1 = aggregate_sample_rate(&RateBudget { chains: 3, ..b });
        let r2 = aggregate_sample_rate(&RateBudget { chains: 6, ..b });
        assert!((r2 - 2.0 * r1).abs() < 1e-3);
        let w = aggregate_sample_rate(&RateBudget {
            sample_width_bits: 32,
            ..b
        });
        assert!((w - 2.0 * aggregate_sample_rate(&b)).abs() < 1e-3);
    }
}
