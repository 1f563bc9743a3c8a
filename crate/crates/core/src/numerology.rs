//! OFDM numerology and the TDD frame schedule.
//!
//! A [`Numerology`] fixes subcarrier spacing, FFT size, the number of mapped
//! data subcarriers and the cyclic-prefix layout. Cyclic prefixes follow the
//! NR pattern: every symbol carries `9/128 * N_fft` samples of prefix except
//! the first symbol of each slot, which absorbs the remainder so that a
//! 14-symbol slot is an exact integer number of samples.
//!
//! A [`FrameSchedule`] assigns a [`SymbolRole`] to every OFDM symbol of a
//! 10 ms frame. Slot 0 carries the PSS; the other slots are scheduled per
//! link direction with a pilot symbol and, at direction switches, two guard
//! symbols.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Subcarrier spacing of numerology 0 (Hz).
pub const BASE_SCS_HZ: f64 = 15e3;
/// OFDM symbols per slot (normal cyclic prefix).
pub const SYMBOLS_PER_SLOT: usize = 14;
/// Subframes per 10 ms radio frame.
pub const SUBFRAMES_PER_FRAME: usize = 10;
/// Guard symbols inserted at an uplink/downlink switch.
pub const GUARD_SYMBOLS: usize = 2;

const SUBFRAME_S: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("sample rate {sample_rate_hz} Hz != fft_size {fft_size} x scs {scs_hz} Hz")]
    InconsistentRate {
        sample_rate_hz: f64,
        fft_size: usize,
        scs_hz: f64,
    },
    #[error("subcarrier spacing {0} Hz is not 15 kHz x 2^mu")]
    UnsupportedSpacing(f64),
    #[error("invalid data subcarrier count {n_data_sc} for fft size {fft_size}")]
    DataSubcarriers { n_data_sc: usize, fft_size: usize },
    #[error("slot of {slot_samples} samples cannot hold {symbols} symbols of {fft_size} samples")]
    SlotTooShort {
        slot_samples: usize,
        symbols: usize,
        fft_size: usize,
    },
    #[error("slot duration is not an integer number of samples")]
    FractionalSlot,
    #[error("{given} slot directions given but the frame has only {available} schedulable slots")]
    TooManySlots { given: usize, available: usize },
    #[error("{0}")]
    Invalid(String),
}

/// OFDM numerology shared by every processing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Numerology {
    pub scs_hz: f64,
    pub fft_size: usize,
    pub n_data_sc: usize,
    pub sample_rate_hz: f64,
    pub cp_normal: usize,
    pub cp_long: usize,
    pub symbols_per_slot: usize,
    pub slots_per_subframe: usize,
}

impl Numerology {
    /// Builds a numerology and derives the cyclic-prefix layout.
    pub fn new(
        scs_hz: f64,
        fft_size: usize,
        n_data_sc: usize,
        sample_rate_hz: f64,
    ) -> Result<Self, ConfigError> {
        if !(scs_hz > 0.0) || fft_size == 0 {
            return Err(ConfigError::Invalid(
                "subcarrier spacing and fft size must be positive".into(),
            ));
        }
        let expected = fft_size as f64 * scs_hz;
        if (expected - sample_rate_hz).abs() > 1e-9 * expected {
            return Err(ConfigError::InconsistentRate {
                sample_rate_hz,
                fft_size,
                scs_hz,
            });
        }
        let ratio = scs_hz / BASE_SCS_HZ;
        let slots_per_subframe = ratio.round() as usize;
        if (ratio - slots_per_subframe as f64).abs() > 1e-9 || !slots_per_subframe.is_power_of_two()
        {
            return Err(ConfigError::UnsupportedSpacing(scs_hz));
        }
        // DC is nulled, so each half of the band can use at most fft/2 - 1 bins.
        if n_data_sc == 0 || !n_data_sc.is_multiple_of(2) || n_data_sc + 2 > fft_size {
            return Err(ConfigError::DataSubcarriers {
                n_data_sc,
                fft_size,
            });
        }

        let slot_exact = sample_rate_hz * SUBFRAME_S / slots_per_subframe as f64;
        let slot_samples = slot_exact.round() as usize;
        if (slot_exact - slot_samples as f64).abs() > 1e-6 {
            return Err(ConfigError::FractionalSlot);
        }
        let body = SYMBOLS_PER_SLOT * fft_size;
        let cp_normal = fft_size * 9 / 128;
        let too_short = ConfigError::SlotTooShort {
            slot_samples,
            symbols: SYMBOLS_PER_SLOT,
            fft_size,
        };
        let cp_total = slot_samples.checked_sub(body).ok_or(too_short.clone())?;
        let cp_long = cp_total
            .checked_sub((SYMBOLS_PER_SLOT - 1) * cp_normal)
            .ok_or(too_short.clone())?;
        if cp_long < cp_normal {
            return Err(too_short);
        }

        Ok(Self {
            scs_hz,
            fft_size,
            n_data_sc,
            sample_rate_hz,
            cp_normal,
            cp_long,
            symbols_per_slot: SYMBOLS_PER_SLOT,
            slots_per_subframe,
        })
    }

    /// The prototype configuration: 60 kHz, 4096-point FFT, 3168 data
    /// subcarriers at 245.76 MS/s.
    pub fn prototype() -> Self {
        Self::new(60e3, 4096, 3168, 245.76e6).expect("prototype numerology is consistent")
    }

    pub fn slot_samples(&self) -> usize {
        self.cp_long
            + (self.symbols_per_slot - 1) * self.cp_normal
            + self.symbols_per_slot * self.fft_size
    }

    pub fn slot_duration_s(&self) -> f64 {
        SUBFRAME_S / self.slots_per_subframe as f64
    }

    pub fn slots_per_frame(&self) -> usize {
        SUBFRAMES_PER_FRAME * self.slots_per_subframe
    }

    pub fn symbols_per_frame(&self) -> usize {
        self.slots_per_frame() * self.symbols_per_slot
    }

    pub fn frame_samples(&self) -> usize {
        self.slots_per_frame() * self.slot_samples()
    }

    /// Cyclic-prefix length of the symbol at `symbol` (frame-relative index).
    pub fn cp_len(&self, symbol: usize) -> usize {
        if symbol.is_multiple_of(self.symbols_per_slot) {
            self.cp_long
        } else {
            self.cp_normal
        }
    }

    /// Total samples (prefix plus body) of the symbol at `symbol`.
    pub fn symbol_samples(&self, symbol: usize) -> usize {
        self.cp_len(symbol) + self.fft_size
    }

    /// Sample offset of the start of symbol `symbol` (including its prefix)
    /// relative to the start of the frame.
    pub fn symbol_start(&self, symbol: usize) -> usize {
        let slot = symbol / self.symbols_per_slot;
        let within = symbol % self.symbols_per_slot;
        let mut start = slot * self.slot_samples();
        if within > 0 {
            start += self.cp_long + self.fft_size + (within - 1) * (self.cp_normal + self.fft_size);
        }
        start
    }

    /// Signed frequency bin (in units of the subcarrier spacing) of data
    /// subcarrier `index`. Half of the data subcarriers sit below DC and half
    /// above; DC itself is unused.
    pub fn subcarrier_offset(&self, index: usize) -> i64 {
        let half = (self.n_data_sc / 2) as i64;
        let i = index as i64;
        if i < half {
            i - half
        } else {
            i - half + 1
        }
    }

    /// FFT bin occupied by data subcarrier `index`.
    pub fn fft_bin(&self, index: usize) -> usize {
        let off = self.subcarrier_offset(index);
        off.rem_euclid(self.fft_size as i64) as usize
    }

    pub fn occupied_bandwidth_hz(&self) -> f64 {
        self.n_data_sc as f64 * self.scs_hz
    }
}

/// Link direction of a scheduled slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(alias = "ul")]
    Uplink,
    #[serde(alias = "dl")]
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolRole {
    Pss,
    Guard,
    PilotUl,
    PilotDl,
    DataUl,
    DataDl,
    Idle,
}

impl SymbolRole {
    pub fn is_data(self) -> bool {
        matches!(self, SymbolRole::DataUl | SymbolRole::DataDl)
    }

    pub fn is_pilot(self) -> bool {
        matches!(self, SymbolRole::PilotUl | SymbolRole::PilotDl)
    }
}

/// Roles of the OFDM symbols of one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub direction: Option<Direction>,
    pub roles: Vec<SymbolRole>,
}

impl SlotPlan {
    fn idle(symbols: usize) -> Self {
        Self {
            direction: None,
            roles: vec![SymbolRole::Idle; symbols],
        }
    }

    fn pss(symbols: usize) -> Self {
        let mut roles = vec![SymbolRole::Idle; symbols];
        roles[0] = SymbolRole::Pss;
        Self {
            direction: None,
            roles,
        }
    }

    fn active(symbols: usize, direction: Direction, guard: bool) -> Self {
        let (pilot, data) = match direction {
            Direction::Uplink => (SymbolRole::PilotUl, SymbolRole::DataUl),
            Direction::Downlink => (SymbolRole::PilotDl, SymbolRole::DataDl),
        };
        let guards = if guard { GUARD_SYMBOLS } else { 0 };
        let mut roles = Vec::with_capacity(symbols);
        roles.extend(std::iter::repeat_n(SymbolRole::Guard, guards));
        roles.push(pilot);
        roles.resize(symbols, data);
        Self {
            direction: Some(direction),
            roles,
        }
    }

    pub fn count(&self, role: SymbolRole) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }
}

/// Per-symbol role assignment of one 10 ms frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub slots: Vec<SlotPlan>,
}

impl FrameSchedule {
    /// Builds a frame from one direction per scheduled slot.
    ///
    /// Slot 0 holds the PSS. `directions[i]` schedules slot `i + 1`; slots
    /// past the end of `directions` stay idle. A slot gets two guard symbols
    /// when its direction differs from the previous active slot, with the
    /// comparison wrapping from the last active slot back to the first so
    /// that back-to-back frames switch consistently.
    pub fn new(numerology: &Numerology, directions: &[Direction]) -> Result<Self, ConfigError> {
        let n_slots = numerology.slots_per_frame();
        let symbols = numerology.symbols_per_slot;
        if directions.len() > n_slots - 1 {
            return Err(ConfigError::TooManySlots {
                given: directions.len(),
                available: n_slots - 1,
            });
        }
        let mut slots = Vec::with_capacity(n_slots);
        slots.push(SlotPlan::pss(symbols));
        for (i, &dir) in directions.iter().enumerate() {
            let prev = if i == 0 {
                directions[directions.len() - 1]
            } else {
                directions[i - 1]
            };
            slots.push(SlotPlan::active(symbols, dir, prev != dir));
        }
        slots.resize_with(n_slots, || SlotPlan::idle(symbols));
        Ok(Self { slots })
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn role(&self, slot: usize, symbol: usize) -> SymbolRole {
        self.slots[slot].roles[symbol]
    }

    /// Counts symbols with `role` in the slots of `window` (clamped to the
    /// frame).
    pub fn count_symbols(&self, window: Range<usize>, role: SymbolRole) -> usize {
        self.window(window).map(|s| s.count(role)).sum()
    }

    /// Counts uplink and downlink data symbols in `window`.
    pub fn count_data_symbols(&self, window: Range<usize>) -> usize {
        self.window(window)
            .flat_map(|s| s.roles.iter())
            .filter(|r| r.is_data())
            .count()
    }

    fn window(&self, window: Range<usize>) -> impl Iterator<Item = &SlotPlan> {
        let end = window.end.min(self.slots.len());
        let start = window.start.min(end);
        self.slots[start..end].iter()
    }

    /// Frame-relative symbol indices carrying `role`.
    pub fn symbols_with_role(&self, role: SymbolRole) -> Vec<usize> {
        let mut out = Vec::new();
        for (slot_idx, slot) in self.slots.iter().enumerate() {
            for (sym, &r) in slot.roles.iter().enumerate() {
                if r == role {
                    out.push(slot_idx * slot.roles.len() + sym);
                }
            }
        }
        out
    }

    /// Sum of per-symbol sample counts over the whole schedule.
    pub fn total_samples(&self, numerology: &Numerology) -> usize {
        let per_slot = numerology.symbols_per_slot;
        self.slots
            .iter()
            .enumerate()
            .flat_map(|(s, plan)| (0..plan.roles.len()).map(move |i| s * per_slot + i))
            .map(|sym| numerology.symbol_samples(sym))
            .sum()
    }
}
