//! Link-level simulator and baseband processing library for a mid-band
//! XL-MIMO TDD multiuser OFDM system.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chanest;
pub mod channel;
pub mod constellation;
pub mod distributed;
pub mod io;
pub mod linalg;
pub mod linksim;
pub mod metrics;
pub mod mimo;
pub mod numerology;
pub mod ofdm;
pub mod sync;
