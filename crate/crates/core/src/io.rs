//! Binary export formats and report writers.
//!
//! All integers and floats are little-endian.
//!
//! Channel tensor (`.xlmt`):
//!
//! ```text
//! magic   b"XLMT"
//! version u32 = 1
//! n_sc    u64
//! n_elem  u64
//! n_users u64
//! f_c     f64   carrier frequency (Hz)
//! scs     f64   subcarrier spacing (Hz)
//! payload n_sc * n_elem * n_users complex values as (re f64, im f64),
//!         row-major (m, n, k)
//! ```
//!
//! Sample stream (`.xlms`):
//!
//! ```text
//! magic       b"XLMS"
//! version     u32 = 1
//! precision   u32   32 (complex64) or 64 (complex128)
//! n_streams   u64
//! len         u64   samples per stream
//! sample_rate f64   (Hz)
//! payload     stream-major, each sample (re, im) at the given precision
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::channel::ChannelTensor;
use crate::ofdm::SampleStream;

const TENSOR_MAGIC: &[u8; 4] = b"XLMT";
const STREAM_MAGIC: &[u8; 4] = b"XLMS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    fn bits(self) -> u32 {
        match self {
            Precision::Single => 32,
            Precision::Double => 64,
        }
    }
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> io::Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(bad(format!("bad magic {m:?}")));
    }
    let v = read_u32(r)?;
    if v != VERSION {
        return Err(bad(format!("unsupported version {v}")));
    }
    Ok(())
}

fn to_usize(v: u64) -> io::Result<usize> {
    usize::try_from(v).map_err(|_| bad(format!("dimension {v} too large")))
}

pub fn write_tensor<W: Write>(w: &mut W, t: &ChannelTensor) -> io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in [t.n_sc, t.n_elem, t.n_users] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&t.f_c.to_le_bytes())?;
    w.write_all(&t.scs_hz.to_le_bytes())?;
    for v in &t.data {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> io::Result<ChannelTensor> {
    read_header(r, TENSOR_MAGIC)?;
    let n_sc = to_usize(read_u64(r)?)?;
    let n_elem = to_usize(read_u64(r)?)?;
    let n_users = to_usize(read_u64(r)?)?;
    let f_c = read_f64(r)?;
    let scs = read_f64(r)?;
    let count = n_sc
        .checked_mul(n_elem)
        .and_then(|v| v.checked_mul(n_users))
        .ok_or_else(|| bad("tensor size overflows"))?;
    let mut t = ChannelTensor::zeros(0, n_elem, n_users, f_c, scs);
    t.n_sc = n_sc;
    t.data = Vec::with_capacity(count);
    for _ in 0..count {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        t.data.push(Complex64::new(re, im));
    }
    Ok(t)
}

pub fn write_stream<W: Write>(w: &mut W, s: &SampleStream, precision: Precision) -> io::Result<()> {
    let len = s.streams.first().map_or(0, Vec::len);
    if s.streams.iter().any(|v| v.len() != len) {
        return Err(bad("streams have different lengths"));
    }
    w.write_all(STREAM_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&precision.bits().to_le_bytes())?;
    w.write_all(&(s.streams.len() as u64).to_le_bytes())?;
    w.write_all(&(len as u64).to_le_bytes())?;
    w.write_all(&s.sample_rate_hz.to_le_bytes())?;
    for v in s.streams.iter().flatten() {
        match precision {
            Precision::Single => {
                w.write_all(&(v.re as f32).to_le_bytes())?;
                w.write_all(&(v.im as f32).to_le_bytes())?;
            }
            Precision::Double => {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_stream<R: Read>(r: &mut R) -> io::Result<SampleStream> {
    read_header(r, STREAM_MAGIC)?;
    let precision = match read_u32(r)? {
        32 => Precision::Single,
        64 => Precision::Double,
        p => return Err(bad(format!("unsupported precision {p}"))),
    };
    let n_streams = to_usize(read_u64(r)?)?;
    let len = to_usize(read_u64(r)?)?;
    let sample_rate_hz = read_f64(r)?;
    let mut streams = Vec::with_capacity(n_streams);
    for _ in 0..n_streams {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            let z = match precision {
                Precision::Single => Complex64::new(read_f32(r)? as f64, read_f32(r)? as f64),
                Precision::Double => Complex64::new(read_f64(r)?, read_f64(r)?),
            };
            v.push(z);
        }
        streams.push(v);
    }
    Ok(SampleStream {
        sample_rate_hz,
        streams,
    })
}

pub fn save_tensor(path: &Path, t: &ChannelTensor) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()
}

pub fn load_tensor(path: &Path) -> io::Result<ChannelTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn save_stream(path: &Path, s: &SampleStream, precision: Precision) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stream(&mut w, s, precision)?;
    w.flush()
}

pub fn load_stream(path: &Path) -> io::Result<SampleStream> {
    read_stream(&mut BufReader::new(File::open(path)?))
}

/// Pretty-printed JSON.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::other)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// CSV with a header row taken from the field names of `T`.
pub fn save_csv<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut wr = csv::Writer::from_path(path).map_err(io::Error::other)?;
    for r in rows {
        wr.serialize(r).map_err(io::Error::other)?;
    }
    wr.flush()
}
