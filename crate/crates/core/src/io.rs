//! Binary persistence of return streams.
//!
//! Layout (little-endian): the 8-byte magic `AAFRET01`, a `u32` format
//! version, a `u64` record count, then per record `start.x, start.y, end.x,
//! end.y, tau, psi_bar` as `f64`, `r` as `u32` (saturating) and a flags
//! byte (bit 0: passed the neutral orbit, bit 1: `r` saturated).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::flow_sim::{ReturnRecord, SectionPoint};

pub const MAGIC: &[u8; 8] = b"AAFRET01";
pub const VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 6 * 8 + 4 + 1;
pub const FLAG_NEUTRAL: u8 = 1;
pub const FLAG_SATURATED: u8 = 2;

pub fn encode_record(rec: &ReturnRecord, buf: &mut Vec<u8>) {
    for v in [rec.start.x, rec.start.y, rec.end.x, rec.end.y, rec.tau, rec.psi_bar] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let r = u32::try_from(rec.r).unwrap_or(u32::MAX);
    buf.extend_from_slice(&r.to_le_bytes());
    let mut flags = 0u8;
    if rec.passed_neutral {
        flags |= FLAG_NEUTRAL;
    }
    if rec.r > u32::MAX as u64 {
        flags |= FLAG_SATURATED;
    }
    buf.push(flags);
}

pub fn write_returns<W: Write>(mut w: W, records: &[ReturnRecord]) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + RECORD_BYTES * records.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for rec in records {
        encode_record(rec, &mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn f64_at(b: &[u8], i: usize) -> f64 {
    f64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"))
}

/// Reads a stream written by [`write_returns`]. Saturated `r` values come
/// back as `u32::MAX`.
pub fn read_returns<R: Read>(mut r: R) -> Result<Vec<ReturnRecord>> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &head[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() as u64 != count * RECORD_BYTES as u64 {
        return Err(Error::Format(format!("expected {count} records, found {} bytes", body.len())));
    }
    Ok(body
        .chunks_exact(RECORD_BYTES)
        .map(|b| ReturnRecord {
            start: SectionPoint { x: f64_at(b, 0), y: f64_at(b, 8) },
            end: SectionPoint { x: f64_at(b, 16), y: f64_at(b, 24) },
            tau: f64_at(b, 32),
            psi_bar: f64_at(b, 40),
            r: u32::from_le_bytes(b[48..52].try_into().expect("4 bytes")) as u64,
            passed_neutral: b[52] & FLAG_NEUTRAL != 0,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(r: u64) -> ReturnRecord {
        ReturnRecord {
            start: SectionPoint { x: 0.1, y: -0.2 },
            end: SectionPoint { x: 0.3, y: 0.4 },
            r,
            tau: 12.5,
            psi_bar: -3.25,
            passed_neutral: r > 1,
        }
    }

    #[test]
    fn round_trip() {
        let recs = vec![rec(1), rec(7)];
        let mut buf = Vec::new();
        write_returns(&mut buf, &recs).unwrap();
        assert_eq!(buf.len(), 20 + 2 * RECORD_BYTES);
        assert_eq!(read_returns(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn saturating_r() {
        let mut buf = Vec::new();
        write_returns(&mut buf, &[rec(u64::MAX)]).unwrap();
        assert_eq!(buf[20 + RECORD_BYTES - 1], FLAG_NEUTRAL | FLAG_SATURATED);
        assert_eq!(read_returns(&buf[..]).unwrap()[0].r, u32::MAX as u64);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_returns(&mut buf, &[rec(2)]).unwrap();
        assert!(read_returns(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_returns(&buf[..]).is_err());
    }
}
