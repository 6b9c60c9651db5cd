//! Binary and CSV storage for real-valued `bins × frames` grids.
//!
//! ```text
//! magic        8 bytes  "ORDLMEL\0"
//! version      u32 LE
//! bins         u32 LE
//! frames       u32 LE
//! sample_rate  u32 LE   (informational tag)
//! lower        f64 LE
//! upper        f64 LE
//! payload      f64 LE × bins · frames, row-major (one row per bin)
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::quantiser::{RealGrid, SymbolGrid};

pub const MEL_MAGIC: &[u8; 8] = b"ORDLMEL\0";
pub const MEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 2 * 8;

#[derive(Clone, Debug, PartialEq)]
pub struct MelFile {
    pub sample_rate: u32,
    /// Value bounds recorded with the grid, typically the quantiser range.
    pub lower: f64,
    pub upper: f64,
    pub grid: RealGrid<f64>,
}

impl MelFile {
    /// Wrap a grid, recording its own min and max as bounds.
    pub fn from_grid(grid: RealGrid<f64>, sample_rate: u32) -> Self {
        let (lower, upper) = grid.min_max().unwrap_or((0.0, 0.0));
        Self {
            sample_rate,
            lower,
            upper,
            grid,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.grid.data().len());
        out.extend_from_slice(MEL_MAGIC);
        for v in [
            MEL_VERSION,
            self.grid.bins() as u32,
            self.grid.frames() as u32,
            self.sample_rate,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.lower.to_le_bytes());
        out.extend_from_slice(&self.upper.to_le_bytes());
        for &x in self.grid.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "mel file truncated: {} bytes, header needs {HEADER_LEN}",
                buf.len()
            )));
        }
        if &buf[..8] != MEL_MAGIC {
            return Err(Error::Format("not a mel file (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != MEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MEL_VERSION,
            });
        }
        let (bins, frames, sample_rate) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20));
        let (lower, upper) = (f64_at(24), f64_at(32));
        let expected = bins
            .checked_mul(frames)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let payload = &buf[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} bytes, header ({bins} × {frames}) implies {expected}",
                payload.len()
            )));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite value at payload index {i}"
            )));
        }
        Ok(Self {
            sample_rate,
            lower,
            upper,
            grid: RealGrid::new(bins, frames, data)?,
        })
    }
}

pub fn write_mel(path: impl AsRef<Path>, mel: &MelFile) -> Result<()> {
    std::fs::write(path, mel.to_bytes())?;
    Ok(())
}

pub fn read_mel(path: impl AsRef<Path>) -> Result<MelFile> {
    MelFile::from_bytes(&std::fs::read(path)?)
}

/// One line per bin, comma-separated values per frame.
pub fn parse_mel_csv(text: &str) -> Result<RealGrid<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                let x: f64 = v.trim().parse().map_err(|_| {
                    Error::Format(format!("line {}: `{}` is not a number", n + 1, v.trim()))
                })?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::Format(format!("line {}: non-finite value", n + 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {} has {} columns, expected {}",
                    n + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty CSV grid".into()));
    }
    let (bins, frames) = (rows.len(), rows[0].len());
    RealGrid::new(bins, frames, rows.concat())
}

pub fn read_mel_csv(path: impl AsRef<Path>) -> Result<RealGrid<f64>> {
    parse_mel_csv(&std::fs::read_to_string(path)?)
}

pub fn write_real_csv(mut w: impl Write, grid: &RealGrid<f64>) -> std::io::Result<()> {
    for b in 0..grid.bins() {
        let row: Vec<String> = (0..grid.frames())
            .map(|t| grid.get(b, t).to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_symbol_csv(mut w: impl Write, grid: &SymbolGrid) -> std::io::Result<()> {
    for b in 0..grid.bins() {
        let row: Vec<String> = (0..grid.frames())
            .map(|t| grid.get(b, t).to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read a grid from either format, chosen by the `.csv` extension.
pub fn load_grid(path: impl AsRef<Path>) -> Result<MelFile> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        Ok(MelFile::from_grid(read_mel_csv(path)?, 0))
    } else {
        read_mel(path)
    }
}
