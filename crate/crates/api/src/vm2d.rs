//! `VM2D` container: a little-endian header followed by a row-major `f64`
//! array on the extended grid (depth is the row index).
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `VM2D` |
//! | 4     | version (`u32`, currently 1) |
//! | 8     | `nx_ext` (`u64`) |
//! | 8     | `nz_ext` (`u64`) |
//! | 8     | `h` (`f64`) |
//! | 1     | unit flag |
//! | rest  | payload |
//!
//! Real units carry `nx_ext * nz_ext` values; the complex field unit carries
//! interleaved `(re, im)` pairs, twice as many.

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"VM2D";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Unit {
    Velocity = 0,
    SquaredSlowness = 1,
    /// Real-valued source or field samples.
    Field = 2,
    /// Interleaved real and imaginary parts.
    ComplexField = 3,
}

impl Unit {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Unit::Velocity,
            1 => Unit::SquaredSlowness,
            2 => Unit::Field,
            3 => Unit::ComplexField,
            _ => return None,
        })
    }

    fn values_per_node(self) -> usize {
        if self == Unit::ComplexField {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Error)]
pub enum Vm2dError {
    #[error("bad magic {0:?}, expected \"VM2D\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    BadVersion(u32),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("unknown unit flag {0}")]
    BadUnit(u8),
    #[error("payload is {actual} bytes, expected {expected} for the declared shape")]
    Length { expected: usize, actual: usize },
    #[error("value {value} at row {row}, column {col} must be positive and finite")]
    NonPositive { row: usize, col: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vm2d {
    pub nx_ext: usize,
    pub nz_ext: usize,
    pub h: f64,
    pub unit: Unit,
    pub values: Vec<f64>,
}

impl Vm2d {
    pub fn new(nx_ext: usize, nz_ext: usize, h: f64, unit: Unit, values: Vec<f64>) -> Result<Self, Vm2dError> {
        let f = Self { nx_ext, nz_ext, h, unit, values };
        f.check()?;
        Ok(f)
    }

    fn expected_values(&self) -> usize {
        self.nx_ext * self.nz_ext * self.unit.values_per_node()
    }

    fn check(&self) -> Result<(), Vm2dError> {
        if self.nx_ext == 0 || self.nz_ext == 0 {
            return Err(Vm2dError::BadShape(format!("{} x {} grid", self.nz_ext, self.nx_ext)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Vm2dError::BadShape(format!("grid spacing {}", self.h)));
        }
        if self.values.len() != self.expected_values() {
            return Err(Vm2dError::Length { expected: self.expected_values() * 8, actual: self.values.len() * 8 });
        }
        if matches!(self.unit, Unit::Velocity | Unit::SquaredSlowness) {
            for (i, &value) in self.values.iter().enumerate() {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Vm2dError::NonPositive { row: i / self.nx_ext, col: i % self.nx_ext, value });
                }
            }
        }
        Ok(())
    }

    /// Squared slowness at every node (`1/c^2` for velocity files).
    pub fn squared_slowness(&self) -> Result<Vec<f64>, Vm2dError> {
        match self.unit {
            Unit::SquaredSlowness => Ok(self.values.clone()),
            Unit::Velocity => Ok(self.values.iter().map(|c| 1.0 / (c * c)).collect()),
            u => Err(Vm2dError::BadShape(format!("unit {u:?} is not a medium"))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), Vm2dError> {
        self.check()?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.nx_ext as u64).to_le_bytes())?;
        w.write_all(&(self.nz_ext as u64).to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        w.write_all(&[self.unit as u8])?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, Vm2dError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, Vm2dError> {
        if bytes.len() < HEADER_BYTES {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(Vm2dError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(Vm2dError::Length { expected: HEADER_BYTES, actual: bytes.len() });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(Vm2dError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Vm2dError::BadVersion(version));
        }
        let nx_ext = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let nz_ext = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let h = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let unit = Unit::from_byte(bytes[32]).ok_or(Vm2dError::BadUnit(bytes[32]))?;
        let expected = (nx_ext as usize)
            .checked_mul(nz_ext as usize)
            .and_then(|n| n.checked_mul(8 * unit.values_per_node()))
            .ok_or_else(|| Vm2dError::BadShape(format!("{nz_ext} x {nx_ext} overflows")))?;
        let payload = &bytes[HEADER_BYTES..];
        if payload.len() != expected {
            return Err(Vm2dError::Length { expected, actual: payload.len() });
        }
        let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(nx_ext as usize, nz_ext as usize, h, unit, values)
    }

    pub fn read_path(path: &Path) -> Result<Self, Vm2dError> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn write_path(&self, path: &Path) -> Result<(), Vm2dError> {
        let mut buf = Vec::with_capacity(HEADER_BYTES + self.values.len() * 8);
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vm2d {
        Vm2d::new(3, 2, 0.1, Unit::Velocity, vec![2.0; 6]).unwrap()
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_BYTES + 48);
        assert_eq!(Vm2d::parse(&buf).unwrap(), f);
    }

    #[test]
    fn velocity_converts_to_slowness() {
        assert!(sample().squared_slowness().unwrap().iter().all(|&m| m == 0.25));
    }

    #[test]
    fn header_errors() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Vm2d::parse(&bad), Err(Vm2dError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(Vm2d::parse(&bad), Err(Vm2dError::BadVersion(9))));
        let mut bad = buf.clone();
        bad[8..16].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(Vm2d::parse(&bad), Err(Vm2dError::Length { .. }) | Err(Vm2dError::BadShape(_))));
    }

    #[test]
    fn truncated_payload_names_both_lengths() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        let err = Vm2d::parse(&buf).unwrap_err();
        assert!(matches!(err, Vm2dError::Length { expected: 48, actual: 43 }));
        let msg = err.to_string();
        assert!(msg.contains("48") && msg.contains("43"), "{msg}");
    }

    #[test]
    fn nonpositive_medium_rejected() {
        let err = Vm2d::new(2, 1, 0.1, Unit::Velocity, vec![1.0, -1.0]).unwrap_err();
        assert!(matches!(err, Vm2dError::NonPositive { row: 0, col: 1, .. }));
        assert!(Vm2d::new(2, 1, 0.1, Unit::Field, vec![1.0, -1.0]).is_ok());
    }
}
