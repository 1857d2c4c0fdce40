//! Complex scalar fields sampled on a [`Grid`], plus their on-disk format.
//!
//! Binary layout: a 64-byte header followed by n^3 little-endian `(re, im)`
//! pairs of f64 in flat grid order.
//!
//! | bytes  | content                          |
//! |--------|----------------------------------|
//! | 0..8   | magic `GNSFIELD`                 |
//! | 8..12  | format version (u32, currently 1)|
//! | 12..16 | field tag (u32)                  |
//! | 16..24 | n (u64)                          |
//! | 24..32 | L (f64)                          |
//! | 32..64 | reserved, zero                   |
//!
//! A sidecar `<file>.json` records grid, tag, units and a SHA-256 of the
//! payload.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const FIELD_MAGIC: &[u8; 8] = b"GNSFIELD";
pub const HEADER_LEN: usize = 64;
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldTag {
    Orbital,
    Density,
    Potential,
    Generic,
}

impl FieldTag {
    fn code(self) -> u32 {
        match self {
            FieldTag::Orbital => 1,
            FieldTag::Density => 2,
            FieldTag::Potential => 3,
            FieldTag::Generic => 0,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => FieldTag::Generic,
            1 => FieldTag::Orbital,
            2 => FieldTag::Density,
            3 => FieldTag::Potential,
            _ => return Err(Error::Input(format!("unknown field tag code {c}"))),
        })
    }

    pub fn units(self) -> &'static str {
        match self {
            FieldTag::Orbital => "length^-3/2",
            FieldTag::Density => "length^-3",
            FieldTag::Potential => "energy",
            FieldTag::Generic => "arbitrary",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    tag: FieldTag,
    values: Vec<Complex64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub box_length: f64,
    pub points: usize,
    pub spacing: f64,
    pub tag: FieldTag,
    pub units: String,
    pub sha256: String,
    pub producer: String,
}

impl Field {
    pub fn zeros(grid: &Grid, tag: FieldTag) -> Self {
        Field { grid: *grid, tag, values: vec![Complex64::default(); grid.len()] }
    }

    pub fn from_values(grid: &Grid, tag: FieldTag, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Input(format!("expected {} samples, got {}", grid.len(), values.len())));
        }
        Ok(Field { grid: *grid, tag, values })
    }

    pub fn from_real(grid: &Grid, tag: FieldTag, values: &[f64]) -> Result<Self> {
        Field::from_values(grid, tag, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Samples `f(x, y, z)` at every grid point.
    pub fn from_fn(grid: &Grid, tag: FieldTag, f: impl Fn(f64, f64, f64) -> Complex64) -> Self {
        let c = grid.coords();
        let mut values = Vec::with_capacity(grid.len());
        for &x in &c {
            for &y in &c {
                for &z in &c {
                    values.push(f(x, y, z));
                }
            }
        }
        Field { grid: *grid, tag, values }
    }

    pub fn from_real_fn(grid: &Grid, tag: FieldTag, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        Field::from_fn(grid, tag, |x, y, z| Complex64::new(f(x, y, z), 0.0))
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn tag(&self) -> FieldTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: FieldTag) -> Self {
        self.tag = tag;
        self
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Largest |Im| over the samples.
    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// Discrete L^2 inner product h^3 Σ conj(self)·other.
    pub fn inner(&self, other: &Field) -> Result<Complex64> {
        self.grid.check_same(&other.grid)?;
        Ok(inner(&self.values, &other.values) * self.grid.cell_volume())
    }

    pub fn norm_squared(&self) -> f64 {
        norm_squared(&self.values) * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// h^3 Σ values.
    pub fn integral(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() * self.grid.cell_volume()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Checks the density invariant: real and pointwise ≥ -tol.
    pub fn check_density(&self, tol: f64) -> Result<()> {
        for (idx, v) in self.values.iter().enumerate() {
            if v.re < -tol || v.im.abs() > tol.max(1e-12 * v.re.abs()) {
                return Err(Error::Input(format!(
                    "density sample {idx} = {v} is not real nonnegative (tolerance {tol:e})"
                )));
            }
        }
        Ok(())
    }

    fn payload(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 16 * self.values.len());
        buf.extend_from_slice(FIELD_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.tag.code().to_le_bytes());
        buf.extend_from_slice(&(self.grid.points() as u64).to_le_bytes());
        buf.extend_from_slice(&self.grid.box_length().to_le_bytes());
        buf.resize(HEADER_LEN, 0);
        for v in &self.values {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        buf
    }

    /// Hex SHA-256 of the binary encoding (header included).
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.payload()))
    }

    /// Writes the binary file and its `.json` sidecar; returns the hash.
    pub fn write(&self, path: &Path, producer: &str) -> Result<String> {
        let bytes = self.payload();
        let hash = hex::encode(Sha256::digest(&bytes));
        fs::write(path, &bytes)?;
        let side = FieldSidecar {
            box_length: self.grid.box_length(),
            points: self.grid.points(),
            spacing: self.grid.spacing(),
            tag: self.tag,
            units: self.tag.units().to_string(),
            sha256: hash.clone(),
            producer: producer.to_string(),
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(hash)
    }

    pub fn read(path: &Path) -> Result<Field> {
        let bytes = fs::read(path)?;
        Field::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Field> {
        if bytes.len() < HEADER_LEN || &bytes[0..8] != FIELD_MAGIC {
            return Err(Error::Input("not a field file (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(Error::Input(format!("unsupported field format version {version}")));
        }
        let tag = FieldTag::from_code(u32_at(12))?;
        let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let l = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let grid = Grid::new(l, n)?;
        let expect = HEADER_LEN + 16 * grid.len();
        if bytes.len() != expect {
            return Err(Error::Input(format!("field file has {} bytes, expected {expect}", bytes.len())));
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect();
        Ok(Field { grid, tag, values })
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Σ conj(a)·b in index order.
#[inline]
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    Complex64::new(re, im)
}

/// Re Σ conj(a)·b.
#[inline]
pub fn inner_re(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut re = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
    }
    re
}

#[inline]
pub fn norm_squared(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_roundtrip() {
        let g = Grid::new(4.0, 4).unwrap();
        let f = Field::from_fn(&g, FieldTag::Orbital, |x, y, z| Complex64::new(x + 2.0 * y, z));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.bin");
        let h = f.write(&p, "test").unwrap();
        assert_eq!(h, f.content_hash());
        let back = Field::read(&p).unwrap();
        assert_eq!(back, f);
        let side: FieldSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side.points, 4);
        assert_eq!(side.tag, FieldTag::Orbital);
        assert_eq!(fs::read(&p).unwrap().len(), HEADER_LEN + 16 * 64);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Field::decode(b"nope").is_err());
        let mut bytes = vec![0u8; 64];
        bytes[..8].copy_from_slice(FIELD_MAGIC);
        assert!(Field::decode(&bytes).is_err());
    }

    #[test]
    fn density_check() {
        let g = Grid::new(4.0, 4).unwrap();
        let mut f = Field::from_real_fn(&g, FieldTag::Density, |_, _, _| 1.0);
        assert!(f.check_density(1e-12).is_ok());
        f.values_mut()[3] = Complex64::new(-1e-9, 0.0);
        assert!(f.check_density(1e-12).is_err());
    }
}
