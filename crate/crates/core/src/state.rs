//! Finite-rank density operators γ = Σ k_i |u_i⟩⟨u_i| held through an
//! orthonormal frame and separate occupation weights.
//!
//! A serialized operator is a directory with `orbital_###.bin` field files
//! (see [`crate::field`]) and a `manifest.json` carrying weights, grid, tags
//! and a provenance hash over the orbital payloads and weights.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::field::{inner, Field, FieldTag};
use crate::grid::Grid;
use crate::kinetic::{KineticOperator, KineticSpec};
use crate::linalg::{combine, gram, hermitian_eigen, hermitian_function, CMat};

/// Gram deviation tolerated by [`OrthoFrame::from_orthonormal`].
pub const ORTHO_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct OrthoFrame {
    grid: Grid,
    orbitals: Vec<Vec<Complex64>>,
}

impl OrthoFrame {
    /// Wraps orbitals that are already orthonormal (checked to [`ORTHO_TOL`]).
    pub fn from_orthonormal(fields: Vec<Field>) -> Result<Self> {
        let frame = Self::from_fields_unchecked(fields)?;
        let dev = frame.gram_deviation();
        if dev > ORTHO_TOL {
            return Err(Error::Input(format!("frame is not orthonormal: max |G - I| = {dev:e}")));
        }
        Ok(frame)
    }

    fn from_fields_unchecked(fields: Vec<Field>) -> Result<Self> {
        let grid = *fields.first().ok_or_else(|| Error::Input("empty orbital list".into()))?.grid();
        let mut orbitals = Vec::with_capacity(fields.len());
        for f in fields {
            grid.check_same(f.grid())?;
            orbitals.push(f.into_values());
        }
        Ok(OrthoFrame { grid, orbitals })
    }

    pub(crate) fn from_raw(grid: Grid, orbitals: Vec<Vec<Complex64>>) -> Self {
        OrthoFrame { grid, orbitals }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.orbitals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbitals.is_empty()
    }

    pub fn orbital(&self, i: usize) -> &[Complex64] {
        &self.orbitals[i]
    }

    pub fn orbitals(&self) -> &[Vec<Complex64>] {
        &self.orbitals
    }

    pub fn into_orbitals(self) -> Vec<Vec<Complex64>> {
        self.orbitals
    }

    pub fn orbital_field(&self, i: usize) -> Field {
        Field::from_values(&self.grid, FieldTag::Orbital, self.orbitals[i].clone()).unwrap()
    }

    pub fn fields(&self) -> Vec<Field> {
        (0..self.len()).map(|i| self.orbital_field(i)).collect()
    }

    /// G_ij = ⟨u_i, u_j⟩ with the h³ quadrature weight.
    pub fn gram(&self) -> CMat {
        gram(&self.orbitals, &self.orbitals) * Complex64::new(self.grid.cell_volume(), 0.0)
    }

    pub fn gram_deviation(&self) -> f64 {
        let g = self.gram();
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).norm());
            }
        }
        worst
    }

    /// The frame (u_1..u_R)·U for an R × R matrix U.
    pub fn rotated(&self, u: &CMat) -> OrthoFrame {
        OrthoFrame { grid: self.grid, orbitals: combine(&self.orbitals, u) }
    }

    /// Keeps the listed orbitals in order.
    pub fn select(&self, keep: &[usize]) -> OrthoFrame {
        OrthoFrame { grid: self.grid, orbitals: keep.iter().map(|&i| self.orbitals[i].clone()).collect() }
    }

    /// Largest relative imaginary part left after removing the best global
    /// phase of each orbital.
    pub fn max_imag_residue(&self) -> f64 {
        self.orbitals.iter().map(|u| imag_residue(u)).fold(0.0, f64::max)
    }
}

/// ‖Im(e^{−iθ}u)‖/‖u‖ at the phase θ that makes e^{−iθ}u as real as possible.
pub fn imag_residue(u: &[Complex64]) -> f64 {
    let s: Complex64 = u.iter().map(|v| v * v).sum();
    let norm2: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    if norm2 == 0.0 {
        return 0.0;
    }
    // Σ|Im(e^{−iθ}u)|² = (‖u‖² − |Σu²|)/2 at the optimal θ
    ((norm2 - s.norm()).max(0.0) / (2.0 * norm2)).sqrt()
}

/// Symmetric orthonormalization (u_1..u_R)·G^{−1/2}.
pub fn loewdin_orthonormalize(raw: Vec<Field>) -> Result<OrthoFrame> {
    let frame = OrthoFrame::from_fields_unchecked(raw)?;
    loewdin_frame(frame)
}

pub(crate) fn loewdin_frame(frame: OrthoFrame) -> Result<OrthoFrame> {
    let mut frame = frame;
    // a second sweep removes the rounding left by an ill-conditioned first one
    for _ in 0..2 {
        let g = frame.gram();
        let (vals, _) = hermitian_eigen(&g);
        let smallest = vals[0];
        if smallest <= 1e-10 * vals[vals.len() - 1].max(1e-300) || smallest <= 1e-10 {
            return Err(Error::Degenerate(format!(
                "Gram matrix is singular: smallest eigenvalue {smallest:e}"
            )));
        }
        let s = hermitian_function(&g, |x| 1.0 / x.sqrt());
        frame = frame.rotated(&s);
        if frame.gram_deviation() < 1e-13 {
            break;
        }
    }
    Ok(frame)
}

/// Schatten exponent q ∈ [1, ∞]; serialized as a number or the string "inf".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchattenIndex(f64);

impl SchattenIndex {
    pub const INFINITY: SchattenIndex = SchattenIndex(f64::INFINITY);

    pub fn new(q: f64) -> Result<Self> {
        if q.is_nan() || q < 1.0 {
            return config(format!("q must lie in [1, inf], got {q}"));
        }
        Ok(SchattenIndex(q))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }

    /// Dual exponent q' = q/(q−1).
    pub fn dual(&self) -> f64 {
        if self.is_infinite() {
            1.0
        } else if self.0 == 1.0 {
            f64::INFINITY
        } else {
            self.0 / (self.0 - 1.0)
        }
    }

    /// Largest admissible q for a given α: (2−α)/(1−α) if α < 1, else ∞.
    pub fn upper_limit(alpha: f64) -> f64 {
        if alpha >= 1.0 {
            f64::INFINITY
        } else {
            (2.0 - alpha) / (1.0 - alpha)
        }
    }

    pub fn check_window(&self, alpha: f64) -> Result<()> {
        let lim = Self::upper_limit(alpha);
        if self.0 > lim * (1.0 + 1e-12) {
            return config(format!("q = {self} exceeds the admissible limit {lim} for alpha = {alpha}"));
        }
        Ok(())
    }
}

impl fmt::Display for SchattenIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for SchattenIndex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "inf" || t == "infinity" {
            return Ok(SchattenIndex::INFINITY);
        }
        let v: f64 = t.parse().map_err(|_| Error::Config(format!("q: cannot parse {s:?} as a number or \"inf\"")))?;
        SchattenIndex::new(v)
    }
}

impl Serialize for SchattenIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for SchattenIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => SchattenIndex::new(v).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// (Σ k_i^q)^{1/q}, or max k_i for q = ∞.
pub fn schatten_norm_weights(weights: &[f64], q: SchattenIndex) -> f64 {
    if q.is_infinite() {
        return weights.iter().cloned().fold(0.0, f64::max);
    }
    let kmax = weights.iter().cloned().fold(0.0, f64::max);
    if kmax == 0.0 {
        return 0.0;
    }
    // scaled to avoid overflow for large q
    let s: f64 = weights.iter().map(|k| (k / kmax).powf(q.0)).sum();
    kmax * s.powf(1.0 / q.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    frame: OrthoFrame,
    weights: Vec<f64>,
}

impl DensityOperator {
    pub fn new(frame: OrthoFrame, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != frame.len() {
            return Err(Error::Input(format!("{} weights for {} orbitals", weights.len(), frame.len())));
        }
        if let Some(k) = weights.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::Input(format!("weights must be nonnegative, got {k}")));
        }
        Ok(DensityOperator { frame, weights })
    }

    pub fn frame(&self) -> &OrthoFrame {
        &self.frame
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &Grid {
        self.frame.grid()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.weights.iter().filter(|&&k| k > 0.0).count()
    }

    pub fn trace(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        DensityOperator::new(self.frame.clone(), weights)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.with_weights(self.weights.iter().map(|k| k * c).collect())
    }

    /// ρ = Σ k_i |u_i|² as a plain vector.
    pub fn density_values(&self) -> Vec<f64> {
        density_of(self.frame.orbitals(), &self.weights)
    }

    pub fn density(&self) -> Field {
        Field::from_real(self.grid(), FieldTag::Density, &self.density_values()).unwrap()
    }

    pub fn schatten_norm(&self, q: SchattenIndex) -> f64 {
        schatten_norm_weights(&self.weights, q)
    }

    /// Σ k_i ⟨u_i, T u_i⟩ with the free-space kinetic operator.
    pub fn trace_kinetic(&self, spec: &KineticSpec) -> f64 {
        let op = KineticOperator::new(self.grid(), spec);
        self.trace_kinetic_with(&op)
    }

    pub fn trace_kinetic_with(&self, op: &KineticOperator) -> f64 {
        self.frame.orbitals().iter().zip(&self.weights).filter(|(_, &k)| k != 0.0).map(|(u, k)| k * op.form(u)).sum()
    }

    /// Σ k_i ∫ V |u_i|².
    pub fn trace_potential(&self, v: &Field) -> Result<f64> {
        self.grid().check_same(v.grid())?;
        let rho = self.density_values();
        let s: f64 = rho.iter().zip(v.values()).map(|(r, p)| r * p.re).sum();
        Ok(s * self.grid().cell_volume())
    }

    /// Frame rotated by a unitary; only meaningful with equal weights.
    pub fn rotated(&self, u: &CMat) -> Result<Self> {
        DensityOperator::new(self.frame.rotated(u), self.weights.clone())
    }

    pub fn write_dir(&self, dir: &Path, meta: &StateMeta) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut hasher = Sha256::new();
        for i in 0..self.len() {
            let name = format!("orbital_{i:03}.bin");
            let h = self.frame.orbital_field(i).write(&dir.join(&name), "gns-core")?;
            hasher.update(h.as_bytes());
            files.push(OrbitalEntry { file: name, sha256: h });
        }
        for k in &self.weights {
            hasher.update(k.to_le_bytes());
        }
        let manifest = Manifest {
            format: "gns-density-operator/1".into(),
            box_length: self.grid().box_length(),
            points: self.grid().points(),
            weights: self.weights.clone(),
            orbitals: files,
            meta: meta.clone(),
            provenance_hash: hex::encode(hasher.finalize()),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<(DensityOperator, Manifest)> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let grid = Grid::new(manifest.box_length, manifest.points)?;
        let mut fields = Vec::new();
        for entry in &manifest.orbitals {
            let f = Field::read(&dir.join(&entry.file))?;
            grid.check_same(f.grid())?;
            if f.content_hash() != entry.sha256 {
                return Err(Error::Input(format!("hash mismatch for {}", entry.file)));
            }
            fields.push(f);
        }
        let frame = OrthoFrame::from_orthonormal(fields)?;
        Ok((DensityOperator::new(frame, manifest.weights.clone())?, manifest))
    }
}

pub(crate) fn density_of(orbitals: &[Vec<Complex64>], weights: &[f64]) -> Vec<f64> {
    let len = orbitals.first().map_or(0, |u| u.len());
    let mut rho = vec![0.0; len];
    for (u, &k) in orbitals.iter().zip(weights) {
        if k == 0.0 {
            continue;
        }
        for (r, v) in rho.iter_mut().zip(u) {
            *r += k * v.norm_sqr();
        }
    }
    rho
}

/// Free-form tags stored with a serialized operator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<SchattenIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// GNS ratio of the stored optimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_est: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitalEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub box_length: f64,
    pub points: usize,
    pub weights: Vec<f64>,
    pub orbitals: Vec<OrbitalEntry>,
    pub meta: StateMeta,
    pub provenance_hash: String,
}

/// ⟨a, b⟩ with the quadrature weight of `grid`.
pub fn grid_inner(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    inner(a, b) * grid.cell_volume()
}
