//! Run configuration: a TOML file, overridden field by field from the command line.

use std::path::{Path, PathBuf};

use gns_core::gns::GnsControls;
use gns_core::trapped::{PolynomialZeros, SmoothFactor};
use gns_core::{Grid, SchattenIndex};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; defaults to `$GNSLAB_OUTPUT/<command>` or `runs/<command>`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub gns: GnsConfig,
    #[serde(default)]
    pub lt: LtConfig,
    #[serde(default)]
    pub trapped: TrappedConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_seed() -> u64 {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            output: None,
            grid: GridConfig::default(),
            gns: GnsConfig::default(),
            lt: LtConfig::default(),
            trapped: TrappedConfig::default(),
            sweep: SweepConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub box_length: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { box_length: 24.0, points: 64 }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid, CliError> {
        Grid::new(self.box_length, self.points).map_err(|e| CliError::at("grid", e))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnsConfig {
    pub alpha: f64,
    pub q: SchattenIndex,
    pub rank: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub adapt_scale: bool,
    /// Starting gauge length; the default is three grid cells.
    pub scale: Option<f64>,
    /// Also run the Pohozaev/virial checks on the optimizer.
    pub verify: bool,
}

impl Default for GnsConfig {
    fn default() -> Self {
        let c = GnsControls::default();
        GnsConfig {
            alpha: 1.0,
            q: SchattenIndex::INFINITY,
            rank: 1,
            tol: c.tol,
            max_iter: c.max_iter,
            restarts: c.restarts,
            adapt_scale: c.adapt_scale,
            scale: None,
            verify: true,
        }
    }
}

impl GnsConfig {
    pub fn controls(&self, seed: u64) -> GnsControls {
        GnsControls {
            max_iter: self.max_iter,
            tol: self.tol,
            restarts: self.restarts,
            seed,
            scale: self.scale,
            adapt_scale: self.adapt_scale,
            ..GnsControls::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtConfig {
    pub alpha: f64,
    /// Riesz-mean exponent q′; derived from the optimizer's q in duality runs.
    pub qprime: f64,
    pub eig_cap: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Potential stored as a field file.
    pub field: Option<PathBuf>,
    /// Stored GNS optimizer; with `beta` the potential is −β ρ_γ.
    pub state: Option<PathBuf>,
    pub beta: Option<f64>,
    /// Scan β over this list (or the default grid when empty) and report the duality product.
    pub duality: bool,
    pub betas: Vec<f64>,
}

impl Default for LtConfig {
    fn default() -> Self {
        LtConfig {
            alpha: 1.0,
            qprime: 1.0,
            eig_cap: 4,
            tol: 1e-7,
            max_iter: 400,
            field: None,
            state: None,
            beta: None,
            duality: false,
            betas: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub points: Option<Vec<[f64; 3]>>,
    pub exponents: Option<Vec<f64>>,
    pub factor: Option<SmoothFactor>,
    pub field: Option<PathBuf>,
}

impl PotentialConfig {
    pub fn polynomial(&self) -> Result<Option<PolynomialZeros>, CliError> {
        match (&self.points, &self.exponents, &self.field) {
            (Some(_), Some(_), Some(_)) => {
                Err(CliError::Config("trapped.potential: give either points/exponents or field, not both".into()))
            }
            (Some(p), Some(e), None) => PolynomialZeros::new(p.clone(), e.clone(), self.factor.unwrap_or_default())
                .map(Some)
                .map_err(|err| CliError::at("trapped.potential", err)),
            (None, None, Some(_)) => Ok(None),
            (Some(_), None, _) => Err(CliError::Config("trapped.potential.exponents: missing".into())),
            (None, Some(_), _) => Err(CliError::Config("trapped.potential.points: missing".into())),
            (None, None, None) => Err(CliError::Config("trapped.potential: no potential given".into())),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrappedConfig {
    pub n_cap: usize,
    pub coupling: f64,
    pub mass: f64,
    pub center: [f64; 3],
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub energy_floor: f64,
    pub potential: PotentialConfig,
    /// Run the dilation probe from this stored GNS optimizer instead of minimizing.
    pub probe_state: Option<PathBuf>,
    pub probe_point: [f64; 3],
    pub probe_trials: usize,
}

impl Default for TrappedConfig {
    fn default() -> Self {
        let c = gns_core::trapped::TrappedControls::default();
        TrappedConfig {
            n_cap: 1,
            coupling: 0.05,
            mass: 1.0,
            center: [0.0; 3],
            tol: c.tol,
            max_iter: c.max_iter,
            restarts: c.restarts,
            energy_floor: c.energy_floor,
            potential: PotentialConfig {
                points: Some(vec![[0.0; 3]]),
                exponents: Some(vec![0.5]),
                factor: None,
                field: None,
            },
            probe_state: None,
            probe_point: [0.0; 3],
            probe_trials: 60,
        }
    }
}

/// Geometric ladder K_i = K_ref·(1 − δ_i) with δ from 1 − start to 1 − end.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladder {
    pub reference: f64,
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl Ladder {
    pub fn couplings(&self) -> Result<Vec<f64>, CliError> {
        let ok = self.reference > 0.0 && 0.0 < self.start && self.start < self.end && self.end < 1.0 && self.points >= 2;
        if !ok {
            return Err(CliError::Config(
                "sweep.ladder: need reference > 0, 0 < start < end < 1 and points ≥ 2".into(),
            ));
        }
        let (d0, d1) = (1.0 - self.start, 1.0 - self.end);
        let n = self.points - 1;
        Ok((0..self.points).map(|i| self.reference * (1.0 - d0 * (d1 / d0).powf(i as f64 / n as f64))).collect())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub couplings: Vec<f64>,
    pub ladder: Option<Ladder>,
    /// Box length as a multiple of the predicted blow-up scale ε; fixed box when absent.
    pub adaptive_factor: Option<f64>,
    /// Threshold used to predict ε for the adaptive box; the ladder's reference when absent.
    pub reference: Option<f64>,
    /// Cold-start every K independently (runs on the worker pool).
    pub independent: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// `records.json` written by a sweep.
    pub records: Option<PathBuf>,
    /// Stored GNS optimizer (α = 1, q = ∞) matching the sweep's N.
    pub state: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim())))
    }
}
