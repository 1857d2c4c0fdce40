//! Gaussian closed-form checks for the spectral building blocks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::field::{Field, FieldTag};
use crate::grid::Grid;
use crate::kinetic::{KineticOperator, KineticSpec};
use crate::riesz::{hartree_energy, riesz_convolve};
use crate::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub computed: f64,
    pub expected: f64,
    /// Relative error, or the absolute pointwise error for field checks.
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleCheck {
    fn new(name: &str, computed: f64, expected: f64, error: f64, tolerance: f64) -> Self {
        OracleCheck { name: name.into(), computed, expected, error, tolerance, pass: error <= tolerance }
    }
}

/// Composite Simpson rule on [a, b] with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// erf by quadrature of its defining integral.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let n = ((x.abs() * 400.0) as usize).max(200);
    simpson(|t| (-t * t).exp(), 0.0, x, n) * 2.0 / PI.sqrt()
}

/// Coulomb potential erf(r)/r of ρ = π^{−3/2}e^{−r²}.
pub fn gaussian_coulomb(r: f64) -> f64 {
    if r < 1e-8 {
        2.0 / PI.sqrt()
    } else {
        erf(r) / r
    }
}

/// Unit-norm Gaussian π^{−3/4} e^{−|x|²/2}.
pub fn unit_gaussian(grid: &Grid) -> Field {
    let a = PI.powf(-0.75);
    Field::from_real_fn(grid, FieldTag::Orbital, |x, y, z| a * (-(x * x + y * y + z * z) / 2.0).exp())
}

/// Runs the kinetic, self-energy and pointwise potential checks on `grid`.
pub fn oracle_suite(grid: &Grid) -> Result<Vec<OracleCheck>> {
    let u = unit_gaussian(grid);
    let t = KineticOperator::new(grid, &KineticSpec::massless()).form(u.values());
    let t_exact = 2.0 / PI.sqrt();
    let rho: Vec<f64> = u.values().iter().map(|v| v.norm_sqr()).collect();
    let rho = Field::from_real(grid, FieldTag::Density, &rho)?;
    let d = hartree_energy(&rho, &rho, 1.0)?;
    let d_exact = (2.0 / PI).sqrt();
    let pot = riesz_convolve(&rho, 1.0)?;
    let mut worst: f64 = 0.0;
    for (idx, v) in pot.values().iter().enumerate() {
        let p = grid.position(idx);
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r <= grid.box_length() / 4.0 {
            worst = worst.max((v.re - gaussian_coulomb(r)).abs());
        }
    }
    Ok(vec![
        OracleCheck::new("gaussian_kinetic_form", t, t_exact, (t / t_exact - 1.0).abs(), 1e-3),
        OracleCheck::new("gaussian_coulomb_self_energy", d, d_exact, (d / d_exact - 1.0).abs(), 1e-3),
        OracleCheck::new("gaussian_coulomb_potential", worst, 0.0, worst, 1e-4),
    ])
}
