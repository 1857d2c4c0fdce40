//! Closed-form and quadrature oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use gns_core::{Field, FieldTag, Grid};

/// Composite Simpson rule on [a, b] with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// erf(x) = (2/√π) ∫₀^x e^{−t²} dt by quadrature.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let n = ((x.abs() * 400.0) as usize).max(200);
    simpson(|t| (-t * t).exp(), 0.0, x, n) * 2.0 / PI.sqrt()
}

/// Coulomb potential of ρ = π^{−3/2}e^{−r²}: erf(r)/r, limit 2/√π at 0.
pub fn gaussian_coulomb(r: f64) -> f64 {
    if r < 1e-8 {
        2.0 / PI.sqrt()
    } else {
        erf(r) / r
    }
}

/// u(x) = π^{−3/4} e^{−|x−c|²/(2s²)} s^{−3/2}: unit L² norm.
pub fn gaussian(grid: &Grid, center: [f64; 3], s: f64) -> Field {
    let a = PI.powf(-0.75) * s.powf(-1.5);
    Field::from_real_fn(grid, FieldTag::Orbital, |x, y, z| {
        let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2) + (z - center[2]).powi(2);
        a * (-r2 / (2.0 * s * s)).exp()
    })
}

pub fn density_of(u: &Field) -> Field {
    let v: Vec<f64> = u.values().iter().map(|c| c.norm_sqr()).collect();
    Field::from_real(u.grid(), FieldTag::Density, &v).unwrap()
}

/// ∫ f(|ξ|) |û(ξ)|² dξ for the unit Gaussian of width s (û is a Gaussian of width 1/s).
pub fn gaussian_symbol_average(f: impl Fn(f64) -> f64, s: f64) -> f64 {
    let norm = PI.powf(-1.5) * s.powi(3);
    simpson(|k| 4.0 * PI * k * k * f(k) * norm * (-(k * s).powi(2)).exp(), 0.0, 12.0 / s, 20000)
}

/// Self-energy ∫∫ ρ(x)ρ(y)/|x−y| of ρ = π^{−3/2}e^{−r²}, by radial quadrature of the erf potential.
pub fn gaussian_self_energy() -> f64 {
    simpson(|r| 4.0 * PI * r * r * PI.powf(-1.5) * (-r * r).exp() * gaussian_coulomb(r), 0.0, 8.0, 4000)
}
