//! Negative spectrum of √−Δ + V ∗ |x|^{−α}, Riesz means and lower bounds for
//! the Hartree-type Lieb–Thirring constant, plus the duality test against a
//! GNS optimizer with the potentials V = −βρ_γ.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::{lobpcg, EigenControls, LinearOperator};
use crate::error::{config, Result};
use crate::field::Field;
use crate::gns::GnsResult;
use crate::grid::Grid;
use crate::kinetic::{KineticOperator, KineticSpec};
use crate::riesz::{check_alpha, dot, RieszKernel};
use crate::state::SchattenIndex;

/// Eigenvalues at or above this value are not counted as negative.
pub const NEGATIVE_CUTOFF: f64 = -1e-8;
/// Residual bound for a reported eigenpair.
pub const EIGEN_RESIDUAL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LtProblem {
    pub potential: Field,
    pub alpha: f64,
    pub qprime: f64,
    pub eig_cap: usize,
    pub controls: EigenControls,
}

impl LtProblem {
    pub fn new(potential: Field, alpha: f64, qprime: f64, eig_cap: usize, controls: EigenControls) -> Result<Self> {
        check_alpha(alpha)?;
        if !(qprime >= 1.0) || !qprime.is_finite() {
            return config(format!("q' must be a finite number ≥ 1, got {qprime}"));
        }
        if eig_cap == 0 {
            return config("eigenvalue cap must be at least 1");
        }
        if potential.max_imag() > 1e-12 {
            return config("potential must be real");
        }
        if potential.values().iter().any(|v| !v.re.is_finite()) {
            return config("potential has non-finite samples");
        }
        Ok(LtProblem { potential, alpha, qprime, eig_cap, controls })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LtResult {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<Complex64>>,
    pub riesz_mean: f64,
    /// `None` when V_− vanishes and the ratio is undefined.
    pub rhs: Option<f64>,
    /// Lower bound riesz_mean / rhs for the Lieb–Thirring constant.
    pub l_lower: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// The operator √−Δ + W with W = V ∗ |x|^{−α} already evaluated.
struct Schroedinger<'a> {
    kin: &'a KineticOperator,
    w: &'a [f64],
    scale: f64,
}

impl LinearOperator for Schroedinger<'_> {
    fn apply(&mut self, x: &[Complex64], out: &mut [Complex64]) {
        self.kin.apply(x, out);
        for ((o, v), w) in out.iter_mut().zip(x).zip(self.w) {
            *o += v * w;
        }
    }

    fn precondition(&mut self, r: &[Complex64], shift: f64) -> Vec<Complex64> {
        // (|ξ| − shift)^{-1}, kept positive above the continuum threshold
        let sigma = if shift < 0.0 { -shift } else { self.scale };
        let mut buf = r.to_vec();
        let fft = self.kin.fft();
        fft.forward(&mut buf);
        for (v, m) in buf.iter_mut().zip(self.kin.multiplier()) {
            *v /= m + sigma;
        }
        fft.inverse(&mut buf);
        buf
    }
}

/// Gaussian-times-polynomial starting block centred on the well of `w`.
fn starting_block(grid: &Grid, w: &[f64], count: usize) -> Vec<Vec<Complex64>> {
    let n = grid.points();
    let xs = grid.coords();
    let mut mass = 0.0;
    let mut c = [0.0; 3];
    let mut spread = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let m = (-w[(i * n + j) * n + k]).max(0.0);
                mass += m;
                c[0] += m * xs[i];
                c[1] += m * xs[j];
                c[2] += m * xs[k];
            }
        }
    }
    if mass > 0.0 {
        c.iter_mut().for_each(|v| *v /= mass);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let m = (-w[(i * n + j) * n + k]).max(0.0);
                    let d = [xs[i] - c[0], xs[j] - c[1], xs[k] - c[2]];
                    spread += m * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                }
            }
        }
        spread = (spread / mass / 3.0).sqrt();
    } else {
        c = [0.0; 3];
    }
    let s = spread.clamp(2.0 * grid.spacing(), grid.box_length() / 8.0);
    // monomials 1, x, y, z, xy, yz, zx, x²−y², ...
    let poly = |m: usize, d: [f64; 3]| -> f64 {
        let [x, y, z] = d.map(|v| v / s);
        match m {
            0 => 1.0,
            1 => x,
            2 => y,
            3 => z,
            4 => x * y,
            5 => y * z,
            6 => z * x,
            7 => x * x - y * y,
            8 => 2.0 * z * z - x * x - y * y,
            9 => x * y * z,
            _ => (x + 0.3 * (m as f64)).sin() * (y - 0.7 * (m as f64)).cos() * (1.0 + z),
        }
    };
    (0..count)
        .map(|m| {
            let mut v = Vec::with_capacity(grid.len());
            for &x in &xs {
                for &y in &xs {
                    for &z in &xs {
                        let d = [x - c[0], y - c[1], z - c[2]];
                        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                        v.push(Complex64::new(poly(m, d) * (-r2 / (2.0 * s * s)).exp(), 0.0));
                    }
                }
            }
            v
        })
        .collect()
}

/// Solver state kept between related potentials (warm starts in β sweeps).
pub struct SpectrumSolver {
    grid: Grid,
    kin: KineticOperator,
    kernel: Arc<RieszKernel>,
    alpha: f64,
}

impl SpectrumSolver {
    pub fn new(grid: &Grid, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SpectrumSolver {
            grid: *grid,
            kin: KineticOperator::new(grid, &KineticSpec::massless()),
            kernel: RieszKernel::shared(grid, alpha)?,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// W = V ∗ |x|^{−α}.
    pub fn convolved_potential(&self, v: &[f64]) -> Vec<f64> {
        if v.iter().all(|&x| x == 0.0) {
            return vec![0.0; v.len()];
        }
        self.kernel.convolve(v)
    }

    /// Lowest eigenpairs of √−Δ + V ∗ |x|^{−α}; at most `cap` negative ones are kept.
    pub fn solve(
        &self,
        v: &[f64],
        cap: usize,
        controls: &EigenControls,
        warm: Option<&[Vec<Complex64>]>,
    ) -> (Vec<f64>, Vec<f64>, Vec<Vec<Complex64>>, bool, usize) {
        let w = self.convolved_potential(v);
        if w.iter().all(|&x| x >= 0.0) {
            // √−Δ + W ≥ 0 when W ≥ 0: nothing to compute
            return (Vec::new(), Vec::new(), Vec::new(), true, 0);
        }
        let block = cap + 1;
        let mut x0 = starting_block(&self.grid, &w, block);
        if let Some(prev) = warm {
            for (slot, p) in x0.iter_mut().zip(prev) {
                *slot = p.clone();
            }
        }
        let wmin = w.iter().cloned().fold(0.0, f64::min);
        let mut op = Schroedinger { kin: &self.kin, w: &w, scale: wmin.abs().max(1e-3) };
        let res = lobpcg(&mut op, x0, &[], self.grid.cell_volume(), controls);
        let mut vals = Vec::new();
        let mut resid = Vec::new();
        let mut vecs = Vec::new();
        for i in 0..res.values.len().min(cap) {
            if res.values[i] < NEGATIVE_CUTOFF {
                vals.push(res.values[i]);
                resid.push(res.residuals[i]);
                vecs.push(res.vectors[i].clone());
            }
        }
        let converged = resid.iter().all(|&r| r <= EIGEN_RESIDUAL);
        (vals, resid, vecs, converged, res.iterations)
    }
}

pub fn negative_spectrum(problem: &LtProblem) -> Result<LtResult> {
    let solver = SpectrumSolver::new(problem.potential.grid(), problem.alpha)?;
    let v = problem.potential.real_parts();
    let (eigenvalues, residuals, eigenvectors, converged, iterations) =
        solver.solve(&v, problem.eig_cap, &problem.controls, None);
    let riesz = riesz_mean(&eigenvalues, problem.qprime)?;
    let rhs = lt_rhs(&problem.potential, problem.alpha, problem.qprime)?;
    Ok(LtResult {
        l_lower: rhs.map(|r| riesz / r),
        eigenvalues,
        residuals,
        eigenvectors,
        riesz_mean: riesz,
        rhs,
        converged,
        iterations,
    })
}

/// Σ |λ_n|^{q'} over eigenvalues that must all be negative.
pub fn riesz_mean(eigs: &[f64], qprime: f64) -> Result<f64> {
    if let Some(bad) = eigs.iter().find(|&&e| !(e < 0.0)) {
        return config(format!("Riesz mean needs negative eigenvalues, got {bad}"));
    }
    Ok(eigs.iter().map(|e| e.abs().powf(qprime)).sum())
}

/// (∫(V_− ∗ |x|^{−α}) V_−)^{q'/(2−α)}; `None` if V_− ≡ 0.
pub fn lt_rhs(v: &Field, alpha: f64, qprime: f64) -> Result<Option<f64>> {
    check_alpha(alpha)?;
    let neg: Vec<f64> = v.values().iter().map(|x| (-x.re).max(0.0)).collect();
    if neg.iter().all(|&x| x == 0.0) {
        return Ok(None);
    }
    let kernel = RieszKernel::shared(v.grid(), alpha)?;
    let inner = dot(&kernel.convolve(&neg), &neg) * v.grid().cell_volume();
    Ok(Some(inner.powf(qprime / (2.0 - alpha))))
}

/// (α/2)((2−α)/2)^{(2−α)/α}.
pub fn duality_target(alpha: f64) -> f64 {
    alpha / 2.0 * ((2.0 - alpha) / 2.0).powf((2.0 - alpha) / alpha)
}

/// (2−α)(q−1)/(αq), the power of 𝓛 in the duality identity.
pub fn duality_exponent(alpha: f64, q: SchattenIndex) -> f64 {
    if q.is_infinite() {
        (2.0 - alpha) / alpha
    } else {
        let qv = q.value();
        (2.0 - alpha) * (qv - 1.0) / (alpha * qv)
    }
}

/// 20 geometric points from β₀/2 to 2β₀ around β₀ = 2/α.
pub fn default_beta_grid(alpha: f64) -> Vec<f64> {
    let b0 = 2.0 / alpha;
    (0..20).map(|i| b0 * 0.5 * 4f64.powf(i as f64 / 19.0)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualityEntry {
    pub beta: f64,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub riesz_mean: f64,
    pub rhs: f64,
    pub l_lower: f64,
    pub product: f64,
    /// Riesz mean bound implied by K_est (diagnostic; K_est only bounds K from above).
    pub bound_from_k: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualityReport {
    pub alpha: f64,
    pub q: SchattenIndex,
    pub qprime: f64,
    pub k_est: f64,
    pub exponent: f64,
    pub target: f64,
    pub best_product: f64,
    pub best_beta: f64,
    /// best_product / target.
    pub saturation: f64,
    pub relative_error: f64,
    pub entries: Vec<DualityEntry>,
}

/// Evaluates P(β) = K_est · L_lower(−βρ_γ)^{(2−α)(q−1)/(αq)} on `betas`.
pub fn duality_check(gns: &GnsResult, betas: &[f64], eig_cap: usize, controls: &EigenControls) -> Result<DualityReport> {
    if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0)) {
        return config("β grid must be a non-empty list of positive numbers");
    }
    let alpha = gns.alpha;
    let q = gns.q;
    let qprime = if q.is_infinite() { 1.0 } else { q.dual() };
    let gamma = &gns.optimizer;
    let grid = *gamma.grid();
    let rho = gamma.density_values();
    let solver = SpectrumSolver::new(&grid, alpha)?;
    let kernel = RieszKernel::shared(&grid, alpha)?;
    let self_energy = dot(&kernel.convolve(&rho), &rho) * grid.cell_volume();
    let exponent = duality_exponent(alpha, q);
    let target = duality_target(alpha);
    let bound_pref = ((2.0 - alpha) / 2.0).powf(qprime)
        * (alpha / 2.0).powf(alpha * qprime / (2.0 - alpha))
        * gns.k_est.powf(-alpha * qprime / (2.0 - alpha));
    let mut sorted = betas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut entries = Vec::with_capacity(sorted.len());
    let mut warm: Option<Vec<Vec<Complex64>>> = None;
    for &beta in &sorted {
        let v: Vec<f64> = rho.iter().map(|r| -beta * r).collect();
        let (vals, resid, vecs, converged, _) = solver.solve(&v, eig_cap, controls, warm.as_deref());
        if !vecs.is_empty() {
            warm = Some(vecs);
        }
        let riesz = riesz_mean(&vals, qprime)?;
        let rhs = (beta * beta * self_energy).powf(qprime / (2.0 - alpha));
        let l = riesz / rhs;
        entries.push(DualityEntry {
            beta,
            product: gns.k_est * l.powf(exponent),
            bound_from_k: bound_pref * rhs,
            eigenvalues: vals,
            residuals: resid,
            riesz_mean: riesz,
            rhs,
            l_lower: l,
            converged,
        });
    }
    let best = entries.iter().max_by(|a, b| a.product.total_cmp(&b.product)).expect("non-empty β grid");
    Ok(DualityReport {
        alpha,
        q,
        qprime,
        k_est: gns.k_est,
        exponent,
        target,
        best_product: best.product,
        best_beta: best.beta,
        saturation: best.product / target,
        relative_error: (best.product - target).abs() / target,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riesz_mean_examples() {
        assert_eq!(riesz_mean(&[], 1.0).unwrap(), 0.0);
        assert_eq!(riesz_mean(&[-2.0], 1.0).unwrap(), 2.0);
        assert_eq!(riesz_mean(&[-1.0, -2.0], 2.0).unwrap(), 5.0);
        assert!(riesz_mean(&[-1.0, 0.5], 1.0).is_err());
    }

    #[test]
    fn duality_constants() {
        assert!((duality_target(1.0) - 0.25).abs() < 1e-15);
        assert!((duality_exponent(1.0, SchattenIndex::INFINITY) - 1.0).abs() < 1e-15);
        assert!((duality_exponent(1.0, SchattenIndex::new(2.0).unwrap()) - 0.5).abs() < 1e-15);
        let g = default_beta_grid(1.0);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[19] - 4.0).abs() < 1e-12);
    }
}
