//! Trapped relativistic Hartree–Fock problem
//!
//!   ℰ_K(γ) = Tr((√(−Δ+m²) + V) γ) − K ∫(ρ_γ ∗ |x|^{−1}) ρ_γ
//!
//! over rank-r projections γ (unit weights, 1 ≤ r ≤ N), the threshold probe
//! for K beyond the GNS constant, K sweeps towards the threshold and the
//! blow-up fits.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::linear_fit;
use crate::eigen::{lobpcg, EigenControls, LinearOperator};
use crate::error::{config, Error, Result};
use crate::field::{norm_squared, Field, FieldTag};
use crate::gns::{metric, orthonormalize, retract, tangent_project, GnsEngine, GnsResult};
use crate::grid::Grid;
use crate::kinetic::{KineticOperator, KineticSpec};
use crate::linalg::{axpy, axpy_re, combine, gram, hermitian_eigen, CMat};
use crate::resample::transfer;
use crate::riesz::{dot, RieszKernel};
use crate::state::{density_of, DensityOperator, OrthoFrame, SchattenIndex};

/// Smooth positive factor h(x) = scale·(1 + curvature·|x|²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothFactor {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub curvature: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SmoothFactor {
    fn default() -> Self {
        SmoothFactor { scale: 1.0, curvature: 0.0 }
    }
}

impl SmoothFactor {
    pub fn at(&self, x: [f64; 3]) -> f64 {
        self.scale * (1.0 + self.curvature * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
    }
}

/// V(x) = h(x) ∏_j |x − x_j|^{p_j} with 0 < p_j < 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialZeros {
    pub points: Vec<[f64; 3]>,
    pub exponents: Vec<f64>,
    #[serde(default)]
    pub factor: SmoothFactor,
}

impl PolynomialZeros {
    pub fn new(points: Vec<[f64; 3]>, exponents: Vec<f64>, factor: SmoothFactor) -> Result<Self> {
        let v = PolynomialZeros { points, exponents, factor };
        v.validate()?;
        Ok(v)
    }

    /// |x − a|^p.
    pub fn single(a: [f64; 3], p: f64) -> Result<Self> {
        PolynomialZeros::new(vec![a], vec![p], SmoothFactor::default())
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.exponents.len() {
            return config("potential needs one exponent per zero and at least one zero");
        }
        for &p in &self.exponents {
            if !(p > 0.0 && p < 1.0) {
                return config(format!("zero exponents must lie in (0, 1); got {p}"));
            }
        }
        if !(self.factor.scale > 0.0) || !(self.factor.curvature >= 0.0) {
            return config("smooth factor needs scale > 0 and curvature ≥ 0");
        }
        Ok(())
    }

    pub fn value(&self, x: [f64; 3]) -> f64 {
        let mut v = self.factor.at(x);
        for (a, p) in self.points.iter().zip(&self.exponents) {
            let d = [x[0] - a[0], x[1] - a[1], x[2] - a[2]];
            v *= (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).powf(0.5 * p);
        }
        v
    }

    /// Largest exponent p.
    pub fn p(&self) -> f64 {
        self.exponents.iter().cloned().fold(0.0, f64::max)
    }

    /// ι_j = h(x_j) ∏_{k≠j} |x_j − x_k|^{p_k}, the local coefficient at zero j.
    pub fn iota_at(&self, j: usize) -> f64 {
        let a = self.points[j];
        let mut v = self.factor.at(a);
        for (k, (b, p)) in self.points.iter().zip(&self.exponents).enumerate() {
            if k != j {
                let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                v *= (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).powf(0.5 * p);
            }
        }
        v
    }

    /// Zeros with the largest exponent and the smallest coefficient among them.
    pub fn blowup_set(&self) -> Vec<usize> {
        let p = self.p();
        let cand: Vec<usize> = (0..self.points.len()).filter(|&j| self.exponents[j] == p).collect();
        let iota = cand.iter().map(|&j| self.iota_at(j)).fold(f64::INFINITY, f64::min);
        cand.into_iter().filter(|&j| (self.iota_at(j) - iota).abs() <= 1e-12 * iota).collect()
    }

    pub fn iota(&self) -> f64 {
        self.blowup_set().iter().map(|&j| self.iota_at(j)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub enum PotentialSpec {
    Sampled(Field),
    PolynomialZeros(PolynomialZeros),
}

impl PotentialSpec {
    /// Samples V at `center + x` for the grid points x.
    pub fn sample(&self, grid: &Grid, center: [f64; 3]) -> Result<Vec<f64>> {
        match self {
            PotentialSpec::Sampled(f) => {
                f.grid().check_same(grid)?;
                if center != [0.0; 3] {
                    return config("a sampled potential cannot be evaluated on a shifted box");
                }
                Ok(f.real_parts())
            }
            PotentialSpec::PolynomialZeros(p) => {
                let xs = grid.coords();
                let mut out = Vec::with_capacity(grid.len());
                for &x in &xs {
                    for &y in &xs {
                        for &z in &xs {
                            out.push(p.value([center[0] + x, center[1] + y, center[2] + z]));
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn polynomial(&self) -> Option<&PolynomialZeros> {
        match self {
            PotentialSpec::PolynomialZeros(p) => Some(p),
            PotentialSpec::Sampled(_) => None,
        }
    }

    /// Rejects negative samples; returns a warning when the boundary values
    /// are not at least ten times the interior median.
    pub fn trapping_check(&self, grid: &Grid, center: [f64; 3]) -> Result<Option<String>> {
        let v = self.sample(grid, center)?;
        if let Some(bad) = v.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::Input(format!("trapping potential must be nonnegative, found {bad}")));
        }
        let n = grid.points();
        let mut boundary = f64::INFINITY;
        let mut interior = Vec::new();
        for idx in 0..v.len() {
            let (i, j, k) = grid.unindex(idx);
            let edge = [i, j, k].contains(&0);
            if edge {
                boundary = boundary.min(v[idx]);
            } else if [i, j, k].iter().all(|&s| s >= n / 4 && s < 3 * n / 4) {
                interior.push(v[idx]);
            }
        }
        interior.sort_by(|a, b| a.total_cmp(b));
        let median = interior.get(interior.len() / 2).cloned().unwrap_or(0.0);
        if boundary < 10.0 * median {
            return Ok(Some(format!(
                "weak trapping: boundary minimum {boundary:.3} is below 10× the interior median {median:.3}"
            )));
        }
        Ok(None)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrappedControls {
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Energies below this value stop the minimization as unbounded.
    pub energy_floor: f64,
}

impl Default for TrappedControls {
    fn default() -> Self {
        TrappedControls { tol: 1e-5, max_iter: 1500, restarts: 2, seed: 1, energy_floor: -1e6 }
    }
}

#[derive(Clone, Debug)]
pub struct TrappedProblem {
    pub n_cap: usize,
    pub coupling: f64,
    pub mass: f64,
    pub potential: PotentialSpec,
    pub grid: Grid,
    /// Physical position of the box centre.
    pub center: [f64; 3],
    pub controls: TrappedControls,
}

impl TrappedProblem {
    pub fn new(
        n_cap: usize,
        coupling: f64,
        mass: f64,
        potential: PotentialSpec,
        grid: Grid,
        controls: TrappedControls,
    ) -> Result<Self> {
        if n_cap == 0 {
            return config("particle cap N must be at least 1");
        }
        if !(coupling > 0.0) || !coupling.is_finite() {
            return config(format!("coupling K must be positive, got {coupling}"));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return config(format!("mass must be nonnegative, got {mass}"));
        }
        if let PotentialSpec::PolynomialZeros(p) = &potential {
            p.validate()?;
        }
        Ok(TrappedProblem { n_cap, coupling, mass, potential, grid, center: [0.0; 3], controls })
    }

    pub fn with_center(mut self, center: [f64; 3]) -> Self {
        self.center = center;
        self
    }

    pub fn with_grid(mut self, grid: Grid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }
}

/// ℰ_K split into its parts.
#[derive(Clone, Debug)]
pub struct HfEvaluation {
    pub kinetic: Vec<f64>,
    pub potential: Vec<f64>,
    pub interaction: f64,
    pub energy: f64,
    pub pot: Vec<f64>,
}

/// The functional on one grid with sampled V.
pub struct HfFunctional {
    grid: Grid,
    kin: KineticOperator,
    kernel: Arc<RieszKernel>,
    v: Vec<f64>,
    coupling: f64,
}

impl HfFunctional {
    pub fn new(grid: &Grid, mass: f64, v: Vec<f64>, coupling: f64) -> Result<Self> {
        if v.len() != grid.len() {
            return Err(Error::GridMismatch("potential length does not match the grid".into()));
        }
        Ok(HfFunctional {
            grid: *grid,
            kin: KineticOperator::new(grid, &KineticSpec::new(mass, false)?),
            kernel: RieszKernel::shared(grid, 1.0)?,
            v,
            coupling,
        })
    }

    pub fn for_problem(problem: &TrappedProblem) -> Result<Self> {
        let v = problem.potential.sample(&problem.grid, problem.center)?;
        HfFunctional::new(&problem.grid, problem.mass, v, problem.coupling)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn evaluate(&self, u: &[Vec<Complex64>]) -> HfEvaluation {
        let dv = self.grid.cell_volume();
        let kinetic: Vec<f64> = u.iter().map(|ui| self.kin.form(ui)).collect();
        let potential: Vec<f64> =
            u.iter().map(|ui| ui.iter().zip(&self.v).map(|(a, v)| v * a.norm_sqr()).sum::<f64>() * dv).collect();
        let rho = density_of(u, &vec![1.0; u.len()]);
        let pot = if rho.iter().all(|&r| r == 0.0) { vec![0.0; rho.len()] } else { self.kernel.convolve(&rho) };
        let interaction = dot(&pot, &rho) * dv;
        let energy = kinetic.iter().sum::<f64>() + potential.iter().sum::<f64>() - self.coupling * interaction;
        HfEvaluation { kinetic, potential, interaction, energy, pot }
    }

    /// H_V u_i = (√(−Δ+m²) + V − 2K ρ∗|x|^{−1}) u_i and M_ij = ⟨u_i, H_V u_j⟩.
    pub fn apply_h(&self, u: &[Vec<Complex64>], ev: &HfEvaluation) -> (Vec<Vec<Complex64>>, CMat) {
        let hu: Vec<Vec<Complex64>> = u.iter().map(|ui| self.apply_one(ui, &ev.pot)).collect();
        let m = gram(u, &hu) * Complex64::new(self.grid.cell_volume(), 0.0);
        (hu, m)
    }

    fn apply_one(&self, x: &[Complex64], pot: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); x.len()];
        self.kin.apply(x, &mut out);
        for (((o, v), w), p) in out.iter_mut().zip(x).zip(&self.v).zip(pot) {
            *o += v * (w - 2.0 * self.coupling * p);
        }
        out
    }
}

/// ℰ_K of a unit-weight frame.
pub fn hf_energy(frame: &OrthoFrame, problem: &TrappedProblem) -> Result<f64> {
    problem.grid.check_same(frame.grid())?;
    Ok(HfFunctional::for_problem(problem)?.evaluate(frame.orbitals()).energy)
}

/// ε = 1 / Tr(√−Δγ) for unit weights.
pub fn epsilon_of(grid: &Grid, u: &[Vec<Complex64>]) -> f64 {
    let kin = KineticOperator::new(grid, &KineticSpec::massless());
    1.0 / u.iter().map(|ui| kin.form(ui)).sum::<f64>()
}

/// Density centroid restricted to twice the half-mass radius, iterated.
pub fn robust_centroid(grid: &Grid, rho: &[f64]) -> [f64; 3] {
    let mut c = [0.0; 3];
    let pos: Vec<[f64; 3]> = (0..rho.len()).map(|i| grid.position(i)).collect();
    for pass in 0..4 {
        let mut radii: Vec<(f64, f64)> = pos
            .iter()
            .zip(rho)
            .map(|(x, r)| (((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt(), *r))
            .collect();
        let window = if pass == 0 {
            f64::INFINITY
        } else {
            radii.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = radii.iter().map(|p| p.1).sum();
            let mut acc = 0.0;
            let mut half = radii.last().map(|p| p.0).unwrap_or(0.0);
            for p in &radii {
                acc += p.1;
                if acc >= 0.5 * total {
                    half = p.0;
                    break;
                }
            }
            2.0 * half.max(grid.spacing())
        };
        let mut m = 0.0;
        let mut s = [0.0; 3];
        for (x, r) in pos.iter().zip(rho) {
            let d = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt();
            if d <= window {
                m += r;
                for a in 0..3 {
                    s[a] += r * x[a];
                }
            }
        }
        if m > 0.0 {
            c = [s[0] / m, s[1] / m, s[2] / m];
        }
    }
    c
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AufbauReport {
    pub verified: bool,
    pub multipliers: Vec<f64>,
    /// Lowest eigenvalue of H_V on the complement of the frame.
    pub complement_lowest: f64,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct TrappedResult {
    pub energy: f64,
    pub frame: OrthoFrame,
    pub rank: usize,
    pub multipliers: Vec<f64>,
    pub epsilon: f64,
    pub aufbau: AufbauReport,
    pub converged: bool,
    pub unbounded: bool,
    pub residual: f64,
    pub iterations: usize,
    /// Physical centroid z.
    pub centroid: [f64; 3],
    /// Best energy found for each rank tried.
    pub rank_energies: Vec<(usize, f64)>,
    /// Energies of the restarts at the selected rank.
    pub restart_energies: Vec<f64>,
    pub warning: Option<String>,
}

impl TrappedResult {
    pub fn aufbau_verified(&self) -> bool {
        self.aufbau.verified
    }
}

struct Descent {
    u: Vec<Vec<Complex64>>,
    energy: f64,
    residual: f64,
    converged: bool,
    unbounded: bool,
    iterations: usize,
}

/// Preconditioned Riemannian CG for ℰ_K over orthonormal frames.
fn descend(func: &HfFunctional, u0: Vec<Vec<Complex64>>, controls: &TrappedControls) -> Result<Descent> {
    let dv = func.grid.cell_volume();
    let mut u = orthonormalize(u0, dv)?;
    let mut ev = func.evaluate(&u);
    let mut dir: Vec<Vec<Complex64>> = Vec::new();
    let mut prev_gpg = 0.0;
    let mut prev_pg: Vec<Vec<Complex64>> = Vec::new();
    let mut tau = 1.0;
    let mut fails = 0;
    let mult = func.kin.multiplier();
    let fft = func.kin.fft().clone();
    for iter in 0..=controls.max_iter {
        let (hu, m) = func.apply_h(&u, &ev);
        let r = u.len();
        let mut g = hu.clone();
        for i in 0..r {
            for j in 0..r {
                axpy(-m[(j, i)], &u[j], &mut g[i]);
            }
        }
        let residual = g.iter().map(|gi| (norm_squared(gi) * dv).sqrt()).fold(0.0, f64::max);
        if residual < controls.tol || ev.energy < controls.energy_floor || iter == controls.max_iter || fails >= 3 {
            return Ok(Descent {
                converged: residual < controls.tol,
                unbounded: ev.energy < controls.energy_floor,
                u,
                energy: ev.energy,
                residual,
                iterations: iter,
            });
        }
        // (|ξ|-ish + σ)^{-1} per orbital, σ from the orbital's own energy scale
        let mut pg: Vec<Vec<Complex64>> = g
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                let sigma = 0.5 * (m[(i, i)].re.abs() + ev.kinetic[i]).max(1e-3);
                let mut buf = gi.clone();
                fft.forward(&mut buf);
                for (v, mm) in buf.iter_mut().zip(mult) {
                    *v /= mm + sigma;
                }
                fft.inverse(&mut buf);
                buf
            })
            .collect();
        tangent_project(&u, &mut pg, dv);
        let gpg = metric(&g, &pg, dv);
        let mut beta = 0.0;
        if !dir.is_empty() && iter % 50 != 0 {
            let cross = metric(&g, &prev_pg, dv);
            beta = ((gpg - cross) / prev_gpg).max(0.0);
        }
        let mut d: Vec<Vec<Complex64>> = pg.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        if beta > 0.0 {
            let mut old = dir.clone();
            tangent_project(&u, &mut old, dv);
            for (di, oi) in d.iter_mut().zip(&old) {
                axpy_re(beta, oi, di);
            }
        }
        // δℰ = 2 Re⟨H u, δu⟩, so the slope along d is ⟨g, d⟩ in the frame metric
        let mut slope0 = metric(&g, &d, dv);
        if !(slope0 < 0.0) {
            d = pg.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
            slope0 = -gpg;
        }
        prev_gpg = gpg;
        prev_pg = pg;
        let e0 = ev.energy;
        let armijo = |e: f64, t: f64| e <= e0 + 1e-4 * t * slope0 && e < e0;
        let mut accepted = None;
        let mut t = tau;
        for _ in 0..12 {
            let u1 = retract(&u, &d, t, dv)?;
            let ev1 = func.evaluate(&u1);
            let a = (ev1.energy - e0 - slope0 * t) / (t * t);
            let mut best = (t, u1, ev1);
            if a > 0.0 {
                let t2 = (-slope0 / (2.0 * a)).clamp(0.05 * t, 8.0 * t);
                if (t2 / t - 1.0).abs() > 0.05 {
                    let u2 = retract(&u, &d, t2, dv)?;
                    let ev2 = func.evaluate(&u2);
                    if ev2.energy < best.2.energy {
                        best = (t2, u2, ev2);
                    }
                }
            }
            if armijo(best.2.energy, best.0) {
                accepted = Some(best);
                break;
            }
            t *= 0.25;
        }
        match accepted {
            Some((t, u1, ev1)) => {
                tau = t;
                u = u1;
                ev = ev1;
                dir = d;
                fails = 0;
            }
            None => {
                dir.clear();
                tau = 1.0;
                fails += 1;
            }
        }
    }
    unreachable!("loop returns at max_iter")
}

/// H_V with a frozen mean field, for the complement eigenvalue.
struct FrozenH<'a> {
    func: &'a HfFunctional,
    pot: &'a [f64],
}

impl LinearOperator for FrozenH<'_> {
    fn apply(&mut self, x: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(&self.func.apply_one(x, self.pot));
    }

    fn precondition(&mut self, r: &[Complex64], shift: f64) -> Vec<Complex64> {
        let sigma = shift.abs().max(0.1);
        let mut buf = r.to_vec();
        let fft = self.func.kin.fft();
        fft.forward(&mut buf);
        for (v, m) in buf.iter_mut().zip(self.func.kin.multiplier()) {
            *v /= m + sigma;
        }
        fft.inverse(&mut buf);
        buf
    }
}

/// Checks that the frame spans the lowest eigenvectors of H_V.
pub fn aufbau_check(func: &HfFunctional, u: &[Vec<Complex64>], n_cap: usize) -> (AufbauReport, Vec<Vec<Complex64>>) {
    let ev = func.evaluate(u);
    let (_, m) = func.apply_h(u, &ev);
    let (mu, w) = hermitian_eigen(&m);
    let rotated = combine(u, &w);
    let dv = func.grid.cell_volume();
    // start from the frame's residual directions plus a smooth guess
    let mut x0: Vec<Vec<Complex64>> = Vec::new();
    let (hu, _) = func.apply_h(&rotated, &ev);
    for (i, h) in hu.iter().enumerate() {
        let mut v = h.clone();
        axpy(Complex64::new(-mu[i], 0.0), &rotated[i], &mut v);
        if (norm_squared(&v) * dv).sqrt() > 1e-12 {
            x0.push(v);
        }
    }
    let xs = func.grid.coords();
    let s = (func.grid.box_length() / 10.0).max(func.grid.spacing());
    let mut guess = Vec::with_capacity(func.grid.len());
    for &x in &xs {
        for &y in &xs {
            for &z in &xs {
                guess.push(Complex64::new((x / s) * (-(x * x + y * y + z * z) / (2.0 * s * s)).exp(), 0.0));
            }
        }
    }
    x0.insert(0, guess);
    x0.truncate(2);
    let mut op = FrozenH { func, pot: &ev.pot };
    let res = lobpcg(&mut op, x0, &rotated, dv, &EigenControls { tol: 1e-7, max_iter: 300 });
    let comp = res.values[0];
    let r = u.len();
    let mut notes = Vec::new();
    let mut ok = true;
    if comp < mu[r - 1] - 1e-6 {
        ok = false;
        notes.push(format!("complement eigenvalue {comp:.8} lies below μ_r = {:.8}", mu[r - 1]));
    }
    if r < n_cap && !(comp > 0.0) {
        ok = false;
        notes.push(format!("rank {r} < N but the next eigenvalue {comp:.8} is not positive"));
    }
    if r >= 2 && !(mu[0] < mu[1]) {
        ok = false;
        notes.push("lowest multiplier is degenerate".into());
    }
    if !res.converged {
        notes.push(format!("complement eigen-solve residual {:.2e}", res.residuals[0]));
    }
    (AufbauReport { verified: ok, multipliers: mu, complement_lowest: comp, notes }, rotated)
}

/// Lowest `r` eigenvectors of √(−Δ+m²) + V, used as starting frames.
fn one_body_frame(func: &HfFunctional, r: usize) -> Vec<Vec<Complex64>> {
    let zero = vec![0.0; func.grid.len()];
    let xs = func.grid.coords();
    // width from the potential: where V reaches twice its minimum plus one
    let s = (func.grid.box_length() / 12.0).max(2.0 * func.grid.spacing());
    let x0: Vec<Vec<Complex64>> = (0..r + 1)
        .map(|m| {
            let mut v = Vec::with_capacity(func.grid.len());
            for &x in &xs {
                for &y in &xs {
                    for &z in &xs {
                        let p = match m {
                            0 => 1.0,
                            1 => x / s,
                            2 => y / s,
                            3 => z / s,
                            _ => (x * y + 0.3 * m as f64 * z) / (s * s),
                        };
                        v.push(Complex64::new(p * (-(x * x + y * y + z * z) / (2.0 * s * s)).exp(), 0.0));
                    }
                }
            }
            v
        })
        .collect();
    let mut op = FrozenH { func, pot: &zero };
    let coupling_free = HfFunctional { grid: func.grid, kin: func.kin.clone(), kernel: func.kernel.clone(), v: func.v.clone(), coupling: 0.0 };
    op.func = &coupling_free;
    let res = lobpcg(&mut op, x0, &[], func.grid.cell_volume(), &EigenControls { tol: 1e-5, max_iter: 200 });
    res.vectors.into_iter().take(r).collect()
}

fn perturbed(grid: &Grid, u: &[Vec<Complex64>], seed: u64, amplitude: f64) -> Vec<Vec<Complex64>> {
    if amplitude == 0.0 {
        return u.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = grid.coords();
    let s = grid.box_length() / 10.0;
    u.iter()
        .map(|ui| {
            let c = [rng.gen_range(-0.5..0.5) * s, rng.gen_range(-0.5..0.5) * s, rng.gen_range(-0.5..0.5) * s];
            let k = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let scale = ui.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let mut out = ui.clone();
            let n = grid.points();
            for i in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let d = [xs[i] - c[0], xs[j] - c[1], xs[l] - c[2]];
                        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                        let bump = (1.0 + (k[0] * d[0] + k[1] * d[1] + k[2] * d[2]) / s) * (-r2 / (2.0 * s * s)).exp();
                        out[(i * n + j) * n + l] += Complex64::new(amplitude * scale * bump, 0.0);
                    }
                }
            }
            out
        })
        .collect()
}

fn finish_trapped(
    problem: &TrappedProblem,
    func: &HfFunctional,
    d: Descent,
    rank_energies: Vec<(usize, f64)>,
    restart_energies: Vec<f64>,
    warning: Option<String>,
) -> Result<TrappedResult> {
    let (aufbau, rotated) = aufbau_check(func, &d.u, problem.n_cap);
    let rho = density_of(&rotated, &vec![1.0; rotated.len()]);
    let c = robust_centroid(&problem.grid, &rho);
    let epsilon = epsilon_of(&problem.grid, &rotated);
    Ok(TrappedResult {
        energy: d.energy,
        rank: rotated.len(),
        multipliers: aufbau.multipliers.clone(),
        frame: OrthoFrame::from_raw(problem.grid, rotated),
        epsilon,
        aufbau,
        converged: d.converged,
        unbounded: d.unbounded,
        residual: d.residual,
        iterations: d.iterations,
        centroid: [problem.center[0] + c[0], problem.center[1] + c[1], problem.center[2] + c[2]],
        rank_energies,
        restart_energies,
        warning,
    })
}

/// Minimizes over ranks 1..N with seeded restarts; returns the lowest energy.
pub fn minimize_trapped(problem: &TrappedProblem) -> Result<TrappedResult> {
    let warning = problem.potential.trapping_check(&problem.grid, problem.center)?;
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let func = HfFunctional::for_problem(problem)?;
    let ctl = &problem.controls;
    let base = one_body_frame(&func, problem.n_cap);
    let mut rank_energies = Vec::new();
    let mut best: Option<(Descent, Vec<f64>)> = None;
    for r in 1..=problem.n_cap {
        let mut runs: Vec<Descent> = Vec::new();
        for k in 0..ctl.restarts.max(1) {
            let seed = ctl.seed.wrapping_add(1000 * r as u64 + k as u64);
            let start = perturbed(&problem.grid, &base[..r], seed, if k == 0 { 0.0 } else { 0.3 });
            let d = descend(&func, start, ctl)?;
            let unbounded = d.unbounded;
            runs.push(d);
            if unbounded {
                break;
            }
        }
        let energies: Vec<f64> = runs.iter().map(|d| d.energy).collect();
        let top = runs
            .into_iter()
            .min_by(|a, b| (!a.converged, a.energy).partial_cmp(&(!b.converged, b.energy)).unwrap())
            .unwrap();
        rank_energies.push((r, top.energy));
        let better = match &best {
            None => true,
            Some((b, _)) => top.energy < b.energy - 1e-12,
        };
        let unbounded = top.unbounded;
        if better {
            best = Some((top, energies));
        }
        if unbounded {
            break;
        }
    }
    let (d, energies) = best.expect("at least rank 1");
    finish_trapped(problem, &func, d, rank_energies, energies, warning)
}

/// Continues from a given frame at its own rank (no rank scan).
pub fn minimize_trapped_from(problem: &TrappedProblem, start: &OrthoFrame) -> Result<TrappedResult> {
    let warning = problem.potential.trapping_check(&problem.grid, problem.center)?;
    let func = HfFunctional::for_problem(problem)?;
    let u0: Vec<Vec<Complex64>> =
        start.orbitals().iter().map(|u| transfer(start.grid(), u, &problem.grid)).collect();
    let d = descend(&func, u0, &problem.controls)?;
    let e = d.energy;
    finish_trapped(problem, &func, d, vec![(start.len(), e)], vec![e], warning)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbePoint {
    pub rbar: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub coupling: f64,
    pub center: [f64; 3],
    pub points: Vec<ProbePoint>,
    pub unbounded: bool,
    pub floor: f64,
    /// The energy along the ladder has a minimum away from both ends.
    pub interior_minimum: bool,
    pub trials: usize,
}

/// Smooth cut-off: 1 inside `r`, cos² taper to 0 at 2r.
fn cutoff(d: f64, r: f64) -> f64 {
    if d <= r {
        1.0
    } else if d >= 2.0 * r {
        0.0
    } else {
        (0.5 * PI * (d - r) / r).cos().powi(2)
    }
}

/// Energies of the cut-off, dilated trial states
/// u_i(x) = Löwdin[φ(x − x₀) R̄^{3/2} Q_i(R̄(x − x₀))] built from the GNS
/// optimizer Q with unit weights, for R̄ on a doubling ladder.
pub fn divergence_probe(
    problem: &TrappedProblem,
    q: &DensityOperator,
    x0: [f64; 3],
    max_trials: usize,
) -> Result<ProbeReport> {
    let pot = problem
        .potential
        .polynomial()
        .ok_or_else(|| Error::Config("the divergence probe needs an analytic (polynomial-zeros) potential".into()))?;
    let g0 = *q.grid();
    let rc = problem.grid.box_length() / 4.0;
    let mut points = Vec::new();
    let mut unbounded = false;
    let mut floor = f64::NAN;
    let mut rbar = 1.0;
    for trial in 0..max_trials {
        let grid = g0.rescaled(1.0 / rbar)?;
        let amp = rbar.powf(1.5);
        let xs = grid.coords();
        let n = grid.points();
        let mut v = Vec::with_capacity(grid.len());
        let mut phi = Vec::with_capacity(grid.len());
        for &x in &xs {
            for &y in &xs {
                for &z in &xs {
                    v.push(pot.value([x0[0] + x, x0[1] + y, x0[2] + z]));
                    phi.push(cutoff((x * x + y * y + z * z).sqrt(), rc));
                }
            }
        }
        let raw: Vec<Vec<Complex64>> =
            q.frame().orbitals().iter().map(|u| u.iter().zip(&phi).map(|(a, f)| a * (amp * f)).collect()).collect();
        let u = orthonormalize(raw, grid.cell_volume())?;
        let func = HfFunctional::new(&grid, problem.mass, v, problem.coupling)?;
        let e = func.evaluate(&u).energy;
        let _ = n;
        points.push(ProbePoint { rbar, energy: e });
        if trial == 0 {
            floor = -1e3 * e.abs();
        } else if e < floor {
            unbounded = true;
            break;
        }
        rbar *= 2.0;
        if rbar > 1e12 {
            break;
        }
    }
    let emin = points.iter().enumerate().min_by(|a, b| a.1.energy.total_cmp(&b.1.energy)).map(|p| p.0).unwrap_or(0);
    Ok(ProbeReport {
        coupling: problem.coupling,
        center: x0,
        interior_minimum: emin > 0 && emin + 1 < points.len(),
        trials: points.len(),
        points,
        unbounded,
        floor,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub coupling: f64,
    pub energy: f64,
    pub epsilon: f64,
    pub rank: usize,
    pub multipliers: Vec<f64>,
    pub centroid: [f64; 3],
    pub box_length: f64,
    pub spacing: f64,
    pub converged: bool,
    pub aufbau_verified: bool,
    pub residual: f64,
    /// GNS ratio (α = 1, q = ∞) of the minimizer.
    pub gns_ratio: f64,
}

/// Box rule for sweeps: L = factor·ε, predicted from earlier points.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdaptiveBox {
    pub factor: f64,
    pub points: usize,
}

fn record_of(res: &TrappedResult, problem: &TrappedProblem) -> Result<SweepRecord> {
    let engine = GnsEngine::new(&problem.grid, 1.0, SchattenIndex::INFINITY)?;
    let ratio = engine.evaluate(res.frame.orbitals(), &vec![1.0; res.rank])?.ratio();
    Ok(SweepRecord {
        coupling: problem.coupling,
        energy: res.energy,
        epsilon: res.epsilon,
        rank: res.rank,
        multipliers: res.multipliers.clone(),
        centroid: res.centroid,
        box_length: problem.grid.box_length(),
        spacing: problem.grid.spacing(),
        converged: res.converged,
        aufbau_verified: res.aufbau.verified,
        residual: res.residual,
        gns_ratio: ratio,
    })
}

/// Warm-started minimizations along an ascending K list. With `adaptive`
/// the box follows the predicted ε (polynomial potentials only); `k_ref`
/// is the threshold used for that prediction.
pub fn sweep_k(
    template: &TrappedProblem,
    ks: &[f64],
    adaptive: Option<AdaptiveBox>,
    k_ref: f64,
) -> Result<Vec<SweepRecord>> {
    if ks.windows(2).any(|w| w[1] < w[0]) {
        return config("K list must be ascending");
    }
    if adaptive.is_some() && template.potential.polynomial().is_none() {
        return config("an adaptive box needs a polynomial-zeros potential");
    }
    let p_exp = template.potential.polynomial().map(|p| p.p()).unwrap_or(0.5);
    let mut records: Vec<SweepRecord> = Vec::new();
    let mut prev: Option<(TrappedResult, TrappedProblem)> = None;
    for (idx, &k) in ks.iter().enumerate() {
        if let (Some(last), Some(_)) = (records.last(), prev.as_ref()) {
            if last.coupling == k {
                records.push(last.clone());
                continue;
            }
        }
        let mut problem = template.clone().with_coupling(k);
        if let Some(rule) = adaptive {
            let eps = predict_epsilon(&records, k, k_ref, p_exp);
            if let Some(eps) = eps {
                let grid = Grid::new(rule.factor * eps, rule.points)?;
                problem = problem.with_grid(grid);
            }
            if let Some(last) = records.last() {
                problem = problem.with_center(last.centroid);
            }
        }
        let mut res = match &prev {
            Some((r, _)) => {
                let shifted = shift_frame(r, &problem)?;
                minimize_trapped_from(&problem, &shifted)?
            }
            None => minimize_trapped(&problem)?,
        };
        if let (Some(rule), None) = (adaptive, prev.as_ref()) {
            // first point: re-solve until the box matches the measured ε
            for _ in 0..4 {
                let target = rule.factor * res.epsilon;
                if (problem.grid.box_length() / target - 1.0).abs() < 0.05 {
                    break;
                }
                let p2 = problem.clone().with_grid(Grid::new(target, rule.points)?).with_center(res.centroid);
                let shifted = shift_frame(&res, &p2)?;
                res = minimize_trapped_from(&p2, &shifted)?;
                problem = p2;
            }
        }
        if idx > 0 && idx % 5 == 0 {
            // cold restart to catch rank transitions
            let cold = minimize_trapped(&problem)?;
            if cold.energy < res.energy - 1e-10 {
                res = cold;
            }
        }
        records.push(record_of(&res, &problem)?);
        prev = Some((res, problem));
    }
    Ok(records)
}

/// Moves a solved frame into the box of `target` (re-centred and resampled).
fn shift_frame(res: &TrappedResult, target: &TrappedProblem) -> Result<OrthoFrame> {
    let src = res.frame.grid();
    let old_center = [res.centroid[0], res.centroid[1], res.centroid[2]];
    // the solved state lives around its centroid; its box centre is implied by
    // centroid − (grid centroid)
    let rho = density_of(res.frame.orbitals(), &vec![1.0; res.rank]);
    let local = robust_centroid(src, &rho);
    let src_center = [old_center[0] - local[0], old_center[1] - local[1], old_center[2] - local[2]];
    let offset = [
        target.center[0] - src_center[0],
        target.center[1] - src_center[1],
        target.center[2] - src_center[2],
    ];
    let fft = crate::fft::Fft3::new(src.points());
    let moved: Vec<Vec<Complex64>> = res
        .frame
        .orbitals()
        .iter()
        .map(|u| crate::resample::translate(src, &fft, u, offset))
        .map(|u| transfer(src, &u, &target.grid))
        .collect();
    Ok(OrthoFrame::from_raw(target.grid, orthonormalize(moved, target.grid.cell_volume())?))
}

/// ε for the next K from a power-law through the previous records.
fn predict_epsilon(records: &[SweepRecord], k: f64, k_ref: f64, p: f64) -> Option<f64> {
    let last = records.last()?;
    let gap = |kk: f64| (k_ref - kk).max(1e-12 * k_ref);
    let expo = if records.len() >= 2 {
        let a = &records[records.len() - 2];
        let e = (last.epsilon / a.epsilon).ln() / (gap(last.coupling) / gap(a.coupling)).ln();
        if e.is_finite() && e > 0.05 && e < 3.0 {
            e
        } else {
            1.0 / (p + 1.0)
        }
    } else {
        1.0 / (p + 1.0)
    };
    Some(last.epsilon * (gap(k) / gap(last.coupling)).powf(expo))
}

pub fn write_sweep_csv(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut s = String::from("K,E,epsilon,rank,z_x,z_y,z_z,box_length,converged,aufbau,residual,gns_ratio\n");
    for r in records {
        s.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{},{:.6e},{:.6e},{:.6e},{:.6e},{},{},{:.3e},{:.12e}\n",
            r.coupling,
            r.energy,
            r.epsilon,
            r.rank,
            r.centroid[0],
            r.centroid[1],
            r.centroid[2],
            r.box_length,
            r.converged,
            r.aufbau_verified,
            r.residual,
            r.gns_ratio
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// κ̄ = inf_y ∫|x + y|^p ρ(x) dx and its minimizer y*.
pub fn compute_kappa_bar(rho: &Field, p: f64) -> Result<(f64, [f64; 3])> {
    if !(p > 0.0) {
        return config(format!("moment exponent must be positive, got {p}"));
    }
    rho.check_density(1e-10)?;
    let grid = rho.grid();
    let r = rho.real_parts();
    let dv = grid.cell_volume();
    let pos: Vec<[f64; 3]> = (0..r.len()).map(|i| grid.position(i)).collect();
    let moment = |y: [f64; 3]| -> f64 {
        pos.iter()
            .zip(&r)
            .map(|(x, w)| {
                let d = [x[0] + y[0], x[1] + y[1], x[2] + y[2]];
                w * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).powf(0.5 * p)
            })
            .sum::<f64>()
            * dv
    };
    // coarse search on grid shifts around −centroid, then compass refinement
    let c = robust_centroid(grid, &r);
    let h = grid.spacing();
    let mut best = ([-c[0], -c[1], -c[2]], f64::INFINITY);
    for i in -3i32..=3 {
        for j in -3i32..=3 {
            for k in -3i32..=3 {
                let y = [-c[0] + i as f64 * h, -c[1] + j as f64 * h, -c[2] + k as f64 * h];
                let m = moment(y);
                if m < best.1 {
                    best = (y, m);
                }
            }
        }
    }
    let mut step = 0.5 * h;
    while step > 1e-4 * h {
        let mut moved = false;
        for axis in 0..3 {
            for sgn in [-1.0, 1.0] {
                let mut y = best.0;
                y[axis] += sgn * step;
                let m = moment(y);
                if m < best.1 {
                    best = (y, m);
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    Ok((best.1, best.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupFit {
    pub records_used: usize,
    pub k_inf_est: f64,
    pub k_gns: f64,
    pub energy: PowerFit,
    pub epsilon: PowerFit,
    /// Fits with K∞ pinned to the GNS value, for comparison.
    pub energy_pinned: PowerFit,
    pub epsilon_pinned: PowerFit,
    pub reliable: bool,
    pub p: f64,
    pub iota: f64,
    pub kappa_bar: f64,
    pub y_star: [f64; 3],
    pub interaction: f64,
    pub expected_energy_exponent: f64,
    pub expected_epsilon_exponent: f64,
    /// Closed-form prefactors of E and ε in powers of (K∞ − K).
    pub predicted_energy_prefactor: f64,
    pub predicted_epsilon_prefactor: f64,
    /// Fitted prefactors at the expected exponents.
    pub fitted_energy_prefactor: f64,
    pub fitted_epsilon_prefactor: f64,
    /// Largest |z − z₀| in units of the local grid spacing.
    pub centroid_cells: f64,
    pub z0: [f64; 3],
    /// (z − z₀)/ε of the record closest to the threshold.
    pub scaled_offset: [f64; 3],
}

fn power_fit(ks: &[f64], ys: &[f64], k_inf: f64) -> PowerFit {
    let pts: Vec<(f64, f64)> = ks.iter().zip(ys).map(|(k, y)| ((k_inf - k).ln(), y.ln())).collect();
    let (slope, r2) = linear_fit(&pts);
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    PowerFit { exponent: slope, prefactor: (my - slope * mx).exp(), r_squared: r2 }
}

fn pinned_prefactor(ks: &[f64], ys: &[f64], k_inf: f64, e: f64) -> f64 {
    let m = ks.len() as f64;
    (ks.iter().zip(ys).map(|(k, y)| y.ln() - e * (k_inf - k).ln()).sum::<f64>() / m).exp()
}

/// Unit-weight GNS optimizer dilated to Tr(√−Δγ) = 1, and its density.
pub fn unit_trace_density(gns: &GnsResult) -> Result<(Field, f64)> {
    let g = &gns.optimizer;
    let kin = KineticOperator::new(g.grid(), &KineticSpec::massless());
    let t: f64 = g.frame().orbitals().iter().map(|u| kin.form(u)).sum();
    let lambda = 1.0 / t;
    let grid = g.grid().rescaled(1.0 / lambda)?;
    let rho: Vec<f64> = density_of(g.frame().orbitals(), &vec![1.0; g.len()]).iter().map(|r| r * lambda.powi(3)).collect();
    let engine = GnsEngine::new(&grid, 1.0, SchattenIndex::INFINITY)?;
    let orbitals: Vec<Vec<Complex64>> =
        g.frame().orbitals().iter().map(|u| u.iter().map(|v| v * lambda.powf(1.5)).collect()).collect();
    let d = engine.evaluate(&orbitals, &vec![1.0; g.len()])?.d;
    Ok((Field::from_real(&grid, FieldTag::Density, &rho)?, d))
}

/// Fits E ∝ (K∞ − K)^{e_E} and ε ∝ (K∞ − K)^{e_ε} with K∞ free.
pub fn fit_blowup(records: &[SweepRecord], potential: &PolynomialZeros, gns: &GnsResult) -> Result<BlowupFit> {
    let used: Vec<&SweepRecord> = records.iter().filter(|r| r.converged && r.energy > 0.0).collect();
    if used.len() < 5 {
        return Err(Error::Insufficient(format!("{} usable records, at least 5 needed", used.len())));
    }
    let ks: Vec<f64> = used.iter().map(|r| r.coupling).collect();
    let es: Vec<f64> = used.iter().map(|r| r.energy).collect();
    let eps: Vec<f64> = used.iter().map(|r| r.epsilon).collect();
    let kmax = ks.iter().cloned().fold(f64::MIN, f64::max);
    let k_gns = gns.k_est;
    // one-parameter search for K∞ on a log scale of the gap above the last K
    let score = |k_inf: f64| -> f64 {
        let a = power_fit(&ks, &es, k_inf);
        let b = power_fit(&ks, &eps, k_inf);
        (1.0 - a.r_squared) + (1.0 - b.r_squared)
    };
    let lo = (1e-4 * (k_gns - kmax).abs().max(1e-6 * kmax)).ln();
    let hi = (kmax.max(k_gns) * 0.5).ln();
    let mut best = (k_gns.max(kmax * (1.0 + 1e-9)), f64::INFINITY);
    for i in 0..=400 {
        let g = (lo + (hi - lo) * i as f64 / 400.0).exp();
        let s = score(kmax + g);
        if s < best.1 {
            best = (kmax + g, s);
        }
    }
    let mut width = (hi - lo) / 400.0;
    let mut center = (best.0 - kmax).ln();
    for _ in 0..40 {
        for d in [-width, width] {
            let k = kmax + (center + d).exp();
            let s = score(k);
            if s < best.1 {
                best = (k, s);
                center += d;
            }
        }
        width *= 0.6;
    }
    let k_inf = best.0;
    let energy = power_fit(&ks, &es, k_inf);
    let epsilon = power_fit(&ks, &eps, k_inf);
    let pin = if k_gns > kmax { k_gns } else { k_inf };
    let energy_pinned = power_fit(&ks, &es, pin);
    let epsilon_pinned = power_fit(&ks, &eps, pin);
    let p = potential.p();
    let iota = potential.iota();
    let (rho, interaction) = unit_trace_density(gns)?;
    let (kappa_bar, y_star) = compute_kappa_bar(&rho, p)?;
    let ee = p / (p + 1.0);
    let ep = 1.0 / (p + 1.0);
    let predicted_energy_prefactor = (p + 1.0) / p * (p * iota * kappa_bar).powf(1.0 / (p + 1.0)) * interaction.powf(ee);
    let predicted_epsilon_prefactor = (interaction / (p * iota * kappa_bar)).powf(ep);
    // blow-up point: the zero in the selected set closest to the last centroid
    let last = used.last().unwrap();
    let z0 = potential
        .blowup_set()
        .into_iter()
        .map(|j| potential.points[j])
        .min_by(|a, b| dist(*a, last.centroid).total_cmp(&dist(*b, last.centroid)))
        .unwrap();
    let centroid_cells = used.iter().map(|r| dist(r.centroid, z0) / r.spacing).fold(0.0, f64::max);
    let scaled_offset = [
        (last.centroid[0] - z0[0]) / last.epsilon,
        (last.centroid[1] - z0[1]) / last.epsilon,
        (last.centroid[2] - z0[2]) / last.epsilon,
    ];
    Ok(BlowupFit {
        records_used: used.len(),
        k_inf_est: k_inf,
        k_gns,
        reliable: energy.r_squared >= 0.98 && epsilon.r_squared >= 0.98,
        fitted_energy_prefactor: pinned_prefactor(&ks, &es, k_inf, ee),
        fitted_epsilon_prefactor: pinned_prefactor(&ks, &eps, k_inf, ep),
        energy,
        epsilon,
        energy_pinned,
        epsilon_pinned,
        p,
        iota,
        kappa_bar,
        y_star,
        interaction,
        expected_energy_exponent: ee,
        expected_epsilon_exponent: ep,
        predicted_energy_prefactor,
        predicted_epsilon_prefactor,
        centroid_cells,
        z0,
        scaled_offset,
    })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_potential_coefficients() {
        let v = PolynomialZeros::new(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![0.5, 0.5], SmoothFactor::default()).unwrap();
        assert!((v.iota_at(0) - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(v.blowup_set().len(), 2);
        let w = PolynomialZeros::new(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![0.5, 0.25], SmoothFactor::default()).unwrap();
        assert_eq!(w.blowup_set(), vec![0]);
        assert!(PolynomialZeros::single([0.0; 3], 1.0).is_err());
        assert!(PolynomialZeros::single([0.0; 3], 0.0).is_err());
    }

    #[test]
    fn cutoff_is_continuous() {
        assert_eq!(cutoff(0.5, 1.0), 1.0);
        assert!((cutoff(1.0 + 1e-9, 1.0) - 1.0).abs() < 1e-9);
        assert!(cutoff(2.0 - 1e-9, 1.0) < 1e-9);
    }
}
