//! Minimization of the fermionic GNS ratio
//!
//!   ‖γ‖_{S^q}^{(2−α)/α} Tr(√−Δ γ) / D(ρ_γ)^{1/α},   D(ρ) = ∫(ρ ∗ |x|^{−α}) ρ,
//!
//! over rank ≤ N operators γ = Σ k_i |u_i⟩⟨u_i|.
//!
//! The optimizer works on log(ratio) with the orbitals on the Stiefel
//! manifold (Löwdin retraction) and, for 1 < q < ∞, the log-weights as
//! extra Euclidean coordinates. Directions come from preconditioned
//! Polak–Ribière conjugate gradients with a monotone line search.
//!
//! The ratio is invariant under dilations and translations. On a grid those
//! symmetries are only approximate, so the search directions are projected
//! off the dilation and translation generators and the state is
//! periodically re-centred and re-dilated to a target length scale
//! `ℓ = Tr γ / Tr(√−Δ γ)`. This gauge keeps the state from drifting to grid
//! scale, where aliasing of |u|² would let the discrete ratio undercut the
//! continuum one.
//!
//! Between grid scale and box scale the discrete ratio, as a function of ℓ,
//! has a stationary point: aliasing lowers it for small states and the
//! truncated tail lowers it for large ones. With `adapt_scale` the target ℓ*
//! is moved to that point by a bracketing secant search on the dilation
//! slope, so the result is a critical point of the discrete functional and
//! its Euler–Lagrange residual can be driven to zero.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::field::{inner_re, norm_squared, Field, FieldTag};
use crate::grid::Grid;
use crate::kinetic::{KineticOperator, KineticSpec};
use crate::linalg::{axpy, axpy_re, combine, gram, hermitian_eigen, hermitian_function, CMat};
use crate::resample::{dilate, spectral_derivative, transfer, translate};
use crate::riesz::{check_alpha, dot, RieszKernel};
use crate::state::{density_of, schatten_norm_weights, DensityOperator, OrthoFrame, SchattenIndex, StateMeta};

/// Multipliers at or above this value mark an orbital for removal.
pub const DROP_THRESHOLD: f64 = -1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GnsControls {
    pub max_iter: usize,
    /// Target for the largest normalized Euler–Lagrange residual.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// First trial step of the line search.
    pub step: f64,
    /// Gauge length ℓ* = Tr γ / Tr(√−Δγ); `None` picks 3h.
    pub scale: Option<f64>,
    /// Move ℓ* to the scale where the discrete ratio is stationary under dilations.
    pub adapt_scale: bool,
}

impl Default for GnsControls {
    fn default() -> Self {
        GnsControls { max_iter: 800, tol: 1e-5, restarts: 8, seed: 1, step: 0.5, scale: None, adapt_scale: true }
    }
}

#[derive(Clone, Debug)]
pub struct GnsProblem {
    pub alpha: f64,
    pub q: SchattenIndex,
    pub rank_cap: usize,
    pub grid: Grid,
    pub controls: GnsControls,
}

impl GnsProblem {
    pub fn new(alpha: f64, q: SchattenIndex, rank_cap: usize, grid: Grid, controls: GnsControls) -> Result<Self> {
        check_alpha(alpha)?;
        q.check_window(alpha)?;
        if rank_cap == 0 {
            return config("rank cap N must be at least 1");
        }
        if controls.tol <= 0.0 || controls.max_iter == 0 || controls.restarts == 0 {
            return config("tol, max_iter and restarts must be positive");
        }
        if let Some(s) = controls.scale {
            if !(s > 0.0 && s < grid.box_length() / 4.0) {
                return config(format!("gauge scale {s} must lie in (0, L/4)"));
            }
        }
        Ok(GnsProblem { alpha, q, rank_cap, grid, controls })
    }

    pub fn gauge_scale(&self) -> f64 {
        self.controls.scale.unwrap_or(3.0 * self.grid.spacing())
    }

    fn weights_free(&self) -> bool {
        !self.q.is_infinite() && self.q.value() > 1.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub ratio: f64,
    pub residual: f64,
    pub step: f64,
    pub rank: usize,
    /// "cg", "weights", "gauge" or "rank".
    pub kind: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub ratio: f64,
    pub residual: f64,
    pub rank: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct GnsResult {
    pub alpha: f64,
    pub q: SchattenIndex,
    pub k_est: f64,
    /// Optimizer normalized so that Tr(√−Δγ) = D(ρ_γ) = 1 (grid rescaled accordingly).
    pub optimizer: DensityOperator,
    /// μ_i = ⟨u_i, H u_i⟩ with H = √−Δ − (2/α) ρ_γ ∗ |x|^{−α}.
    pub multipliers: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rank: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log: Vec<IterationRecord>,
    pub restarts: Vec<RestartSummary>,
    pub max_imag_residue: f64,
    /// Final gauge length ℓ* in grid units of the problem.
    pub gauge_scale: f64,
}

impl GnsResult {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Rebuilds a result from a stored optimizer; multipliers and residuals
    /// are recomputed, the ratio is re-evaluated.
    pub fn from_saved(optimizer: DensityOperator, alpha: f64, q: SchattenIndex) -> Result<Self> {
        let k_est = gns_ratio(&optimizer, alpha, q)?;
        let (multipliers, residuals, _) = multipliers_and_residuals(&optimizer, alpha)?;
        Ok(GnsResult {
            alpha,
            q,
            k_est,
            rank: optimizer.rank(),
            max_imag_residue: optimizer.frame().max_imag_residue(),
            optimizer,
            multipliers,
            residuals,
            converged: true,
            iterations: 0,
            log: Vec::new(),
            restarts: Vec::new(),
            gauge_scale: f64::NAN,
        })
    }

    pub fn state_meta(&self) -> StateMeta {
        StateMeta {
            alpha: Some(self.alpha),
            q: Some(self.q),
            multipliers: Some(self.multipliers.clone()),
            kind: Some("gns-optimizer".into()),
            k_est: Some(self.k_est),
        }
    }
}

/// Result of the closed-form weight rule.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightUpdate {
    Weights(Vec<f64>),
    /// Orbitals whose multiplier is not strictly negative.
    Drop(Vec<usize>),
}

/// Weights k_i = ((2−α)/α)(Σ|μ_k|^{q'})^{−1}|μ_i|^{1/(q−1)} under the
/// normalization Tr(√−Δγ) = D = 1; equal weights for q = ∞ (and q = 1).
pub fn weight_update(mu: &[f64], alpha: f64, q: SchattenIndex) -> WeightUpdate {
    let bad: Vec<usize> = (0..mu.len()).filter(|&i| !(mu[i] < -1e-10)).collect();
    if !bad.is_empty() {
        return WeightUpdate::Drop(bad);
    }
    let pre = (2.0 - alpha) / alpha;
    if q.is_infinite() || q.value() == 1.0 {
        let s: f64 = mu.iter().map(|m| m.abs()).sum();
        return WeightUpdate::Weights(vec![pre / s; mu.len()]);
    }
    let qv = q.value();
    let qd = qv / (qv - 1.0);
    let s: f64 = mu.iter().map(|m| m.abs().powf(qd)).sum();
    WeightUpdate::Weights(mu.iter().map(|m| pre / s * m.abs().powf(1.0 / (qv - 1.0))).collect())
}

/// Shared machinery: kinetic operator, Riesz kernel and gauge data for one grid.
pub struct GnsEngine {
    grid: Grid,
    alpha: f64,
    q: SchattenIndex,
    kin: KineticOperator,
    kernel: Arc<RieszKernel>,
    xs: Vec<f64>,
}

/// Values derived from one evaluation of the functional.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub f: f64,
    pub t: Vec<f64>,
    pub tsum: f64,
    pub d: f64,
    pub w: Vec<f64>,
    pub pot: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Evaluation {
    pub fn ratio(&self) -> f64 {
        self.f.exp()
    }
}

impl GnsEngine {
    pub fn new(grid: &Grid, alpha: f64, q: SchattenIndex) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(GnsEngine {
            grid: *grid,
            alpha,
            q,
            kin: KineticOperator::new(grid, &KineticSpec::massless()),
            kernel: RieszKernel::shared(grid, alpha)?,
            xs: grid.coords(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kinetic(&self) -> &KineticOperator {
        &self.kin
    }

    pub fn kernel(&self) -> &Arc<RieszKernel> {
        &self.kernel
    }

    pub fn evaluate(&self, u: &[Vec<Complex64>], k: &[f64]) -> Result<Evaluation> {
        let t: Vec<f64> = u.iter().map(|ui| self.kin.form(ui)).collect();
        let tsum: f64 = t.iter().zip(k).map(|(a, b)| a * b).sum();
        let rho = density_of(u, k);
        let pot = self.kernel.convolve(&rho);
        let dv = self.grid.cell_volume();
        let d = dot(&pot, &rho) * dv;
        if !(d > 0.0) || !(tsum > 0.0) {
            return Err(Error::Degenerate(format!("interaction {d:e}, kinetic {tsum:e}")));
        }
        let w: Vec<f64> = u
            .iter()
            .map(|ui| ui.iter().zip(&pot).map(|(v, p)| p * v.norm_sqr()).sum::<f64>() * dv)
            .collect();
        let a = self.alpha;
        let f = (2.0 - a) / a * schatten_norm_weights(k, self.q).ln() + tsum.ln() - d.ln() / a;
        Ok(Evaluation { f, t, tsum, d, w, pot, rho })
    }

    /// H̃u_i = √−Δ u_i − (2T/(αD)) F u_i for every orbital, and M_ij = ⟨u_i, H̃u_j⟩.
    pub fn apply_h(&self, u: &[Vec<Complex64>], ev: &Evaluation) -> (Vec<Vec<Complex64>>, CMat) {
        let coupling = 2.0 * ev.tsum / (self.alpha * ev.d);
        let hu: Vec<Vec<Complex64>> = u
            .iter()
            .map(|ui| {
                let mut out = vec![Complex64::default(); ui.len()];
                self.kin.apply(ui, &mut out);
                for ((o, v), p) in out.iter_mut().zip(ui).zip(&ev.pot) {
                    *o -= v * (coupling * p);
                }
                out
            })
            .collect();
        let m = gram(u, &hu) * Complex64::new(self.grid.cell_volume(), 0.0);
        (hu, m)
    }

    /// Gradient of log(ratio) at (U, k), with `ev` the evaluation there.
    pub fn gradient(&self, u: &[Vec<Complex64>], k: &[f64], ev: &Evaluation) -> Slope {
        let (hu, m) = self.apply_h(u, ev);
        let r = u.len();
        let c: Vec<f64> = k.iter().map(|ki| ki / ev.tsum).collect();
        let mut g: Vec<Vec<Complex64>> = hu.iter().zip(&c).map(|(h, ci)| h.iter().map(|v| v * *ci).collect()).collect();
        for i in 0..r {
            for j in 0..r {
                let s = m[(j, i)] * (0.5 * (c[i] + c[j]));
                axpy(-s, &u[j], &mut g[i]);
            }
        }
        let a = self.alpha;
        let kmax = k.iter().cloned().fold(0.0, f64::max);
        let share: Vec<f64> = if self.q.is_infinite() {
            // subgradient of ln max k: shared among the maximal weights
            let top = k.iter().filter(|&&x| x == kmax).count() as f64;
            k.iter().map(|&x| if x == kmax { 1.0 / top } else { 0.0 }).collect()
        } else {
            let qv = self.q.value();
            let sq: f64 = k.iter().map(|x| (x / kmax).powf(qv)).sum();
            k.iter().map(|x| (x / kmax).powf(qv) / sq).collect()
        };
        let gt = (0..r)
            .map(|i| (2.0 - a) / a * share[i] + k[i] * ev.t[i] / ev.tsum - 2.0 / a * k[i] * ev.w[i] / ev.d)
            .collect();
        Slope { g, gt, hu, m }
    }

    /// Scale factors (c, λ) mapping the state to Tr = D = 1: weights × c,
    /// dilation λ (u ↦ λ^{3/2}u(λx)).
    pub fn normalization(&self, ev: &Evaluation) -> (f64, f64) {
        let a = self.alpha;
        let c = (ev.tsum.powf(a) / ev.d).powf(1.0 / (2.0 - a));
        (c, 1.0 / (c * ev.tsum))
    }

    /// Frame vectors of the infinitesimal dilation and the three translations.
    fn gauge_generators(&self, u: &[Vec<Complex64>]) -> Vec<Vec<Vec<Complex64>>> {
        let n = self.grid.points();
        let mut dil: Vec<Vec<Complex64>> = Vec::with_capacity(u.len());
        let mut tr: [Vec<Vec<Complex64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for ui in u {
            let mut d = ui.iter().map(|v| v * 1.5).collect::<Vec<_>>();
            for (axis, tr_axis) in tr.iter_mut().enumerate() {
                let g = spectral_derivative(&self.grid, self.kin.fft(), ui, axis);
                for i in 0..n {
                    for j in 0..n {
                        for kk in 0..n {
                            let x = self.xs[[i, j, kk][axis]];
                            let idx = (i * n + j) * n + kk;
                            d[idx] += g[idx] * x;
                        }
                    }
                }
                tr_axis.push(g);
            }
            dil.push(d);
        }
        let [a, b, c] = tr;
        vec![dil, a, b, c]
    }

    /// Density centroid and the scale ℓ = Tr γ / Tr(√−Δγ).
    pub fn centroid(&self, rho: &[f64]) -> [f64; 3] {
        let n = self.grid.points();
        let mut m = 0.0;
        let mut c = [0.0; 3];
        for i in 0..n {
            for j in 0..n {
                for kk in 0..n {
                    let r = rho[(i * n + j) * n + kk];
                    m += r;
                    c[0] += r * self.xs[i];
                    c[1] += r * self.xs[j];
                    c[2] += r * self.xs[kk];
                }
            }
        }
        [c[0] / m, c[1] / m, c[2] / m]
    }
}

/// Frame-level metric ⟨ξ, η⟩ = Σ_i 2 Re⟨ξ_i, η_i⟩ (with the quadrature weight).
pub(crate) fn metric(a: &[Vec<Complex64>], b: &[Vec<Complex64>], dv: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| 2.0 * inner_re(x, y)).sum::<f64>() * dv
}

/// Ξ − U sym(U*Ξ): projection onto the tangent space of the Stiefel manifold.
pub(crate) fn tangent_project(u: &[Vec<Complex64>], xi: &mut [Vec<Complex64>], dv: f64) {
    let a = gram(u, xi) * Complex64::new(dv, 0.0);
    let r = u.len();
    let s = CMat::from_fn(r, r, |j, i| 0.5 * (a[(j, i)] + a[(i, j)].conj()));
    for i in 0..r {
        for j in 0..r {
            axpy(-s[(j, i)], &u[j], &mut xi[i]);
        }
    }
}

/// Löwdin retraction of U + τΞ.
pub(crate) fn retract(u: &[Vec<Complex64>], xi: &[Vec<Complex64>], tau: f64, dv: f64) -> Result<Vec<Vec<Complex64>>> {
    let moved: Vec<Vec<Complex64>> = u
        .iter()
        .zip(xi)
        .map(|(a, b)| {
            let mut v = a.clone();
            axpy_re(tau, b, &mut v);
            v
        })
        .collect();
    orthonormalize(moved, dv)
}

pub fn orthonormalize(v: Vec<Vec<Complex64>>, dv: f64) -> Result<Vec<Vec<Complex64>>> {
    let mut v = v;
    for _ in 0..2 {
        let g = gram(&v, &v) * Complex64::new(dv, 0.0);
        let (vals, _) = hermitian_eigen(&g);
        if vals[0] <= 1e-10 {
            return Err(Error::Degenerate(format!("Gram matrix is singular: smallest eigenvalue {:e}", vals[0])));
        }
        let s = hermitian_function(&g, |x| 1.0 / x.sqrt());
        v = combine(&v, &s);
        let dev = (gram(&v, &v) * Complex64::new(dv, 0.0) - CMat::identity(v.len(), v.len())).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev < 1e-13 {
            break;
        }
    }
    Ok(v)
}

/// Search state of one restart.
struct Walker<'a> {
    engine: &'a GnsEngine,
    problem: &'a GnsProblem,
    u: Vec<Vec<Complex64>>,
    theta: Vec<f64>,
    ev: Evaluation,
    log: Vec<IterationRecord>,
    iter: usize,
    target: f64,
    scale_done: bool,
    /// (ln ℓ*, dilation slope) samples of the scale search.
    scale_history: Vec<(f64, f64)>,
}

/// Gradient data of log(ratio) at one point.
pub struct Slope {
    /// Riemannian gradient of the frame part, in the metric Σ 2 Re⟨ξ_i, η_i⟩.
    pub g: Vec<Vec<Complex64>>,
    /// Derivatives with respect to the log-weights ln k_i.
    pub gt: Vec<f64>,
    /// H̃u_i and M_ij = ⟨u_i, H̃u_j⟩.
    pub hu: Vec<Vec<Complex64>>,
    pub m: CMat,
}

impl<'a> Walker<'a> {
    fn weights(&self) -> Vec<f64> {
        weights_from(&self.theta)
    }

    fn dv(&self) -> f64 {
        self.engine.grid.cell_volume()
    }

    fn slope(&self) -> Slope {
        let k = self.weights();
        let mut sl = self.engine.gradient(&self.u, &k, &self.ev);
        if !self.problem.weights_free() {
            sl.gt.iter_mut().for_each(|x| *x = 0.0);
        }
        sl
    }

    /// Normalized residuals ‖H u_i − μ_i u_i‖ and multipliers μ_i.
    fn residuals(&self, s: &Slope) -> (Vec<f64>, Vec<f64>) {
        let (_, lambda) = self.engine.normalization(&self.ev);
        let dv = self.dv();
        let r = self.u.len();
        let equal = !self.problem.weights_free();
        if equal {
            // any rotation inside the span is a symmetry: measure in the eigenbasis of M
            let (vals, w) = hermitian_eigen(&s.m);
            let v = combine(&self.u, &w);
            let hv = combine(&s.hu, &w);
            let res = (0..r)
                .map(|i| {
                    let mut e = hv[i].clone();
                    axpy(Complex64::new(-vals[i], 0.0), &v[i], &mut e);
                    lambda * (norm_squared(&e) * dv).sqrt()
                })
                .collect();
            (res, vals.iter().map(|x| x * lambda).collect())
        } else {
            let res = (0..r)
                .map(|i| {
                    let mu = s.m[(i, i)].re;
                    let mut e = s.hu[i].clone();
                    axpy(Complex64::new(-mu, 0.0), &self.u[i], &mut e);
                    lambda * (norm_squared(&e) * dv).sqrt()
                })
                .collect();
            (res, (0..r).map(|i| s.m[(i, i)].re * lambda).collect())
        }
    }

    fn precondition(&self, g: &[Vec<Complex64>], mu: &[f64]) -> Vec<Vec<Complex64>> {
        let k = self.weights();
        let (_, lambda) = self.engine.normalization(&self.ev);
        let mult = self.engine.kin.multiplier();
        let fft = self.engine.kin.fft();
        g.iter()
            .enumerate()
            .map(|(i, gi)| {
                // μ are normalized; undo the λ scaling to get H̃ units
                let sigma = (mu.get(i).cloned().unwrap_or(-1.0).abs() / lambda).max(0.05 / self.target);
                let pre = self.ev.tsum / k[i].max(1e-300);
                let mut buf = gi.clone();
                fft.forward(&mut buf);
                for (v, m) in buf.iter_mut().zip(mult.iter()) {
                    *v *= pre / (m + sigma);
                }
                fft.inverse(&mut buf);
                buf
            })
            .collect()
    }

    fn project_gauge(&self, gens: &[Vec<Vec<Complex64>>], xi: &mut [Vec<Complex64>]) {
        let dv = self.dv();
        let nb = gens.len();
        let gm = nalgebra::DMatrix::from_fn(nb, nb, |a, b| metric(&gens[a], &gens[b], dv));
        let rhs = nalgebra::DVector::from_fn(nb, |a, _| metric(&gens[a], xi, dv));
        let Some(chol) = gm.clone().cholesky() else { return };
        let coef = chol.solve(&rhs);
        for (a, gen) in gens.iter().enumerate() {
            for (x, gv) in xi.iter_mut().zip(gen) {
                axpy_re(-coef[a], gv, x);
            }
        }
    }

    fn record(&mut self, residual: f64, step: f64, kind: &str) {
        self.log.push(IterationRecord {
            iter: self.iter,
            ratio: self.ev.ratio(),
            residual,
            step,
            rank: self.u.len(),
            kind: kind.into(),
        });
    }

    fn evaluate_at(&self, u: &[Vec<Complex64>], theta: &[f64]) -> Result<Evaluation> {
        self.engine.evaluate(u, &weights_from(theta))
    }

    /// Re-centres the density and re-dilates to the gauge scale when they drift.
    fn regauge(&mut self, force: bool) -> Result<bool> {
        let h = self.engine.grid.spacing();
        let k = self.weights();
        let ell = k.iter().sum::<f64>() / self.ev.tsum;
        let target = self.target;
        let c = self.engine.centroid(&self.ev.rho);
        let off = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let mut changed = false;
        let dv = self.dv();
        if force || off > 0.1 * h {
            let fft = self.engine.kin.fft().clone();
            self.u = self.u.iter().map(|ui| translate(&self.engine.grid, &fft, ui, c)).collect();
            changed = true;
        }
        if force || (ell / target - 1.0).abs() > 0.02 {
            let lambda = ell / target;
            self.u = self.u.iter().map(|ui| dilate(&self.engine.grid, ui, lambda, [0.0; 3])).collect();
            changed = true;
        }
        if changed {
            self.u = orthonormalize(std::mem::take(&mut self.u), dv)?;
            self.ev = self.evaluate_at(&self.u, &self.theta)?;
        }
        Ok(changed)
    }

    fn drop_orbitals(&mut self, mu: &[f64], s: &Slope) -> Result<bool> {
        if self.u.len() <= 1 {
            return Ok(false);
        }
        // work in the eigenbasis of M for equal weights so that μ are well defined
        if !self.problem.weights_free() {
            let (_, w) = hermitian_eigen(&s.m);
            self.u = combine(&self.u, &w);
        }
        let keep: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] < DROP_THRESHOLD).collect();
        if keep.len() == mu.len() || keep.is_empty() {
            return Ok(false);
        }
        self.u = keep.iter().map(|&i| self.u[i].clone()).collect();
        self.theta = keep.iter().map(|&i| self.theta[i]).collect();
        self.ev = self.evaluate_at(&self.u, &self.theta)?;
        Ok(true)
    }

    /// Next ℓ* for the scale search. Brackets a sign change of the dilation
    /// slope when there is one; otherwise settles on the scale of smallest
    /// |slope|. Sets `scale_done` when no further move is useful.
    fn next_scale(&mut self, slope: f64) -> Option<f64> {
        let x = self.target.ln();
        self.scale_history.push((x, slope));
        log::debug!("gauge scale {:.4}: dilation slope {:.3e}, log ratio {:.12}", self.target, slope, self.ev.f);
        let h = self.engine.grid.spacing();
        let lo = (1.5 * h).ln();
        let hi = (self.engine.grid.box_length() / 6.0).ln();
        let hist = &self.scale_history;
        let best = hist.iter().cloned().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
        let settle = |w: &mut Self, at: f64| {
            w.scale_done = true;
            if (at - x).abs() < 1e-12 {
                None
            } else {
                Some(at.exp())
            }
        };
        if hist.len() > 24 {
            return settle(self, best.0);
        }
        let pos = hist.iter().filter(|p| p.1 > 0.0).min_by(|a, b| a.0.total_cmp(&b.0)).cloned();
        let neg = hist.iter().filter(|p| p.1 < 0.0).max_by(|a, b| a.0.total_cmp(&b.0)).cloned();
        if let (Some(p), Some(n)) = (pos, neg) {
            if n.0 < p.0 {
                if p.0 - n.0 < 1e-4 {
                    return settle(self, best.0);
                }
                // regula falsi, kept away from the bracket ends
                let t = (n.1 / (n.1 - p.1)).clamp(0.1, 0.9);
                return Some((n.0 + t * (p.0 - n.0)).exp());
            }
        }
        // one-signed so far: walk downhill in |slope| towards a root or a minimum
        let mut pts: Vec<(f64, f64)> = hist.iter().map(|p| (p.0, p.1.abs())).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ib = pts.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).unwrap().0;
        if ib > 0 && ib + 1 < pts.len() {
            let (x0, y0) = pts[ib - 1];
            let (x1, y1) = pts[ib];
            let (x2, y2) = pts[ib + 1];
            let d01 = (y1 - y0) / (x1 - x0);
            let d12 = (y2 - y1) / (x2 - x1);
            let curv = (d12 - d01) / (x2 - x0);
            let v = if curv > 0.0 { vertex(x0, y0, x1, y1, x2, y2).unwrap_or(x1) } else { x1 }.clamp(x0, x2);
            if (x2 - x0) < 0.05 || pts.iter().any(|p| (p.0 - v).abs() < 0.01) {
                return settle(self, best.0);
            }
            return Some(v.exp());
        }
        let n = hist.len();
        let step = if n >= 2 {
            let (x0, s0) = hist[n - 2];
            let d = (slope - s0) / (x - x0);
            if d * slope.signum() > 0.0 && slope.signum() == s0.signum() {
                (-slope / d).clamp(-0.3, 0.3)
            } else {
                -0.2 * slope.signum()
            }
        } else {
            -0.15 * slope.signum()
        };
        let nx = (x + step).clamp(lo, hi);
        if (nx - x).abs() < 1e-9 {
            return settle(self, best.0);
        }
        Some(nx.exp())
    }

    /// Tries the closed-form weight rule; keeps it only if the ratio drops.
    fn weight_step(&mut self, mu: &[f64]) -> Result<bool> {
        if !self.problem.weights_free() {
            return Ok(false);
        }
        if let WeightUpdate::Weights(k) = weight_update(mu, self.problem.alpha, self.problem.q) {
            let theta: Vec<f64> = k.iter().map(|x| x.ln()).collect();
            let ev = self.evaluate_at(&self.u, &theta)?;
            if ev.f < self.ev.f {
                self.theta = theta;
                self.ev = ev;
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn run(&mut self) -> Result<(bool, Vec<f64>, Vec<f64>)> {
        let dv = self.dv();
        let ctl = &self.problem.controls;
        let mut dir: Vec<Vec<Complex64>> = Vec::new();
        let mut dir_t: Vec<f64> = Vec::new();
        let mut prev_gpg = 0.0;
        let mut prev_pg: Vec<Vec<Complex64>> = Vec::new();
        let mut prev_pgt: Vec<f64> = Vec::new();
        let mut tau = ctl.step;
        let mut since_reset = 0usize;
        let mut stall = 0usize;
        self.regauge(true)?;
        loop {
            let s = self.slope();
            let (res, mu) = self.residuals(&s);
            let worst = res.iter().cloned().fold(0.0, f64::max);
            self.record(worst, tau, "cg");
            if worst < ctl.tol {
                return Ok((true, res, mu));
            }
            if self.iter >= ctl.max_iter {
                return Ok((false, res, mu));
            }
            self.iter += 1;
            // rank and weight maintenance
            if self.iter % 10 == 0 {
                if self.drop_orbitals(&mu, &s)? {
                    self.record(worst, 0.0, "rank");
                    dir.clear();
                    continue;
                }
                // the joint CG already moves the weights; the closed-form rule is an early polish only
                if self.iter <= 30 && self.weight_step(&mu)? {
                    self.record(worst, 0.0, "weights");
                    dir.clear();
                    continue;
                }
            }
            if self.iter % 5 == 0 && self.regauge(false)? {
                self.record(worst, 0.0, "gauge");
                dir.clear();
                continue;
            }
            let gens = self.engine.gauge_generators(&self.u);
            let mut g = s.g.clone();
            self.project_gauge(&gens, &mut g);
            let gnorm = metric(&s.g, &s.g, dv).sqrt();
            let inner_res = worst * metric(&g, &g, dv).sqrt() / gnorm.max(1e-300);
            log::trace!("iter {} log ratio {:.14} residual {:.3e} off-gauge {:.3e}", self.iter, self.ev.f, worst, inner_res);
            let gauge_bound = inner_res < (0.25 * ctl.tol).max(0.05 * worst);
            if (!ctl.adapt_scale || self.scale_done) && gauge_bound && inner_res < 0.05 * worst {
                // only the gauge directions are left: this is as far as the grid allows
                return Ok((false, res, mu));
            }
            if ctl.adapt_scale && !self.scale_done && (gauge_bound || stall > 0) {
                let dn = metric(&gens[0], &gens[0], dv).sqrt();
                let slope = metric(&s.g, &gens[0], dv) / dn;
                match self.next_scale(slope) {
                    Some(t) => {
                        self.target = t;
                        self.regauge(true)?;
                        self.record(worst, 0.0, "scale");
                        dir.clear();
                        stall = 0;
                        tau = ctl.step;
                        continue;
                    }
                    None if stall > 0 => {
                        let (res, mu) = self.residuals(&self.slope());
                        return Ok((false, res, mu));
                    }
                    None => {
                        stall = 0;
                    }
                }
            }
            let mut pg = self.precondition(&g, &mu);
            tangent_project(&self.u, &mut pg, dv);
            self.project_gauge(&gens, &mut pg);
            let pgt: Vec<f64> = s.gt.iter().map(|x| 0.5 * x).collect();
            let gpg = metric(&g, &pg, dv) + dot(&s.gt, &pgt);
            let mut beta = 0.0;
            if !dir.is_empty() && dir.len() == g.len() && since_reset < 60 {
                let cross = metric(&g, &prev_pg, dv) + dot(&s.gt, &prev_pgt);
                beta = ((gpg - cross) / prev_gpg).max(0.0);
            }
            let mut d: Vec<Vec<Complex64>> = pg.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
            let mut dt: Vec<f64> = pgt.iter().map(|x| -x).collect();
            if beta > 0.0 {
                let mut old = dir.clone();
                tangent_project(&self.u, &mut old, dv);
                self.project_gauge(&gens, &mut old);
                for (di, oi) in d.iter_mut().zip(&old) {
                    axpy_re(beta, oi, di);
                }
                for (a, b) in dt.iter_mut().zip(&dir_t) {
                    *a += beta * b;
                }
                since_reset += 1;
            } else {
                since_reset = 0;
            }
            let mut slope0 = metric(&s.g, &d, dv) + dot(&s.gt, &dt);
            if !(slope0 < 0.0) {
                d = pg.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
                dt = pgt.iter().map(|x| -x).collect();
                slope0 = -gpg;
                since_reset = 0;
            }
            prev_gpg = gpg;
            prev_pg = pg;
            prev_pgt = pgt;
            match self.line_search(&d, &dt, slope0, tau)? {
                Some(step) => {
                    tau = step;
                    stall = 0;
                    dir = d;
                    dir_t = dt;
                }
                None => {
                    dir.clear();
                    stall += 1;
                    tau = ctl.step;
                    if stall >= 3 && (!ctl.adapt_scale || self.scale_done) {
                        let (res, mu) = self.residuals(&self.slope());
                        return Ok((false, res, mu));
                    }
                }
            }
        }
    }

    /// Quadratic-interpolation line search with an Armijo guard; returns the accepted step.
    fn line_search(&mut self, d: &[Vec<Complex64>], dt: &[f64], slope0: f64, tau0: f64) -> Result<Option<f64>> {
        let dv = self.dv();
        let f0 = self.ev.f;
        let try_step = |w: &Walker, tau: f64| -> Result<(Vec<Vec<Complex64>>, Vec<f64>, Evaluation)> {
            let u = retract(&w.u, d, tau, dv)?;
            let th: Vec<f64> = w.theta.iter().zip(dt).map(|(a, b)| a + tau * b).collect();
            let ev = w.evaluate_at(&u, &th)?;
            Ok((u, th, ev))
        };
        let armijo = |f: f64, tau: f64| f <= f0 + 1e-4 * tau * slope0 && f < f0;
        let mut tau = tau0;
        for _ in 0..12 {
            let (u1, th1, ev1) = try_step(self, tau)?;
            let a = (ev1.f - f0 - slope0 * tau) / (tau * tau);
            let mut best = (tau, u1, th1, ev1);
            if a > 0.0 {
                let t2 = (-slope0 / (2.0 * a)).clamp(0.05 * tau, 8.0 * tau);
                if (t2 / tau - 1.0).abs() > 0.05 {
                    let (u2, th2, ev2) = try_step(self, t2)?;
                    if ev2.f < best.3.f {
                        best = (t2, u2, th2, ev2);
                    }
                }
            } else if armijo(best.3.f, tau) {
                // still descending steeply at tau: probe a longer step
                let t2 = 2.5 * tau;
                let (u2, th2, ev2) = try_step(self, t2)?;
                if ev2.f < best.3.f {
                    best = (t2, u2, th2, ev2);
                }
            }
            if armijo(best.3.f, best.0) {
                self.u = best.1;
                self.theta = best.2;
                self.ev = best.3;
                return Ok(Some(best.0));
            }
            tau *= 0.25;
        }
        Ok(None)
    }
}

/// Abscissa of the vertex of the parabola through three points.
fn vertex(x0: f64, y0: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> Option<f64> {
    let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
    let den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
    if den.abs() < 1e-300 || !(num / den).is_finite() {
        return None;
    }
    let v = x1 - 0.5 * num / den;
    // only a minimum is useful
    let c = ((y2 - y1) / (x2 - x1) - (y1 - y0) / (x1 - x0)) / (x2 - x0);
    (c > 0.0).then_some(v)
}

fn weights_from(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().cloned().fold(f64::MIN, f64::max);
    theta.iter().map(|t| (t - m).exp()).collect()
}

/// Random Gaussian-mixture frame of `r` orbitals at length scale `ell`.
pub fn initial_frame(grid: &Grid, r: usize, ell: f64, seed: u64) -> Result<Vec<Vec<Complex64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = grid.coords();
    // the scale of a Gaussian of width s is ℓ = √π s / 2
    let s0 = 2.0 * ell / PI.sqrt();
    let mut orbitals = Vec::with_capacity(r);
    for i in 0..r {
        let comps = 3;
        let params: Vec<([f64; 3], f64, f64, [f64; 3])> = (0..comps)
            .map(|_| {
                let c = [rng.gen_range(-0.5..0.5) * s0, rng.gen_range(-0.5..0.5) * s0, rng.gen_range(-0.5..0.5) * s0];
                let w = s0 * rng.gen_range(0.7..1.4);
                let a = rng.gen_range(0.3..1.0);
                let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                (c, w, a, p)
            })
            .collect();
        // low orbitals s-like, higher ones carry a random nodal plane
        let node = i > 0;
        let mut v = Vec::with_capacity(grid.len());
        for &x in &xs {
            for &y in &xs {
                for &z in &xs {
                    let mut acc = 0.0;
                    for (c, w, a, p) in &params {
                        let dx = [x - c[0], y - c[1], z - c[2]];
                        let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
                        let poly = if node { (p[0] * dx[0] + p[1] * dx[1] + p[2] * dx[2]) / w } else { 1.0 };
                        acc += a * poly * (-r2 / (2.0 * w * w)).exp();
                    }
                    v.push(Complex64::new(acc, 0.0));
                }
            }
        }
        orbitals.push(v);
    }
    orthonormalize(orbitals, grid.cell_volume())
}

/// The ratio of the functional at γ.
pub fn gns_ratio(gamma: &DensityOperator, alpha: f64, q: SchattenIndex) -> Result<f64> {
    let engine = GnsEngine::new(gamma.grid(), alpha, q)?;
    Ok(engine.evaluate(gamma.frame().orbitals(), gamma.weights())?.ratio())
}

/// √−Δ v − (2/α)(ρ_γ ∗ |x|^{−α}) v.
pub fn mean_field_operator_apply(gamma: &DensityOperator, alpha: f64, v: &Field) -> Result<Field> {
    check_alpha(alpha)?;
    gamma.grid().check_same(v.grid())?;
    let kin = KineticOperator::new(gamma.grid(), &KineticSpec::massless());
    let rho = gamma.density_values();
    let pot = if rho.iter().all(|&r| r == 0.0) {
        vec![0.0; rho.len()]
    } else {
        RieszKernel::shared(gamma.grid(), alpha)?.convolve(&rho)
    };
    let mut out = vec![Complex64::default(); v.values().len()];
    kin.apply(v.values(), &mut out);
    for ((o, x), p) in out.iter_mut().zip(v.values()).zip(&pot) {
        *o -= x * (2.0 / alpha * p);
    }
    Field::from_values(gamma.grid(), FieldTag::Generic, out)
}

/// Normalizes (U, k) to Tr = D = 1 by rescaling the weights and re-reading
/// the samples on a dilated grid.
pub fn normalized_operator(engine: &GnsEngine, u: &[Vec<Complex64>], k: &[f64]) -> Result<DensityOperator> {
    let ev = engine.evaluate(u, k)?;
    let (c, lambda) = engine.normalization(&ev);
    let grid = engine.grid().rescaled(1.0 / lambda)?;
    let amp = lambda.powf(1.5);
    let orbitals: Vec<Vec<Complex64>> = u.iter().map(|ui| ui.iter().map(|v| v * amp).collect()).collect();
    let frame = OrthoFrame::from_raw(grid, orbitals);
    DensityOperator::new(frame, k.iter().map(|x| x * c).collect())
}

/// Orbital multipliers ⟨u_i, H u_i⟩ and residual norms of a normalized state.
pub fn multipliers_and_residuals(gamma: &DensityOperator, alpha: f64) -> Result<(Vec<f64>, Vec<f64>, CMat)> {
    let grid = gamma.grid();
    let kin = KineticOperator::new(grid, &KineticSpec::massless());
    let pot = RieszKernel::shared(grid, alpha)?.convolve(&gamma.density_values());
    let dv = grid.cell_volume();
    let u = gamma.frame().orbitals();
    let hu: Vec<Vec<Complex64>> = u
        .iter()
        .map(|ui| {
            let mut out = vec![Complex64::default(); ui.len()];
            kin.apply(ui, &mut out);
            for ((o, x), p) in out.iter_mut().zip(ui).zip(&pot) {
                *o -= x * (2.0 / alpha * p);
            }
            out
        })
        .collect();
    let m = gram(u, &hu) * Complex64::new(dv, 0.0);
    let mu: Vec<f64> = (0..u.len()).map(|i| m[(i, i)].re).collect();
    let res = (0..u.len())
        .map(|i| {
            let mut e = hu[i].clone();
            axpy(Complex64::new(-mu[i], 0.0), &u[i], &mut e);
            (norm_squared(&e) * dv).sqrt()
        })
        .collect();
    Ok((mu, res, m))
}

/// One optimization from an explicit starting frame and weights.
pub fn optimize_from(problem: &GnsProblem, u0: Vec<Vec<Complex64>>, k0: Vec<f64>, seed: u64) -> Result<GnsResult> {
    let engine = GnsEngine::new(&problem.grid, problem.alpha, problem.q)?;
    let dv = problem.grid.cell_volume();
    let mut u0 = orthonormalize(u0, dv)?;
    let mut k0 = k0;
    if u0.len() > problem.rank_cap {
        u0.truncate(problem.rank_cap);
        k0.truncate(problem.rank_cap);
    }
    if !problem.weights_free() {
        k0 = vec![1.0; u0.len()];
    }
    let theta: Vec<f64> = k0.iter().map(|k| k.max(1e-300).ln()).collect();
    let ev = engine.evaluate(&u0, &weights_from(&theta))?;
    let target = problem.gauge_scale();
    let mut w = Walker {
        engine: &engine,
        problem,
        u: u0,
        theta,
        ev,
        log: Vec::new(),
        iter: 0,
        target,
        scale_done: false,
        scale_history: Vec::new(),
    };
    let (converged, _, _) = w.run()?;
    let k = w.weights();
    let mut out = finish(&engine, problem, w.u, k, w.log, w.iter, converged, seed)?;
    out.gauge_scale = w.target;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    engine: &GnsEngine,
    problem: &GnsProblem,
    u: Vec<Vec<Complex64>>,
    k: Vec<f64>,
    log: Vec<IterationRecord>,
    iterations: usize,
    converged: bool,
    seed: u64,
) -> Result<GnsResult> {
    let ev = engine.evaluate(&u, &k)?;
    let k_est = ev.ratio();
    // equal weights: present the frame in the eigenbasis of H
    let u = if !problem.weights_free() {
        let (_, m) = engine.apply_h(&u, &ev);
        let (_, w) = hermitian_eigen(&m);
        combine(&u, &w)
    } else {
        u
    };
    let gamma = normalized_operator(engine, &u, &k)?;
    let (mu, res, _) = multipliers_and_residuals(&gamma, problem.alpha)?;
    let imag = gamma.frame().max_imag_residue();
    let worst = res.iter().cloned().fold(0.0, f64::max);
    Ok(GnsResult {
        alpha: problem.alpha,
        q: problem.q,
        k_est,
        rank: gamma.rank(),
        optimizer: gamma,
        multipliers: mu,
        residuals: res,
        converged: converged && worst < problem.controls.tol * 1.5,
        iterations,
        restarts: vec![RestartSummary { seed, ratio: k_est, residual: worst, rank: u.len(), iterations, converged }],
        log,
        max_imag_residue: imag,
        gauge_scale: problem.gauge_scale(),
    })
}

/// Best-of-restarts minimization of the GNS ratio.
pub fn optimize_gns(problem: &GnsProblem) -> Result<GnsResult> {
    let ell = problem.gauge_scale();
    let mut best: Option<GnsResult> = None;
    let mut summaries = Vec::new();
    for r in 0..problem.controls.restarts {
        let seed = problem.controls.seed.wrapping_add(r as u64);
        let u0 = initial_frame(&problem.grid, problem.rank_cap, ell, seed)?;
        let k0 = vec![1.0; problem.rank_cap];
        let res = optimize_from(problem, u0, k0, seed)?;
        summaries.extend(res.restarts.iter().cloned());
        let better = match &best {
            None => true,
            Some(b) => (res.converged && !b.converged) || (res.converged == b.converged && res.k_est < b.k_est),
        };
        if better {
            best = Some(res);
        }
    }
    let mut best = best.expect("at least one restart");
    best.restarts = summaries;
    Ok(best)
}

/// Continues from an existing optimizer, transferred to the problem grid.
pub fn optimize_gns_from(problem: &GnsProblem, start: &DensityOperator) -> Result<GnsResult> {
    let u0: Vec<Vec<Complex64>> =
        start.frame().orbitals().iter().map(|u| transfer(start.grid(), u, &problem.grid)).collect();
    optimize_from(problem, u0, start.weights().to_vec(), problem.controls.seed)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub alpha: f64,
    pub q: SchattenIndex,
    pub n: usize,
    pub k_n: f64,
    pub k_2n: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub converged: bool,
}

/// Compares K^(2N) with K^(N) on the same grid and controls.
pub fn monotonicity_check(
    alpha: f64,
    q: SchattenIndex,
    n: usize,
    grid: &Grid,
    controls: &GnsControls,
    tolerance: f64,
) -> Result<MonotonicityReport> {
    let a = optimize_gns(&GnsProblem::new(alpha, q, n, *grid, controls.clone())?)?;
    let b = optimize_gns(&GnsProblem::new(alpha, q, 2 * n, *grid, controls.clone())?)?;
    Ok(monotonicity_report(&a, &b, n, tolerance))
}

pub fn monotonicity_report(a: &GnsResult, b: &GnsResult, n: usize, tolerance: f64) -> MonotonicityReport {
    MonotonicityReport {
        alpha: a.alpha,
        q: a.q,
        n,
        k_n: a.k_est,
        k_2n: b.k_est,
        gap: a.k_est - b.k_est,
        tolerance,
        pass: b.k_est <= a.k_est + tolerance,
        converged: a.converged && b.converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_rule_examples() {
        let inf = SchattenIndex::INFINITY;
        assert_eq!(weight_update(&[-2.0, -2.0], 1.0, inf), WeightUpdate::Weights(vec![0.25, 0.25]));
        let WeightUpdate::Weights(k) = weight_update(&[-1.0, -2.0], 1.0, SchattenIndex::new(2.0).unwrap()) else {
            panic!()
        };
        assert!((k[0] - 0.2).abs() < 1e-14 && (k[1] - 0.4).abs() < 1e-14);
        assert_eq!(weight_update(&[-1.0, 0.0], 1.0, inf), WeightUpdate::Drop(vec![1]));
        // Σ k_i μ_i = −(2−α)/α for any admissible q
        let WeightUpdate::Weights(k) = weight_update(&[-0.3, -0.7, -1.1], 0.5, SchattenIndex::new(2.5).unwrap()) else {
            panic!()
        };
        let s: f64 = k.iter().zip([-0.3, -0.7, -1.1]).map(|(a, b)| a * b).sum();
        assert!((s + 3.0).abs() < 1e-12);
    }
}
