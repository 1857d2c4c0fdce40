//! Free-space Riesz convolution ρ ∗ |x|^{−α} on a periodic grid.
//!
//! The kernel is truncated at radius R = √3·L (the box diameter), whose
//! Fourier transform is known in closed form:
//!
//!   K̂_R(s) = 4π s^{α−3} ∫₀^{sR} t^{1−α} sin t dt,   K̂_R(0) = 4πR^{3−α}/(3−α).
//!
//! Sampling K̂_R on the lattice of a 4L-periodic box and band-limiting at the
//! grid Nyquist frequency yields a smooth discrete kernel whose aperiodic
//! convolution with a band-limited density is spectrally accurate, without
//! the O(h²) error of cell-averaging the singularity. The aperiodic
//! convolution itself is a zero-padded (2n)^3 FFT product; the padded
//! transforms are pruned so that only lines carrying data are transformed.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DMatrixView};
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{config, Error, Result};
use crate::field::{Field, FieldTag};
use crate::grid::Grid;

pub struct RieszKernel {
    grid: Grid,
    alpha: f64,
    /// Folded spectrum of the padded kernel, (n+1)^3, scaled by h³/(2n)³.
    spectrum: Vec<f64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RieszKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RieszKernel").field("grid", &self.grid).field("alpha", &self.alpha).finish()
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return config(format!("alpha must lie in (0, 2), got {alpha}"));
    }
    Ok(())
}

type CacheKey = (u64, usize, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<RieszKernel>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<RieszKernel>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl RieszKernel {
    /// Kernel for (grid, α), built once per process and shared.
    pub fn shared(grid: &Grid, alpha: f64) -> Result<Arc<RieszKernel>> {
        check_alpha(alpha)?;
        let key = (grid.box_length().to_bits(), grid.points(), alpha.to_bits());
        if let Some(k) = cache().lock().unwrap().get(&key) {
            return Ok(k.clone());
        }
        let k = Arc::new(RieszKernel::new(grid, alpha)?);
        cache().lock().unwrap().insert(key, k.clone());
        Ok(k)
    }

    pub fn new(grid: &Grid, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let n = grid.points();
        let m = 2 * n;
        let samples = kernel_samples(grid, alpha);
        // spectrum of the 2n-periodic kernel built from offsets (−n, n]
        let w: Vec<f64> = (0..=n).map(|a| if a == 0 || a == n { 1.0 } else { 2.0 }).collect();
        let cmat = DMatrix::from_fn(n + 1, n + 1, |a, k| w[a] * (PI * (k * a) as f64 / n as f64).cos());
        let mut spectrum = separable_contract(&samples, n + 1, &cmat);
        let scale = grid.cell_volume() / (m * m * m) as f64;
        for v in &mut spectrum {
            *v *= scale;
        }
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Ok(RieszKernel {
            grid: *grid,
            alpha,
            spectrum,
            r2c: rp.plan_fft_forward(m),
            c2r: rp.plan_fft_inverse(m),
            fwd: cp.plan_fft_forward(m),
            inv: cp.plan_fft_inverse(m),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// (ρ ∗ |x|^{−α}) at every grid point, for real ρ of any sign.
    pub fn convolve(&self, rho: &[f64]) -> Vec<f64> {
        let n = self.grid.points();
        assert_eq!(rho.len(), n * n * n);
        let m = 2 * n;
        let hm = n + 1;
        let zero = Complex64::default();

        // z: real transforms of zero-padded lines -> a[i][j][kz]
        let mut a = vec![zero; n * n * hm];
        let mut line = self.r2c.make_input_vec();
        let mut spec = self.r2c.make_output_vec();
        let mut rscratch = self.r2c.make_scratch_vec();
        for ij in 0..n * n {
            line[..n].copy_from_slice(&rho[ij * n..(ij + 1) * n]);
            line[n..].iter_mut().for_each(|v| *v = 0.0);
            self.r2c.process_with_scratch(&mut line, &mut spec, &mut rscratch).expect("r2c length");
            a[ij * hm..(ij + 1) * hm].copy_from_slice(&spec);
        }

        // y: c[i][kz][ky]
        let mut c = vec![zero; n * hm * m];
        let mut scratch = vec![zero; self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())];
        for i in 0..n {
            let slab = &mut c[i * hm * m..(i + 1) * hm * m];
            for j in 0..n {
                let src = &a[(i * n + j) * hm..(i * n + j + 1) * hm];
                for kz in 0..hm {
                    slab[kz * m + j] = src[kz];
                }
            }
            self.fwd.process_with_scratch(slab, &mut scratch);
        }

        // x: forward, multiply, inverse, keep i < n
        let mut d = vec![zero; m * m];
        let idx = |k: usize| k.min(m - k);
        for kz in 0..hm {
            d.iter_mut().for_each(|v| *v = zero);
            for i in 0..n {
                let row = &c[(i * hm + kz) * m..(i * hm + kz + 1) * m];
                for ky in 0..m {
                    d[ky * m + i] = row[ky];
                }
            }
            self.fwd.process_with_scratch(&mut d, &mut scratch);
            for ky in 0..m {
                let yk = idx(ky) * hm + kz;
                for kx in 0..m {
                    d[ky * m + kx] *= self.spectrum[idx(kx) * hm * hm + yk];
                }
            }
            self.inv.process_with_scratch(&mut d, &mut scratch);
            for i in 0..n {
                let row = &mut c[(i * hm + kz) * m..(i * hm + kz + 1) * m];
                for ky in 0..m {
                    row[ky] = d[ky * m + i];
                }
            }
        }

        // y inverse, keep j < n
        for i in 0..n {
            let slab = &mut c[i * hm * m..(i + 1) * hm * m];
            self.inv.process_with_scratch(slab, &mut scratch);
            for j in 0..n {
                let dst = &mut a[(i * n + j) * hm..(i * n + j + 1) * hm];
                for kz in 0..hm {
                    dst[kz] = slab[kz * m + j];
                }
            }
        }

        // z inverse, keep k < n
        let mut out = vec![0.0; n * n * n];
        let mut cscratch = self.c2r.make_scratch_vec();
        for ij in 0..n * n {
            spec.copy_from_slice(&a[ij * hm..(ij + 1) * hm]);
            spec[0].im = 0.0;
            spec[hm - 1].im = 0.0;
            self.c2r.process_with_scratch(&mut spec, &mut line, &mut cscratch).expect("c2r length");
            out[ij * n..(ij + 1) * n].copy_from_slice(&line[..n]);
        }
        out
    }

    /// h³ Σ (ρ₁ ∗ |x|^{−α}) ρ₂.
    pub fn energy(&self, rho1: &[f64], rho2: &[f64]) -> f64 {
        let f = self.convolve(rho1);
        dot(&f, rho2) * self.grid.cell_volume()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Band-limited kernel samples k(a), a ∈ [0, n]^3 (row-major, side n+1).
fn kernel_samples(grid: &Grid, alpha: f64) -> Vec<f64> {
    let n = grid.points();
    let l = grid.box_length();
    let big_l = 4.0 * l;
    let ds = 2.0 * PI / big_l;
    let radius = 3f64.sqrt() * l;
    let ns = 2 * n + 1;
    // K̂_R on |s|² = integer lattice norms
    let gvals = truncated_moment_table(alpha, ds * radius, 3 * (2 * n) * (2 * n));
    let khat = |m2: usize| -> f64 {
        if m2 == 0 {
            4.0 * PI * radius.powf(3.0 - alpha) / (3.0 - alpha)
        } else {
            let s = ds * (m2 as f64).sqrt();
            4.0 * PI * s.powf(alpha - 3.0) * gvals[m2]
        }
    };
    let mut table = vec![0.0; ns * ns * ns];
    for s1 in 0..ns {
        for s2 in 0..ns {
            let base = (s1 * ns + s2) * ns;
            for s3 in 0..ns {
                table[base + s3] = khat(s1 * s1 + s2 * s2 + s3 * s3);
            }
        }
    }
    let w: Vec<f64> = (0..ns).map(|s| if s == 0 || s == 2 * n { 1.0 } else { 2.0 }).collect();
    // cos(ds s a h) = cos(π s a / (2n))
    let cmat = DMatrix::from_fn(ns, n + 1, |s, a| w[s] * (PI * (s * a) as f64 / (2 * n) as f64).cos());
    let mut out = separable_contract(&table, ns, &cmat);
    let norm = 1.0 / (big_l * big_l * big_l);
    for v in &mut out {
        *v *= norm;
    }
    out
}

/// out[a1][a2][a3] = Σ_s t[s1][s2][s3] C[s1][a1] C[s2][a2] C[s3][a3], with
/// `t` a row-major cube of side `ns` and C an `ns × na` matrix.
fn separable_contract(t: &[f64], ns: usize, c: &DMatrix<f64>) -> Vec<f64> {
    let na = c.ncols();
    let ct = c.transpose();
    // last axis: (na × ns) · (ns × ns²) in column-major views
    let t_cm = DMatrixView::from_slice(t, ns, ns * ns);
    let x = &ct * t_cm; // na × ns², i.e. row-major [s1][s2][a3]
    let x = x.as_slice();
    // middle axis, per s1 slab
    let mut y = vec![0.0; ns * na * na];
    for s1 in 0..ns {
        let slab = DMatrixView::from_slice(&x[s1 * ns * na..(s1 + 1) * ns * na], na, ns);
        let r = slab * c; // na × na: column-major (a3, a2) = row-major [a2][a3]
        y[s1 * na * na..(s1 + 1) * na * na].copy_from_slice(r.as_slice());
    }
    // first axis
    let y_cm = DMatrixView::from_slice(&y, na * na, ns);
    let z = y_cm * c; // (na²) × na column-major = row-major [a1][a2 a3]
    z.as_slice().to_vec()
}

/// G(c√m) = ∫₀^{c√m} t^{1−α} sin t dt for m = 0..=m_max.
fn truncated_moment_table(alpha: f64, c: f64, m_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; m_max + 1];
    if (alpha - 1.0).abs() < 1e-15 {
        for (m, v) in out.iter_mut().enumerate() {
            let x = c * (m as f64).sqrt();
            // 1 − cos x, written to avoid cancellation
            *v = 2.0 * (0.5 * x).sin().powi(2);
        }
        return out;
    }
    let p = 1.0 - alpha;
    let series = |x: f64| -> f64 {
        // Σ (−1)^k x^{2k+3−α} / ((2k+1)! (2k+3−α))
        let scale = x.powf(p + 1.0);
        let mut term_fact = x; // (−1)^k x^{2k+1}/(2k+1)!
        let mut acc = 0.0;
        for k in 0..40 {
            let e = 2.0 * k as f64 + 3.0 - alpha;
            acc += term_fact * scale / e;
            term_fact *= -x * x / ((2 * k + 2) as f64 * (2 * k + 3) as f64);
            if term_fact.abs() < 1e-18 * acc.abs().max(1e-300) {
                break;
            }
        }
        acc
    };
    let f = |t: f64| t.powf(p) * t.sin();
    let mut prev_x = 0.0;
    let mut acc = 0.0;
    for m in 1..=m_max {
        let x = c * (m as f64).sqrt();
        if x <= 1.0 {
            out[m] = series(x);
            prev_x = x;
            acc = out[m];
            continue;
        }
        let a0 = if prev_x < 1.0 {
            acc = series(1.0);
            1.0
        } else {
            prev_x
        };
        acc += gauss_legendre(&f, a0, x);
        out[m] = acc;
        prev_x = x;
    }
    out
}

fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 8] = [
        -0.960_289_856_497_536_2,
        -0.796_666_477_413_626_7,
        -0.525_532_409_916_329_0,
        -0.183_434_642_495_649_8,
        0.183_434_642_495_649_8,
        0.525_532_409_916_329_0,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_2,
    ];
    const W: [f64; 8] = [
        0.101_228_536_290_376_3,
        0.222_381_034_453_374_5,
        0.313_706_645_877_887_3,
        0.362_683_783_378_362_0,
        0.362_683_783_378_362_0,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let panels = ((b - a) / 0.5).ceil().max(1.0) as usize;
    let w = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        let mid = lo + 0.5 * w;
        for (x, wt) in X.iter().zip(W.iter()) {
            acc += wt * f(mid + 0.5 * w * x);
        }
    }
    acc * 0.5 * w
}

/// ρ ∗ |x|^{−α} for a density field (real, nonnegative to −1e−12).
pub fn riesz_convolve(rho: &Field, alpha: f64) -> Result<Field> {
    check_alpha(alpha)?;
    rho.check_density(1e-12)?;
    let k = RieszKernel::shared(rho.grid(), alpha)?;
    let f = k.convolve(&rho.real_parts());
    Field::from_real(rho.grid(), FieldTag::Potential, &f)
}

/// h³ Σ (ρ₁ ∗ |x|^{−α}) ρ₂, symmetrized so the result is exactly symmetric.
pub fn hartree_energy(rho1: &Field, rho2: &Field, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    rho1.grid().check_same(rho2.grid())?;
    for r in [rho1, rho2] {
        if r.max_imag() > 1e-12 {
            return Err(Error::Input("hartree_energy expects real densities".into()));
        }
    }
    let k = RieszKernel::shared(rho1.grid(), alpha)?;
    let a = rho1.real_parts();
    let b = rho2.real_parts();
    if a.iter().all(|&v| v == 0.0) || b.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    Ok(0.5 * (k.energy(&a, &b) + k.energy(&b, &a)))
}
