//! Trigonometric interpolation of grid functions: translation, dilation about
//! a point, and transfer between grids.
//!
//! The interpolant is the band-limited periodic one with a real (cosine)
//! Nyquist term, so real samples stay real. When a target point falls
//! outside the source box the function is taken to vanish there, which is
//! the free-space reading of a localized state.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::fft::Fft3;
use crate::grid::Grid;

/// Periodic Dirichlet kernel of an even-n grid: (1/n)·sin(πny/L)·cot(πy/L).
fn dirichlet(n: usize, l: f64, y: f64) -> f64 {
    let t = PI * y / l;
    let s = t.sin();
    if s.abs() < 1e-14 {
        // y is a multiple of L: only the cosine of the Nyquist term can flip
        return if (t / PI).round() as i64 % 2 == 0 { 1.0 } else { (n as f64 * t).cos() };
    }
    (n as f64 * t).sin() * t.cos() / (s * n as f64)
}

/// Row-major (targets × n) matrix evaluating the interpolant of `src` at `targets`.
fn interp_matrix(src: &Grid, targets: &[f64]) -> Vec<f64> {
    let n = src.points();
    let l = src.box_length();
    let half = 0.5 * l;
    let h = src.spacing();
    let mut m = vec![0.0; targets.len() * n];
    for (a, &y) in targets.iter().enumerate() {
        if y < -half - 1e-12 * l || y > half - h + 0.5 * h {
            continue;
        }
        for b in 0..n {
            m[a * n + b] = dirichlet(n, l, y - src.coord(b));
        }
    }
    m
}

/// Applies per-axis matrices (each `n_out × n_in`, row-major) to a cube.
fn apply_separable(u: &[Complex64], n_in: usize, mats: [&[f64]; 3], n_out: usize) -> Vec<Complex64> {
    let zero = Complex64::default();
    // axis 2 (fastest)
    let mut a = vec![zero; n_in * n_in * n_out];
    for ij in 0..n_in * n_in {
        let src = &u[ij * n_in..(ij + 1) * n_in];
        let dst = &mut a[ij * n_out..(ij + 1) * n_out];
        for (o, d) in dst.iter_mut().enumerate() {
            let row = &mats[2][o * n_in..(o + 1) * n_in];
            let mut acc = zero;
            for (w, v) in row.iter().zip(src) {
                acc += v * *w;
            }
            *d = acc;
        }
    }
    // axis 1
    let mut b = vec![zero; n_in * n_out * n_out];
    for i in 0..n_in {
        for o in 0..n_out {
            let row = &mats[1][o * n_in..(o + 1) * n_in];
            let dst = &mut b[(i * n_out + o) * n_out..(i * n_out + o + 1) * n_out];
            for (j, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &a[(i * n_in + j) * n_out..(i * n_in + j + 1) * n_out];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += v * w;
                }
            }
        }
    }
    // axis 0
    let plane = n_out * n_out;
    let mut c = vec![zero; n_out * plane];
    for o in 0..n_out {
        let row = &mats[0][o * n_in..(o + 1) * n_in];
        let dst = &mut c[o * plane..(o + 1) * plane];
        for (i, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let src = &b[i * plane..(i + 1) * plane];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v * w;
            }
        }
    }
    c
}

/// Samples of the interpolant of `u` (on `src`) at the points of `dst`.
pub fn transfer(src: &Grid, u: &[Complex64], dst: &Grid) -> Vec<Complex64> {
    let targets = dst.coords();
    let m = interp_matrix(src, &targets);
    apply_separable(u, src.points(), [&m, &m, &m], dst.points())
}

/// λ^{3/2} u(c + λ(x − c)): L²-norm preserving dilation about `center`.
///
/// λ > 1 concentrates the state, λ < 1 spreads it.
pub fn dilate(grid: &Grid, u: &[Complex64], lambda: f64, center: [f64; 3]) -> Vec<Complex64> {
    let x = grid.coords();
    let mats: Vec<Vec<f64>> = (0..3)
        .map(|d| {
            let t: Vec<f64> = x.iter().map(|&xi| center[d] + lambda * (xi - center[d])).collect();
            interp_matrix(grid, &t)
        })
        .collect();
    let mut out = apply_separable(u, grid.points(), [&mats[0], &mats[1], &mats[2]], grid.points());
    let amp = lambda.powf(1.5);
    for v in &mut out {
        *v *= amp;
    }
    out
}

/// u(x + shift), exact for band-limited periodic u.
pub fn translate(grid: &Grid, fft: &Fft3, u: &[Complex64], shift: [f64; 3]) -> Vec<Complex64> {
    let n = grid.points();
    let phases: Vec<Vec<Complex64>> = (0..3)
        .map(|d| {
            (0..n)
                .map(|s| {
                    let arg = grid.frequency(s) * shift[d];
                    if grid.is_nyquist(s) {
                        Complex64::new(arg.cos(), 0.0)
                    } else {
                        Complex64::from_polar(1.0, arg)
                    }
                })
                .collect()
        })
        .collect();
    let mut buf = u.to_vec();
    fft.forward(&mut buf);
    for i in 0..n {
        for j in 0..n {
            let pij = phases[0][i] * phases[1][j];
            let row = &mut buf[(i * n + j) * n..(i * n + j + 1) * n];
            for (k, v) in row.iter_mut().enumerate() {
                *v *= pij * phases[2][k];
            }
        }
    }
    fft.inverse(&mut buf);
    buf
}

/// ∂u/∂x_axis by Fourier differentiation; the Nyquist mode is dropped so
/// that real input stays real.
pub fn spectral_derivative(grid: &Grid, fft: &Fft3, u: &[Complex64], axis: usize) -> Vec<Complex64> {
    let n = grid.points();
    let mut buf = u.to_vec();
    fft.forward(&mut buf);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let s = [i, j, k][axis];
                let xi = if grid.is_nyquist(s) { 0.0 } else { grid.frequency(s) };
                buf[(i * n + j) * n + k] *= Complex64::new(0.0, xi);
            }
        }
    }
    fft.inverse(&mut buf);
    buf
}
