//! Small dense Hermitian helpers for frame-sized (R × R) matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::field::inner;

pub type CMat = DMatrix<Complex64>;

/// Eigen-decomposition with eigenvalues sorted ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    // symmetrize explicitly so rounding in the input cannot break the solver
    let h = CMat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// f(M) for Hermitian M through its eigen-decomposition.
pub fn hermitian_function(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let mut scaled = vecs.clone();
    for c in 0..n {
        let s = f(vals[c]);
        for r in 0..n {
            scaled[(r, c)] *= s;
        }
    }
    &scaled * vecs.adjoint()
}

/// Gram matrix G_ij = Σ conj(a_i)·b_j (no volume factor).
pub fn gram(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> CMat {
    CMat::from_fn(a.len(), b.len(), |i, j| inner(&a[i], &b[j]))
}

/// Columns combined as out_j = Σ_i vecs_i · c_ij.
pub fn combine(vecs: &[Vec<Complex64>], c: &CMat) -> Vec<Vec<Complex64>> {
    let len = vecs.first().map_or(0, |v| v.len());
    (0..c.ncols())
        .map(|j| {
            let mut out = vec![Complex64::default(); len];
            for (i, v) in vecs.iter().enumerate() {
                let w = c[(i, j)];
                if w == Complex64::default() {
                    continue;
                }
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x * w;
                }
            }
            out
        })
        .collect()
}

/// y += a·x
#[inline]
pub fn axpy(a: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
pub fn axpy_re(a: f64, x: &[Complex64], y: &mut [Complex64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += xv * a;
    }
}
