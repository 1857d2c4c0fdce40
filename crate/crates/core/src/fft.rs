//! Complex 3D FFT on an n^3 grid built from batched 1D rustfft transforms.
//!
//! The forward transform is unnormalized; `inverse` divides by n^3 so that
//! `inverse(forward(u)) == u`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let s = 1.0 / (self.n * self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n, "buffer does not match grid");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // last axis: contiguous lines
        plan.process_with_scratch(data, &mut scratch);
        // middle axis: transpose each i-slab, transform, transpose back
        let mut slab = vec![Complex64::default(); n * n];
        for i in 0..n {
            let base = i * n * n;
            for j in 0..n {
                for k in 0..n {
                    slab[k * n + j] = data[base + j * n + k];
                }
            }
            plan.process_with_scratch(&mut slab, &mut scratch);
            for j in 0..n {
                for k in 0..n {
                    data[base + j * n + k] = slab[k * n + j];
                }
            }
        }
        // first axis: gather (i, k) planes for each j
        for j in 0..n {
            for i in 0..n {
                let row = (i * n + j) * n;
                for k in 0..n {
                    slab[k * n + i] = data[row + k];
                }
            }
            plan.process_with_scratch(&mut slab, &mut scratch);
            for i in 0..n {
                let row = (i * n + j) * n;
                for k in 0..n {
                    data[row + k] = slab[k * n + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_plane_wave() {
        let n = 8;
        let f = Fft3::new(n);
        let mut data: Vec<Complex64> = (0..n * n * n).map(|i| Complex64::new((i % 7) as f64, (i % 3) as f64)).collect();
        let orig = data.clone();
        f.forward(&mut data);
        f.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
        // e^{2πi(x + 2y - z)/n} lands in a single slot
        let mut pw = vec![Complex64::default(); n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let ph = 2.0 * std::f64::consts::PI * (i as f64 + 2.0 * j as f64 - k as f64) / n as f64;
                    pw[(i * n + j) * n + k] = Complex64::from_polar(1.0, ph);
                }
            }
        }
        f.forward(&mut pw);
        let hot = (n + 2) * n + (n - 1);
        for (idx, v) in pw.iter().enumerate() {
            let want = if idx == hot { (n * n * n) as f64 } else { 0.0 };
            assert!((v.re - want).abs() < 1e-9 && v.im.abs() < 1e-9, "{idx} {v}");
        }
    }
}
