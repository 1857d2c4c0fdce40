//! Uniform periodic sampling of the cube [-L/2, L/2)^3.
//!
//! Sample `j` along an axis sits at `x_j = -L/2 + j h`, so the origin is
//! sample `n/2`. Flat indices are row-major with the last axis fastest:
//! `idx = (i n + j) n + k`. Frequencies are stored in FFT order, slot `s`
//! carrying the integer wavenumber `s` for `s < n/2` and `s - n` otherwise.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    box_length: f64,
    points: usize,
}

impl Grid {
    pub fn new(box_length: f64, points: usize) -> Result<Self> {
        if !(box_length.is_finite() && box_length > 0.0) {
            return config(format!("box length must be positive, got {box_length}"));
        }
        if points % 2 != 0 {
            return config(format!("n must be even, got {points}"));
        }
        if points < 4 {
            return config(format!("n must be at least 4, got {points}"));
        }
        Ok(Grid { box_length, points })
    }

    #[inline]
    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    #[inline]
    pub fn points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.box_length / self.points as f64
    }

    /// Total number of samples, n^3.
    #[inline]
    pub fn len(&self) -> usize {
        self.points * self.points * self.points
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight h^3 of one sample.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h * h * h
    }

    /// Spacing of the frequency lattice, 2π/L.
    #[inline]
    pub fn frequency_spacing(&self) -> f64 {
        2.0 * PI / self.box_length
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        -0.5 * self.box_length + j as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.coord(j)).collect()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.points + j) * self.points + k
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.points;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.unindex(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Integer wavenumber carried by FFT slot `s`.
    #[inline]
    pub fn wavenumber(&self, s: usize) -> i64 {
        let n = self.points as i64;
        let s = s as i64;
        if s < n / 2 {
            s
        } else {
            s - n
        }
    }

    /// Inverse of [`Grid::wavenumber`]; `None` outside `[-n/2, n/2)`.
    pub fn slot(&self, k: i64) -> Option<usize> {
        let n = self.points as i64;
        if k < -n / 2 || k >= n / 2 {
            return None;
        }
        Some(if k >= 0 { k as usize } else { (k + n) as usize })
    }

    /// Angular frequency 2πk/L of FFT slot `s`.
    #[inline]
    pub fn frequency(&self, s: usize) -> f64 {
        self.frequency_spacing() * self.wavenumber(s) as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.points).map(|s| self.frequency(s)).collect()
    }

    #[inline]
    pub fn is_nyquist(&self, s: usize) -> bool {
        s == self.points / 2
    }

    /// The same sampling with every length multiplied by `factor`.
    ///
    /// Re-reading the samples of `u` on the rescaled grid represents
    /// `u(x / factor)` up to the amplitude convention chosen by the caller.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        Grid::new(self.box_length * factor, self.points)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.points != other.points || (self.box_length - other.box_length).abs() > 1e-12 * self.box_length
        {
            return Err(Error::GridMismatch(format!(
                "(L={}, n={}) vs (L={}, n={})",
                self.box_length, self.points, other.box_length, other.points
            )));
        }
        Ok(())
    }

    /// Squared radius |x|^2 of every sample, measured from `center`.
    pub fn radius_squared_from(&self, center: [f64; 3]) -> Vec<f64> {
        let c = self.coords();
        let n = self.points;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..n {
            let dx = c[i] - center[0];
            for j in 0..n {
                let dy = c[j] - center[1];
                for k in 0..n {
                    let dz = c[k] - center[2];
                    out.push(dx * dx + dy * dy + dz * dz);
                }
            }
        }
        out
    }

    /// |ξ|^2 in FFT order.
    pub fn frequency_squared(&self) -> Vec<f64> {
        let f = self.frequencies();
        let n = self.points;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(f[i] * f[i] + f[j] * f[j] + f[k] * f[k]);
                }
            }
        }
        out
    }
}
