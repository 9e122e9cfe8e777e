//! FFT engine for the periodic square grid.
//!
//! The forward transform leaves the data in a transposed `[kx][ky]` layout so
//! that a forward/inverse pair costs two row passes and two transposes in total.
//! Every multiplier used here depends on `|k|^2` only, which is symmetric in
//! `(kx, ky)`, so the layout never leaks out of this module except through
//! [`Spectral::forward_natural`].

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

const BLOCK: usize = 16;

pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    k2: Vec<f64>,
    k1: Vec<f64>,
}

impl Spectral {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.n();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        let k1: Vec<f64> = (0..n).map(|m| spec.wavenumber(m)).collect();
        let mut k2 = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                k2[a * n + b] = k1[a] * k1[a] + k1[b] * k1[b];
            }
        }
        Spectral {
            n,
            fwd,
            inv,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            k2,
            k1,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `|k|^2` at every spectral index.
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// One-dimensional wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.k1
    }

    /// Unnormalized forward DFT; output in the internal `[kx][ky]` layout.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.n * self.n);
        self.fwd.process_with_scratch(data, &mut self.scratch);
        transpose_square(data, self.n);
        self.fwd.process_with_scratch(data, &mut self.scratch);
    }

    /// Inverse of [`Spectral::forward`], including the `1/n^2` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.n * self.n);
        self.inv.process_with_scratch(data, &mut self.scratch);
        transpose_square(data, self.n);
        self.inv.process_with_scratch(data, &mut self.scratch);
        let norm = 1.0 / (self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }

    /// Unnormalized forward DFT with the output in natural `[ky][kx]` order.
    pub fn forward_natural(&mut self, data: &mut [Complex64]) {
        self.forward(data);
        transpose_square(data, self.n);
    }

    /// Inverse of [`Spectral::forward_natural`].
    pub fn inverse_natural(&mut self, data: &mut [Complex64]) {
        transpose_square(data, self.n);
        self.inverse(data);
    }

    /// `data <- F^{-1}[ mult * F[data] ]` for a complex multiplier in the internal layout.
    pub fn apply_multiplier(&mut self, data: &mut [Complex64], mult: &[Complex64]) {
        self.forward(data);
        for (v, m) in data.iter_mut().zip(mult) {
            *v *= m;
        }
        self.inverse(data);
    }

    /// Same as [`Spectral::apply_multiplier`] for a real multiplier.
    pub fn apply_real_multiplier(&mut self, data: &mut [Complex64], mult: &[f64]) {
        self.forward(data);
        for (v, m) in data.iter_mut().zip(mult) {
            *v *= *m;
        }
        self.inverse(data);
    }

    /// In-place `-Δ`.
    pub fn neg_laplacian(&mut self, data: &mut [Complex64]) {
        self.forward(data);
        for (v, k2) in data.iter_mut().zip(&self.k2) {
            *v *= *k2;
        }
        self.inverse(data);
    }

    /// Free propagator multiplier `exp(-i |k|^2 tau)`.
    pub fn kinetic_phase(&self, tau: f64) -> Vec<Complex64> {
        self.k2
            .iter()
            .map(|&k2| Complex64::from_polar(1.0, -k2 * tau))
            .collect()
    }
}

/// In-place transpose of a row-major `n x n` matrix.
pub(crate) fn transpose_square(data: &mut [Complex64], n: usize) {
    for bi in (0..n).step_by(BLOCK) {
        for bj in (bi..n).step_by(BLOCK) {
            let i_end = (bi + BLOCK).min(n);
            let j_end = (bj + BLOCK).min(n);
            for i in bi..i_end {
                let j_start = if bi == bj { i + 1 } else { bj };
                for j in j_start..j_end {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_is_involution() {
        let n = 40;
        let orig: Vec<Complex64> = (0..n * n)
            .map(|k| Complex64::new(k as f64, -(k as f64)))
            .collect();
        let mut d = orig.clone();
        transpose_square(&mut d, n);
        assert_eq!(d[3 * n + 7], orig[7 * n + 3]);
        transpose_square(&mut d, n);
        assert_eq!(d, orig);
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let spec = GridSpec::new(32, 5.0).unwrap();
        let mut sp = Spectral::new(spec);
        let orig: Vec<Complex64> = (0..32 * 32)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()))
            .collect();
        let mut d = orig.clone();
        sp.forward(&mut d);
        sp.inverse(&mut d);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
