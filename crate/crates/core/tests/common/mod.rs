//! Test oracles shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

/// `-d²/dx²` on `n` periodic points of spacing `2L/n`, built from the
/// trigonometric interpolant (the FFT convention, Nyquist mode included).
fn kinetic_1d(n: usize, half_width: f64) -> DMatrix<f64> {
    let dk = PI / half_width;
    let dx = 2.0 * half_width / n as f64;
    let k: Vec<f64> = (0..n)
        .map(|m| {
            let m = m as i64;
            let s = if m < n as i64 / 2 { m } else { m - n as i64 };
            s as f64 * dk
        })
        .collect();
    DMatrix::from_fn(n, n, |j, l| {
        let d = (j as f64 - l as f64) * dx;
        k.iter().map(|km| km * km * (km * d).cos()).sum::<f64>() / n as f64
    })
}

/// Orthonormal basis of the even (odd) sector under `j -> n - j`, as
/// columns. Point `j` sits at `x_j = -L + j dx`, so the mirror fixes 0 and n/2.
fn parity_basis(n: usize, odd: bool) -> DMatrix<f64> {
    let half = n / 2;
    let cols: Vec<usize> = if odd { (1..half).collect() } else { (0..=half).collect() };
    let mut b = DMatrix::<f64>::zeros(n, cols.len());
    for (c, &j) in cols.iter().enumerate() {
        let mirror = (n - j) % n;
        if mirror == j {
            b[(j, c)] = 1.0;
        } else {
            let w = 1.0 / 2f64.sqrt();
            b[(j, c)] = w;
            b[(mirror, c)] = if odd { -w } else { w };
        }
    }
    b
}

/// All eigenvalues of `-Δ + V` for the radial Gaussian well on an `n²`
/// periodic grid, by dense diagonalization of the four parity blocks.
pub fn dense_gaussian_spectrum(n: usize, half_width: f64, v0: f64, width: f64) -> Vec<f64> {
    let dx = 2.0 * half_width / n as f64;
    let k = kinetic_1d(n, half_width);
    let mut eig: Vec<f64> = Vec::with_capacity(n * n);
    for ox in [false, true] {
        for oy in [false, true] {
            let bx = parity_basis(n, ox);
            let by = parity_basis(n, oy);
            let kx = bx.transpose() * &k * &bx;
            let ky = by.transpose() * &k * &by;
            // Basis column c is supported on the representative point of its orbit.
            let rep = |b: &DMatrix<f64>, c: usize| (0..n).find(|&j| b[(j, c)] != 0.0).unwrap();
            let (nx, ny) = (bx.ncols(), by.ncols());
            let mut h = DMatrix::<f64>::zeros(nx * ny, nx * ny);
            for a in 0..ny {
                for b in 0..nx {
                    let row = a * nx + b;
                    for bb in 0..nx {
                        h[(row, a * nx + bb)] += kx[(b, bb)];
                    }
                    for aa in 0..ny {
                        h[(row, aa * nx + b)] += ky[(a, aa)];
                    }
                    let x = -half_width + rep(&bx, b) as f64 * dx;
                    let y = -half_width + rep(&by, a) as f64 * dx;
                    h[(row, row)] -= v0 * (-(x * x + y * y) / (2.0 * width * width)).exp();
                }
            }
            eig.extend(SymmetricEigen::new(h).eigenvalues.iter());
        }
    }
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}
