//! Small slice-level kernels shared by the iterative solvers.

use num_complex::Complex64;

use crate::grid::inner_unchecked;

pub(crate) fn norm_sq(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// `y += c x`
pub(crate) fn axpy(y: &mut [Complex64], c: Complex64, x: &[Complex64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += c * b;
    }
}

/// `y += c x` for a real scalar.
pub(crate) fn axpy_re(y: &mut [Complex64], c: f64, x: &[Complex64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += b * c;
    }
}

/// Removes the components along the (orthonormal, unweighted) `basis`.
pub(crate) fn deflate(v: &mut [Complex64], basis: &[Vec<Complex64>]) {
    for q in basis {
        let c = inner_unchecked(q, v);
        axpy(v, -c, q);
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PcgOutcome {
    pub rel_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum PcgFailure {
    /// `p^* A p <= 0` was encountered.
    Indefinite,
    MaxIterations { rel_residual: f64 },
}

/// Preconditioned conjugate gradients for a Hermitian positive definite
/// operator. `x` holds the initial guess on entry and the solution on exit.
pub(crate) fn pcg(
    mut apply: impl FnMut(&[Complex64], &mut [Complex64]),
    mut precond: impl FnMut(&[Complex64], &mut [Complex64]),
    b: &[Complex64],
    x: &mut [Complex64],
    rtol: f64,
    max_iter: usize,
) -> Result<PcgOutcome, PcgFailure> {
    let n = b.len();
    let b_norm = norm_sq(b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        return Ok(PcgOutcome {
            rel_residual: 0.0,
        });
    }
    let mut ax = vec![Complex64::new(0.0, 0.0); n];
    apply(x, &mut ax);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = inner_unchecked(&r, &z).re;
    let mut ap = ax;
    let mut rel = norm_sq(&r).sqrt() / b_norm;
    if rel <= rtol {
        return Ok(PcgOutcome {
            rel_residual: rel,
        });
    }
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = inner_unchecked(&p, &ap).re;
        if pap <= 0.0 || !pap.is_finite() {
            return Err(PcgFailure::Indefinite);
        }
        let alpha = rz / pap;
        axpy_re(x, alpha, &p);
        axpy_re(&mut r, -alpha, &ap);
        rel = norm_sq(&r).sqrt() / b_norm;
        if rel <= rtol {
            // Confirm against the true residual; recursion drift can fake convergence.
            apply(x, &mut ap);
            let true_rel = b
                .iter()
                .zip(&ap)
                .map(|(b, a)| (b - a).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / b_norm;
            if true_rel <= 10.0 * rtol {
                return Ok(PcgOutcome {
                    rel_residual: true_rel,
                });
            }
            for ((ri, bi), ai) in r.iter_mut().zip(b).zip(&ap) {
                *ri = bi - ai;
            }
        }
        precond(&r, &mut z);
        let rz_new = inner_unchecked(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + *pi * beta;
        }
    }
    Err(PcgFailure::MaxIterations { rel_residual: rel })
}
