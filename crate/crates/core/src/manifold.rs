//! Small nonlinear bound states `psi_E = a psi0 + h(a)` of
//! `H psi + γ |psi|^2 psi = E psi`, built by the nested fixed point in `h`
//! and scalar root in `E`, and tabulated along `|a|`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_product, inner_unchecked, lp_norm, ComplexField, GridSpec};
use crate::operator::{
    apply_h, DiscreteSpectrum, Potential, ResolventSolver, RESOLVENT_ENERGY_LIMIT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldOptions {
    /// Damping `λ` of the fixed-point iteration for `h`.
    pub damping: f64,
    pub max_iter: usize,
    /// Relative step size at which the `h` iteration stops.
    pub h_tol: f64,
    /// Bound on `|G(E)|` for the energy root.
    pub e_tol: f64,
    /// Half-width `δ_E` of the admissible energy window around `E0`;
    /// `None` uses `0.9 |E0|`.
    pub energy_window: Option<f64>,
}

impl Default for ManifoldOptions {
    fn default() -> Self {
        ManifoldOptions {
            damping: 0.5,
            max_iter: 500,
            h_tol: 1e-10,
            e_tol: 1e-10,
            energy_window: None,
        }
    }
}

/// `|aψ0 + h|^2 (aψ0 + h)` as a slice.
fn cubic(a: Complex64, psi0: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    psi0.iter()
        .zip(h)
        .map(|(p, hv)| {
            let v = a * p + hv;
            v * v.norm_sqr()
        })
        .collect()
}

/// `f_p(a, h) = <ψ0, |aψ0 + h|^2 (aψ0 + h)>`.
pub fn f_p(a: Complex64, h: &ComplexField, spectrum: &DiscreteSpectrum) -> Result<Complex64> {
    h.spec().check_same(spectrum.psi0.spec())?;
    let c = ComplexField::from_raw(*h.spec(), cubic(a, spectrum.psi0.values(), h.values()));
    inner_product(&spectrum.psi0, &c)
}

/// `f_c(a, h) = P_c(|aψ0 + h|^2 (aψ0 + h))`.
pub fn f_c(a: Complex64, h: &ComplexField, spectrum: &DiscreteSpectrum) -> Result<ComplexField> {
    h.spec().check_same(spectrum.psi0.spec())?;
    let c = ComplexField::from_raw(*h.spec(), cubic(a, spectrum.psi0.values(), h.values()));
    crate::operator::project_continuous(&c, spectrum)
}

/// Solver state shared by the `h` iteration and the energy root.
pub(crate) struct ManifoldSolver<'a> {
    spectrum: &'a DiscreteSpectrum,
    resolvent: ResolventSolver,
    gamma: f64,
    opts: ManifoldOptions,
    spec: GridSpec,
    cell: f64,
}

impl<'a> ManifoldSolver<'a> {
    pub(crate) fn new(
        potential: &Potential,
        spectrum: &'a DiscreteSpectrum,
        gamma: f64,
        opts: ManifoldOptions,
    ) -> Result<Self> {
        potential.spec().check_same(spectrum.psi0.spec())?;
        if !(opts.damping > 0.0 && opts.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "damping must lie in (0, 1], got {}",
                opts.damping
            )));
        }
        Ok(ManifoldSolver {
            spectrum,
            resolvent: ResolventSolver::new(potential, Some(spectrum)),
            gamma,
            opts,
            spec: *potential.spec(),
            cell: potential.spec().cell_area(),
        })
    }

    fn psi0(&self) -> &[Complex64] {
        self.spectrum.psi0.values()
    }

    fn window(&self) -> (f64, f64) {
        let e0 = self.spectrum.e0;
        let d = self.opts.energy_window.unwrap_or(0.9 * e0.abs());
        (e0 - d, (e0 + d).min(RESOLVENT_ENERGY_LIMIT))
    }

    /// Damped fixed point `h = -γ (H - E)^{-1} f_c(a, h)` for real `a >= 0`.
    pub(crate) fn solve_h(
        &mut self,
        energy: f64,
        a_abs: f64,
        start: Option<&[Complex64]>,
    ) -> Result<Vec<Complex64>> {
        let n = self.spec.len();
        if energy >= RESOLVENT_ENERGY_LIMIT {
            return Err(Error::EInSpectrum(energy));
        }
        if a_abs == 0.0 || self.gamma == 0.0 {
            return Ok(vec![Complex64::new(0.0, 0.0); n]);
        }
        let a = Complex64::new(a_abs, 0.0);
        let lambda = self.opts.damping;
        let mut h = start
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); n]);
        let mut step = f64::INFINITY;
        for _ in 0..self.opts.max_iter {
            let f = cubic(a, self.psi0(), &h);
            let (w, _) = self.resolvent.solve(&f, energy)?;
            let mut diff_sq = 0.0;
            let mut map_sq = 0.0;
            for (hv, wv) in h.iter_mut().zip(&w) {
                let m = -self.gamma * wv;
                diff_sq += (m - *hv).norm_sqr();
                map_sq += m.norm_sqr();
                *hv += (m - *hv) * lambda;
            }
            step = (diff_sq * self.cell).sqrt();
            let scale = (map_sq * self.cell).sqrt();
            if step <= self.opts.h_tol * scale.max(f64::MIN_POSITIVE) {
                // The last full map is the more accurate iterate.
                for (hv, wv) in h.iter_mut().zip(&w) {
                    *hv = -self.gamma * wv;
                }
                return Ok(h);
            }
        }
        Err(Error::non_convergence(
            format!("h fixed point at |a| = {a_abs:.4e}, E = {energy:.8e}"),
            self.opts.max_iter,
            step,
        ))
    }

    /// `G(E) = E0 - E + γ |a|^{-1} f_p(|a|, h(E))`.
    fn g(&mut self, energy: f64, a_abs: f64, start: Option<&[Complex64]>) -> Result<(f64, Vec<Complex64>)> {
        let h = self.solve_h(energy, a_abs, start)?;
        let f = cubic(Complex64::new(a_abs, 0.0), self.psi0(), &h);
        let fp = inner_unchecked(self.psi0(), &f) * self.cell;
        Ok((self.spectrum.e0 - energy + self.gamma * fp.re / a_abs, h))
    }

    /// Energy root by a safeguarded secant iteration from `e_start`.
    pub(crate) fn solve_e(
        &mut self,
        a_abs: f64,
        e_start: f64,
        h_start: Option<&[Complex64]>,
    ) -> Result<(f64, Vec<Complex64>)> {
        let e0 = self.spectrum.e0;
        if a_abs == 0.0 || self.gamma == 0.0 {
            return Ok((e0, vec![Complex64::new(0.0, 0.0); self.spec.len()]));
        }
        let (lo, hi) = self.window();
        let mut e_prev = e_start;
        let (mut g_prev, mut h) = self.g(e_prev, a_abs, h_start)?;
        if g_prev.abs() <= self.opts.e_tol {
            return Ok((e_prev, h));
        }
        // G'(E) = -1 + O(|a|^2), so the first step is a Newton step with slope -1.
        let mut e = e_prev + g_prev;
        let mut bracket: Option<(f64, f64)> = None;
        for _ in 0..100 {
            if !(e > lo && e < hi) {
                return Err(Error::RootOutsideWindow { energy: e, lo, hi });
            }
            let (g, h_new) = self.g(e, a_abs, Some(&h))?;
            h = h_new;
            if g.abs() <= self.opts.e_tol {
                return Ok((e, h));
            }
            if g.signum() != g_prev.signum() {
                bracket = Some((e_prev.min(e), e_prev.max(e)));
            }
            let slope = (g - g_prev) / (e - e_prev);
            let mut next = if slope != 0.0 && slope.is_finite() {
                e - g / slope
            } else {
                e + g
            };
            if let Some((b_lo, b_hi)) = bracket {
                if !(next > b_lo && next < b_hi) {
                    next = 0.5 * (b_lo + b_hi);
                }
            }
            e_prev = e;
            g_prev = g;
            e = next;
        }
        Err(Error::non_convergence(
            format!("energy root at |a| = {a_abs:.4e}"),
            100,
            g_prev.abs(),
        ))
    }
}

/// `h` on the branch through real `|a|` at the given energy.
pub fn solve_h(
    energy: f64,
    a_abs: f64,
    gamma: f64,
    spectrum: &DiscreteSpectrum,
    potential: &Potential,
    opts: &ManifoldOptions,
) -> Result<ComplexField> {
    let mut solver = ManifoldSolver::new(potential, spectrum, gamma, opts.clone())?;
    let h = solver.solve_h(energy, a_abs, None)?;
    Ok(ComplexField::from_raw(*potential.spec(), h).force_real())
}

/// `(E, h)` on the branch at real `|a|`, starting from `E = E0`.
pub fn solve_e(
    a_abs: f64,
    gamma: f64,
    spectrum: &DiscreteSpectrum,
    potential: &Potential,
    opts: &ManifoldOptions,
) -> Result<(f64, ComplexField)> {
    let mut solver = ManifoldSolver::new(potential, spectrum, gamma, opts.clone())?;
    let (e, h) = solver.solve_e(a_abs, spectrum.e0, None)?;
    Ok((e, ComplexField::from_raw(*potential.spec(), h).force_real()))
}

/// A point `(a, E, h, psi_E)` on the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundState {
    pub a: Complex64,
    pub energy: f64,
    pub h: ComplexField,
    pub psi_e: ComplexField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSample {
    pub a_abs: f64,
    pub energy: f64,
    /// Real-tagged `h̃(E(|a|), |a|)`.
    pub h: ComplexField,
}

/// Tabulated branch over `0 <= |a| <= delta_scale`.
///
/// Interpolation runs in `s = |a|^2` on the rescaled quantities
/// `(E - E0)/|a|^2` and `h/|a|^3`, which are smooth up to `a = 0` where they
/// take the limits `γ ||ψ0||_4^4` and `-γ (H - E0)^{-1} P_c ψ0^3`.
#[derive(Debug, Clone)]
pub struct BranchTable {
    gamma: f64,
    e0: f64,
    psi0: ComplexField,
    samples: Vec<BranchSample>,
    delta_scale: f64,
    nodes: Vec<f64>,
    energy_coef: Vec<f64>,
    energy_slope: Vec<f64>,
    h_coef: Vec<Vec<f64>>,
    h_slope: Vec<Vec<f64>>,
}

impl BranchTable {
    /// Assembles a table from solved samples; the first sample must be `|a| = 0`.
    pub fn from_samples(
        gamma: f64,
        spectrum: &DiscreteSpectrum,
        potential: &Potential,
        samples: Vec<BranchSample>,
    ) -> Result<Self> {
        if samples.is_empty() || samples[0].a_abs != 0.0 {
            return Err(Error::InvalidConfig("branch must start at |a| = 0".into()));
        }
        if samples.windows(2).any(|w| w[1].a_abs <= w[0].a_abs) {
            return Err(Error::InvalidConfig("branch samples must increase in |a|".into()));
        }
        let psi0 = &spectrum.psi0;
        let quartic = lp_norm(psi0, 4.0)?.powi(4);
        let limit_h: Vec<f64> = if gamma == 0.0 || samples.len() == 1 {
            vec![0.0; psi0.spec().len()]
        } else {
            let cube: Vec<Complex64> = psi0.values().iter().map(|p| p * p.norm_sqr()).collect();
            let mut solver = ResolventSolver::new(potential, Some(spectrum));
            let (w, _) = solver.solve(&cube, spectrum.e0)?;
            w.iter().map(|v| -gamma * v.re).collect()
        };
        let nodes: Vec<f64> = samples.iter().map(|s| s.a_abs * s.a_abs).collect();
        let mut energy_coef = Vec::with_capacity(samples.len());
        let mut h_coef = Vec::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            if k == 0 {
                energy_coef.push(gamma * quartic);
                h_coef.push(limit_h.clone());
            } else {
                let a2 = s.a_abs * s.a_abs;
                energy_coef.push((s.energy - spectrum.e0) / a2);
                let inv = 1.0 / (a2 * s.a_abs);
                h_coef.push(s.h.values().iter().map(|v| v.re * inv).collect());
            }
        }
        let energy_slope = pchip_slopes(&nodes, &energy_coef);
        let npts = psi0.spec().len();
        let mut h_slope = vec![vec![0.0; npts]; samples.len()];
        let mut column = vec![0.0; samples.len()];
        for j in 0..npts {
            for (c, hc) in column.iter_mut().zip(&h_coef) {
                *c = hc[j];
            }
            for (k, d) in pchip_slopes(&nodes, &column).into_iter().enumerate() {
                h_slope[k][j] = d;
            }
        }
        let delta_scale = samples.last().map(|s| s.a_abs).unwrap_or(0.0);
        Ok(BranchTable {
            gamma,
            e0: spectrum.e0,
            psi0: psi0.clone(),
            samples,
            delta_scale,
            nodes,
            energy_coef,
            energy_slope,
            h_coef,
            h_slope,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    pub fn psi0(&self) -> &ComplexField {
        &self.psi0
    }

    pub fn spec(&self) -> &GridSpec {
        self.psi0.spec()
    }

    pub fn samples(&self) -> &[BranchSample] {
        &self.samples
    }

    /// Largest tabulated `|a|`.
    pub fn delta_scale(&self) -> f64 {
        self.delta_scale
    }

    fn check_range(&self, a_abs: f64) -> Result<()> {
        if !(a_abs >= 0.0) || a_abs > self.delta_scale * (1.0 + 1e-12) {
            return Err(Error::OutOfRange {
                value: a_abs,
                max: self.delta_scale,
            });
        }
        Ok(())
    }

    fn locate(&self, s: f64) -> (usize, f64, [f64; 4]) {
        let k = match self.nodes.iter().rposition(|&x| x <= s) {
            Some(k) if k + 1 < self.nodes.len() => k,
            Some(k) => k.saturating_sub(1),
            None => 0,
        };
        let width = self.nodes[k + 1] - self.nodes[k];
        let t = ((s - self.nodes[k]) / width).clamp(0.0, 1.0);
        let t2 = t * t;
        let t3 = t2 * t;
        let basis = [
            2.0 * t3 - 3.0 * t2 + 1.0,
            (t3 - 2.0 * t2 + t) * width,
            -2.0 * t3 + 3.0 * t2,
            (t3 - t2) * width,
        ];
        (k, t, basis)
    }

    /// `E(|a|)`.
    pub fn energy(&self, a_abs: f64) -> Result<f64> {
        self.check_range(a_abs)?;
        if self.samples.len() == 1 || a_abs == 0.0 {
            return Ok(self.e0);
        }
        let s = a_abs * a_abs;
        let (k, _, b) = self.locate(s);
        let c = b[0] * self.energy_coef[k]
            + b[1] * self.energy_slope[k]
            + b[2] * self.energy_coef[k + 1]
            + b[3] * self.energy_slope[k + 1];
        Ok(self.e0 + c * s)
    }

    /// Real profile `h̃(E(|a|), |a|)` as a slice.
    pub(crate) fn h_real(&self, a_abs: f64) -> Result<Vec<f64>> {
        self.check_range(a_abs)?;
        let npts = self.spec().len();
        if self.samples.len() == 1 || a_abs == 0.0 {
            return Ok(vec![0.0; npts]);
        }
        let s = a_abs * a_abs;
        let (k, _, b) = self.locate(s);
        let scale = s * a_abs;
        let (c0, d0, c1, d1) = (
            &self.h_coef[k],
            &self.h_slope[k],
            &self.h_coef[k + 1],
            &self.h_slope[k + 1],
        );
        Ok((0..npts)
            .map(|j| scale * (b[0] * c0[j] + b[1] * d0[j] + b[2] * c1[j] + b[3] * d1[j]))
            .collect())
    }

    /// `h(a) = (a/|a|) h̃(|a|)` as a slice.
    pub(crate) fn h_slice(&self, a: Complex64) -> Result<Vec<Complex64>> {
        let r = a.norm();
        let real = self.h_real(r)?;
        let phase = if r == 0.0 { Complex64::new(1.0, 0.0) } else { a / r };
        Ok(real.into_iter().map(|v| phase * v).collect())
    }

    /// Real-linear differential of `h` at `a` applied to `delta`, by central
    /// differences along `1` and `i`.
    pub(crate) fn dh_pair(&self, a: Complex64) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let eps = 1e-4 * a.norm().max(1e-3);
        let mut out = Vec::with_capacity(2);
        for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
            let plus = self.h_slice(a + dir * eps)?;
            let minus = self.h_slice(a - dir * eps)?;
            out.push(
                plus.iter()
                    .zip(&minus)
                    .map(|(p, m)| (p - m) / (2.0 * eps))
                    .collect::<Vec<_>>(),
            );
        }
        let d2 = out.pop().expect("two directions");
        let d1 = out.pop().expect("two directions");
        Ok((d1, d2))
    }
}

/// Interior slopes of the Fritsch-Carlson monotone cubic interpolant.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    d[0] = end_slope(h[0], h[1], del[0], del[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// The bound state through `a`, interpolated from the table.
pub fn bound_state(a: Complex64, branch: &BranchTable) -> Result<BoundState> {
    let spec = *branch.spec();
    let energy = branch.energy(a.norm())?;
    let h = branch.h_slice(a)?;
    let psi_e: Vec<Complex64> = branch
        .psi0
        .values()
        .iter()
        .zip(&h)
        .map(|(p, hv)| a * p + hv)
        .collect();
    let (h, psi_e) = if a.im == 0.0 && a.re >= 0.0 {
        (
            ComplexField::from_raw(spec, h).force_real(),
            ComplexField::from_raw(spec, psi_e).force_real(),
        )
    } else {
        (ComplexField::from_raw(spec, h), ComplexField::from_raw(spec, psi_e))
    };
    Ok(BoundState {
        a,
        energy,
        h,
        psi_e,
    })
}

/// `Dh|_a [delta]`, real-linear in `delta`.
pub fn dh_differential(a: Complex64, delta: Complex64, branch: &BranchTable) -> Result<ComplexField> {
    let (d1, d2) = branch.dh_pair(a)?;
    let values = d1
        .iter()
        .zip(&d2)
        .map(|(x, y)| x * delta.re + y * delta.im)
        .collect();
    Ok(ComplexField::from_raw(*branch.spec(), values))
}

/// Options for [`branch_build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOptions {
    pub a_max: f64,
    pub n_samples: usize,
    #[serde(flatten)]
    pub solver: ManifoldOptions,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions {
            a_max: 1.0,
            n_samples: 21,
            solver: ManifoldOptions::default(),
        }
    }
}

/// Continuation in `|a|` over `n_samples` equispaced amplitudes in `[0, a_max]`.
pub fn branch_build(
    gamma: f64,
    spectrum: &DiscreteSpectrum,
    potential: &Potential,
    opts: &BranchOptions,
) -> Result<BranchTable> {
    if opts.n_samples == 0 || !(opts.a_max >= 0.0) {
        return Err(Error::InvalidConfig("branch needs n_samples >= 1 and a_max >= 0".into()));
    }
    if opts.n_samples > 1 && opts.a_max == 0.0 {
        return Err(Error::InvalidConfig("a_max must be positive for more than one sample".into()));
    }
    let spec = *potential.spec();
    let mut solver = ManifoldSolver::new(potential, spectrum, gamma, opts.solver.clone())?;
    let mut samples = vec![BranchSample {
        a_abs: 0.0,
        energy: spectrum.e0,
        h: ComplexField::zeros(spec).force_real(),
    }];
    let quartic = lp_norm(&spectrum.psi0, 4.0)?.powi(4);
    let mut prev: Option<(f64, f64, Vec<Complex64>)> = None;
    for k in 1..opts.n_samples {
        let a_abs = opts.a_max * k as f64 / (opts.n_samples - 1) as f64;
        // Predictor: scale the previous sample along the leading-order branch.
        let (e_guess, h_guess) = match &prev {
            Some((a_p, e_p, h_p)) => {
                let r = a_abs / a_p;
                let e = spectrum.e0 + (e_p - spectrum.e0) * r * r;
                (e, Some(h_p.iter().map(|v| v * (r * r * r)).collect::<Vec<_>>()))
            }
            None => (spectrum.e0 + gamma * quartic * a_abs * a_abs, None),
        };
        let (energy, h) = solver
            .solve_e(a_abs, e_guess, h_guess.as_deref())
            .map_err(|e| match e {
                Error::NonConvergence {
                    what,
                    iterations,
                    residual,
                } => Error::NonConvergence {
                    what: format!("branch continuation failed at |a| = {a_abs:.4e}: {what}"),
                    iterations,
                    residual,
                },
                other => other,
            })?;
        samples.push(BranchSample {
            a_abs,
            energy,
            h: ComplexField::from_raw(spec, h.clone()).force_real(),
        });
        prev = Some((a_abs, energy, h));
    }
    BranchTable::from_samples(gamma, spectrum, potential, samples)
}

/// `||H psi + γ |psi|^2 psi - E psi||_2`.
pub fn eigen_residual(state: &BoundState, gamma: f64, potential: &Potential) -> Result<f64> {
    let mut r = apply_h(&state.psi_e, potential)?;
    for (rv, p) in r.values_mut().iter_mut().zip(state.psi_e.values()) {
        *rv += p * (gamma * p.norm_sqr() - state.energy);
    }
    Ok(r.l2_norm())
}

/// `||<x>^σ psi||_2 + ||<x>^σ Δpsi||_2`, a proxy for the weighted `H^2` size.
pub fn weighted_h2_proxy(psi: &ComplexField, sigma: f64) -> f64 {
    let spec = *psi.spec();
    let mut lap = psi.values().to_vec();
    crate::spectral::Spectral::new(spec).neg_laplacian(&mut lap);
    let lap = ComplexField::from_raw(spec, lap);
    let w = crate::grid::WeightExponent(sigma);
    crate::grid::weighted_l2_norm(psi, w) + crate::grid::weighted_l2_norm(&lap, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner_product, lp_norm};
    use crate::operator::compute_ground_state;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    struct Fixture {
        potential: Potential,
        spectrum: DiscreteSpectrum,
        focusing: BranchTable,
    }

    fn fixture() -> &'static Fixture {
        static CELL: OnceLock<Fixture> = OnceLock::new();
        CELL.get_or_init(|| {
            let potential = Potential::gaussian(GridSpec::new(64, 12.8).unwrap(), 1.0, 1.0);
            let spectrum = compute_ground_state(&potential).unwrap();
            let opts = BranchOptions {
                a_max: 0.6,
                n_samples: 13,
                ..Default::default()
            };
            let focusing = branch_build(-1.0, &spectrum, &potential, &opts).unwrap();
            Fixture {
                potential,
                spectrum,
                focusing,
            }
        })
    }

    fn quartic() -> f64 {
        lp_norm(&fixture().spectrum.psi0, 4.0).unwrap().powi(4)
    }

    #[test]
    fn f_p_at_zero_h() {
        let s = &fixture().spectrum;
        let a = Complex64::new(0.3, -0.2);
        let zero = ComplexField::zeros(*s.psi0.spec());
        let got = f_p(a, &zero, s).unwrap();
        let expect = a * a.norm_sqr() * quartic();
        assert!((got - expect).norm() < 1e-12 * expect.norm());
        assert_eq!(f_c(Complex64::new(0.0, 0.0), &zero, s).unwrap().l2_norm(), 0.0);
    }

    #[test]
    fn f_p_gauge_covariance() {
        let s = &fixture().spectrum;
        let a = Complex64::new(0.4, 0.1);
        let h = ComplexField::from_fn(*s.psi0.spec(), |x, y| Complex64::new(0.01 * (-x * x - y * y).exp(), 0.003 * x));
        for theta in [0.4, 2.1, -1.3] {
            let rot = Complex64::from_polar(1.0, theta);
            let lhs = f_p(rot * a, &h.scaled(rot), s).unwrap();
            let rhs = rot * f_p(a, &h, s).unwrap();
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn trivial_solutions() {
        let f = fixture();
        let opts = ManifoldOptions::default();
        let e = 1.05 * f.spectrum.e0;
        assert_eq!(solve_h(e, 0.0, -1.0, &f.spectrum, &f.potential, &opts).unwrap().l2_norm(), 0.0);
        assert_eq!(solve_h(e, 0.3, 0.0, &f.spectrum, &f.potential, &opts).unwrap().l2_norm(), 0.0);
        let (e_lin, h_lin) = solve_e(0.3, 0.0, &f.spectrum, &f.potential, &opts).unwrap();
        assert_eq!(e_lin, f.spectrum.e0);
        assert_eq!(h_lin.l2_norm(), 0.0);
    }

    #[test]
    fn h_is_cubic_and_energy_slope_matches_quartic_norm() {
        let f = fixture();
        let opts = ManifoldOptions::default();
        for gamma in [-1.0, 1.0] {
            let amps = [1e-3, 10f64.powf(-2.5), 1e-2, 10f64.powf(-1.5)];
            let mut pts = Vec::new();
            for &a in &amps {
                let (e, h) = solve_e(a, gamma, &f.spectrum, &f.potential, &opts).unwrap();
                pts.push((a.ln(), h.l2_norm().ln()));
                if a <= 1e-2 {
                    let slope = (e - f.spectrum.e0) / (a * a);
                    let predicted = gamma * quartic();
                    assert!(((slope - predicted) / predicted).abs() < 0.05, "gamma {gamma}, a {a}");
                }
            }
            let k = pts.len() - 1;
            let slope = (pts[k].1 - pts[0].1) / (pts[k].0 - pts[0].0);
            assert!((slope - 3.0).abs() < 0.05, "log-log slope of |h| is {slope}");
        }
    }

    #[test]
    fn branch_table_invariants() {
        let f = fixture();
        let b = &f.focusing;
        let first = &b.samples()[0];
        assert_eq!(first.a_abs, 0.0);
        assert_eq!(first.energy, f.spectrum.e0);
        assert_eq!(first.h.l2_norm(), 0.0);
        for w in b.samples().windows(2) {
            assert!(w[1].energy < w[0].energy, "focusing branch must decrease");
        }
        for s in b.samples() {
            assert_eq!(s.h.tag(), crate::grid::FieldTag::Real);
            assert!(inner_product(&f.spectrum.psi0, &s.h).unwrap().norm() < 1e-10);
            let state = bound_state(Complex64::new(s.a_abs, 0.0), b).unwrap();
            let res = eigen_residual(&state, -1.0, &f.potential).unwrap();
            assert!(res <= 1e-8 * state.psi_e.l2_norm().max(1e-300) || s.a_abs == 0.0);
        }
    }

    #[test]
    fn interpolated_states_nearly_solve_the_stationary_equation() {
        let f = fixture();
        let b = &f.focusing;
        for a in [0.125, 0.33, 0.47] {
            let state = bound_state(Complex64::new(a, 0.0), b).unwrap();
            let res = eigen_residual(&state, -1.0, &f.potential).unwrap();
            assert!(res <= 1e-7 * state.psi_e.l2_norm(), "|a| = {a}: residual {res:e}");
        }
    }

    #[test]
    fn gauge_equivariance_of_bound_states() {
        let b = &fixture().focusing;
        for a_abs in [0.1, 0.35, 0.6] {
            let base = bound_state(Complex64::new(a_abs, 0.0), b).unwrap();
            assert_eq!(base.h.tag(), crate::grid::FieldTag::Real);
            for theta in [PI / 7.0, PI / 3.0, 1.0] {
                let rot = Complex64::from_polar(1.0, theta);
                let turned = bound_state(rot * a_abs, b).unwrap();
                assert!(turned.h.sub(&base.h.scaled(rot)).unwrap().l2_norm() <= 1e-10);
                assert_eq!(turned.energy, base.energy);
            }
        }
    }

    #[test]
    fn trivial_branch() {
        let f = fixture();
        let opts = BranchOptions {
            a_max: 0.0,
            n_samples: 1,
            ..Default::default()
        };
        let b = branch_build(1.0, &f.spectrum, &f.potential, &opts).unwrap();
        assert_eq!(b.samples().len(), 1);
        assert_eq!(b.samples()[0].energy, f.spectrum.e0);
    }

    #[test]
    fn dh_is_real_linear_and_matches_central_differences() {
        let b = &fixture().focusing;
        let a = Complex64::new(0.2, 0.15);
        let delta = Complex64::new(0.3, -0.7);
        let d = dh_differential(a, delta, b).unwrap();
        let d2 = dh_differential(a, 2.0 * delta, b).unwrap();
        assert!(d2.sub(&d.scaled(Complex64::new(2.0, 0.0))).unwrap().l2_norm() < 1e-13);
        let fd = |eps: f64| {
            let hp = bound_state(a + eps * delta, b).unwrap().h;
            let hm = bound_state(a - eps * delta, b).unwrap().h;
            let mut q = hp.sub(&hm).unwrap();
            q.scale_in_place(Complex64::new(0.5 / eps, 0.0));
            q.sub(&d).unwrap().l2_norm()
        };
        let (e1, e2) = (fd(2e-2), fd(1e-2));
        assert!(e2 < 1e-3 * d.l2_norm(), "central difference error {e2:e}");
        assert!(e1 / e2 > 3.0, "expected second order, ratio {}", e1 / e2);
    }

    #[test]
    fn dh_vanishes_without_nonlinearity() {
        let f = fixture();
        let opts = BranchOptions {
            a_max: 0.5,
            n_samples: 3,
            ..Default::default()
        };
        let b = branch_build(0.0, &f.spectrum, &f.potential, &opts).unwrap();
        let d = dh_differential(Complex64::new(0.2, 0.1), Complex64::new(1.0, 1.0), &b).unwrap();
        assert_eq!(d.l2_norm(), 0.0);
    }

    #[test]
    fn weighted_smallness_vanishes_with_the_amplitude() {
        let b = &fixture().focusing;
        let proxy: Vec<f64> = [0.0, 0.05, 0.1, 0.2, 0.4]
            .iter()
            .map(|&a| weighted_h2_proxy(&bound_state(Complex64::new(a, 0.0), b).unwrap().psi_e, 2.5))
            .collect();
        assert_eq!(proxy[0], 0.0);
        assert!(proxy.windows(2).all(|w| w[1] > w[0]));
        assert!(proxy[1] < 0.6 * proxy[2]);
    }
}
