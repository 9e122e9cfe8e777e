//! The Schrödinger group `e^{-iHt} P_c`, the real-linear propagator `Ω(t, s)`
//! of the linearization around a path on the manifold, its regular part
//! `T(t, s)`, and lower bounds for the operator norms of `Ω`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    inner_unchecked, japanese_weight, lp_norm_slice, weighted_l2_with, ComplexField, GridSpec,
};
use crate::linalg::axpy_re;
use crate::manifold::BranchTable;
use crate::operator::{DiscreteSpectrum, Potential};
use crate::stepper::{EvolutionScheme, SplitStepper};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn project_out(v: &mut [Complex64], q: &[Complex64], cell: f64) {
    let c = inner_unchecked(q, v) * cell;
    for (a, b) in v.iter_mut().zip(q) {
        *a -= c * b;
    }
}

/// `exp(-i V tau)` times the sponge damping over `|tau|`, conjugated for the adjoint.
fn potential_factor(
    potential: &Potential,
    scheme: &EvolutionScheme,
    tau: f64,
    adjoint: bool,
) -> Vec<Complex64> {
    let damp = scheme.damping(potential.spec(), tau);
    let sign = if adjoint { 1.0 } else { -1.0 };
    potential
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let d = damp.as_ref().map_or(1.0, |d| d[j]);
            Complex64::from_polar(d, sign * v * tau)
        })
        .collect()
}

fn checkpoint_steps(s: f64, times: &[f64], dt: f64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(times.len());
    let mut last = 0usize;
    for &t in times {
        let x = (t - s) / dt;
        let m = x.round();
        if m < 0.0 || (x - m).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "time {t} is not on the step grid s + k dt (s = {s}, dt = {dt})"
            )));
        }
        let m = m as usize;
        if m < last {
            return Err(Error::InvalidConfig("checkpoint times must be increasing".into()));
        }
        last = m;
        out.push(m);
    }
    Ok(out)
}

/// `e^{-iH(t-s)} P_c v`; without a spectrum `P_c` is the identity.
pub fn evolve_free_group(
    v: &ComplexField,
    s: f64,
    t: f64,
    potential: &Potential,
    spectrum: Option<&DiscreteSpectrum>,
    scheme: &EvolutionScheme,
) -> Result<ComplexField> {
    scheme.validate()?;
    v.spec().check_same(potential.spec())?;
    let (n, h) = scheme.steps(s, t);
    let mut z = v.values().to_vec();
    if let Some(sp) = spectrum {
        project_out(&mut z, sp.psi0.values(), v.spec().cell_area());
    }
    free_steps(&mut z, n, h, potential, scheme, false)?;
    Ok(ComplexField::from_raw(*v.spec(), z))
}

fn free_steps(
    z: &mut [Complex64],
    n: usize,
    h: f64,
    potential: &Potential,
    scheme: &EvolutionScheme,
    adjoint: bool,
) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    let pot = potential_factor(potential, scheme, h, adjoint);
    let mut stepper = SplitStepper::new(*potential.spec(), h, adjoint);
    stepper.run(
        z,
        n,
        &[],
        |_, z| {
            for (a, p) in z.iter_mut().zip(&pot) {
                *a *= p;
            }
        },
        |_, _| Ok(()),
    )
}

/// `e^{-iH(t_j-s)} P_c v` at every `t_j` (on the step grid, increasing).
pub fn free_group_snapshots(
    v: &ComplexField,
    s: f64,
    times: &[f64],
    potential: &Potential,
    spectrum: Option<&DiscreteSpectrum>,
    scheme: &EvolutionScheme,
) -> Result<Vec<ComplexField>> {
    scheme.validate()?;
    v.spec().check_same(potential.spec())?;
    let steps = checkpoint_steps(s, times, scheme.dt)?;
    let n = steps.last().copied().unwrap_or(0);
    let spec = *v.spec();
    let mut z = v.values().to_vec();
    if let Some(sp) = spectrum {
        project_out(&mut z, sp.psi0.values(), spec.cell_area());
    }
    let pot = potential_factor(potential, scheme, scheme.dt, false);
    let mut stepper = SplitStepper::new(spec, scheme.dt, false);
    let mut out = Vec::with_capacity(times.len());
    stepper.run(
        &mut z,
        n,
        &steps,
        |_, z| {
            for (a, p) in z.iter_mut().zip(&pot) {
                *a *= p;
            }
        },
        |_, z| {
            out.push(ComplexField::from_raw(spec, z.to_vec()));
            Ok(())
        },
    )?;
    Ok(out)
}

/// `||e^{-iHt} P_c v||_{L²_{-σ}} (1+t) log²(2+t) / ||v||_{L²_σ}`.
pub fn murata_ratio(
    v: &ComplexField,
    t: f64,
    sigma: f64,
    potential: &Potential,
    spectrum: Option<&DiscreteSpectrum>,
    scheme: &EvolutionScheme,
) -> Result<f64> {
    Ok(murata_series(v, &[t], sigma, potential, spectrum, scheme)?[0])
}

pub fn murata_series(
    v: &ComplexField,
    times: &[f64],
    sigma: f64,
    potential: &Potential,
    spectrum: Option<&DiscreteSpectrum>,
    scheme: &EvolutionScheme,
) -> Result<Vec<f64>> {
    let spec = *v.spec();
    let cell = spec.cell_area();
    let w_plus = japanese_weight(&spec, 2.0 * sigma);
    let w_minus = japanese_weight(&spec, -2.0 * sigma);
    let denom = weighted_l2_with(v.values(), &w_plus, cell);
    let snaps = free_group_snapshots(v, 0.0, times, potential, spectrum, scheme)?;
    Ok(snaps
        .iter()
        .zip(times)
        .map(|(z, &t)| {
            let num = weighted_l2_with(z.values(), &w_minus, cell);
            let l = (2.0 + t).ln();
            num * (1.0 + t) * l * l / denom
        })
        .collect())
}

/// `||e^{-iHt} P_c v||_p t^{1-2/p} / ||v||_{p'}`.
pub fn lp_decay_ratio(
    v: &ComplexField,
    t: f64,
    p: f64,
    potential: &Potential,
    spectrum: Option<&DiscreteSpectrum>,
    scheme: &EvolutionScheme,
) -> Result<f64> {
    Ok(lp_decay_series(v, &[t], p, potential, spectrum, scheme)?[0])
}

pub fn lp_decay_series(
    v: &ComplexField,
    times: &[f64],
    p: f64,
    potential: &Potential,
    spectrum: Option<&DiscreteSpectrum>,
    scheme: &EvolutionScheme,
) -> Result<Vec<f64>> {
    if !(p >= 2.0) {
        return Err(Error::InvalidExponent(p));
    }
    if let Some(&t) = times.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig(format!("decay ratio needs t > 0, got {t}")));
    }
    let cell = v.spec().cell_area();
    let p_dual = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
    let denom = lp_norm_slice(v.values(), cell, p_dual);
    let expo = if p.is_infinite() { 1.0 } else { 1.0 - 2.0 / p };
    let snaps = free_group_snapshots(v, 0.0, times, potential, spectrum, scheme)?;
    Ok(snaps
        .iter()
        .zip(times)
        .map(|(z, &t)| lp_norm_slice(z.values(), cell, p) * t.powf(expo) / denom)
        .collect())
}

/// Placement of the finite-rank `Dh` term in the linearized equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DhCoupling {
    /// `-i γ Dh[-i δ]`: the exact tangent of the radiation equation with a
    /// real-linear `Dh`.
    #[default]
    Tangent,
    /// `-γ Dh[δ]`, reading `Dh` as complex-linear.
    Literal,
    /// `-γ² Dh[δ]`, the term placed inside `γ P_c[...]`.
    Inside,
    /// No `Dh` term.
    Off,
}

impl FromStr for DhCoupling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tangent" => Ok(DhCoupling::Tangent),
            "literal" => Ok(DhCoupling::Literal),
            "inside" => Ok(DhCoupling::Inside),
            "off" => Ok(DhCoupling::Off),
            other => Err(Error::InvalidConfig(format!("unknown Dh coupling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathMode {
    Frozen(Complex64),
    /// `a(t) = a0 exp(-i E(|a0|) (t - t0))`, the orbit of the bound state through `a0`.
    Orbit { a0: Complex64, t0: f64 },
    /// Piecewise-linear interpolation of recorded values.
    Recorded { times: Vec<f64>, values: Vec<Complex64> },
}

/// The manifold path `a(t)` around which the flow is linearized.
#[derive(Debug, Clone)]
pub struct CoefficientPath<'a> {
    mode: PathMode,
    branch: &'a BranchTable,
    coupling: DhCoupling,
}

impl<'a> CoefficientPath<'a> {
    pub fn frozen(branch: &'a BranchTable, a: Complex64) -> Result<Self> {
        Self::new(branch, PathMode::Frozen(a))
    }

    pub fn orbit(branch: &'a BranchTable, a0: Complex64, t0: f64) -> Result<Self> {
        Self::new(branch, PathMode::Orbit { a0, t0 })
    }

    pub fn recorded(branch: &'a BranchTable, times: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::PathRange("recorded path needs matching, nonempty series".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::PathRange("recorded times must be strictly increasing".into()));
        }
        Self::new(branch, PathMode::Recorded { times, values })
    }

    pub fn new(branch: &'a BranchTable, mode: PathMode) -> Result<Self> {
        let max = branch.delta_scale();
        let check = |a: Complex64| {
            if a.norm() > max * (1.0 + 1e-12) {
                Err(Error::PathRange(format!(
                    "|a| = {:.4e} exceeds the branch range {max:.4e}",
                    a.norm()
                )))
            } else {
                Ok(())
            }
        };
        match &mode {
            PathMode::Frozen(a) => check(*a)?,
            PathMode::Orbit { a0, .. } => check(*a0)?,
            PathMode::Recorded { values, .. } => values.iter().try_for_each(|a| check(*a))?,
        }
        Ok(CoefficientPath {
            mode,
            branch,
            coupling: DhCoupling::default(),
        })
    }

    pub fn with_coupling(mut self, coupling: DhCoupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn branch(&self) -> &BranchTable {
        self.branch
    }

    pub fn mode(&self) -> &PathMode {
        &self.mode
    }

    pub fn coupling(&self) -> DhCoupling {
        self.coupling
    }

    pub fn a_at(&self, t: f64) -> Result<Complex64> {
        match &self.mode {
            PathMode::Frozen(a) => Ok(*a),
            PathMode::Orbit { a0, t0 } => {
                let e = self.branch.energy(a0.norm())?;
                Ok(a0 * Complex64::from_polar(1.0, -e * (t - t0)))
            }
            PathMode::Recorded { times, values } => {
                let tol = 1e-9 * (1.0 + t.abs());
                if t < times[0] - tol || t > times[times.len() - 1] + tol {
                    return Err(Error::PathRange(format!(
                        "t = {t} outside the recorded interval [{}, {}]",
                        times[0],
                        times[times.len() - 1]
                    )));
                }
                let k = times.partition_point(|&x| x <= t).clamp(1, times.len().max(2) - 1);
                if times.len() == 1 {
                    return Ok(values[0]);
                }
                let (t0, t1) = (times[k - 1], times[k]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                Ok(values[k - 1] * (1.0 - w) + values[k] * w)
            }
        }
    }

    fn check_interval(&self, s: f64, t: f64) -> Result<()> {
        if let PathMode::Recorded { .. } = self.mode {
            self.a_at(s)?;
            self.a_at(t)?;
        }
        Ok(())
    }
}

/// Gauge-reduced coefficients at a real amplitude `r`.
struct RealCoefficients {
    r: f64,
    psi: Vec<f64>,
    d1: Vec<Complex64>,
    d2: Vec<Complex64>,
}

/// The coupling `L_t z = -iγ P_c[M z] + κ Dh[ν δ(z)]`, `M z = 2|ψ|² z + ψ² z̄`,
/// `δ(z) = <ψ0, M z>`, at one instant. Coefficients at `a = r e^{iθ}` come from
/// those at `r` by the gauge identities `ψ(a) = e^{iθ} ψ(r)` and
/// `Dh|_a[μ] = e^{iθ} Dh|_r[e^{-iθ} μ]`.
struct Coupling {
    base: Arc<RealCoefficients>,
    phase: Complex64,
    gamma: f64,
    kappa: Complex64,
    nu: Complex64,
    active: bool,
}

struct CouplingFactory<'p> {
    path: &'p CoefficientPath<'p>,
    cache: Option<Arc<RealCoefficients>>,
}

impl<'p> CouplingFactory<'p> {
    fn new(path: &'p CoefficientPath<'p>) -> Self {
        CouplingFactory { path, cache: None }
    }

    fn at(&mut self, t: f64) -> Result<Coupling> {
        let a = self.path.a_at(t)?;
        let r = a.norm();
        let branch = self.path.branch;
        let base = match &self.cache {
            Some(c) if c.r == r => c.clone(),
            _ => {
                let ar = Complex64::new(r, 0.0);
                let h = branch.h_real(r)?;
                let psi = branch
                    .psi0()
                    .values()
                    .iter()
                    .zip(&h)
                    .map(|(p, hv)| r * p.re + hv)
                    .collect();
                let (d1, d2) = branch.dh_pair(ar)?;
                let c = Arc::new(RealCoefficients { r, psi, d1, d2 });
                self.cache = Some(c.clone());
                c
            }
        };
        let gamma = branch.gamma();
        let i = Complex64::new(0.0, 1.0);
        let (kappa, nu, active) = match self.path.coupling {
            DhCoupling::Tangent => (Complex64::new(-gamma, 0.0), -i, true),
            DhCoupling::Literal => (i * gamma, Complex64::new(1.0, 0.0), true),
            DhCoupling::Inside => (i * gamma * gamma, Complex64::new(1.0, 0.0), true),
            DhCoupling::Off => (ZERO, ZERO, false),
        };
        let phase = if r == 0.0 { Complex64::new(1.0, 0.0) } else { a / r };
        Ok(Coupling {
            base,
            phase,
            gamma,
            kappa,
            nu,
            active: active && r > 0.0,
        })
    }
}

impl Coupling {
    fn is_zero(&self) -> bool {
        self.base.r == 0.0 || self.gamma == 0.0
    }

    /// `M z` with `ψ = phase · ψ_r`.
    fn m(&self, z: &[Complex64], out: &mut [Complex64]) {
        let p2 = self.phase * self.phase;
        for ((o, zv), ps) in out.iter_mut().zip(z).zip(&self.base.psi) {
            let q = ps * ps;
            *o = zv * (2.0 * q) + p2 * q * zv.conj();
        }
    }

    /// `Dh|_a[μ]` added with factor `scale`.
    fn add_dh(&self, mu: Complex64, scale: Complex64, out: &mut [Complex64]) {
        let m = self.phase.conj() * mu;
        let c1 = scale * self.phase * m.re;
        let c2 = scale * self.phase * m.im;
        for ((o, d1), d2) in out.iter_mut().zip(&self.base.d1).zip(&self.base.d2) {
            *o += c1 * d1 + c2 * d2;
        }
    }

    fn apply(&self, psi0: &[Complex64], cell: f64, z: &[Complex64], out: &mut [Complex64]) {
        self.m(z, out);
        let delta = inner_unchecked(psi0, out) * cell;
        let mi = Complex64::new(0.0, -self.gamma);
        for (o, p) in out.iter_mut().zip(psi0) {
            *o = mi * (*o - delta * p);
        }
        if self.active {
            self.add_dh(self.nu * delta, self.kappa, out);
        }
    }

    /// Adjoint of [`Coupling::apply`] for the pairing `Re <., .>`.
    fn apply_adjoint(
        &self,
        psi0: &[Complex64],
        cell: f64,
        w: &[Complex64],
        out: &mut [Complex64],
        scratch: &mut [Complex64],
        tmp: &mut [Complex64],
    ) {
        let ig = Complex64::new(0.0, self.gamma);
        for (s, wv) in scratch.iter_mut().zip(w) {
            *s = ig * wv;
        }
        project_out(scratch, psi0, cell);
        self.m(scratch, out);
        if self.active {
            let kc = self.kappa.conj();
            let mut c1 = 0.0;
            let mut c2 = 0.0;
            for ((wv, d1), d2) in w.iter().zip(&self.base.d1).zip(&self.base.d2) {
                let wp = (kc * wv).conj();
                c1 += (wp * self.phase * d1).re;
                c2 += (wp * self.phase * d2).re;
            }
            let beta = Complex64::new(c1 * cell, -c2 * cell) * self.phase.conj() * self.nu;
            let bc = beta.conj();
            for (s, p) in scratch.iter_mut().zip(psi0) {
                *s = bc * p;
            }
            self.m(scratch, tmp);
            for (o, t) in out.iter_mut().zip(tmp.iter()) {
                *o += t;
            }
        }
    }
}

/// Scratch buffers for one `I + h L + h²/2 L²` update.
struct CouplingWork {
    l1: Vec<Complex64>,
    l2: Vec<Complex64>,
    scratch: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl CouplingWork {
    fn new(n: usize) -> Self {
        CouplingWork {
            l1: vec![ZERO; n],
            l2: vec![ZERO; n],
            scratch: vec![ZERO; n],
            tmp: vec![ZERO; n],
        }
    }

    fn step(&mut self, c: &Coupling, psi0: &[Complex64], cell: f64, h: f64, z: &mut [Complex64], adjoint: bool) {
        if c.is_zero() {
            return;
        }
        if adjoint {
            c.apply_adjoint(psi0, cell, z, &mut self.l1, &mut self.scratch, &mut self.tmp);
            c.apply_adjoint(psi0, cell, &self.l1, &mut self.l2, &mut self.scratch, &mut self.tmp);
        } else {
            c.apply(psi0, cell, z, &mut self.l1);
            c.apply(psi0, cell, &self.l1, &mut self.l2);
        }
        let hh = 0.5 * h * h;
        for ((zv, a), b) in z.iter_mut().zip(&self.l1).zip(&self.l2) {
            *zv += a * h + b * hh;
        }
    }
}

/// Runs the linearized flow over `[s, s + n h]`.
#[allow(clippy::too_many_arguments)]
fn linearized_steps(
    z: &mut [Complex64],
    s: f64,
    n: usize,
    h: f64,
    checkpoints: &[usize],
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
    adjoint: bool,
    mut observe: impl FnMut(usize, &[Complex64]) -> Result<()>,
) -> Result<()> {
    let spec = *potential.spec();
    let cell = spec.cell_area();
    let psi0 = path.branch().psi0().values().to_vec();
    let pot = potential_factor(potential, scheme, 0.5 * h, adjoint);
    let mut factory = CouplingFactory::new(path);
    // Coefficients are fixed by the midpoint of each step, so forward and
    // adjoint sweeps see identical step maps.
    let mut couplings = Vec::new();
    let frozen = matches!(path.mode(), PathMode::Frozen(_));
    if frozen {
        couplings.push(factory.at(s)?);
    }
    let mut work = CouplingWork::new(spec.len());
    let mut err: Option<Error> = None;
    let mut stepper = SplitStepper::new(spec, h, adjoint);
    stepper.run(
        z,
        n,
        checkpoints,
        |k, z| {
            let idx = if adjoint { n - 1 - k } else { k };
            let tmid = s + (idx as f64 + 0.5) * h;
            let c = if frozen {
                None
            } else {
                match factory.at(tmid) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        err.get_or_insert(e);
                        return;
                    }
                }
            };
            let c = c.as_ref().unwrap_or_else(|| &couplings[0]);
            for (a, p) in z.iter_mut().zip(&pot) {
                *a *= p;
            }
            work.step(c, &psi0, cell, h, z, adjoint);
            for (a, p) in z.iter_mut().zip(&pot) {
                *a *= p;
            }
        },
        &mut observe,
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn check_linear_inputs(
    v: &ComplexField,
    s: f64,
    t: f64,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
) -> Result<()> {
    scheme.validate()?;
    v.spec().check_same(potential.spec())?;
    v.spec().check_same(path.branch().spec())?;
    if t < s {
        return Err(Error::InvalidConfig(format!("need t >= s, got s = {s}, t = {t}")));
    }
    path.check_interval(s, t)
}

/// `Ω(t, s) v`: the solution at `t` of
/// `i z' = H z + γ P_c[2|ψ_E|² z + ψ_E² z̄] + (Dh term)` with `z(s) = P_c v`.
pub fn evolve_linearized(
    v: &ComplexField,
    s: f64,
    t: f64,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
) -> Result<ComplexField> {
    check_linear_inputs(v, s, t, path, scheme, potential)?;
    let spec = *v.spec();
    let (n, h) = scheme.steps(s, t);
    let mut z = v.values().to_vec();
    project_out(&mut z, path.branch().psi0().values(), spec.cell_area());
    linearized_steps(&mut z, s, n, h, &[], path, scheme, potential, false, |_, _| Ok(()))?;
    Ok(ComplexField::from_raw(spec, z))
}

/// `Ω(t_j, s) v` at every `t_j` (on the step grid, increasing).
pub fn linearized_snapshots(
    v: &ComplexField,
    s: f64,
    times: &[f64],
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
) -> Result<Vec<ComplexField>> {
    let t_end = times.last().copied().unwrap_or(s);
    check_linear_inputs(v, s, t_end, path, scheme, potential)?;
    let spec = *v.spec();
    let steps = checkpoint_steps(s, times, scheme.dt)?;
    let n = steps.last().copied().unwrap_or(0);
    let mut z = v.values().to_vec();
    project_out(&mut z, path.branch().psi0().values(), spec.cell_area());
    let mut out = Vec::with_capacity(times.len());
    linearized_steps(&mut z, s, n, scheme.dt, &steps, path, scheme, potential, false, |_, z| {
        out.push(ComplexField::from_raw(spec, z.to_vec()));
        Ok(())
    })?;
    Ok(out)
}

/// `Ω(t, s)^* w` for the real pairing `Re <., .>`, the exact adjoint of the
/// discrete [`evolve_linearized`].
pub fn evolve_linearized_adjoint(
    w: &ComplexField,
    s: f64,
    t: f64,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
) -> Result<ComplexField> {
    check_linear_inputs(w, s, t, path, scheme, potential)?;
    let spec = *w.spec();
    let (n, h) = scheme.steps(s, t);
    let mut z = w.values().to_vec();
    linearized_steps(&mut z, s, n, h, &[], path, scheme, potential, true, |_, _| Ok(()))?;
    project_out(&mut z, path.branch().psi0().values(), spec.cell_area());
    Ok(ComplexField::from_raw(spec, z))
}

/// `T(t, s) v = Ω(t, s) v - e^{-iH(t-s)} P_c v`.
pub fn compute_t(
    v: &ComplexField,
    s: f64,
    t: f64,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
) -> Result<ComplexField> {
    let z = evolve_linearized(v, s, t, path, scheme, potential)?;
    let (n, h) = scheme.steps(s, t);
    let mut free = v.values().to_vec();
    project_out(&mut free, path.branch().psi0().values(), v.spec().cell_area());
    free_steps(&mut free, n, h, potential, scheme, false)?;
    z.sub(&ComplexField::from_raw(*v.spec(), free))
}

/// Both sides of the Duhamel formula for `W = z - e^{-iH(t-s)} P_c v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelReport {
    /// `||W(t) - (f + f̃ + g + g̃)||_2`.
    pub residual: f64,
    pub w_norm: f64,
    pub v_norm: f64,
    pub quad_step: f64,
    /// Norms of the four integrals: the potential-like forcing and the `Dh`
    /// forcing, each driven by the free part and by `W`.
    pub term_norms: [f64; 4],
}

/// Evaluates `W(t)` against
/// `∫_s^t e^{-iH(t-τ)} L_τ [e^{-iH(τ-s)} P_c v + W(τ)] dτ`
/// by the trapezoidal rule with step `quad_factor · dt`.
pub fn duhamel_residual_w(
    v: &ComplexField,
    s: f64,
    t: f64,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
    quad_factor: usize,
) -> Result<DuhamelReport> {
    check_linear_inputs(v, s, t, path, scheme, potential)?;
    if quad_factor == 0 {
        return Err(Error::InvalidConfig("quad_factor must be positive".into()));
    }
    let spec = *v.spec();
    let cell = spec.cell_area();
    let dt = scheme.dt;
    let n_total = checkpoint_steps(s, &[t], dt)?[0];
    if n_total % quad_factor != 0 {
        return Err(Error::InvalidConfig(format!(
            "t - s = {} is not a multiple of the quadrature step {}",
            t - s,
            quad_factor as f64 * dt
        )));
    }
    let nodes = n_total / quad_factor;
    let node_steps: Vec<usize> = (0..=nodes).map(|k| k * quad_factor).collect();
    let node_times: Vec<f64> = node_steps.iter().map(|&m| s + m as f64 * dt).collect();
    let free = free_group_snapshots(v, s, &node_times, potential, Some(&spectrum_from(path)), scheme)?;
    let lin = linearized_snapshots(v, s, &node_times, path, scheme, potential)?;
    let psi0 = path.branch().psi0().values().to_vec();
    let mut factory = CouplingFactory::new(path);
    let dq = quad_factor as f64 * dt;
    let pot = potential_factor(potential, scheme, dt, false);
    let mut stepper = SplitStepper::new(spec, dt, false);
    let mut sums = vec![vec![ZERO; spec.len()]; 4];
    let mut buf = vec![ZERO; spec.len()];
    for k in 0..=nodes {
        if k > 0 {
            for acc in sums.iter_mut() {
                stepper.run(
                    acc,
                    quad_factor,
                    &[],
                    |_, z| {
                        for (a, p) in z.iter_mut().zip(&pot) {
                            *a *= p;
                        }
                    },
                    |_, _| Ok(()),
                )?;
            }
        }
        let weight = if nodes == 0 {
            0.0
        } else if k == 0 || k == nodes {
            0.5 * dq
        } else {
            dq
        };
        let c = factory.at(node_times[k])?;
        let wk: Vec<Complex64> = lin[k]
            .values()
            .iter()
            .zip(free[k].values())
            .map(|(a, b)| a - b)
            .collect();
        for (j, src) in [free[k].values(), &wk[..]].into_iter().enumerate() {
            // Potential-like forcing: -iγ P_c[M src].
            c.m(src, &mut buf);
            let delta = inner_unchecked(&psi0, &buf) * cell;
            let mi = Complex64::new(0.0, -c.gamma);
            for ((acc, b), p) in sums[2 * j].iter_mut().zip(&buf).zip(&psi0) {
                *acc += (mi * (b - delta * p)) * weight;
            }
            if c.active {
                c.add_dh(c.nu * delta, c.kappa * weight, &mut sums[2 * j + 1]);
            }
        }
    }
    let w_end: Vec<Complex64> = lin[nodes]
        .values()
        .iter()
        .zip(free[nodes].values())
        .map(|(a, b)| a - b)
        .collect();
    let mut diff = w_end.clone();
    for acc in &sums {
        for (d, a) in diff.iter_mut().zip(acc) {
            *d -= a;
        }
    }
    let norm = |x: &[Complex64]| (crate::linalg::norm_sq(x) * cell).sqrt();
    Ok(DuhamelReport {
        residual: norm(&diff),
        w_norm: norm(&w_end),
        v_norm: v.l2_norm(),
        quad_step: dq,
        term_norms: [norm(&sums[0]), norm(&sums[1]), norm(&sums[2]), norm(&sums[3])],
    })
}

fn spectrum_from(path: &CoefficientPath) -> DiscreteSpectrum {
    DiscreteSpectrum {
        e0: path.branch().e0(),
        psi0: path.branch().psi0().clone(),
        n_negative: 1,
        residual: 0.0,
    }
}

/// Norms on source and target spaces of `Ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormSpace {
    /// `L²_σ` with weight `<x>^{2σ}`; `σ` may be negative.
    WeightedL2(f64),
    Lp(f64),
    /// `max(||v||_1, ||v||_q)`.
    L1Lq(f64),
}

impl fmt::Display for NormSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormSpace::WeightedL2(s) => write!(f, "l2w({s})"),
            NormSpace::Lp(p) => write!(f, "lp({p})"),
            NormSpace::L1Lq(q) => write!(f, "l1lq({q})"),
        }
    }
}

impl FromStr for NormSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "l2" {
            return Ok(NormSpace::Lp(2.0));
        }
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| Error::InvalidSpace(format!("cannot parse {s:?}")))?;
        let arg = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::InvalidSpace(format!("missing ')' in {s:?}")))?;
        let x: f64 = arg
            .trim()
            .parse()
            .map_err(|_| Error::InvalidSpace(format!("bad number in {s:?}")))?;
        let space = match name.trim() {
            "l2w" => NormSpace::WeightedL2(x),
            "lp" => NormSpace::Lp(x),
            "l1lq" => NormSpace::L1Lq(x),
            other => return Err(Error::InvalidSpace(format!("unknown space {other:?}"))),
        };
        space.validate()?;
        Ok(space)
    }
}

impl NormSpace {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NormSpace::WeightedL2(s) => s.is_finite(),
            NormSpace::Lp(p) => p >= 1.0,
            NormSpace::L1Lq(q) => q > 1.0 && q.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpace(self.to_string()))
        }
    }

    fn valid_source(&self) -> bool {
        match *self {
            NormSpace::WeightedL2(s) => s > 0.0,
            NormSpace::Lp(p) => (1.0..=2.0).contains(&p),
            NormSpace::L1Lq(_) => true,
        }
    }

    fn valid_target(&self) -> bool {
        match *self {
            NormSpace::WeightedL2(s) => s < 0.0,
            NormSpace::Lp(p) => p >= 2.0,
            NormSpace::L1Lq(_) => false,
        }
    }

    pub fn norm(&self, values: &[Complex64], spec: &GridSpec) -> f64 {
        let cell = spec.cell_area();
        match *self {
            NormSpace::WeightedL2(s) => {
                weighted_l2_with(values, &japanese_weight(spec, 2.0 * s), cell)
            }
            NormSpace::Lp(p) => lp_norm_slice(values, cell, p),
            NormSpace::L1Lq(q) => lp_norm_slice(values, cell, 1.0).max(lp_norm_slice(values, cell, q)),
        }
    }

    /// Pointwise weight `w` with `||v|| = ||w v||_2` for the Hilbert norms.
    fn hilbert_weight(&self, spec: &GridSpec) -> Option<Vec<f64>> {
        match *self {
            NormSpace::WeightedL2(s) => Some(japanese_weight(spec, s)),
            NormSpace::Lp(2.0) => Some(vec![1.0; spec.len()]),
            _ => None,
        }
    }

    /// Direction of steepest increase of the norm at `y` (target side).
    fn dual_of(&self, y: &[Complex64], spec: &GridSpec) -> Vec<Complex64> {
        match *self {
            NormSpace::WeightedL2(s) => {
                let w = japanese_weight(spec, 2.0 * s);
                y.iter().zip(&w).map(|(v, w)| v * w).collect()
            }
            NormSpace::Lp(p) | NormSpace::L1Lq(p) => y
                .iter()
                .map(|v| {
                    let a = v.norm();
                    if a == 0.0 {
                        ZERO
                    } else {
                        v * a.powf(p - 2.0)
                    }
                })
                .collect(),
        }
    }

    /// Unit-ball element best aligned with the functional `w` (source side).
    fn maximizer(&self, w: &[Complex64], spec: &GridSpec) -> Vec<Complex64> {
        match *self {
            NormSpace::WeightedL2(s) => {
                let wt = japanese_weight(spec, -2.0 * s);
                w.iter().zip(&wt).map(|(v, x)| v * x).collect()
            }
            NormSpace::Lp(p) | NormSpace::L1Lq(p) => {
                let q = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
                if q.is_infinite() {
                    w.iter()
                        .map(|v| if v.norm() == 0.0 { ZERO } else { v / v.norm() })
                        .collect()
                } else {
                    w.iter()
                        .map(|v| {
                            let a = v.norm();
                            if a == 0.0 {
                                ZERO
                            } else {
                                v * a.powf(q - 2.0)
                            }
                        })
                        .collect()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNormSample {
    pub s: f64,
    pub t: f64,
    pub from_space: String,
    pub to_space: String,
    /// Largest ratio `||Ω v||_to / ||v||_from` over all probes tried.
    pub estimate: f64,
    pub n_probes: usize,
    /// Ratio of the best probe before refinement.
    pub best_unrefined: f64,
}

/// Probe families used by the operator-norm search.
fn probe_fields(spec: &GridSpec, n_probes: usize, seed: u64, focus_times: &[f64]) -> Vec<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = 0.6 * spec.half_width();
    let mut out = Vec::with_capacity(n_probes);
    let mut sp = crate::spectral::Spectral::new(*spec);
    for k in 0..n_probes {
        let cx = rng.random_range(-3.0..3.0);
        let cy = rng.random_range(-3.0..3.0);
        let kind = k % 3;
        let v: Vec<Complex64> = match kind {
            // Localized bump with a random modulation.
            0 | 1 => {
                let w = rng.random_range(0.5..3.0);
                let kx = if kind == 0 { 0.0 } else { rng.random_range(-1.5..1.5) };
                let ky = if kind == 0 { 0.0 } else { rng.random_range(-1.5..1.5) };
                (0..spec.len())
                    .map(|idx| {
                        let (x, y) = spec.point(idx);
                        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                        Complex64::from_polar((-r2 / (2.0 * w * w)).exp(), kx * x + ky * y)
                    })
                    .collect()
            }
            // Gaussian that refocuses after a free evolution over `tau`.
            _ => {
                let tau = if focus_times.is_empty() {
                    rng.random_range(1.0..10.0)
                } else {
                    focus_times[rng.random_range(0..focus_times.len())]
                };
                let w = rng.random_range(0.7..2.0);
                let mut g: Vec<Complex64> = (0..spec.len())
                    .map(|idx| {
                        let (x, y) = spec.point(idx);
                        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                        Complex64::new((-r2 / (2.0 * w * w)).exp(), 0.0)
                    })
                    .collect();
                let back = sp.kinetic_phase(-tau);
                sp.apply_multiplier(&mut g, &back);
                // Keep the probe clear of the box edges.
                for (idx, v) in g.iter_mut().enumerate() {
                    let (x, y) = spec.point(idx);
                    let r = (x * x + y * y).sqrt();
                    let cut = ((reach - r) / 2.0).clamp(0.0, 1.0);
                    *v *= cut * cut * (3.0 - 2.0 * cut);
                }
                g
            }
        };
        out.push(v);
    }
    out
}

/// Lower bounds for `||Ω(t_j, s)||_{from → to}` at every `t_j`.
///
/// All probes are evolved once with checkpoints at the requested times; the
/// best probe at each time is then refined by `refine_steps` power steps
/// built from `Ω` and its adjoint: the nonlinear power method in general, and
/// Rayleigh-Ritz over the same Krylov space when both norms are Hilbertian.
#[allow(clippy::too_many_arguments)]
pub fn omega_norm_sweep(
    s: f64,
    times: &[f64],
    from: NormSpace,
    to: NormSpace,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
    n_probes: usize,
    seed: u64,
    refine_steps: usize,
) -> Result<Vec<OperatorNormSample>> {
    let mut out = omega_norm_sweeps(
        s,
        times,
        &[(from, to)],
        path,
        scheme,
        potential,
        n_probes,
        seed,
        refine_steps,
    )?;
    Ok(out.remove(0))
}

/// [`omega_norm_sweep`] for several space pairs sharing one set of probe runs.
#[allow(clippy::too_many_arguments)]
pub fn omega_norm_sweeps(
    s: f64,
    times: &[f64],
    pairs: &[(NormSpace, NormSpace)],
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
    n_probes: usize,
    seed: u64,
    refine_steps: usize,
) -> Result<Vec<Vec<OperatorNormSample>>> {
    for (from, to) in pairs {
        from.validate()?;
        to.validate()?;
        if !from.valid_source() || !to.valid_target() {
            return Err(Error::InvalidSpace(format!("unsupported pair {from} -> {to}")));
        }
    }
    if n_probes == 0 {
        return Err(Error::InvalidConfig("need at least one probe".into()));
    }
    if times.iter().any(|&t| t < s) {
        return Err(Error::InvalidConfig("sweep times must not precede s".into()));
    }
    let spec = *potential.spec();
    let focus: Vec<f64> = times.iter().map(|t| t - s).collect();
    let probes = probe_fields(&spec, n_probes, seed, &focus);
    // ratios[k][pair][j]
    let ratios: Vec<Result<Vec<Vec<f64>>>> = probes
        .par_iter()
        .map(|p| {
            let v = ComplexField::from_raw(spec, p.clone());
            let snaps = linearized_snapshots(&v, s, times, path, scheme, potential)?;
            Ok(pairs
                .iter()
                .map(|(from, to)| {
                    let denom = from.norm(p, &spec);
                    snaps.iter().map(|z| to.norm(z.values(), &spec) / denom).collect()
                })
                .collect())
        })
        .collect();
    let ratios: Vec<Vec<Vec<f64>>> = ratios.into_iter().collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|i| (0..times.len()).map(move |j| (i, j)))
        .collect();
    let samples: Vec<Result<OperatorNormSample>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let (from, to) = pairs[i];
            let t = times[j];
            let (best, best_ratio) = ratios
                .iter()
                .enumerate()
                .map(|(k, r)| (k, r[i][j]))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let estimate = match (from.hilbert_weight(&spec), to.hilbert_weight(&spec)) {
                (Some(ws), Some(wt)) => best_ratio.max(ritz_refine(
                    &probes[best],
                    &ws,
                    &wt,
                    refine_steps,
                    s,
                    t,
                    path,
                    scheme,
                    potential,
                )?),
                _ => best_ratio.max(power_refine(
                    &probes[best],
                    from,
                    to,
                    refine_steps,
                    s,
                    t,
                    path,
                    scheme,
                    potential,
                )?),
            };
            Ok(OperatorNormSample {
                s,
                t,
                from_space: from.to_string(),
                to_space: to.to_string(),
                estimate,
                n_probes,
                best_unrefined: best_ratio,
            })
        })
        .collect();
    let mut flat = samples.into_iter();
    let mut out = Vec::with_capacity(pairs.len());
    for _ in pairs {
        out.push(flat.by_ref().take(times.len()).collect::<Result<Vec<_>>>()?);
    }
    Ok(out)
}

/// Nonlinear power method for `||Ω||_{from → to}` started at `v`; returns
/// the best ratio reached.
#[allow(clippy::too_many_arguments)]
fn power_refine(
    start: &[Complex64],
    from: NormSpace,
    to: NormSpace,
    steps: usize,
    s: f64,
    t: f64,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
) -> Result<f64> {
    let spec = *potential.spec();
    let mut estimate = 0.0f64;
    let mut v = start.to_vec();
    for step in 0..=steps {
        let vf = ComplexField::from_raw(spec, v.clone());
        let z = evolve_linearized(&vf, s, t, path, scheme, potential)?;
        if step > 0 {
            estimate = estimate.max(to.norm(z.values(), &spec) / from.norm(&v, &spec));
        }
        if step == steps {
            break;
        }
        let g = ComplexField::from_raw(spec, to.dual_of(z.values(), &spec));
        let w = evolve_linearized_adjoint(&g, s, t, path, scheme, potential)?;
        let next = from.maximizer(w.values(), &spec);
        let nn = from.norm(&next, &spec);
        if !(nn > 0.0) || !nn.is_finite() {
            break;
        }
        v = next.into_iter().map(|x| x / nn).collect();
    }
    Ok(estimate)
}

/// Rayleigh-Ritz on the Krylov space of the normal operator built by
/// `steps` power steps, for Hilbert norms `||w_s v||_2 -> ||w_t z||_2`.
///
/// The space is spanned in the real sense (`Ω` is only real-linear), and the
/// returned value is the ratio attained by the best vector of the space, so
/// it is never below the plain power iterate.
#[allow(clippy::too_many_arguments)]
fn ritz_refine(
    start: &[Complex64],
    ws: &[f64],
    wt: &[f64],
    steps: usize,
    s: f64,
    t: f64,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
) -> Result<f64> {
    let spec = *potential.spec();
    let cell = spec.cell_area();
    let dot = |a: &[Complex64], b: &[Complex64]| inner_unchecked(a, b).re * cell;
    let mut x: Vec<Complex64> = start.iter().zip(ws).map(|(v, w)| v * w).collect();
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let mut images: Vec<Vec<Complex64>> = Vec::new();
    for k in 0..=steps {
        for q in &basis {
            let c = dot(q, &x);
            axpy_re(&mut x, -c, q);
        }
        let nx = dot(&x, &x).sqrt();
        if !(nx > 1e-12 * (1.0 + images.len() as f64)) || !nx.is_finite() {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let v = ComplexField::from_raw(spec, x.iter().zip(ws).map(|(q, w)| q / w).collect());
        let z = evolve_linearized(&v, s, t, path, scheme, potential)?;
        let y: Vec<Complex64> = z.values().iter().zip(wt).map(|(z, w)| z * w).collect();
        basis.push(std::mem::take(&mut x));
        if k == steps {
            images.push(y);
            break;
        }
        let g = ComplexField::from_raw(spec, y.iter().zip(wt).map(|(y, w)| y * w).collect());
        images.push(y);
        let w = evolve_linearized_adjoint(&g, s, t, path, scheme, potential)?;
        x = w.values().iter().zip(ws).map(|(v, w)| v / w).collect();
    }
    let m = images.len();
    if m == 0 {
        return Ok(0.0);
    }
    let gram = DMatrix::from_fn(m, m, |i, j| dot(&images[i], &images[j]));
    let eig = SymmetricEigen::new(gram);
    let (top, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let coef = eig.eigenvectors.column(top);
    // Attained ratio of the Ritz vector, recomputed from its image.
    let mut image = vec![ZERO; spec.len()];
    let mut pre = vec![ZERO; spec.len()];
    for i in 0..m {
        axpy_re(&mut image, coef[i], &images[i]);
        axpy_re(&mut pre, coef[i], &basis[i]);
    }
    Ok((dot(&image, &image) / dot(&pre, &pre)).sqrt())
}

/// Lower bound for `||Ω(t, s)||_{from → to}` from `n_probes` probes.
#[allow(clippy::too_many_arguments)]
pub fn omega_operator_norm(
    s: f64,
    t: f64,
    from: NormSpace,
    to: NormSpace,
    path: &CoefficientPath,
    scheme: &EvolutionScheme,
    potential: &Potential,
    n_probes: usize,
    seed: u64,
) -> Result<OperatorNormSample> {
    let mut v = omega_norm_sweep(s, &[t], from, to, path, scheme, potential, n_probes, seed, 5)?;
    Ok(v.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::real_inner_product;
    use crate::manifold::{branch_build, BranchOptions};
    use crate::operator::{compute_ground_state, project_continuous};
    use std::sync::OnceLock;

    struct Fixture {
        potential: Potential,
        spectrum: DiscreteSpectrum,
        branch: BranchTable,
        linear: BranchTable,
    }

    fn spec() -> GridSpec {
        GridSpec::new(64, 12.8).unwrap()
    }

    fn fixture() -> &'static Fixture {
        static CELL: OnceLock<Fixture> = OnceLock::new();
        CELL.get_or_init(|| {
            let potential = Potential::gaussian(spec(), 1.0, 1.0);
            let spectrum = compute_ground_state(&potential).unwrap();
            let opts = BranchOptions {
                a_max: 0.6,
                n_samples: 7,
                ..Default::default()
            };
            let branch = branch_build(-1.0, &spectrum, &potential, &opts).unwrap();
            let linear = branch_build(0.0, &spectrum, &potential, &opts).unwrap();
            Fixture {
                potential,
                spectrum,
                branch,
                linear,
            }
        })
    }

    fn packet(cx: f64, kx: f64) -> ComplexField {
        ComplexField::from_fn(spec(), |x, y| {
            Complex64::from_polar((-((x - cx).powi(2) + y * y) / 3.0).exp(), kx * x + 0.2 * y)
        })
    }

    fn scheme() -> EvolutionScheme {
        EvolutionScheme::new(0.01)
    }

    fn rel(a: &ComplexField, b: &ComplexField) -> f64 {
        a.sub(b).unwrap().l2_norm() / b.l2_norm().max(1e-300)
    }

    #[test]
    fn free_group_at_zero_time_is_the_projection() {
        let f = fixture();
        let v = packet(1.0, 0.5);
        let z = evolve_free_group(&v, 2.0, 2.0, &f.potential, Some(&f.spectrum), &scheme()).unwrap();
        let pv = project_continuous(&v, &f.spectrum).unwrap();
        assert!(z.sub(&pv).unwrap().l2_norm() < 1e-13);
    }

    #[test]
    fn free_gaussian_spreads_as_in_closed_form() {
        let sp = spec();
        let w2 = 1.0;
        let v = ComplexField::from_real_fn(sp, |x, y| (-(x * x + y * y) / (2.0 * w2)).exp());
        let t = 1.0;
        let z = evolve_free_group(&v, 0.0, t, &Potential::zero(sp), None, &scheme()).unwrap();
        let c = Complex64::new(w2, 2.0 * t);
        let exact = ComplexField::from_fn(sp, |x, y| w2 / c * (-(x * x + y * y) / (2.0 * c)).exp());
        assert!(rel(&z, &exact) < 1e-6, "{}", rel(&z, &exact));
    }

    #[test]
    fn free_group_is_unitary_without_absorber() {
        let f = fixture();
        let v = project_continuous(&packet(-2.0, 1.0), &f.spectrum).unwrap();
        let z = evolve_free_group(&v, 0.0, 10.0, &f.potential, Some(&f.spectrum), &scheme()).unwrap();
        assert!((z.l2_norm() - v.l2_norm()).abs() < 1e-12 * v.l2_norm());
    }

    #[test]
    fn murata_ratio_limits() {
        let f = fixture();
        let v = packet(0.5, 0.0);
        let r0 = murata_ratio(&v, 0.0, 2.5, &f.potential, Some(&f.spectrum), &scheme()).unwrap();
        assert!(r0 <= 2f64.ln().powi(2));
        let r = murata_ratio(&f.spectrum.psi0, 1.0, 2.5, &f.potential, Some(&f.spectrum), &scheme()).unwrap();
        assert!(r < 1e-12);
    }

    #[test]
    fn l2_ratio_is_conserved() {
        let f = fixture();
        let v = packet(1.0, 0.3);
        let times = [0.5, 1.0, 2.0, 3.0];
        let series = lp_decay_series(&v, &times, 2.0, &f.potential, Some(&f.spectrum), &scheme()).unwrap();
        for x in &series {
            assert!((x - series[0]).abs() < 1e-12 * series[0]);
        }
    }

    #[test]
    fn free_sup_norm_decays_like_one_over_t() {
        let sp = GridSpec::new(128, 25.6).unwrap();
        let v = ComplexField::from_real_fn(sp, |x, y| (-(x * x + y * y) / 2.0).exp());
        let times = [2.0, 3.0, 4.0];
        let s = lp_decay_series(&v, &times, f64::INFINITY, &Potential::zero(sp), None, &scheme()).unwrap();
        let (mx, mn) = s.iter().fold((0.0f64, f64::INFINITY), |(a, b), &x| (a.max(x), b.min(x)));
        assert!(mx / mn < 1.05, "{s:?}");
    }

    #[test]
    fn lp_ratio_rejects_small_exponents() {
        let f = fixture();
        let r = lp_decay_ratio(&packet(0.0, 0.0), 1.0, 1.5, &f.potential, None, &scheme());
        assert!(matches!(r, Err(Error::InvalidExponent(_))));
    }

    #[test]
    fn linearized_flow_reduces_to_the_free_group() {
        let f = fixture();
        let v = project_continuous(&packet(1.0, 0.5), &f.spectrum).unwrap();
        let free = evolve_free_group(&v, 0.0, 3.0, &f.potential, Some(&f.spectrum), &scheme()).unwrap();
        let zero = CoefficientPath::frozen(&f.branch, Complex64::new(0.0, 0.0)).unwrap();
        let z0 = evolve_linearized(&v, 0.0, 3.0, &zero, &scheme(), &f.potential).unwrap();
        assert!(rel(&z0, &free) < 1e-8);
        let lin = CoefficientPath::frozen(&f.linear, Complex64::new(0.4, 0.1)).unwrap();
        let z1 = evolve_linearized(&v, 0.0, 3.0, &lin, &scheme(), &f.potential).unwrap();
        assert!(rel(&z1, &free) < 1e-8);
    }

    #[test]
    fn omega_at_equal_times_is_the_projection() {
        let f = fixture();
        let v = packet(1.0, 0.5);
        let path = CoefficientPath::frozen(&f.branch, Complex64::new(0.3, 0.2)).unwrap();
        let z = evolve_linearized(&v, 1.0, 1.0, &path, &scheme(), &f.potential).unwrap();
        let pv = project_continuous(&v, &f.spectrum).unwrap();
        assert!(z.sub(&pv).unwrap().l2_norm() <= 1e-12);
    }

    #[test]
    fn omega_composes_along_a_frozen_path() {
        let f = fixture();
        let v = packet(1.0, 0.5);
        let path = CoefficientPath::frozen(&f.branch, Complex64::new(0.3, 0.0)).unwrap();
        let direct = evolve_linearized(&v, 0.0, 2.0, &path, &scheme(), &f.potential).unwrap();
        let mid = evolve_linearized(&v, 0.0, 0.7, &path, &scheme(), &f.potential).unwrap();
        let two = evolve_linearized(&mid, 0.7, 2.0, &path, &scheme(), &f.potential).unwrap();
        assert!(rel(&two, &direct) < 1e-4, "{}", rel(&two, &direct));
    }

    #[test]
    fn omega_is_real_but_not_complex_linear() {
        let f = fixture();
        let v = project_continuous(&packet(0.5, 0.5), &f.spectrum).unwrap();
        let path = CoefficientPath::frozen(&f.branch, Complex64::new(0.5, 0.0)).unwrap();
        let run = |x: &ComplexField| evolve_linearized(x, 0.0, 2.0, &path, &scheme(), &f.potential).unwrap();
        let z = run(&v);
        let z3 = run(&v.scaled(Complex64::new(-3.0, 0.0)));
        assert!(rel(&z3, &z.scaled(Complex64::new(-3.0, 0.0))) < 1e-12);
        let zi = run(&v.scaled(Complex64::i()));
        let mismatch = zi.sub(&z.scaled(Complex64::i())).unwrap().l2_norm();
        assert!(mismatch > 1e-3, "mismatch {mismatch:e}");
    }

    #[test]
    fn adjoint_satisfies_the_duality_identity() {
        let f = fixture();
        let v = project_continuous(&packet(0.5, 0.5), &f.spectrum).unwrap();
        let w = project_continuous(&packet(-1.0, -0.3), &f.spectrum).unwrap();
        for coupling in [DhCoupling::Tangent, DhCoupling::Literal, DhCoupling::Inside, DhCoupling::Off] {
            let path = CoefficientPath::frozen(&f.branch, Complex64::new(0.4, 0.2))
                .unwrap()
                .with_coupling(coupling);
            let z = evolve_linearized(&v, 0.0, 1.5, &path, &scheme(), &f.potential).unwrap();
            let y = evolve_linearized_adjoint(&w, 0.0, 1.5, &path, &scheme(), &f.potential).unwrap();
            let lhs = real_inner_product(&w, &z).unwrap();
            let rhs = real_inner_product(&y, &v).unwrap();
            assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0), "{coupling:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn t_and_duhamel_vanish_in_trivial_cases() {
        let f = fixture();
        let v = packet(1.0, 0.2);
        let zero = CoefficientPath::frozen(&f.branch, Complex64::new(0.0, 0.0)).unwrap();
        assert!(compute_t(&v, 0.0, 2.0, &zero, &scheme(), &f.potential).unwrap().l2_norm() < 1e-12);
        let path = CoefficientPath::frozen(&f.branch, Complex64::new(0.3, 0.0)).unwrap();
        assert!(compute_t(&v, 1.0, 1.0, &path, &scheme(), &f.potential).unwrap().l2_norm() < 1e-12);
        let d0 = duhamel_residual_w(&v, 0.0, 2.0, &zero, &scheme(), &f.potential, 10).unwrap();
        assert!(d0.residual < 1e-12);
        let d1 = duhamel_residual_w(&v, 1.0, 1.0, &path, &scheme(), &f.potential, 10).unwrap();
        assert!(d1.residual < 1e-12);
    }

    #[test]
    fn t_is_quadratic_in_the_amplitude() {
        let f = fixture();
        let v = packet(1.0, 0.3);
        let norms: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&a| {
                let path = CoefficientPath::frozen(&f.branch, Complex64::new(a, 0.0)).unwrap();
                compute_t(&v, 0.0, 2.0, &path, &scheme(), &f.potential).unwrap().l2_norm()
            })
            .collect();
        let slope = (norms[2] / norms[0]).ln() / 4f64.ln();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn norm_spaces_parse_and_display() {
        for s in ["l2w(2.5)", "l2w(-2.5)", "lp(4)", "l1lq(1.3)"] {
            let x: NormSpace = s.parse().unwrap();
            assert_eq!(x.to_string().parse::<NormSpace>().unwrap(), x);
        }
        assert!(matches!("lp(0.5)".parse::<NormSpace>(), Err(Error::InvalidSpace(_))));
        assert!("hilbert".parse::<NormSpace>().is_err());
    }

    #[test]
    fn operator_norm_estimates_are_reproducible_lower_bounds() {
        let f = fixture();
        let path = CoefficientPath::frozen(&f.branch, Complex64::new(0.06, 0.0)).unwrap();
        let from = NormSpace::WeightedL2(2.5);
        let to = NormSpace::WeightedL2(-2.5);
        let a = omega_operator_norm(0.0, 1.0, from, to, &path, &scheme(), &f.potential, 4, 11).unwrap();
        let b = omega_operator_norm(0.0, 1.0, from, to, &path, &scheme(), &f.potential, 4, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.estimate >= a.best_unrefined && a.best_unrefined > 0.0);
        // Any single probe gives a lower bound too; the estimate must beat a plain Gaussian.
        let v = project_continuous(&packet(0.0, 0.0), &f.spectrum).unwrap();
        let z = evolve_linearized(&v, 0.0, 1.0, &path, &scheme(), &f.potential).unwrap();
        let ratio = to.norm(z.values(), &spec()) / from.norm(v.values(), &spec());
        assert!(a.estimate >= 0.99 * ratio, "{} < {ratio}", a.estimate);
    }
}
