//! Full cubic NLS with potential, the decomposition `u = aψ0 + h(a) + r`
//! around the manifold, and the projected equation for `a(t)`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_unchecked, ComplexField, GridSpec};
use crate::manifold::{bound_state, BoundState, BranchTable};
use crate::operator::Potential;
use crate::propagators::NormSpace;
use crate::spectral::Spectral;
use crate::stepper::{EvolutionScheme, SplitStepper};

/// Growth of `||u||_∞` over its initial value that aborts a run.
pub const BLOWUP_FACTOR: f64 = 10.0;

/// Run parameters stored alongside a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub gamma: f64,
    pub t_end: f64,
    pub save_every: f64,
    pub scheme: EvolutionScheme,
    pub sigma: f64,
    pub p_list: Vec<f64>,
    /// Keep every saved field in memory; off for long runs that only need series.
    #[serde(default = "default_true")]
    pub keep_snapshots: bool,
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(gamma: f64, t_end: f64, save_every: f64, scheme: EvolutionScheme) -> Self {
        RunConfig {
            gamma,
            t_end,
            save_every,
            scheme,
            sigma: 2.5,
            p_list: vec![6.0],
            keep_snapshots: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if !(self.t_end >= 0.0) || !(self.save_every > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need t_end >= 0 and save_every > 0, got {} and {}",
                self.t_end, self.save_every
            )));
        }
        if let Some(p) = self.p_list.iter().find(|&&p| !(p >= 1.0)) {
            return Err(Error::InvalidConfig(format!("norm exponent {p} < 1")));
        }
        Ok(())
    }

    /// Series labels recorded for `r`: `L²_{-σ}`, `L²` and each `L^p`.
    pub fn norm_spaces(&self) -> Vec<NormSpace> {
        let mut out = vec![NormSpace::WeightedL2(-self.sigma), NormSpace::Lp(2.0)];
        for &p in &self.p_list {
            if p != 2.0 {
                out.push(NormSpace::Lp(p));
            }
        }
        out
    }
}

/// Saved states of a run and the series derived from them.
///
/// `a_series`, `branch_energy` and `r_norms` are only filled when the run
/// was given a branch to decompose against.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: RunConfig,
    pub times: Vec<f64>,
    pub snapshots: Vec<ComplexField>,
    pub a_series: Vec<Complex64>,
    pub branch_energy: Vec<f64>,
    /// Keyed by the [`NormSpace`] label, e.g. `l2w(-2.5)` or `lp(6)`.
    pub r_norms: BTreeMap<String, Vec<f64>>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn norm_series(&self, space: &NormSpace) -> Result<&[f64]> {
        self.r_norms
            .get(&space.to_string())
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingSeries(space.to_string()))
    }

    /// `sum |a(t_{k+1}) - a(t_k)|`; `a(t)` itself rotates, so this mostly
    /// measures the phase speed unless `|a|` settles.
    pub fn a_total_variation(&self) -> f64 {
        self.a_series.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Largest relative deviation of the mass from its initial value.
    pub fn mass_drift(&self) -> f64 {
        relative_drift(&self.mass)
    }

    pub fn energy_drift(&self) -> f64 {
        relative_drift(&self.energy)
    }
}

fn relative_drift(series: &[f64]) -> f64 {
    let Some(&first) = series.first() else {
        return 0.0;
    };
    let scale = first.abs().max(f64::MIN_POSITIVE);
    series
        .iter()
        .map(|v| (v - first).abs() / scale)
        .fold(0.0, f64::max)
}

/// `(||u||_2^2, ∫ |∇u|^2 + V|u|^2 + (γ/2)|u|^4)`.
pub fn conserved_quantities(u: &ComplexField, potential: &Potential, gamma: f64) -> Result<(f64, f64)> {
    u.spec().check_same(potential.spec())?;
    let mut sp = Spectral::new(*u.spec());
    Ok(conserved_with(&mut sp, u.values(), potential, gamma))
}

fn conserved_with(sp: &mut Spectral, u: &[Complex64], potential: &Potential, gamma: f64) -> (f64, f64) {
    let n = sp.n();
    let cell = potential.spec().cell_area();
    let mut hat = u.to_vec();
    sp.forward(&mut hat);
    let grad: f64 = hat
        .iter()
        .zip(sp.k2())
        .map(|(c, k2)| k2 * c.norm_sqr())
        .sum::<f64>()
        / (n * n) as f64;
    let mut mass = 0.0;
    let mut pot = 0.0;
    for (v, w) in u.iter().zip(potential.values()) {
        let m = v.norm_sqr();
        mass += m;
        pot += w * m + 0.5 * gamma * m * m;
    }
    (mass * cell, (grad + pot) * cell)
}

/// `||u||_2 + ||∇u||_2`, the size used for the smallness condition on data.
pub fn h1_proxy(u: &ComplexField) -> f64 {
    let spec = *u.spec();
    let mut sp = Spectral::new(spec);
    let n = sp.n();
    let mut hat = u.values().to_vec();
    sp.forward(&mut hat);
    let grad: f64 = hat
        .iter()
        .zip(sp.k2())
        .map(|(c, k2)| k2 * c.norm_sqr())
        .sum::<f64>()
        / (n * n) as f64;
    u.l2_norm() + (grad * spec.cell_area()).sqrt()
}

/// `a = <ψ0, u>`, the manifold point through `a` and `r = u - ψ_E(a)`.
pub fn decompose(u: &ComplexField, branch: &BranchTable) -> Result<(Complex64, BoundState, ComplexField)> {
    u.spec().check_same(branch.spec())?;
    let a = inner_unchecked(branch.psi0().values(), u.values()) * u.spec().cell_area();
    let state = bound_state(a, branch)?;
    let r = u.sub(&state.psi_e)?;
    Ok((a, state, r))
}

/// Right-hand side of `i da/dt = E(|a|) a + γ <ψ0, N(ψ_E, r)>` with
/// `N = 2|ψ|²r + ψ²r̄ + 2ψ|r|² + ψ̄r² + |r|²r`.
pub fn modulation_rhs(a: Complex64, r: &ComplexField, branch: &BranchTable) -> Result<Complex64> {
    r.spec().check_same(branch.spec())?;
    let state = bound_state(a, branch)?;
    let gamma = branch.gamma();
    let mut acc = Complex64::new(0.0, 0.0);
    if gamma != 0.0 {
        for ((q, p), rv) in branch
            .psi0()
            .values()
            .iter()
            .zip(state.psi_e.values())
            .zip(r.values())
        {
            acc += q.conj() * nonlinear_remainder(*p, *rv);
        }
    }
    Ok(state.energy * a + gamma * acc * r.spec().cell_area())
}

/// `|ψ+r|²(ψ+r) - |ψ|²ψ` expanded in powers of `r`.
fn nonlinear_remainder(p: Complex64, r: Complex64) -> Complex64 {
    let r2 = r.norm_sqr();
    2.0 * p.norm_sqr() * r + p * p * r.conj() + 2.0 * p * r2 + p.conj() * r * r + r2 * r
}

/// Residual `|i ȧ(t_k) - rhs(a_k, r_k)|` at interior save times, with `ȧ`
/// by central differences. Returns `(t_k, residual)`.
pub fn modulation_residual(traj: &Trajectory, branch: &BranchTable) -> Result<Vec<(f64, f64)>> {
    if traj.snapshots.len() != traj.times.len() {
        return Err(Error::MissingSeries("snapshots".into()));
    }
    if traj.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "central differences need 3 snapshots, got {}",
            traj.len()
        )));
    }
    let mut a = Vec::with_capacity(traj.len());
    let mut r = Vec::with_capacity(traj.len());
    for u in &traj.snapshots {
        let (ak, _, rk) = decompose(u, branch)?;
        a.push(ak);
        r.push(rk);
    }
    let i = Complex64::new(0.0, 1.0);
    (1..traj.len() - 1)
        .map(|k| {
            let dadt = (a[k + 1] - a[k - 1]) / (traj.times[k + 1] - traj.times[k - 1]);
            let rhs = modulation_rhs(a[k], &r[k], branch)?;
            Ok((traj.times[k], (i * dadt - rhs).norm()))
        })
        .collect()
}

/// Everything [`evolve_nls`] needs besides the initial state.
#[derive(Debug, Clone, Copy)]
pub struct NlsModel<'a> {
    pub potential: &'a Potential,
    /// Decompose against this branch at every save; its `γ` must match the run.
    pub branch: Option<&'a BranchTable>,
}

/// Strang splitting for `i u_t = (-Δ + V) u + γ|u|²u`: exact kinetic half
/// steps, exact pointwise phase `exp(-i(V + γ|u|²) dt)` in the middle, and the
/// sponge damping if configured.
pub fn evolve_nls(u0: &ComplexField, model: NlsModel<'_>, config: &RunConfig) -> Result<Trajectory> {
    config.validate()?;
    let spec = *u0.spec();
    spec.check_same(model.potential.spec())?;
    if let Some(b) = model.branch {
        spec.check_same(b.spec())?;
        if b.gamma() != config.gamma {
            return Err(Error::InvalidConfig(format!(
                "branch was built for gamma = {} but the run uses {}",
                b.gamma(),
                config.gamma
            )));
        }
    }
    if let Some(j) = u0.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(j));
    }
    let scheme = &config.scheme;
    let (n_steps, h) = scheme.steps(0.0, config.t_end);
    let stride = if n_steps == 0 {
        1
    } else {
        let x = config.save_every / h;
        let m = x.round();
        if m < 1.0 || (x - m).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "save_every = {} is not a multiple of the step {h}",
                config.save_every
            )));
        }
        m as usize
    };
    let mut checkpoints: Vec<usize> = (0..=n_steps).step_by(stride).collect();
    if checkpoints.last() != Some(&n_steps) {
        checkpoints.push(n_steps);
    }

    let damping = scheme.damping(&spec, h);
    let potential = model.potential.values();
    let gamma = config.gamma;
    let initial_max = u0.max_abs();
    let limit = (BLOWUP_FACTOR * initial_max).powi(2);
    let peak = std::cell::Cell::new(initial_max * initial_max);

    let spaces = config.norm_spaces();
    let mut traj = Trajectory {
        config: config.clone(),
        times: Vec::with_capacity(checkpoints.len()),
        snapshots: Vec::new(),
        a_series: Vec::new(),
        branch_energy: Vec::new(),
        r_norms: spaces.iter().map(|s| (s.to_string(), Vec::new())).collect(),
        mass: Vec::new(),
        energy: Vec::new(),
    };
    if model.branch.is_none() {
        traj.r_norms.clear();
    }

    let mut sp = Spectral::new(spec);
    let mut stepper = SplitStepper::new(spec, h, false);
    let mut z = u0.values().to_vec();
    stepper.run(
        &mut z,
        n_steps,
        &checkpoints,
        |_, z| {
            let mut top = peak.get();
            for (j, v) in z.iter_mut().enumerate() {
                let m = v.norm_sqr();
                top = top.max(m);
                let phase = Complex64::from_polar(1.0, -(potential[j] + gamma * m) * h);
                *v *= phase;
                if let Some(d) = &damping {
                    *v *= d[j];
                }
            }
            peak.set(top);
        },
        |m, z| {
            let t = m as f64 * h;
            if peak.get() > limit || z.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowupDetected {
                    time: t,
                    initial: initial_max,
                    current: peak.get().sqrt(),
                });
            }
            let (mass, energy) = conserved_with(&mut sp, z, model.potential, gamma);
            traj.times.push(t);
            traj.mass.push(mass);
            traj.energy.push(energy);
            if let Some(branch) = model.branch {
                let u = ComplexField::from_raw(spec, z.to_vec());
                let (a, state, r) = decompose(&u, branch)?;
                traj.a_series.push(a);
                traj.branch_energy.push(state.energy);
                for s in &spaces {
                    traj.r_norms
                        .get_mut(&s.to_string())
                        .expect("series created above")
                        .push(s.norm(r.values(), &spec));
                }
                if config.keep_snapshots {
                    traj.snapshots.push(u);
                }
            } else if config.keep_snapshots {
                traj.snapshots.push(ComplexField::from_raw(spec, z.to_vec()));
            }
            Ok(())
        },
    )?;
    Ok(traj)
}

/// Normalized Gaussian packet `exp(-|x-c|²/(2w²) + i k·x)` scaled to `||·||_2 = amplitude`.
pub fn gaussian_packet(
    spec: &GridSpec,
    center: (f64, f64),
    width: f64,
    momentum: (f64, f64),
    amplitude: f64,
) -> ComplexField {
    let f = ComplexField::from_fn(*spec, |x, y| {
        let (dx, dy) = (x - center.0, y - center.1);
        let envelope = (-(dx * dx + dy * dy) / (2.0 * width * width)).exp();
        Complex64::from_polar(envelope, momentum.0 * x + momentum.1 * y)
    });
    let norm = f.l2_norm();
    f.scaled(Complex64::new(amplitude / norm, 0.0))
}

/// `ψ_E(a0) + eps·g`: a manifold point with localized radiation on top.
pub fn perturbed_bound_state(
    a0: Complex64,
    branch: &BranchTable,
    eps: f64,
    g: &ComplexField,
) -> Result<ComplexField> {
    let mut u = bound_state(a0, branch)?.psi_e;
    u.axpy(Complex64::new(eps, 0.0), g)?;
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::inner_product;
    use crate::manifold::{branch_build, BranchOptions};
    use crate::operator::{compute_ground_state, DiscreteSpectrum};
    use crate::propagators::evolve_free_group;
    use crate::stepper::AbsorberConfig;
    use std::sync::OnceLock;

    struct Fixture {
        potential: Potential,
        spectrum: DiscreteSpectrum,
        focusing: BranchTable,
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
                n_samples: 13,
                ..Default::default()
            };
            let focusing = branch_build(-1.0, &spectrum, &potential, &opts).unwrap();
            let linear = branch_build(0.0, &spectrum, &potential, &opts).unwrap();
            Fixture {
                potential,
                spectrum,
                focusing,
                linear,
            }
        })
    }

    fn model(branch: Option<&'static BranchTable>) -> NlsModel<'static> {
        NlsModel {
            potential: &fixture().potential,
            branch,
        }
    }

    fn bump() -> ComplexField {
        gaussian_packet(&spec(), (2.0, -1.0), 1.2, (0.4, 0.0), 0.05)
    }

    fn rel(a: &ComplexField, b: &ComplexField) -> f64 {
        a.sub(b).unwrap().l2_norm() / b.l2_norm()
    }

    #[test]
    fn bound_state_rotates_in_phase() {
        let f = fixture();
        let state = bound_state(Complex64::new(0.4, 0.0), &f.focusing).unwrap();
        let cfg = RunConfig::new(-1.0, 10.0, 10.0, EvolutionScheme::new(2.5e-3));
        let traj = evolve_nls(&state.psi_e, model(Some(&f.focusing)), &cfg).unwrap();
        let exact = state.psi_e.scaled(Complex64::from_polar(1.0, -state.energy * 10.0));
        let err = traj.snapshots.last().unwrap().sub(&exact).unwrap().l2_norm();
        assert!(err <= 1e-6, "orbit error {err:e}");
        // Saves every 0.05 keep the central-difference error near 3e-7.
        let cfg = RunConfig::new(-1.0, 0.5, 0.05, EvolutionScheme::new(2.5e-3));
        let traj = evolve_nls(&state.psi_e, model(Some(&f.focusing)), &cfg).unwrap();
        let res = modulation_residual(&traj, &f.focusing).unwrap();
        assert!(res.iter().all(|&(_, r)| r <= 1e-6), "{res:?}");
    }

    #[test]
    fn linear_run_is_the_free_group_plus_the_bound_part() {
        let f = fixture();
        let mut u0 = bump();
        u0.axpy(Complex64::new(0.3, 0.1), &f.spectrum.psi0).unwrap();
        let cfg = RunConfig::new(0.0, 3.0, 1.0, EvolutionScheme::new(0.01));
        let traj = evolve_nls(&u0, model(Some(&f.linear)), &cfg).unwrap();
        let end = traj.snapshots.last().unwrap();
        assert!(traj.mass_drift() < 1e-10);
        // Same scheme without the projection: identical up to round-off.
        let full = evolve_free_group(&u0, 0.0, 3.0, &f.potential, None, &cfg.scheme).unwrap();
        assert!(rel(end, &full) < 1e-12);
        // Continuous part plus the exact bound-state phase, up to splitting error.
        let a0 = inner_product(&f.spectrum.psi0, &u0).unwrap();
        let mut expect = evolve_free_group(&u0, 0.0, 3.0, &f.potential, Some(&f.spectrum), &cfg.scheme).unwrap();
        expect.axpy(a0 * Complex64::from_polar(1.0, -f.spectrum.e0 * 3.0), &f.spectrum.psi0).unwrap();
        assert!(rel(end, &expect) < 1e-4, "{}", rel(end, &expect));
        // i da/dt = E0 a; what remains is the O(dt²) frequency shift of the splitting.
        let cfg = RunConfig::new(0.0, 0.1, 0.01, EvolutionScheme::new(5e-4));
        let traj = evolve_nls(&u0, model(Some(&f.linear)), &cfg).unwrap();
        let res = modulation_residual(&traj, &f.linear).unwrap();
        assert!(res.iter().all(|&(_, r)| r <= 1e-8), "{res:?}");
    }

    #[test]
    fn splitting_is_second_order() {
        let f = fixture();
        let state = bound_state(Complex64::new(0.3, 0.0), &f.focusing).unwrap();
        let mut u0 = state.psi_e.clone();
        u0.axpy(Complex64::new(1.0, 0.0), &bump()).unwrap();
        let run = |dt: f64| {
            let cfg = RunConfig::new(-1.0, 1.0, 1.0, EvolutionScheme::new(dt));
            evolve_nls(&u0, model(None), &cfg).unwrap().snapshots.pop().unwrap()
        };
        let (c, m, fi) = (run(0.04), run(0.02), run(0.01));
        let ratio = c.sub(&m).unwrap().l2_norm() / m.sub(&fi).unwrap().l2_norm();
        assert!((ratio - 4.0).abs() < 0.4, "self-convergence ratio {ratio}");
    }

    #[test]
    fn flow_is_gauge_covariant() {
        let f = fixture();
        let state = bound_state(Complex64::new(0.3, 0.0), &f.focusing).unwrap();
        let mut u0 = state.psi_e.clone();
        u0.axpy(Complex64::new(1.0, 0.0), &bump()).unwrap();
        let rot = Complex64::from_polar(1.0, 0.9);
        let cfg = RunConfig::new(-1.0, 2.0, 2.0, EvolutionScheme::new(0.01));
        let a = evolve_nls(&u0, model(None), &cfg).unwrap().snapshots.pop().unwrap();
        let b = evolve_nls(&u0.scaled(rot), model(None), &cfg).unwrap().snapshots.pop().unwrap();
        assert!(b.sub(&a.scaled(rot)).unwrap().l2_norm() <= 1e-10);
    }

    #[test]
    fn decomposition_invariants_along_a_run() {
        let f = fixture();
        let u0 = perturbed_bound_state(Complex64::new(0.3, 0.0), &f.focusing, 1.0, &bump()).unwrap();
        let cfg = RunConfig::new(-1.0, 2.0, 0.5, EvolutionScheme::new(0.01));
        let traj = evolve_nls(&u0, model(Some(&f.focusing)), &cfg).unwrap();
        for (k, u) in traj.snapshots.iter().enumerate() {
            let (a, state, r) = decompose(u, &f.focusing).unwrap();
            assert!((a - traj.a_series[k]).norm() < 1e-10);
            assert!(inner_product(&f.spectrum.psi0, &r).unwrap().norm() < 1e-10);
            let back = state.psi_e.add(&r).unwrap();
            assert!(back.sub(u).unwrap().l2_norm() < 1e-13);
        }
    }

    #[test]
    fn decomposition_of_exact_states() {
        let f = fixture();
        let a = Complex64::new(0.2, -0.25);
        let state = bound_state(a, &f.focusing).unwrap();
        let (got, _, r) = decompose(&state.psi_e, &f.focusing).unwrap();
        assert!((got - a).norm() < 1e-12);
        assert!(r.l2_norm() < 1e-12);
        let tiny = f.spectrum.psi0.scaled(Complex64::new(1e-3, 0.0));
        assert!(decompose(&tiny, &f.linear).unwrap().2.l2_norm() < 1e-15);
    }

    #[test]
    fn modulation_rhs_special_cases() {
        let f = fixture();
        let b = &f.focusing;
        let a = Complex64::new(0.3, 0.1);
        let zero = ComplexField::zeros(spec());
        let got = modulation_rhs(a, &zero, b).unwrap();
        assert!((got - b.energy(a.norm()).unwrap() * a).norm() < 1e-14);

        let r = bump();
        let cubic: Complex64 = f
            .spectrum
            .psi0
            .values()
            .iter()
            .zip(r.values())
            .map(|(q, v)| q.conj() * v * v.norm_sqr())
            .sum::<Complex64>()
            * spec().cell_area();
        let got = modulation_rhs(Complex64::new(0.0, 0.0), &r, b).unwrap();
        assert!((got - b.gamma() * cubic).norm() < 1e-14);
    }

    #[test]
    fn modulation_rhs_is_a_cubic_polynomial_in_r() {
        let f = fixture();
        let b = &f.focusing;
        let a = Complex64::new(0.35, 0.0);
        let r = bump().scaled(Complex64::new(10.0, 0.0));
        let base = b.energy(a.norm()).unwrap() * a;
        let at = |lam: f64| modulation_rhs(a, &r.scaled(Complex64::new(lam, 0.0)), b).unwrap() - base;
        // Solve for c1, c2, c3 in sum c_k lam^k through lam = 1, 2, 4.
        let (y1, y2, y4) = (at(1.0), at(2.0), at(4.0));
        let c3 = (y4 - 6.0 * y2 + 8.0 * y1) / 24.0;
        let c2 = (y2 - 2.0 * y1 - 6.0 * c3) / 2.0;
        let c1 = y1 - c2 - c3;
        let y3 = at(3.0);
        let pred = 3.0 * c1 + 9.0 * c2 + 27.0 * c3;
        assert!((y3 - pred).norm() <= 1e-12 * y3.norm());
        assert!(c1.norm() > 0.0 && c2.norm() > 0.0 && c3.norm() > 0.0);
        let direct: Complex64 = f
            .spectrum
            .psi0
            .values()
            .iter()
            .zip(r.values())
            .map(|(q, v)| q.conj() * v * v.norm_sqr())
            .sum::<Complex64>()
            * spec().cell_area()
            * b.gamma();
        assert!((c3 - direct).norm() <= 1e-10 * direct.norm());
    }

    #[test]
    fn conserved_quantities_of_simple_states() {
        let f = fixture();
        let (m, _) = conserved_quantities(&f.spectrum.psi0, &f.potential, -1.0).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        let sp = spec();
        let k = (3.0 * sp.dk(), 2.0 * sp.dk());
        let wave = ComplexField::from_fn(sp, |x, y| Complex64::from_polar(0.1, k.0 * x + k.1 * y));
        let (m, e) = conserved_quantities(&wave, &Potential::zero(sp), 0.0).unwrap();
        assert!((e - (k.0 * k.0 + k.1 * k.1) * m).abs() < 1e-12 * e);
    }

    #[test]
    fn absorber_never_adds_mass() {
        let scheme = EvolutionScheme::new(0.01).with_absorber(AbsorberConfig::default());
        let u0 = gaussian_packet(&spec(), (0.0, 0.0), 1.0, (2.0, 1.0), 0.5);
        let cfg = RunConfig::new(-1.0, 8.0, 0.25, scheme);
        let traj = evolve_nls(&u0, model(None), &cfg).unwrap();
        assert!(traj.mass.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
        assert!(traj.mass.last().unwrap() < &(0.9 * traj.mass[0]));
    }

    #[test]
    fn runs_record_requested_series() {
        let f = fixture();
        let u0 = perturbed_bound_state(Complex64::new(0.2, 0.0), &f.focusing, 1.0, &bump()).unwrap();
        let mut cfg = RunConfig::new(-1.0, 1.0, 0.25, EvolutionScheme::new(0.01));
        cfg.p_list = vec![4.0, 6.0];
        cfg.keep_snapshots = false;
        let traj = evolve_nls(&u0, model(Some(&f.focusing)), &cfg).unwrap();
        assert_eq!(traj.len(), 5);
        assert!(traj.snapshots.len() <= 1);
        for space in cfg.norm_spaces() {
            assert_eq!(traj.norm_series(&space).unwrap().len(), 5);
        }
        assert!(matches!(traj.norm_series(&NormSpace::Lp(8.0)), Err(Error::MissingSeries(_))));
    }

    #[test]
    fn save_interval_must_fit_the_step() {
        let cfg = RunConfig::new(-1.0, 1.0, 0.015, EvolutionScheme::new(0.01));
        assert!(evolve_nls(&bump(), model(None), &cfg).is_err());
    }

    #[test]
    fn blowup_is_detected() {
        // Mass well above the ground-state threshold (about 11.7) collapses.
        let sp = GridSpec::new(128, 3.2).unwrap();
        let u0 = gaussian_packet(&sp, (0.0, 0.0), 0.5, (0.0, 0.0), 5.0);
        let cfg = RunConfig::new(-1.0, 1.0, 0.01, EvolutionScheme::new(1e-4));
        let zero = Potential::zero(sp);
        let res = evolve_nls(&u0, NlsModel { potential: &zero, branch: None }, &cfg);
        assert!(matches!(res, Err(Error::BlowupDetected { .. })), "{:?}", res.map(|t| t.len()));
    }

    #[test]
    fn gaussian_packet_has_requested_mass() {
        let g = gaussian_packet(&spec(), (1.0, 2.0), 1.5, (0.3, -0.2), 0.7);
        assert!((g.l2_norm() - 0.7).abs() < 1e-12);
    }
}
