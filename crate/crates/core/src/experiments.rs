//! The measurement protocols behind the acceptance report. Each function
//! runs one experiment and returns its [`CriterionOutcome`]; the CLI and the
//! acceptance test share them.

use std::time::Instant;

use num_complex::Complex64;

use crate::dynamics::{
    decompose, evolve_nls, gaussian_packet, perturbed_bound_state, NlsModel, RunConfig, Trajectory,
};
use crate::error::Result;
use crate::fit::{fit_decay, fit_log_exponent, Check, CriterionOutcome, DecaySeries};
use crate::grid::{lp_norm, ComplexField, GridSpec};
use crate::manifold::{bound_state, branch_build, eigen_residual, BranchOptions, BranchTable};
use crate::operator::{
    apply_h, compute_ground_state, project_continuous, verify_h1, DiscreteSpectrum, H1Report, Potential,
};
use crate::propagators::{
    compute_t, duhamel_residual_w, evolve_linearized, free_group_snapshots, murata_series, omega_norm_sweeps,
    CoefficientPath, DhCoupling, NormSpace, OperatorNormSample,
};
use crate::stepper::{AbsorberConfig, EvolutionScheme};

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn ratio_max_min(values: &[f64]) -> f64 {
    let mx = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mn = values.iter().cloned().fold(f64::INFINITY, f64::min);
    mx / mn
}

/// `(1+τ) log²(2+τ)`.
pub fn murata_weight(tau: f64) -> f64 {
    (1.0 + tau) * (2.0 + tau).ln().powi(2)
}

/// Times `t0, t0 + h, ...` up to `t1`, rounded onto the step grid.
pub fn time_grid(t0: f64, t1: f64, h: f64) -> Vec<f64> {
    let n = ((t1 - t0) / h).round() as usize;
    (0..=n).map(|k| t0 + k as f64 * h).collect()
}

/// Ground state, hypothesis check and eigen-residual.
pub fn hypothesis_gate(potential: &Potential) -> Result<(CriterionOutcome, H1Report, DiscreteSpectrum)> {
    let start = Instant::now();
    let report = verify_h1(potential)?;
    let spectrum = compute_ground_state(potential)?;
    let mut r = apply_h(&spectrum.psi0, potential)?;
    r.axpy(Complex64::new(-spectrum.e0, 0.0), &spectrum.psi0)?;
    let outcome = CriterionOutcome::new("1", "hypothesis gate")
        .measure("n_negative", report.n_negative as f64, Check::InRange { lo: 1.0, hi: 1.0 })
        .measure("eigen_residual", r.l2_norm(), Check::AtMost { bound: 1e-10 })
        .note("E0", format!("{:.12e}", spectrum.e0))
        .note("decay_ok", report.decay_ok.to_string())
        .note("threshold_regularity", report.threshold_regularity.clone())
        .with_runtime(elapsed(start));
    Ok((outcome, report, spectrum))
}

/// Builds the branch and checks the stationary residual at every sample,
/// gauge equivariance and the small-amplitude energy slope.
pub fn manifold_check(
    gamma: f64,
    spectrum: &DiscreteSpectrum,
    potential: &Potential,
    opts: &BranchOptions,
) -> Result<(CriterionOutcome, BranchTable, Vec<f64>)> {
    let start = Instant::now();
    let branch = branch_build(gamma, spectrum, potential, opts)?;
    let mut residuals = Vec::with_capacity(branch.samples().len());
    for s in branch.samples() {
        let state = bound_state(Complex64::new(s.a_abs, 0.0), &branch)?;
        residuals.push(eigen_residual(&state, gamma, potential)?);
    }
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);

    // ψ_E(e^{iθ} a) against e^{iθ} ψ_E(a), and the residual of the rotated state.
    let a_abs = 0.5 * branch.delta_scale();
    let base = bound_state(Complex64::new(a_abs, 0.0), &branch)?;
    let mut gauge = 0.0f64;
    for theta in [0.3, 1.7, 2.9, -2.2] {
        let rot = Complex64::from_polar(1.0, theta);
        let turned = bound_state(rot * a_abs, &branch)?;
        let diff = turned.psi_e.sub(&base.psi_e.scaled(rot))?.l2_norm() / base.psi_e.l2_norm();
        let res = (eigen_residual(&turned, gamma, potential)? - eigen_residual(&base, gamma, potential)?).abs();
        gauge = gauge.max(diff).max(res);
    }

    let quartic = lp_norm(&spectrum.psi0, 4.0)?.powi(4);
    let small = branch
        .samples()
        .iter()
        .find(|s| s.a_abs > 0.0)
        .map(|s| (s.a_abs, (s.energy - spectrum.e0) / (s.a_abs * s.a_abs)));
    let (a_small, slope) = small.unwrap_or((0.0, f64::NAN));
    let predicted = gamma * quartic;
    let outcome = CriterionOutcome::new(format!("2 gamma={gamma}"), "center manifold")
        .measure(
            "n_samples",
            branch.samples().len() as f64,
            Check::AtLeast { bound: 20.0 },
        )
        .measure("max_stationary_residual", max_residual, Check::AtMost { bound: 1e-8 })
        .measure("gauge_equivariance", gauge, Check::AtMost { bound: 1e-10 })
        .measure(
            "slope_rel_err",
            ((slope - predicted) / predicted).abs(),
            Check::AtMost { bound: 0.05 },
        )
        .note("slope_at", format!("{a_small}"))
        .note("slope", format!("{slope:.6e}"))
        .note("gamma_psi0_L4^4", format!("{predicted:.6e}"))
        .with_runtime(elapsed(start));
    Ok((outcome, branch, residuals))
}

/// Default perturbed initial state `ψ_E(a0) + eps g`.
pub fn perturbed_state(
    branch: &BranchTable,
    a0: f64,
    eps: f64,
    center: (f64, f64),
    width: f64,
) -> Result<ComplexField> {
    let g = gaussian_packet(branch.spec(), center, width, (0.0, 0.0), 1.0);
    perturbed_bound_state(Complex64::new(a0, 0.0), branch, eps, &g)
}

/// Mass and energy drift of a nonlinear run without absorber.
pub fn conservation_check(
    u0: &ComplexField,
    potential: &Potential,
    gamma: f64,
    t_end: f64,
    dt: f64,
) -> Result<CriterionOutcome> {
    let start = Instant::now();
    let mut cfg = RunConfig::new(gamma, t_end, 1.0, EvolutionScheme::new(dt));
    cfg.keep_snapshots = false;
    let traj = evolve_nls(u0, NlsModel { potential, branch: None }, &cfg)?;
    Ok(conservation_outcome(&traj).with_runtime(elapsed(start)))
}

pub fn conservation_outcome(traj: &Trajectory) -> CriterionOutcome {
    CriterionOutcome::new("3", "conservation")
        .measure("mass_drift", traj.mass_drift(), Check::AtMost { bound: 1e-8 })
        .measure("energy_drift", traj.energy_drift(), Check::AtMost { bound: 1e-6 })
        .note("t_end", format!("{}", traj.config.t_end))
        .note("dt", format!("{}", traj.config.scheme.dt))
}

/// Finite-difference tangency of `Ω` along the orbit through a real `a0`.
///
/// Compares `(r_ε(t) - r_0(t))/ε` with `Ω(t, 0) v`, where `r` is the radiation
/// part of the nonlinear flow from `ψ_E(a0) + ε v` and `v = P_c v`.
#[allow(clippy::too_many_arguments)]
pub fn tangency_check(
    potential: &Potential,
    spectrum: &DiscreteSpectrum,
    branch: &BranchTable,
    a0: f64,
    v: &ComplexField,
    eps: &[f64],
    t: f64,
    dt: f64,
) -> Result<(CriterionOutcome, Vec<f64>)> {
    let start = Instant::now();
    let a = Complex64::new(a0, 0.0);
    let v = project_continuous(v, spectrum)?;
    let scheme = EvolutionScheme::new(dt);
    let path = CoefficientPath::orbit(branch, a, 0.0)?;
    let z = evolve_linearized(&v, 0.0, t, &path, &scheme, potential)?;
    let gamma = branch.gamma();
    let cfg = RunConfig::new(gamma, t, t, scheme);
    let model = NlsModel {
        potential,
        branch: Some(branch),
    };
    let base = bound_state(a, branch)?.psi_e;
    let r0 = {
        let run = evolve_nls(&base, model, &cfg)?;
        decompose(run.snapshots.last().expect("final snapshot"), branch)?.2
    };
    let mut errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let mut u = base.clone();
        u.axpy(Complex64::new(e, 0.0), &v)?;
        let run = evolve_nls(&u, model, &cfg)?;
        let r = decompose(run.snapshots.last().expect("final snapshot"), branch)?.2;
        let mut d = r.sub(&r0)?;
        d.scale_in_place(Complex64::new(1.0 / e, 0.0));
        errors.push(d.sub(&z)?.l2_norm());
    }
    let mut outcome = CriterionOutcome::new("4", "linearization tangency");
    for k in 1..errors.len() {
        outcome = outcome.measure(
            format!("halving_ratio_{k}"),
            errors[k - 1] / errors[k],
            Check::Within { target: 2.0, tol: 0.4 },
        );
    }
    for (e, err) in eps.iter().zip(&errors) {
        outcome = outcome.note(format!("err(eps={e:e})"), format!("{err:.6e}"));
    }
    Ok((outcome.note("|z|", format!("{:.6e}", z.l2_norm())).with_runtime(elapsed(start)), errors))
}

/// Decay of `||e^{-iHt} P_c v||_4` and the Murata product over a window.
pub fn dispersion_check(
    potential: &Potential,
    spectrum: &DiscreteSpectrum,
    v: &ComplexField,
    window: (f64, f64),
    sigma: f64,
    scheme: &EvolutionScheme,
) -> Result<CriterionOutcome> {
    let start = Instant::now();
    let times = time_grid(window.0, window.1, 0.25);
    let snaps = free_group_snapshots(v, 0.0, &times, potential, Some(spectrum), scheme)?;
    let l4: Vec<f64> = snaps.iter().map(|z| lp_norm(z, 4.0)).collect::<Result<_>>()?;
    let fit = fit_decay(&DecaySeries::new(times.clone(), l4, "lp(4)")?, window, false)?;
    let murata = murata_series(v, &times, sigma, potential, Some(spectrum), scheme)?;
    Ok(CriterionOutcome::new("5", "linear dispersion")
        .measure("lp4_exponent", fit.alpha, Check::Within { target: 0.5, tol: 0.1 })
        .measure("murata_max_over_min", ratio_max_min(&murata), Check::AtMost { bound: 10.0 })
        .note("window", format!("{window:?}"))
        .with_runtime(elapsed(start)))
}

/// Operator-norm sweeps for a frozen path: the weighted `L²` product shape
/// and the `L^{p'} -> L²_{-σ}` decay exponent.
#[allow(clippy::too_many_arguments)]
pub fn omega_shape_check(
    potential: &Potential,
    branch: &BranchTable,
    a_frozen: f64,
    times: &[f64],
    sigma: f64,
    p: f64,
    n_probes: usize,
    seed: u64,
    scheme: &EvolutionScheme,
) -> Result<(CriterionOutcome, Vec<Vec<OperatorNormSample>>)> {
    let start = Instant::now();
    let path = CoefficientPath::frozen(branch, Complex64::new(a_frozen, 0.0))?.with_coupling(DhCoupling::Tangent);
    let p_dual = p / (p - 1.0);
    let pairs = [
        (NormSpace::WeightedL2(sigma), NormSpace::WeightedL2(-sigma)),
        (NormSpace::Lp(p_dual), NormSpace::WeightedL2(-sigma)),
    ];
    let sweeps = omega_norm_sweeps(0.0, times, &pairs, &path, scheme, potential, n_probes, seed, 5)?;
    let products: Vec<f64> = sweeps[0].iter().map(|x| x.estimate * murata_weight(x.t)).collect();
    let lp_series = DecaySeries::new(
        sweeps[1].iter().map(|x| x.t).collect(),
        sweeps[1].iter().map(|x| x.estimate).collect(),
        "omega lp'->l2w",
    )?;
    let fit = fit_decay(&lp_series, (times[0], times[times.len() - 1]), false)?;
    let outcome = CriterionOutcome::new("6", "linearized propagator decay shapes")
        .measure(
            "weighted_l2_product_max_over_min",
            ratio_max_min(&products),
            Check::AtMost { bound: 10.0 },
        )
        .measure("lp_exponent", fit.alpha, Check::Within { target: 1.0 - 2.0 / p, tol: 0.15 })
        .note("a_frozen", format!("{a_frozen}"))
        .note("n_probes", n_probes.to_string())
        .with_runtime(elapsed(start));
    Ok((outcome, sweeps))
}

/// Collapse onto the manifold: decay of `r` in `L²_{-σ}`, the log-corrected
/// fit in `L^p` and boundedness in `L²`.
pub fn collapse_check(
    u0: &ComplexField,
    potential: &Potential,
    branch: &BranchTable,
    config: &RunConfig,
    window: (f64, f64),
    p: f64,
) -> Result<CriterionOutcome> {
    let start = Instant::now();
    let traj = evolve_nls(u0, NlsModel { potential, branch: Some(branch) }, config)?;
    Ok(collapse_outcome(&traj, window, p)?.with_runtime(elapsed(start)))
}

pub fn collapse_outcome(traj: &Trajectory, window: (f64, f64), p: f64) -> Result<CriterionOutcome> {
    let weighted = NormSpace::WeightedL2(-traj.config.sigma);
    let w = DecaySeries::new(traj.times.clone(), traj.norm_series(&weighted)?.to_vec(), weighted.to_string())?;
    let lp = NormSpace::Lp(p);
    let l = DecaySeries::new(traj.times.clone(), traj.norm_series(&lp)?.to_vec(), lp.to_string())?;
    let l2 = traj.norm_series(&NormSpace::Lp(2.0))?;
    let fw = fit_decay(&w, window, false)?;
    let fl = fit_decay(&l, window, true)?;
    let growth = l2.iter().cloned().fold(0.0, f64::max) / l2[0];
    // log log(2+t) and log(1+t) are nearly collinear on short windows, so
    // beta is also reported with alpha held at the predicted rate.
    let beta_at_target = fit_log_exponent(&l, window, 1.0 - 2.0 / p)?;
    let plain = fit_decay(&l, window, false)?;
    Ok(CriterionOutcome::new("7", "collapse onto the manifold")
        .measure("weighted_l2_exponent", fw.alpha, Check::AtLeast { bound: 0.55 })
        .measure("lp_log_beta", fl.beta, Check::InRange { lo: 0.0, hi: 2.0 })
        .measure("l2_growth", growth, Check::AtMost { bound: 1.05 })
        .note("lp_alpha", format!("{:.6}", fl.alpha))
        .note("lp_alpha_without_log", format!("{:.6}", plain.alpha))
        .note("lp_beta_at_target_alpha", format!("{beta_at_target:.6}"))
        .note("lp_design_condition", format!("{:.1}", fl.condition))
        .note("a_total_variation", format!("{:.6e}", traj.a_total_variation()))
        .note("window", format!("{window:?}")))
}

/// Duhamel residual of `W` at the default quadrature and its observed order.
pub fn duhamel_check(
    potential: &Potential,
    branch: &BranchTable,
    a_frozen: f64,
    v: &ComplexField,
    t: f64,
    scheme: &EvolutionScheme,
) -> Result<CriterionOutcome> {
    let start = Instant::now();
    let path = CoefficientPath::frozen(branch, Complex64::new(a_frozen, 0.0))?;
    let coarse = duhamel_residual_w(v, 0.0, t, &path, scheme, potential, 10)?;
    let fine = duhamel_residual_w(v, 0.0, t, &path, scheme, potential, 5)?;
    let order = (coarse.residual / fine.residual).log2();
    Ok(CriterionOutcome::new("8", "Duhamel residual")
        .measure(
            "residual_over_v",
            coarse.residual / coarse.v_norm,
            Check::AtMost { bound: 1e-4 },
        )
        .measure("observed_order", order, Check::Within { target: 2.0, tol: 0.3 })
        .note("residual_fine", format!("{:.6e}", fine.residual))
        .note("w_norm", format!("{:.6e}", coarse.w_norm))
        .with_runtime(elapsed(start)))
}

/// Log-log slope of `||T(t, 0) v||_2` against the branch amplitude.
pub fn t_scaling_check(
    potential: &Potential,
    branch: &BranchTable,
    amplitudes: &[f64],
    v: &ComplexField,
    t: f64,
    scheme: &EvolutionScheme,
) -> Result<CriterionOutcome> {
    let start = Instant::now();
    let mut pts = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        let path = CoefficientPath::frozen(branch, Complex64::new(a, 0.0))?;
        let w = compute_t(v, 0.0, t, &path, scheme, potential)?;
        pts.push((a.ln(), w.l2_norm().ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(CriterionOutcome::new("9", "T smallness")
        .measure("slope", sxy / sxx, Check::Within { target: 2.0, tol: 0.2 })
        .note("amplitudes", format!("{amplitudes:?}"))
        .with_runtime(elapsed(start)))
}

/// Recovery of synthetic `(alpha, beta)` by the fitter.
pub fn fitter_oracle() -> Result<CriterionOutcome> {
    let start = Instant::now();
    let times = time_grid(2.0, 100.0, 0.5);
    let mut worst = 0.0f64;
    for (alpha, beta) in [(0.75, 0.0), (2.0 / 3.0, 1.0), (1.0, 2.0)] {
        let s = DecaySeries::from_fn(times.clone(), "synthetic", |t| {
            (1.0 + t).powf(-alpha) * (2.0 + t).ln().powf(beta)
        })?;
        let f = fit_decay(&s, (2.0, 100.0), true)?;
        worst = worst.max((f.alpha - alpha).abs()).max((f.beta - beta).abs());
    }
    Ok(CriterionOutcome::new("10", "fitter oracle")
        .measure("max_abs_error", worst, Check::AtMost { bound: 1e-3 })
        .with_runtime(elapsed(start)))
}

/// Probe used for the dispersion criterion: a Gaussian of width 2 centered
/// at `(4, 0)`, off the well so that `P_c` barely changes it.
pub fn dispersion_probe(spec: &GridSpec) -> ComplexField {
    ComplexField::from_real_fn(*spec, |x, y| (-((x - 4.0).powi(2) + y * y) / 8.0).exp())
}

/// Probe for the tangency and Duhamel checks: a moving, off-center packet.
pub fn linear_probe(spec: &GridSpec) -> ComplexField {
    gaussian_packet(spec, (2.0, 1.0), 1.5, (0.5, 0.0), 1.0)
}

/// Scheme with the default sponge.
pub fn absorbing(dt: f64) -> EvolutionScheme {
    EvolutionScheme::new(dt).with_absorber(AbsorberConfig::default())
}
