//! Acceptance run on the default 256² grid. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! Set `NLSLAB_ACCEPTANCE=skip` to skip the run (it takes about 15 minutes
//! on one core), or `NLSLAB_ACCEPTANCE=strict` to also fail on the known
//! failures listed in `KNOWN_FAILURES`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use nlslab::dynamics::RunConfig;
use nlslab::experiments::{self, absorbing};
use nlslab::fit::{Check, CriterionOutcome};
use nlslab::manifold::{BranchOptions, BranchTable};
use nlslab::operator::{DiscreteSpectrum, Potential};
use nlslab::{GridSpec, Result};

const GAMMA: f64 = -1.0;
const OMEGA_TIMES: [f64; 8] = [2.0, 2.87, 4.12, 5.9, 8.47, 12.15, 17.43, 25.0];

/// (criterion, measurement) pairs that fail on the default setup for a
/// documented reason. Only these exact measurements are tolerated; any other
/// failing measurement of the same criterion still fails the run.
///
/// The free log exponent of the `L^6` radiation fit is not identifiable on
/// t in [5, 25]: log(1+t) and log log(2+t) are nearly collinear there.
const KNOWN_FAILURES: &[(&str, &str)] = &[("7", "lp_log_beta")];

fn known_failure(o: &CriterionOutcome) -> bool {
    !o.pass
        && o.measurements
            .iter()
            .filter(|m| !m.pass)
            .all(|m| KNOWN_FAILURES.contains(&(o.id.as_str(), m.name.as_str())))
}

fn budget(outcome: CriterionOutcome, seconds: f64) -> CriterionOutcome {
    let t = outcome.runtime_s.unwrap_or(f64::NAN);
    outcome.measure("runtime_s", t, Check::AtMost { bound: seconds })
}

fn report(outcome: &CriterionOutcome) {
    println!("{}", outcome.summary_line());
    for (k, v) in &outcome.notes {
        println!("      {k} = {v}");
    }
}

fn hypothesis(potential: &Potential) -> Result<(CriterionOutcome, DiscreteSpectrum)> {
    let (outcome, _, spectrum) = experiments::hypothesis_gate(potential)?;
    let spec = potential.spec();
    let dense = common::dense_gaussian_spectrum(64, spec.half_width(), 1.0, 1.0);
    let oracle = dense[0];
    let rel = ((spectrum.e0 - oracle) / oracle).abs();
    let outcome = outcome
        .measure("e0_vs_dense64_rel", rel, Check::AtMost { bound: 1e-4 })
        .note("E0_dense64", format!("{oracle:.12e}"))
        .note("dense64_negative", dense.iter().filter(|&&e| e < -1e-6).count().to_string());
    Ok((budget(outcome, 30.0), spectrum))
}

fn manifold(gamma: f64, spectrum: &DiscreteSpectrum, potential: &Potential) -> Result<(CriterionOutcome, BranchTable)> {
    let (outcome, branch, _) = experiments::manifold_check(gamma, spectrum, potential, &BranchOptions::default())?;
    Ok((budget(outcome, 300.0), branch))
}

fn run(spec: GridSpec) -> Result<Vec<CriterionOutcome>> {
    let potential = Potential::gaussian(spec, 1.0, 1.0);
    let mut out = Vec::new();
    let mut push = |o: CriterionOutcome| {
        report(&o);
        out.push(o);
    };

    let (c1, spectrum) = hypothesis(&potential)?;
    push(c1);

    let (c2_focusing, branch) = manifold(GAMMA, &spectrum, &potential)?;
    push(c2_focusing);
    let (c2_defocusing, _) = manifold(-GAMMA, &spectrum, &potential)?;
    push(c2_defocusing);

    let u0 = experiments::perturbed_state(&branch, 0.2, 1e-2, (3.0, 0.0), 1.5)?;
    let c3 = experiments::conservation_check(&u0, &potential, GAMMA, 50.0, 1e-3)?;
    push(budget(c3, 300.0));

    let probe = experiments::linear_probe(&spec);
    let (c4, _) = experiments::tangency_check(
        &potential,
        &spectrum,
        &branch,
        0.3 * branch.delta_scale(),
        &probe,
        &[1e-3, 5e-4, 2.5e-4],
        10.0,
        0.005,
    )?;
    push(budget(c4, 300.0));

    let c5 = experiments::dispersion_check(
        &potential,
        &spectrum,
        &experiments::dispersion_probe(&spec),
        (2.0, 25.0),
        2.5,
        &absorbing(0.01),
    )?;
    push(budget(c5, 120.0));

    let a_frozen = 0.1 * branch.delta_scale();
    let (c6, _) = experiments::omega_shape_check(
        &potential,
        &branch,
        a_frozen,
        &OMEGA_TIMES,
        2.5,
        4.0,
        16,
        7,
        &absorbing(0.01),
    )?;
    push(budget(c6, 900.0));

    let mut cfg = RunConfig::new(GAMMA, 25.0, 0.25, absorbing(0.01));
    cfg.p_list = vec![6.0];
    let c7 = experiments::collapse_check(&u0, &potential, &branch, &cfg, (5.0, 25.0), 6.0)?;
    push(budget(c7, 600.0));

    let c8 = experiments::duhamel_check(&potential, &branch, a_frozen, &probe, 5.0, &absorbing(0.01))?;
    push(budget(c8, 300.0));

    let c9 = experiments::t_scaling_check(&potential, &branch, &[0.01, 0.02, 0.04], &probe, 5.0, &absorbing(0.01))?;
    push(budget(c9, 600.0));

    let c10 = experiments::fitter_oracle()?;
    push(budget(c10, 1.0));

    Ok(out)
}

fn main() -> ExitCode {
    if std::env::var("NLSLAB_ACCEPTANCE").is_ok_and(|v| v == "skip") {
        println!("acceptance: skipped");
        return ExitCode::SUCCESS;
    }
    let strict = std::env::var("NLSLAB_ACCEPTANCE").is_ok_and(|v| v == "strict");
    let start = Instant::now();
    let spec = GridSpec::default();
    match run(spec) {
        Ok(outcomes) => {
            let failed = outcomes.iter().filter(|o| !o.pass).count();
            let known: Vec<&str> = outcomes.iter().filter(|o| known_failure(o)).map(|o| o.id.as_str()).collect();
            println!(
                "acceptance: {} of {} criteria passed in {:.0} s",
                outcomes.len() - failed,
                outcomes.len(),
                start.elapsed().as_secs_f64()
            );
            for id in &known {
                println!("acceptance: criterion {id} is a known failure (see README)");
            }
            for (id, name) in KNOWN_FAILURES {
                let now_passes = outcomes
                    .iter()
                    .filter(|o| o.id == *id)
                    .flat_map(|o| &o.measurements)
                    .any(|m| m.name == *name && m.pass);
                if now_passes {
                    println!("acceptance: known failure {id}/{name} now passes");
                }
            }
            let unexpected = if strict { failed } else { failed - known.len() };
            if unexpected == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            println!("acceptance: aborted: {e}");
            ExitCode::FAILURE
        }
    }
}
