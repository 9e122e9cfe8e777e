use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlslab::config::{ExperimentConfig, InitKind};
use nlslab::dynamics::{evolve_nls, gaussian_packet, NlsModel, RunConfig};
use nlslab::error::Error;
use nlslab::experiments;
use nlslab::fit::{acceptance_report, AcceptanceReport, CriterionOutcome, ReportStatus};
use nlslab::io;
use nlslab::manifold::{bound_state, BranchTable};
use nlslab::operator::{DiscreteSpectrum, Potential};
use nlslab::propagators::{omega_norm_sweeps, CoefficientPath, NormSpace};
use num_complex::Complex64;

#[derive(Parser)]
#[command(name = "nlslab", version, about = "Bound states and radiation of the 2D cubic NLS with potential")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; every key is optional.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set grid.n=128`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(short, long, default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state and hypothesis checks; writes `spectrum/`.
    Spectrum,
    /// Builds the bound-state branch; writes `branch/`.
    Manifold,
    /// Nonlinear run; writes `trajectory/`.
    Evolve {
        /// Initial state from a field file instead of the configured family.
        #[arg(long)]
        u0: Option<PathBuf>,
    },
    /// Operator-norm sweeps of the linearized propagator; writes `linprop/sweep.csv`.
    Linprop {
        /// Also run the dispersion, tangency, Duhamel and T-scaling checks.
        #[arg(long)]
        checks: bool,
    },
    /// Merges partial reports (files or directories) into one.
    Report { paths: Vec<PathBuf> },
    /// spectrum -> manifold -> evolve -> linprop -> report.
    RunAll,
    /// Prints the effective configuration.
    Config,
}

/// Process exit status by failure class.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NoBoundState { .. } | Error::EInSpectrum(_) | Error::OutOfRange { .. } | Error::PathRange(_) => 2,
        Error::Io(_)
        | Error::Parse(_)
        | Error::InvalidConfig(_)
        | Error::InvalidSpace(_)
        | Error::GridMismatch(_)
        | Error::InvalidGrid(_)
        | Error::InvalidExponent(_)
        | Error::NonFinite(_) => 3,
        Error::NonConvergence { .. } | Error::RootOutsideWindow { .. } | Error::BlowupDetected { .. } => 4,
        Error::InsufficientData(_) | Error::DegenerateDesign(_) | Error::MissingSeries(_) => 1,
    }
}

enum Failure {
    Error(Error),
    Hypothesis(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<Vec<CriterionOutcome>, Failure>;

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Ctx {
    fn potential(&self) -> nlslab::Result<Potential> {
        Potential::from_config(self.cfg.grid_spec()?, &self.cfg.potential)
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Identifies the inputs a cached directory was computed from.
    fn cache_key(&self, with_branch: bool) -> serde_json::Value {
        let c = &self.cfg;
        let mut key = serde_json::json!({ "grid": c.grid, "potential": c.potential });
        if with_branch {
            key["gamma"] = serde_json::json!(c.gamma);
            key["branch"] = serde_json::json!(c.branch);
        }
        key
    }

    fn cache_valid(&self, dir: &Path, with_branch: bool) -> bool {
        io::read_json::<serde_json::Value>(&dir.join("inputs.json")).is_ok_and(|k| k == self.cache_key(with_branch))
    }

    fn mark_cache(&self, dir: &Path, with_branch: bool) -> nlslab::Result<()> {
        io::write_json(&dir.join("inputs.json"), &self.cache_key(with_branch))
    }

    /// Spectrum from `spectrum/` when it was computed for the same inputs.
    fn spectrum(&self, potential: &Potential) -> nlslab::Result<DiscreteSpectrum> {
        let dir = self.dir("spectrum");
        if self.cache_valid(&dir, false) {
            return io::read_spectrum(&dir);
        }
        nlslab::operator::compute_ground_state(potential)
    }

    fn branch(&self, potential: &Potential, spectrum: &DiscreteSpectrum) -> nlslab::Result<BranchTable> {
        let dir = self.dir("branch");
        if self.cache_valid(&dir, true) {
            return io::read_branch(&dir, spectrum, potential);
        }
        nlslab::manifold::branch_build(self.cfg.gamma, spectrum, potential, &self.cfg.branch.options())
    }

    fn save_partial(&self, name: &str, criteria: &[CriterionOutcome]) -> nlslab::Result<()> {
        let dir = self.dir("reports");
        fs::create_dir_all(&dir)?;
        let mut meta = BTreeMap::new();
        meta.insert("command".to_string(), serde_json::Value::String(name.to_string()));
        let report = acceptance_report(criteria.to_vec(), meta);
        fs::write(dir.join(format!("{name}.json")), report.to_json()?)?;
        Ok(())
    }
}

fn cmd_spectrum(ctx: &Ctx) -> CmdResult {
    let potential = ctx.potential()?;
    let dir = ctx.dir("spectrum");
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let h1 = nlslab::operator::verify_h1(&potential)?;
    io::write_json(&dir.join("h1.json"), &h1)?;
    if !h1.pass {
        return Err(Failure::Hypothesis(format!(
            "hypothesis check failed: {} negative eigenvalue(s) (lowest {:.6e}), decay_ok = {}",
            h1.n_negative, h1.lowest_eigenvalue, h1.decay_ok
        )));
    }
    let (outcome, _, spectrum) = experiments::hypothesis_gate(&potential)?;
    io::write_spectrum(&dir, &spectrum)?;
    ctx.mark_cache(&dir, false)?;
    println!("E0 = {:.12e}, negative eigenvalues: {}", spectrum.e0, spectrum.n_negative);
    let out = vec![outcome];
    ctx.save_partial("spectrum", &out)?;
    Ok(out)
}

fn cmd_manifold(ctx: &Ctx) -> CmdResult {
    let potential = ctx.potential()?;
    let spectrum = ctx.spectrum(&potential)?;
    let (outcome, branch, residuals) =
        experiments::manifold_check(ctx.cfg.gamma, &spectrum, &potential, &ctx.cfg.branch.options())?;
    io::write_branch(&ctx.dir("branch"), &branch, &residuals)?;
    ctx.mark_cache(&ctx.dir("branch"), true)?;
    println!(
        "branch: {} samples up to |a| = {}, E range [{:.6e}, {:.6e}]",
        branch.samples().len(),
        branch.delta_scale(),
        branch.samples().first().map_or(f64::NAN, |s| s.energy),
        branch.samples().last().map_or(f64::NAN, |s| s.energy)
    );
    let out = vec![outcome];
    ctx.save_partial("manifold", &out)?;
    Ok(out)
}

fn cmd_evolve(ctx: &Ctx, u0_path: Option<&Path>) -> CmdResult {
    let cfg = &ctx.cfg;
    let potential = ctx.potential()?;
    let spectrum = ctx.spectrum(&potential)?;
    let branch = ctx.branch(&potential, &spectrum)?;
    let ev = &cfg.evolution;
    let center = (ev.radiation_center[0], ev.radiation_center[1]);
    let u0 = match u0_path {
        Some(p) => io::read_field(p)?,
        None => match ev.init {
            InitKind::OnBranch => bound_state(Complex64::new(ev.a0, 0.0), &branch)?.psi_e,
            InitKind::Perturbed => experiments::perturbed_state(&branch, ev.a0, ev.eps, center, ev.radiation_width)?,
            InitKind::Gaussian => gaussian_packet(branch.spec(), center, ev.radiation_width, (0.0, 0.0), ev.eps),
        },
    };
    let mut run = RunConfig::new(cfg.gamma, ev.t_end, ev.save_every, ev.scheme());
    run.sigma = cfg.sigma;
    run.p_list = cfg.norms.p_list.clone();
    run.keep_snapshots = ev.keep_snapshots;
    let traj = evolve_nls(&u0, NlsModel { potential: &potential, branch: Some(&branch) }, &run)?;
    io::write_trajectory(&ctx.dir("trajectory"), &traj)?;
    println!(
        "evolved to t = {} ({} saves); mass drift {:.3e}, energy drift {:.3e}",
        ev.t_end,
        traj.len(),
        traj.mass_drift(),
        traj.energy_drift()
    );
    let mut out = Vec::new();
    if ev.absorber {
        let p = cfg.norms.p_list.first().copied().unwrap_or(6.0);
        let window = (cfg.fit.window[0], cfg.fit.window[1].min(cfg.grid.half_width));
        out.push(experiments::collapse_outcome(&traj, window, p)?.note("window_cap", "t <= L"));
    } else {
        out.push(experiments::conservation_outcome(&traj));
    }
    ctx.save_partial("evolve", &out)?;
    Ok(out)
}

fn parse_pair(s: &str) -> nlslab::Result<(NormSpace, NormSpace)> {
    let (a, b) = s
        .split_once("->")
        .ok_or_else(|| Error::InvalidSpace(format!("pair {s:?} is not from->to")))?;
    Ok((a.parse()?, b.parse()?))
}

fn cmd_linprop(ctx: &Ctx, checks: bool) -> CmdResult {
    let cfg = &ctx.cfg;
    let lp = &cfg.linprop;
    let pairs = lp.pairs.iter().map(|s| parse_pair(s)).collect::<nlslab::Result<Vec<_>>>()?;
    let potential = ctx.potential()?;
    let spectrum = ctx.spectrum(&potential)?;
    let branch = ctx.branch(&potential, &spectrum)?;
    let scheme = if lp.absorber {
        experiments::absorbing(cfg.evolution.dt)
    } else {
        nlslab::stepper::EvolutionScheme::new(cfg.evolution.dt)
    };
    let a = lp.a_fraction * branch.delta_scale();
    let p = cfg.norms.p_list.first().copied().unwrap_or(4.0);
    let mut out = Vec::new();
    let dir = ctx.dir("linprop");
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let default_pairs = nlslab::config::LinpropConfig::default().pairs;
    if lp.pairs == default_pairs && lp.s == 0.0 {
        // The standard pair set doubles as the decay-shape criterion.
        let times: Vec<f64> = lp.times.clone();
        let (outcome, sweeps) = experiments::omega_shape_check(
            &potential,
            &branch,
            a,
            &times,
            cfg.sigma,
            4.0,
            cfg.probes.n_probes,
            cfg.probes.seed,
            &scheme,
        )?;
        let flat: Vec<_> = sweeps.into_iter().flatten().collect();
        io::write_norm_sweep(&dir.join("sweep.csv"), &flat, 4.0)?;
        out.push(outcome);
    } else {
        let path = CoefficientPath::frozen(&branch, Complex64::new(a, 0.0))?.with_coupling(lp.coupling);
        let times: Vec<f64> = lp.times.iter().map(|t| lp.s + t).collect();
        let sweeps = omega_norm_sweeps(
            lp.s,
            &times,
            &pairs,
            &path,
            &scheme,
            &potential,
            cfg.probes.n_probes,
            cfg.probes.seed,
            cfg.probes.refine_steps,
        )?;
        let flat: Vec<_> = sweeps.into_iter().flatten().collect();
        io::write_norm_sweep(&dir.join("sweep.csv"), &flat, p)?;
    }
    if checks {
        let spec = *potential.spec();
        out.push(experiments::dispersion_check(
            &potential,
            &spectrum,
            &experiments::dispersion_probe(&spec),
            (2.0, 25.0),
            cfg.sigma,
            &experiments::absorbing(0.01),
        )?);
        let probe = experiments::linear_probe(&spec);
        let (tangency, _) = experiments::tangency_check(
            &potential,
            &spectrum,
            &branch,
            0.3 * branch.delta_scale(),
            &probe,
            &[1e-3, 5e-4, 2.5e-4],
            10.0,
            0.005,
        )?;
        out.push(tangency);
        out.push(experiments::duhamel_check(&potential, &branch, a, &probe, 5.0, &scheme)?);
        out.push(experiments::t_scaling_check(
            &potential,
            &branch,
            &[0.01, 0.02, 0.04],
            &probe,
            5.0,
            &scheme,
        )?);
    }
    println!("sweep written to {}", dir.join("sweep.csv").display());
    ctx.save_partial("linprop", &out)?;
    Ok(out)
}

fn collect_reports(paths: &[PathBuf]) -> nlslab::Result<Vec<AcceptanceReport>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for f in files {
                out.push(AcceptanceReport::from_json(&fs::read_to_string(&f)?)?);
            }
        } else {
            out.push(AcceptanceReport::from_json(&fs::read_to_string(p)?)?);
        }
    }
    Ok(out)
}

fn write_final(ctx: &Ctx, report: &AcceptanceReport) -> nlslab::Result<()> {
    fs::create_dir_all(&ctx.out)?;
    fs::write(ctx.out.join("report.json"), report.to_json()?)?;
    fs::write(ctx.out.join("report.csv"), report.to_csv()?)?;
    for c in &report.criteria {
        println!("{}", c.summary_line());
    }
    let status = match report.status {
        ReportStatus::Pass => "pass",
        ReportStatus::Fail => "fail",
        ReportStatus::NoData => "no data",
    };
    println!("status: {status}");
    Ok(())
}

fn report_exit(report: &AcceptanceReport) -> u8 {
    match report.status {
        ReportStatus::Fail => 1,
        ReportStatus::Pass | ReportStatus::NoData => 0,
    }
}

fn run(cli: Cli) -> std::result::Result<u8, Failure> {
    let text = match &cli.common.config {
        Some(p) => fs::read_to_string(p).map_err(Error::from)?,
        None => String::new(),
    };
    let cfg = ExperimentConfig::with_overrides(&text, &cli.common.overrides)?;
    let ctx = Ctx {
        cfg,
        out: cli.common.out.clone(),
    };
    let criteria = match cli.command {
        Command::Config => {
            print!("{}", ctx.cfg.to_toml()?);
            return Ok(0);
        }
        Command::Spectrum => cmd_spectrum(&ctx)?,
        Command::Manifold => cmd_manifold(&ctx)?,
        Command::Evolve { u0 } => cmd_evolve(&ctx, u0.as_deref())?,
        Command::Linprop { checks } => cmd_linprop(&ctx, checks)?,
        Command::Report { paths } => {
            let report = AcceptanceReport::merge(collect_reports(&paths)?);
            write_final(&ctx, &report)?;
            return Ok(report_exit(&report));
        }
        Command::RunAll => {
            let mut all = cmd_spectrum(&ctx)?;
            all.extend(cmd_manifold(&ctx)?);
            all.extend(cmd_evolve(&ctx, None)?);
            all.extend(cmd_linprop(&ctx, true)?);
            let oracle = vec![experiments::fitter_oracle()?];
            ctx.save_partial("fit", &oracle)?;
            let report = AcceptanceReport::merge(collect_reports(&[ctx.dir("reports")])?);
            write_final(&ctx, &report)?;
            return Ok(report_exit(&report));
        }
    };
    for c in &criteria {
        println!("{}", c.summary_line());
    }
    Ok(if criteria.iter().all(|c| c.pass) { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Hypothesis(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
