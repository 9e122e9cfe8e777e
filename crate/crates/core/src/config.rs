//! Experiment configuration: one TOML file with flat dotted keys, every key
//! optional, and `key=value` overrides from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, DEFAULT_HALF_WIDTH, DEFAULT_POINTS};
use crate::manifold::{BranchOptions, ManifoldOptions};
use crate::operator::PotentialConfig;
use crate::propagators::DhCoupling;
use crate::stepper::{AbsorberConfig, EvolutionScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(rename = "L", alias = "half_width")]
    pub half_width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: DEFAULT_POINTS,
            half_width: DEFAULT_HALF_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchConfig {
    pub a_max: f64,
    pub n_samples: usize,
    pub damping: f64,
    pub max_iter: usize,
    pub h_tol: f64,
    pub e_tol: f64,
}

impl Default for BranchConfig {
    fn default() -> Self {
        let b = BranchOptions::default();
        BranchConfig {
            a_max: b.a_max,
            n_samples: b.n_samples,
            damping: b.solver.damping,
            max_iter: b.solver.max_iter,
            h_tol: b.solver.h_tol,
            e_tol: b.solver.e_tol,
        }
    }
}

impl BranchConfig {
    pub fn options(&self) -> BranchOptions {
        BranchOptions {
            a_max: self.a_max,
            n_samples: self.n_samples,
            solver: ManifoldOptions {
                damping: self.damping,
                max_iter: self.max_iter,
                h_tol: self.h_tol,
                e_tol: self.e_tol,
                energy_window: None,
            },
        }
    }
}

/// Initial data families for `evolve`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// `ψ_E(a0)` exactly.
    OnBranch,
    /// `ψ_E(a0) + eps g` with a unit-`L²` Gaussian `g`.
    Perturbed,
    /// `eps g` alone.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    pub save_every: f64,
    pub absorber: bool,
    pub absorber_eta: f64,
    pub sponge_width: f64,
    pub init: InitKind,
    pub a0: f64,
    pub eps: f64,
    pub radiation_width: f64,
    pub radiation_center: [f64; 2],
    /// Keep snapshots in memory and write them with the trajectory.
    pub keep_snapshots: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            dt: 0.01,
            t_end: 25.0,
            save_every: 0.25,
            absorber: true,
            absorber_eta: 1.0,
            sponge_width: 0.2,
            init: InitKind::Perturbed,
            a0: 0.2,
            eps: 1e-2,
            radiation_width: 1.5,
            radiation_center: [3.0, 0.0],
            keep_snapshots: false,
        }
    }
}

impl EvolutionConfig {
    pub fn scheme(&self) -> EvolutionScheme {
        let s = EvolutionScheme::new(self.dt);
        if self.absorber {
            s.with_absorber(AbsorberConfig {
                eta: self.absorber_eta,
                sponge_width: self.sponge_width,
            })
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub n_probes: usize,
    pub seed: u64,
    pub refine_steps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_probes: 16,
            seed: 7,
            refine_steps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormsConfig {
    pub p_list: Vec<f64>,
    pub q0_prime: f64,
    pub p0: f64,
}

impl Default for NormsConfig {
    fn default() -> Self {
        NormsConfig {
            p_list: vec![6.0],
            q0_prime: 1.3,
            p0: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinpropConfig {
    pub s: f64,
    /// Elapsed times `t - s` of the sweep.
    pub times: Vec<f64>,
    /// Frozen amplitude as a fraction of the branch range.
    pub a_fraction: f64,
    /// Space pairs as `from->to`, e.g. `l2w(2.5)->l2w(-2.5)`.
    pub pairs: Vec<String>,
    pub coupling: DhCoupling,
    pub absorber: bool,
}

impl Default for LinpropConfig {
    fn default() -> Self {
        LinpropConfig {
            s: 0.0,
            times: vec![2.0, 2.87, 4.12, 5.9, 8.47, 12.15, 17.43, 25.0],
            a_fraction: 0.1,
            pairs: vec!["l2w(2.5)->l2w(-2.5)".into(), "lp(1.3333333333333333)->l2w(-2.5)".into()],
            coupling: DhCoupling::Tangent,
            absorber: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub window: [f64; 2],
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { window: [5.0, 25.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub potential: PotentialConfig,
    pub gamma: f64,
    pub sigma: f64,
    pub branch: BranchConfig,
    pub evolution: EvolutionConfig,
    pub probes: ProbeConfig,
    pub norms: NormsConfig,
    pub linprop: LinpropConfig,
    pub fit: FitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: GridConfig::default(),
            potential: PotentialConfig::default(),
            gamma: -1.0,
            sigma: 2.5,
            branch: BranchConfig::default(),
            evolution: EvolutionConfig::default(),
            probes: ProbeConfig::default(),
            norms: NormsConfig::default(),
            linprop: LinpropConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::with_overrides(&std::fs::read_to_string(path)?, &[])
    }

    /// Parses `text` and then applies `key.path=value` overrides, where the
    /// value is read as a TOML literal (bare words are taken as strings).
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("override {ov:?} is not key=value")))?;
            let value = parse_literal(raw.trim());
            set_path(&mut root, key.trim(), value)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.n, self.grid.half_width)
    }

    /// Checks ranges that individual modules would otherwise reject mid-run.
    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !self.gamma.is_finite() {
            return bad(format!("gamma must be finite, got {}", self.gamma));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.branch.n_samples == 0 || !(self.branch.a_max >= 0.0) {
            return bad("branch needs n_samples >= 1 and a_max >= 0".into());
        }
        self.evolution.scheme().validate()?;
        let ev = &self.evolution;
        if !(ev.t_end >= 0.0) || !(ev.save_every > 0.0) || !(ev.eps >= 0.0) || !(ev.radiation_width > 0.0) {
            return bad(format!("invalid evolution settings {ev:?}"));
        }
        if ev.a0.abs() > self.branch.a_max {
            return bad(format!("a0 = {} exceeds branch a_max = {}", ev.a0, self.branch.a_max));
        }
        if self.probes.n_probes == 0 {
            return bad("probes.n_probes must be positive".into());
        }
        if self.norms.p_list.iter().any(|&p| !(p >= 2.0)) {
            return bad(format!("norms.p_list entries must be >= 2, got {:?}", self.norms.p_list));
        }
        if !(self.norms.q0_prime > 1.0 && self.norms.q0_prime < 4.0 / 3.0) {
            return bad(format!("norms.q0_prime must lie in (1, 4/3), got {}", self.norms.q0_prime));
        }
        if !(self.norms.p0 > 2.0) {
            return bad(format!("norms.p0 must exceed 2, got {}", self.norms.p0));
        }
        let lp = &self.linprop;
        if lp.times.iter().any(|&t| !(t > 0.0)) || lp.times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("linprop.times must be positive and increasing".into());
        }
        if !(lp.a_fraction >= 0.0 && lp.a_fraction <= 1.0) {
            return bad(format!("linprop.a_fraction must lie in [0, 1], got {}", lp.a_fraction));
        }
        if !(self.fit.window[1] > self.fit.window[0]) {
            return bad(format!("fit.window must be increasing, got {:?}", self.fit.window));
        }
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Parse(format!("bad key {key:?}")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("{key:?}: {part:?} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
