//! Power-law fits with an optional log correction, the `Y` norm of a run,
//! and the pass/fail report.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::propagators::NormSpace;

pub const MIN_FIT_POINTS: usize = 8;
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub descriptor: String,
}

impl DecaySeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, descriptor: impl Into<String>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InsufficientData(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("series times must increase".into()));
        }
        Ok(DecaySeries {
            times,
            values,
            descriptor: descriptor.into(),
        })
    }

    /// Samples `f(t)` at the given times.
    pub fn from_fn(times: Vec<f64>, descriptor: &str, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = times.iter().map(|&t| f(t)).collect();
        DecaySeries::new(times, values, descriptor)
    }

    fn window_points(&self, window: (f64, f64)) -> Result<Vec<(f64, f64)>> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= window.0 && **t <= window.1)
            .map(|(t, v)| (*t, *v))
            .collect();
        if pts.len() < MIN_FIT_POINTS {
            return Err(Error::InsufficientData(format!(
                "{} points of {:?} in window [{}, {}], need {MIN_FIT_POINTS}",
                pts.len(),
                self.descriptor,
                window.0,
                window.1
            )));
        }
        if let Some((t, v)) = pts.iter().find(|(t, v)| !(*t > 0.0) || !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{:?}: need t > 0 and finite positive values in the window, got ({t}, {v})",
                self.descriptor
            )));
        }
        Ok(pts)
    }
}

/// `y ≈ C (1+t)^{-alpha} (log(2+t))^{beta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// Residual sum of squares in log coordinates.
    pub rss: f64,
    pub dof: usize,
    pub window: (f64, f64),
    pub n_points: usize,
    pub condition: f64,
    pub allow_log: bool,
}

impl FitResult {
    pub fn predict(&self, t: f64) -> f64 {
        self.c * (1.0 + t).powf(-self.alpha) * (2.0 + t).ln().powf(self.beta)
    }
}

/// Least squares of `log y` against `{1, log(1+t), log log(2+t)}`; the last
/// column only when `allow_log`.
pub fn fit_decay(series: &DecaySeries, window: (f64, f64), allow_log: bool) -> Result<FitResult> {
    let pts = series.window_points(window)?;
    let cols = if allow_log { 3 } else { 2 };
    let m = pts.len();
    let design = DMatrix::from_fn(m, cols, |i, j| {
        let t = pts[i].0;
        match j {
            0 => 1.0,
            1 => (1.0 + t).ln(),
            _ => (2.0 + t).ln().ln(),
        }
    });
    let rhs = DVector::from_iterator(m, pts.iter().map(|p| p.1.ln()));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateDesign(condition));
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::InvalidConfig(format!("least squares failed: {e}")))?;
    let resid = &design * &coef - &rhs;
    Ok(FitResult {
        alpha: -coef[1],
        beta: if allow_log { coef[2] } else { 0.0 },
        c: coef[0].exp(),
        rss: resid.norm_squared(),
        dof: m - cols,
        window,
        n_points: m,
        condition,
        allow_log,
    })
}

/// `beta` with `alpha` held at a prescribed value: least squares of
/// `log y + alpha log(1+t)` against `{1, log log(2+t)}`.
pub fn fit_log_exponent(series: &DecaySeries, window: (f64, f64), alpha: f64) -> Result<f64> {
    let pts = series.window_points(window)?;
    let m = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| (2.0 + p.0).ln().ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln() + alpha * (1.0 + p.0).ln()).collect();
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateDesign(f64::INFINITY));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    Ok(sxy / sxx)
}

/// Range of `alpha` over fits to random halves of the windowed points.
pub fn subsample_alpha_range(
    series: &DecaySeries,
    window: (f64, f64),
    allow_log: bool,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let pts = series.window_points(window)?;
    let half = pts.len() / 2;
    if half < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "half of {} points is below {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..n_draws {
        let mut idx = sample(&mut rng, pts.len(), half).into_vec();
        idx.sort_unstable();
        let sub = DecaySeries {
            times: idx.iter().map(|&i| pts[i].0).collect(),
            values: idx.iter().map(|&i| pts[i].1).collect(),
            descriptor: series.descriptor.clone(),
        };
        let a = fit_decay(&sub, window, allow_log)?.alpha;
        lo = lo.min(a);
        hi = hi.max(a);
    }
    Ok((lo, hi))
}

/// `sup_t max{ (1+t)^{1-2/p} ||r||_{L²_{-σ}}, (1+t)^{1-2/p} ||r||_p / log(2+t), ||r||_2 }`.
pub fn y_norm(traj: &Trajectory, p: f64, sigma: f64) -> Result<f64> {
    let weighted = traj.norm_series(&NormSpace::WeightedL2(-sigma))?;
    let lp = traj.norm_series(&NormSpace::Lp(p))?;
    let l2 = traj.norm_series(&NormSpace::Lp(2.0))?;
    let k = 1.0 - 2.0 / p;
    Ok(traj
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let w = (1.0 + t.abs()).powf(k);
            (w * weighted[i])
                .max(w * lp[i] / (2.0 + t.abs()).ln())
                .max(l2[i])
        })
        .fold(0.0, f64::max))
}

/// Comparison applied to one measured number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    AtLeast { bound: f64 },
    AtMost { bound: f64 },
    Within { target: f64, tol: f64 },
    InRange { lo: f64, hi: f64 },
}

impl Check {
    pub fn passes(&self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match *self {
            Check::AtLeast { bound } => x >= bound,
            Check::AtMost { bound } => x <= bound,
            Check::Within { target, tol } => (x - target).abs() <= tol,
            Check::InRange { lo, hi } => x >= lo && x <= hi,
        }
    }
}

/// Integers as such, everything else to four significant digits.
fn short(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e9 {
        format!("{x}")
    } else if (1e-3..1e4).contains(&x.abs()) {
        format!("{x:.4}")
    } else {
        format!("{x:.3e}")
    }
}

/// Shortest of plain and scientific notation.
fn num(x: f64) -> String {
    let plain = format!("{x}");
    let sci = format!("{x:e}");
    if sci.len() < plain.len() {
        sci
    } else {
        plain
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Check::AtLeast { bound } => write!(f, ">= {}", num(bound)),
            Check::AtMost { bound } => write!(f, "<= {}", num(bound)),
            Check::Within { target, tol } => write!(f, "{} ± {}", num(target), num(tol)),
            Check::InRange { lo, hi } => write!(f, "in [{}, {}]", num(lo), num(hi)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    pub check: Check,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: String,
    pub title: String,
    pub measurements: Vec<Measurement>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl CriterionOutcome {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        CriterionOutcome {
            id: id.into(),
            title: title.into(),
            measurements: Vec::new(),
            pass: true,
            runtime_s: None,
            notes: BTreeMap::new(),
        }
    }

    pub fn measure(mut self, name: impl Into<String>, value: f64, check: Check) -> Self {
        let pass = check.passes(value);
        self.pass &= pass;
        self.measurements.push(Measurement {
            name: name.into(),
            value,
            check,
            pass,
        });
        self
    }

    pub fn note(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.notes.insert(key.into(), value.into());
        self
    }

    pub fn with_runtime(mut self, seconds: f64) -> Self {
        self.runtime_s = Some(seconds);
        self
    }

    /// One line: `PASS  id  title  name=value (check) ...`.
    pub fn summary_line(&self) -> String {
        let parts: Vec<String> = self
            .measurements
            .iter()
            .map(|m| format!("{}={} ({}){}", m.name, short(m.value), m.check, if m.pass { "" } else { " !" }))
            .collect();
        format!(
            "{} [{}] {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            parts.join(", ")
        )
    }
}

/// Radiation decay in `L^p`: the fitted exponent must reach `0.825 (1 - 2/p)`
/// (0.55 at `p = 6`).
pub fn radiation_decay_criterion(fit: &FitResult, p: f64) -> CriterionOutcome {
    let target = 1.0 - 2.0 / p;
    CriterionOutcome::new(format!("radiation decay p={p}"), "fitted radiation decay exponent")
        .measure("alpha", fit.alpha, Check::AtLeast { bound: 0.825 * target })
        .note("target", format!("{target:.6}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Pass,
    Fail,
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub status: ReportStatus,
    pub criteria: Vec<CriterionOutcome>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn acceptance_report(
    criteria: Vec<CriterionOutcome>,
    metadata: BTreeMap<String, serde_json::Value>,
) -> AcceptanceReport {
    let status = if criteria.is_empty() {
        ReportStatus::NoData
    } else if criteria.iter().all(|c| c.pass) {
        ReportStatus::Pass
    } else {
        ReportStatus::Fail
    };
    AcceptanceReport {
        status,
        criteria,
        metadata,
    }
}

impl AcceptanceReport {
    /// Merges several reports, later criteria with the same id replacing earlier ones.
    pub fn merge(reports: Vec<AcceptanceReport>) -> AcceptanceReport {
        let mut criteria: Vec<CriterionOutcome> = Vec::new();
        let mut metadata = BTreeMap::new();
        for r in reports {
            for c in r.criteria {
                match criteria.iter_mut().find(|x| x.id == c.id) {
                    Some(slot) => *slot = c,
                    None => criteria.push(c),
                }
            }
            metadata.extend(r.metadata);
        }
        criteria.sort_by_key(|a| criterion_order(&a.id));
        acceptance_report(criteria, metadata)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Flat rows `criterion,measurement,value,check,pass`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["criterion", "measurement", "value", "check", "pass"])
            .map_err(csv_err)?;
        for c in &self.criteria {
            for m in &c.measurements {
                w.write_record([
                    c.id.as_str(),
                    m.name.as_str(),
                    &m.value.to_string(),
                    &m.check.to_string(),
                    if m.pass { "true" } else { "false" },
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Numeric prefix first, so that "10" sorts after "2 gamma=-1".
fn criterion_order(id: &str) -> (u64, String) {
    let digits: String = id.chars().take_while(|c| c.is_ascii_digit()).collect();
    (digits.parse().unwrap_or(u64::MAX), id.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
