//! On-disk formats: binary field files with a JSON sidecar, branch and
//! trajectory directories, and CSV series.
//!
//! A field file is a 16-byte header (magic `NLS2DFLD`, `u32` n, `u32`
//! reserved) followed by `n²` little-endian `f64` (re, im) pairs, row-major.
//! The box size lives in the `<file>.json` sidecar.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{RunConfig, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, FieldTag, GridSpec};
use crate::manifold::{BranchSample, BranchTable};
use crate::operator::{DiscreteSpectrum, Potential};
use crate::propagators::OperatorNormSample;

pub const FIELD_MAGIC: &[u8; 8] = b"NLS2DFLD";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagName {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    #[serde(rename = "L")]
    pub half_width: f64,
    pub dx: f64,
    pub tag: TagName,
    /// Simulation time of a snapshot, `null` for static fields.
    pub time: Option<f64>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {msg}", path.display()))
}

pub fn write_field(path: &Path, field: &ComplexField, time: Option<f64>) -> Result<()> {
    let spec = field.spec();
    let mut buf = Vec::with_capacity(HEADER_LEN + 16 * spec.len());
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&(spec.n() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in field.values() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    let meta = FieldMeta {
        half_width: spec.half_width(),
        dx: spec.dx(),
        tag: match field.tag() {
            FieldTag::Real => TagName::Real,
            FieldTag::Complex => TagName::Complex,
        },
        time,
    };
    write_json(&sidecar(path), &meta)
}

/// Reads a field file and its sidecar (both required).
pub fn read_field(path: &Path) -> Result<ComplexField> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != FIELD_MAGIC {
        return Err(parse_err(path, "not a field file (bad magic)"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let side = sidecar(path);
    if !side.exists() {
        return Err(parse_err(path, format!("missing sidecar {}", side.display())));
    }
    let meta: FieldMeta = read_json(&side)?;
    let spec = GridSpec::new(n, meta.half_width).map_err(|e| parse_err(&side, e))?;
    if (spec.dx() - meta.dx).abs() > 1e-12 * spec.dx() {
        return Err(parse_err(&side, format!("dx = {} disagrees with 2L/n = {}", meta.dx, spec.dx())));
    }
    let expected = HEADER_LEN + 16 * spec.len();
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            format!("expected {expected} bytes for a {n}x{n} grid, found {}", bytes.len()),
        ));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let values = (0..spec.len())
        .map(|j| {
            let o = HEADER_LEN + 16 * j;
            Complex64::new(f64_at(o), f64_at(o + 8))
        })
        .collect();
    let field = ComplexField::from_values(spec, values).map_err(|e| parse_err(path, e))?;
    match meta.tag {
        TagName::Real => field.into_real_tagged().map_err(|e| parse_err(path, e)),
        TagName::Complex => Ok(field),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    #[serde(rename = "E0")]
    pub e0: f64,
    pub n_negative: usize,
    pub residual: f64,
}

pub fn write_spectrum(dir: &Path, spectrum: &DiscreteSpectrum) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_field(&dir.join("psi0.fld"), &spectrum.psi0, None)?;
    write_json(
        &dir.join("spectrum.json"),
        &SpectrumRecord {
            e0: spectrum.e0,
            n_negative: spectrum.n_negative,
            residual: spectrum.residual,
        },
    )
}

pub fn read_spectrum(dir: &Path) -> Result<DiscreteSpectrum> {
    let rec: SpectrumRecord = read_json(&dir.join("spectrum.json"))?;
    let psi0 = read_field(&dir.join("psi0.fld"))?;
    Ok(DiscreteSpectrum {
        e0: rec.e0,
        psi0,
        n_negative: rec.n_negative,
        residual: rec.residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchManifest {
    pub gamma: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub delta_scale: f64,
    pub a_abs: Vec<f64>,
    pub energy: Vec<f64>,
    /// Residual of the stationary equation at each sample, if measured.
    #[serde(default)]
    pub residual: Vec<f64>,
}

/// Writes `manifest.json`, `branch.csv`, `psi0.fld` and one `h_XXXX.fld` per sample.
pub fn write_branch(dir: &Path, branch: &BranchTable, residuals: &[f64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_field(&dir.join("psi0.fld"), branch.psi0(), None)?;
    let samples = branch.samples();
    for (k, s) in samples.iter().enumerate() {
        write_field(&dir.join(format!("h_{k:04}.fld")), &s.h, None)?;
    }
    let manifest = BranchManifest {
        gamma: branch.gamma(),
        e0: branch.e0(),
        delta_scale: branch.delta_scale(),
        a_abs: samples.iter().map(|s| s.a_abs).collect(),
        energy: samples.iter().map(|s| s.energy).collect(),
        residual: residuals.to_vec(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let mut w = csv::Writer::from_path(dir.join("branch.csv")).map_err(csv_err)?;
    w.write_record(["a_abs", "energy", "residual"]).map_err(csv_err)?;
    for (k, s) in samples.iter().enumerate() {
        let res = residuals.get(k).map_or(String::new(), |r| format!("{r:e}"));
        w.write_record([format!("{:e}", s.a_abs), format!("{:e}", s.energy), res])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_branch(dir: &Path, spectrum: &DiscreteSpectrum, potential: &Potential) -> Result<BranchTable> {
    let m: BranchManifest = read_json(&dir.join("manifest.json"))?;
    if m.a_abs.len() != m.energy.len() {
        return Err(parse_err(dir, "manifest arrays differ in length"));
    }
    let samples = m
        .a_abs
        .iter()
        .zip(&m.energy)
        .enumerate()
        .map(|(k, (&a_abs, &energy))| {
            Ok(BranchSample {
                a_abs,
                energy,
                h: read_field(&dir.join(format!("h_{k:04}.fld")))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    BranchTable::from_samples(m.gamma, spectrum, potential, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub config: RunConfig,
    pub times: Vec<f64>,
    pub snapshots: Vec<String>,
    pub series: String,
}

/// Writes a trajectory directory: `manifest.json`, `series.csv` and the snapshots.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(traj.snapshots.len());
    for (k, u) in traj.snapshots.iter().enumerate() {
        let name = format!("u_{k:05}.fld");
        write_field(&dir.join(&name), u, Some(traj.times[k]))?;
        names.push(name);
    }
    write_series_csv(&dir.join("series.csv"), traj)?;
    write_json(
        &dir.join("manifest.json"),
        &TrajectoryManifest {
            config: traj.config.clone(),
            times: traj.times.clone(),
            snapshots: names,
            series: "series.csv".into(),
        },
    )
}

/// Columns `t, re_a, im_a, E, <r norms...>, mass, energy`; decomposition
/// columns are left empty for runs without a branch.
pub fn write_series_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let norm_keys: Vec<&String> = traj.r_norms.keys().collect();
    let mut header = vec!["t".to_string(), "re_a".into(), "im_a".into(), "E".into()];
    header.extend(norm_keys.iter().map(|k| format!("r_{k}")));
    header.extend(["mass".to_string(), "energy".into()]);
    w.write_record(&header).map_err(csv_err)?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for k in 0..traj.len() {
        let a = traj.a_series.get(k);
        let mut row = vec![
            format!("{:e}", traj.times[k]),
            cell(a.map(|a| a.re)),
            cell(a.map(|a| a.im)),
            cell(traj.branch_energy.get(k).copied()),
        ];
        row.extend(norm_keys.iter().map(|key| cell(traj.r_norms[*key].get(k).copied())));
        row.push(cell(traj.mass.get(k).copied()));
        row.push(cell(traj.energy.get(k).copied()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reloads a trajectory, snapshots included, from [`write_trajectory`] output.
pub fn read_trajectory(dir: &Path) -> Result<Trajectory> {
    let m: TrajectoryManifest = read_json(&dir.join("manifest.json"))?;
    let snapshots = m
        .snapshots
        .iter()
        .map(|name| read_field(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    let mut rdr = csv::Reader::from_path(dir.join(&m.series)).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        for (j, field) in rec.iter().enumerate() {
            let v = if field.is_empty() {
                None
            } else {
                Some(field.parse::<f64>().map_err(|e| parse_err(dir, format!("{field:?}: {e}")))?)
            };
            columns[j].push(v);
        }
    }
    let col = |name: &str| -> Vec<Option<f64>> {
        headers
            .iter()
            .position(|h| h == name)
            .map(|j| columns[j].clone())
            .unwrap_or_default()
    };
    let dense = |c: Vec<Option<f64>>| -> Vec<f64> { c.into_iter().flatten().collect() };
    let re = col("re_a");
    let im = col("im_a");
    let a_series = re
        .iter()
        .zip(&im)
        .filter_map(|(r, i)| Some(Complex64::new((*r)?, (*i)?)))
        .collect();
    let r_norms = headers
        .iter()
        .filter_map(|h| h.strip_prefix("r_"))
        .map(|k| (k.to_string(), dense(col(&format!("r_{k}")))))
        .collect();
    Ok(Trajectory {
        config: m.config,
        times: m.times,
        snapshots,
        a_series,
        branch_energy: dense(col("E")),
        r_norms,
        mass: dense(col("mass")),
        energy: dense(col("energy")),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSweepRow {
    pub s: f64,
    pub t: f64,
    pub from_space: String,
    pub to_space: String,
    pub estimate: f64,
    pub n_probes: usize,
    pub best_unrefined: f64,
    /// `estimate (1+τ) log²(2+τ)`, `τ = t - s`.
    pub murata_weighted: f64,
    /// `estimate τ^{1-2/p}` for the configured `p`.
    pub power_weighted: f64,
}

impl NormSweepRow {
    pub fn from_sample(x: &OperatorNormSample, p: f64) -> Self {
        let tau = (x.t - x.s).abs();
        NormSweepRow {
            s: x.s,
            t: x.t,
            from_space: x.from_space.clone(),
            to_space: x.to_space.clone(),
            estimate: x.estimate,
            n_probes: x.n_probes,
            best_unrefined: x.best_unrefined,
            murata_weighted: x.estimate * (1.0 + tau) * (2.0 + tau).ln().powi(2),
            power_weighted: x.estimate * tau.powf(1.0 - 2.0 / p),
        }
    }
}

pub fn write_norm_sweep(path: &Path, samples: &[OperatorNormSample], p: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for x in samples {
        w.serialize(NormSweepRow::from_sample(x, p)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_norm_sweep(path: &Path) -> Result<Vec<NormSweepRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}
