//! The Schrödinger operator `H = -Δ + V` on the periodic grid: its ground
//! state, the projection `P_c` onto the continuous spectrum, and the resolvent
//! restricted to `Range P_c`.

use std::cell::RefCell;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_product, inner_unchecked, ComplexField, GridSpec};
use crate::linalg::{self, pcg, PcgFailure};
use crate::spectral::Spectral;

/// Eigenvalues above this are not counted as negative.
pub const NEGATIVE_EIGENVALUE_THRESHOLD: f64 = -1e-6;
/// The restricted resolvent is only defined for `E` below this.
pub const RESOLVENT_ENERGY_LIMIT: f64 = -1e-3;
/// Target eigen-residual of the ground state.
pub const GROUND_STATE_TOL: f64 = 1e-10;
/// Target relative residual of the restricted resolvent.
pub const RESOLVENT_TOL: f64 = 1e-10;

const MAX_OUTER: usize = 200;
const MAX_PCG: usize = 3000;
const MAX_INNER_PCG: usize = 150;
const MAX_COUNTED: usize = 8;

/// Real potential together with constants of its decay bound
/// `|V(x)| <= C <x>^{-rho}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    spec: GridSpec,
    values: Vec<f64>,
    decay_c: f64,
    decay_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    #[serde(default = "default_shape")]
    pub shape: String,
    #[serde(rename = "V0", alias = "v0", default = "default_v0")]
    pub v0: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_shape() -> String {
    "gaussian".into()
}
fn default_v0() -> f64 {
    1.0
}
fn default_width() -> f64 {
    1.0
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            shape: default_shape(),
            v0: default_v0(),
            width: default_width(),
        }
    }
}

/// Decay exponent quoted for the Gaussian well.
const GAUSSIAN_RHO: f64 = 4.0;

impl Potential {
    /// `V(x) = -V0 exp(-|x|^2 / (2 w^2))`.
    pub fn gaussian(spec: GridSpec, v0: f64, width: f64) -> Self {
        let values = (0..spec.len())
            .map(|idx| {
                let (x, y) = spec.point(idx);
                -v0 * (-(x * x + y * y) / (2.0 * width * width)).exp()
            })
            .collect();
        // sup_s V0 exp(-s/(2w^2)) (1+s)^{rho/2} is attained at s = rho w^2 - 1.
        let s = (GAUSSIAN_RHO * width * width - 1.0).max(0.0);
        let decay_c =
            v0.abs() * (-s / (2.0 * width * width)).exp() * (1.0 + s).powf(0.5 * GAUSSIAN_RHO);
        Potential {
            spec,
            values,
            decay_c: decay_c.max(f64::MIN_POSITIVE),
            decay_rho: GAUSSIAN_RHO,
        }
    }

    pub fn zero(spec: GridSpec) -> Self {
        Potential {
            spec,
            values: vec![0.0; spec.len()],
            decay_c: 1.0,
            decay_rho: GAUSSIAN_RHO,
        }
    }

    pub fn from_config(spec: GridSpec, cfg: &PotentialConfig) -> Result<Self> {
        match cfg.shape.as_str() {
            "gaussian" => {
                if !(cfg.width > 0.0) || !cfg.v0.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "gaussian potential needs width > 0 and finite V0, got {cfg:?}"
                    )));
                }
                Ok(Self::gaussian(spec, cfg.v0, cfg.width))
            }
            other => Err(Error::InvalidConfig(format!("unknown potential shape {other:?}"))),
        }
    }

    /// Potential from a real-tagged field and its claimed decay constants.
    pub fn from_field(field: &ComplexField, decay_c: f64, decay_rho: f64) -> Result<Self> {
        if field.values().iter().any(|v| v.im != 0.0) {
            return Err(Error::Parse("potential field has a nonzero imaginary part".into()));
        }
        Ok(Potential {
            spec: *field.spec(),
            values: field.values().iter().map(|v| v.re).collect(),
            decay_c,
            decay_rho,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn decay_c(&self) -> f64 {
        self.decay_c
    }

    pub fn decay_rho(&self) -> f64 {
        self.decay_rho
    }

    pub fn as_field(&self) -> ComplexField {
        ComplexField::from_raw(
            self.spec,
            self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
        .force_real()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Largest `|V(x_j)| / (C <x_j>^{-rho})` over the grid; the decay bound
    /// holds iff this is at most one.
    pub fn decay_ratio(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let (x, y) = self.spec.point(idx);
                let bound = self.decay_c * (1.0 + x * x + y * y).powf(-0.5 * self.decay_rho);
                v.abs() / bound
            })
            .fold(0.0, f64::max)
    }
}

/// Ground state data `(E0, psi0)` and the number of negative eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpectrum {
    pub e0: f64,
    pub psi0: ComplexField,
    pub n_negative: usize,
    /// `||H psi0 - E0 psi0||_2` reached by the solver.
    pub residual: f64,
}

/// Reusable workspace applying `H` and Fourier preconditioners.
pub(crate) struct HamiltonianWork {
    spectral: Spectral,
    v: Vec<f64>,
    buf: Vec<Complex64>,
}

impl HamiltonianWork {
    pub(crate) fn new(potential: &Potential) -> Self {
        HamiltonianWork {
            spectral: Spectral::new(potential.spec),
            v: potential.values.clone(),
            buf: vec![Complex64::new(0.0, 0.0); potential.spec.len()],
        }
    }

    /// `dst = (H - shift) src`
    pub(crate) fn apply_shifted(&mut self, src: &[Complex64], dst: &mut [Complex64], shift: f64) {
        dst.copy_from_slice(src);
        self.spectral.neg_laplacian(dst);
        for ((d, s), v) in dst.iter_mut().zip(src).zip(&self.v) {
            *d += s * (v - shift);
        }
    }

    /// `dst = (-Δ + c)^{-1} src`
    pub(crate) fn precondition(&mut self, src: &[Complex64], dst: &mut [Complex64], c: f64) {
        self.buf.copy_from_slice(src);
        self.spectral.forward(&mut self.buf);
        for (b, k2) in self.buf.iter_mut().zip(self.spectral.k2()) {
            *b /= k2 + c;
        }
        self.spectral.inverse(&mut self.buf);
        dst.copy_from_slice(&self.buf);
    }

    /// `(-Δ + c)^{-2}` smoothing used to build generic seeds.
    fn smooth(&mut self, data: &mut [Complex64], c: f64) {
        self.spectral.forward(data);
        for (b, k2) in data.iter_mut().zip(self.spectral.k2()) {
            *b /= (k2 + c) * (k2 + c);
        }
        self.spectral.inverse(data);
    }
}

/// `-Δ f + V f`.
pub fn apply_h(f: &ComplexField, potential: &Potential) -> Result<ComplexField> {
    f.spec().check_same(&potential.spec)?;
    let mut work = HamiltonianWork::new(potential);
    let mut out = vec![Complex64::new(0.0, 0.0); f.spec().len()];
    work.apply_shifted(f.values(), &mut out, 0.0);
    Ok(ComplexField::from_raw(*f.spec(), out))
}

/// `f - <psi0, f> psi0`.
pub fn project_continuous(f: &ComplexField, spectrum: &DiscreteSpectrum) -> Result<ComplexField> {
    let c = inner_product(&spectrum.psi0, f)?;
    let mut out = f.clone();
    out.axpy(-c, &spectrum.psi0)?;
    Ok(out)
}

struct Eigenpair {
    value: f64,
    vector: Vec<Complex64>,
    residual: f64,
}

/// Lowest eigenpair of `H` on the orthogonal complement of `deflation`
/// (orthonormal in the unweighted slice inner product) by shifted inverse
/// iteration. The shift always stays below the targeted eigenvalue, so every
/// inner system is positive definite; it is tightened as the Rayleigh
/// quotient and its residual converge.
fn lowest_eigenpair(
    work: &mut HamiltonianWork,
    deflation: &[Vec<Complex64>],
    seed: Vec<Complex64>,
    tol: f64,
) -> Result<Eigenpair> {
    let n = seed.len();
    let v_min = work.v.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let mut x = seed;
    linalg::deflate(&mut x, deflation);
    normalize(&mut x);
    let mut shift = v_min - 0.5;
    let mut hx = vec![Complex64::new(0.0, 0.0); n];
    let mut rho = f64::NAN;
    let mut residual = f64::INFINITY;
    for outer in 0..MAX_OUTER {
        let c = (-shift).max(0.05);
        let mut y: Vec<Complex64> = if rho.is_finite() {
            x.iter().map(|v| v / (rho - shift).max(1e-300)).collect()
        } else {
            x.clone()
        };
        let cell = RefCell::new(&mut *work);
        let solved = pcg(
            |s, t| {
                cell.borrow_mut().apply_shifted(s, t, shift);
                linalg::deflate(t, deflation);
            },
            |s, t| {
                let mut tmp = s.to_vec();
                linalg::deflate(&mut tmp, deflation);
                cell.borrow_mut().precondition(&tmp, t, c);
                linalg::deflate(t, deflation);
            },
            &x,
            &mut y,
            1e-9,
            MAX_INNER_PCG,
        );
        match solved {
            Ok(_) | Err(PcgFailure::MaxIterations { .. }) => {}
            Err(PcgFailure::Indefinite) => {
                // The shift crossed the eigenvalue; back off and retry.
                let gap = if rho.is_finite() { (rho - shift).abs() } else { 0.5 };
                shift -= 2.0 * gap.max(1e-3);
                continue;
            }
        }
        linalg::deflate(&mut y, deflation);
        normalize(&mut y);
        x = y;
        work.apply_shifted(&x, &mut hx, 0.0);
        linalg::deflate(&mut hx, deflation);
        rho = inner_unchecked(&x, &hx).re;
        residual = x
            .iter()
            .zip(&hx)
            .map(|(xi, hi)| (hi - xi * rho).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual <= tol {
            return Ok(Eigenpair {
                value: rho,
                vector: x,
                residual,
            });
        }
        let candidate = rho - (4.0 * residual).max(1e-9);
        if outer > 0 && candidate > shift {
            shift = candidate;
        }
    }
    Err(Error::non_convergence("inverse iteration", MAX_OUTER, residual))
}

fn normalize(x: &mut [Complex64]) {
    let nrm = linalg::norm_sq(x).sqrt();
    for v in x.iter_mut() {
        *v /= nrm;
    }
}

fn gaussian_seed(spec: &GridSpec) -> Vec<Complex64> {
    (0..spec.len())
        .map(|idx| {
            let (x, y) = spec.point(idx);
            Complex64::new((-(x * x + y * y) / 8.0).exp(), 0.0)
        })
        .collect()
}

/// Smooth deterministic field with components in every symmetry sector.
fn generic_seed(work: &mut HamiltonianWork, spec: &GridSpec, salt: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + salt);
    let mut v: Vec<Complex64> = (0..spec.len())
        .map(|idx| {
            let (x, y) = spec.point(idx);
            let envelope = (-(x * x + y * y) / 32.0).exp();
            Complex64::new(envelope * rng.random_range(-1.0..1.0), 0.0)
        })
        .collect();
    work.smooth(&mut v, 1.0);
    v.iter_mut().for_each(|c| c.im = 0.0);
    v
}

fn to_physical(spec: &GridSpec, x: Vec<Complex64>) -> ComplexField {
    let scale = 1.0 / spec.cell_area().sqrt();
    ComplexField::from_raw(*spec, x.into_iter().map(|v| Complex64::new(v.re * scale, 0.0)).collect())
        .force_real()
}

/// Negative eigenvalues found by successive deflation, capped at
/// `MAX_COUNTED`; the first entry is the ground state energy.
struct NegativeSpectrum {
    values: Vec<f64>,
    ground: Option<Eigenpair>,
    saturated: bool,
    lowest: f64,
}

fn scan_negative(potential: &Potential, stop_after_ground: bool) -> Result<NegativeSpectrum> {
    let spec = potential.spec;
    let mut work = HamiltonianWork::new(potential);
    let ground = lowest_eigenpair(&mut work, &[], gaussian_seed(&spec), GROUND_STATE_TOL)?;
    let lowest = ground.value;
    if ground.value >= NEGATIVE_EIGENVALUE_THRESHOLD {
        return Ok(NegativeSpectrum {
            values: vec![],
            ground: None,
            saturated: false,
            lowest,
        });
    }
    let mut values = vec![ground.value];
    let mut basis = vec![ground.vector.clone()];
    let mut saturated = false;
    if !stop_after_ground {
        loop {
            if values.len() >= MAX_COUNTED {
                saturated = true;
                break;
            }
            let seed = generic_seed(&mut work, &spec, values.len() as u64);
            let next = lowest_eigenpair(&mut work, &basis, seed, 1e-8)?;
            if next.value >= NEGATIVE_EIGENVALUE_THRESHOLD {
                break;
            }
            values.push(next.value);
            basis.push(next.vector);
        }
    }
    Ok(NegativeSpectrum {
        values,
        ground: Some(ground),
        saturated,
        lowest,
    })
}

/// Ground state of `H` by shifted inverse iteration, plus the count of
/// eigenvalues below `-1e-6`.
pub fn compute_ground_state(potential: &Potential) -> Result<DiscreteSpectrum> {
    let scan = scan_negative(potential, false)?;
    let ground = scan.ground.ok_or(Error::NoBoundState { lowest: scan.lowest })?;
    let mut psi0 = to_physical(&potential.spec, ground.vector);
    // Fix the sign so that psi0 is positive.
    let total: f64 = psi0.values().iter().map(|v| v.re).sum();
    if total < 0.0 {
        psi0.scale_in_place(Complex64::new(-1.0, 0.0));
    }
    let nrm = psi0.l2_norm();
    psi0.scale_in_place(Complex64::new(1.0 / nrm, 0.0));
    Ok(DiscreteSpectrum {
        e0: ground.value,
        psi0: psi0.force_real(),
        n_negative: scan.values.len(),
        residual: ground.residual,
    })
}

/// Outcome of the hypothesis checks on a potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Report {
    /// Pointwise decay bound `|V| <= C <x>^{-rho}` holds on the grid.
    pub decay_ok: bool,
    pub decay_ratio: f64,
    pub decay_rho: f64,
    /// `rho > 3`.
    pub rho_ok: bool,
    pub n_negative: usize,
    /// True if the count hit the scan cap (there may be more).
    pub count_saturated: bool,
    pub negative_eigenvalues: Vec<f64>,
    /// Lowest eigenvalue found (also when it is not negative).
    pub lowest_eigenvalue: f64,
    pub single_negative_ok: bool,
    /// Regularity of the threshold is assumed, never checked.
    pub threshold_regularity: String,
    pub pass: bool,
}

pub fn verify_h1(potential: &Potential) -> Result<H1Report> {
    let decay_ratio = potential.decay_ratio();
    let decay_ok = decay_ratio <= 1.0 + 1e-12;
    let rho_ok = potential.decay_rho > 3.0;
    let scan = scan_negative(potential, false)?;
    let n_negative = scan.values.len();
    let single_negative_ok = n_negative == 1;
    Ok(H1Report {
        decay_ok,
        decay_ratio,
        decay_rho: potential.decay_rho,
        rho_ok,
        n_negative,
        count_saturated: scan.saturated,
        negative_eigenvalues: scan.values,
        lowest_eigenvalue: scan.lowest,
        single_negative_ok,
        threshold_regularity: "not checked".into(),
        pass: decay_ok && rho_ok && single_negative_ok,
    })
}

/// Solver for `(H - E) w = P f` with `w` in the range of `P`, where `P` is
/// either `P_c` or the identity. Keeps its previous solution as a warm start.
pub(crate) struct ResolventSolver {
    work: HamiltonianWork,
    psi0: Option<Vec<Complex64>>,
    last: Option<Vec<Complex64>>,
}

impl ResolventSolver {
    pub(crate) fn new(potential: &Potential, spectrum: Option<&DiscreteSpectrum>) -> Self {
        let cell = potential.spec.cell_area();
        let psi0 = spectrum.map(|s| {
            // Unit vector in the slice inner product.
            let scale = cell.sqrt();
            s.psi0.values().iter().map(|v| v * scale).collect()
        });
        ResolventSolver {
            work: HamiltonianWork::new(potential),
            psi0,
            last: None,
        }
    }

    fn project(&self, v: &mut [Complex64]) {
        if let Some(q) = &self.psi0 {
            let c = inner_unchecked(q, v);
            linalg::axpy(v, -c, q);
        }
    }

    /// Returns `w` and the achieved relative residual.
    pub(crate) fn solve(&mut self, f: &[Complex64], energy: f64) -> Result<(Vec<Complex64>, f64)> {
        if energy >= RESOLVENT_ENERGY_LIMIT {
            return Err(Error::EInSpectrum(energy));
        }
        let mut b = f.to_vec();
        self.project(&mut b);
        let f_norm = linalg::norm_sq(f).sqrt();
        // A right-hand side that P_c reduces to round-off has the zero solution.
        if f_norm == 0.0 || linalg::norm_sq(&b).sqrt() <= 1e-13 * f_norm {
            return Ok((vec![Complex64::new(0.0, 0.0); f.len()], 0.0));
        }
        let mut x = self.last.clone().unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); f.len()]);
        let c = (-energy).max(0.05);
        let psi0 = self.psi0.clone();
        let proj = |v: &mut [Complex64]| {
            if let Some(q) = &psi0 {
                let c = inner_unchecked(q, v);
                linalg::axpy(v, -c, q);
            }
        };
        proj(&mut x);
        let work = RefCell::new(&mut self.work);
        // Relative to ||f|| rather than ||P f||, as required of the result.
        let b_norm = linalg::norm_sq(&b).sqrt();
        let rtol = (0.5 * RESOLVENT_TOL * f_norm / b_norm).min(1e-11);
        let out = pcg(
            |s, t| {
                work.borrow_mut().apply_shifted(s, t, energy);
                proj(t);
            },
            |s, t| {
                let mut tmp = s.to_vec();
                proj(&mut tmp);
                work.borrow_mut().precondition(&tmp, t, c);
                proj(t);
            },
            &b,
            &mut x,
            rtol,
            MAX_PCG,
        );
        match out {
            Ok(o) => {
                self.last = Some(x.clone());
                Ok((x, o.rel_residual * b_norm / f_norm))
            }
            Err(PcgFailure::Indefinite) => Err(Error::non_convergence(
                "restricted resolvent (operator not positive on Range P_c)",
                0,
                f64::NAN,
            )),
            Err(PcgFailure::MaxIterations { rel_residual }) => Err(Error::non_convergence(
                "restricted resolvent",
                MAX_PCG,
                rel_residual,
            )),
        }
    }
}

/// `w = (H - E)^{-1} P_c f` with `w ⟂ psi0`.
pub fn resolvent_continuous(
    f: &ComplexField,
    energy: f64,
    spectrum: &DiscreteSpectrum,
    potential: &Potential,
) -> Result<ComplexField> {
    f.spec().check_same(&potential.spec)?;
    f.spec().check_same(spectrum.psi0.spec())?;
    let mut solver = ResolventSolver::new(potential, Some(spectrum));
    let (w, _) = solver.solve(f.values(), energy)?;
    Ok(ComplexField::from_raw(*f.spec(), w))
}

/// `(H - E)^{-1} f` on the whole space (no projection).
pub fn resolvent_full(f: &ComplexField, energy: f64, potential: &Potential) -> Result<ComplexField> {
    f.spec().check_same(&potential.spec)?;
    let mut solver = ResolventSolver::new(potential, None);
    let (w, _) = solver.solve(f.values(), energy)?;
    Ok(ComplexField::from_raw(*f.spec(), w))
}
