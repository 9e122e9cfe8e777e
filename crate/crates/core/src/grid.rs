//! Periodic square domain `[-L, L)^2`, complex fields sampled on it, and the
//! norms and inner products used throughout the crate.
//!
//! Quadrature is the rectangle rule with cell area `dx^2`. The sup norm is the
//! grid maximum.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Spectral;

pub const DEFAULT_POINTS: usize = 256;
pub const DEFAULT_HALF_WIDTH: f64 = 25.6;

/// Square periodic grid with `n` points per side on `[-L, L)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
    half_width: f64,
}

impl GridSpec {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 32 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n = {n} must be a power of two >= 32"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half width {half_width} must be positive"
            )));
        }
        Ok(GridSpec { n, half_width })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Area of one quadrature cell.
    pub fn cell_area(&self) -> f64 {
        let dx = self.dx();
        dx * dx
    }

    /// Total number of samples, `n^2`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate `x_j = -L + j dx`.
    pub fn coord(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    /// `(x, y)` of the flat row-major index `idx = iy * n + ix`.
    pub fn point(&self, idx: usize) -> (f64, f64) {
        (self.coord(idx % self.n), self.coord(idx / self.n))
    }

    /// Spacing of the reciprocal lattice, `pi / L`.
    pub fn dk(&self) -> f64 {
        PI / self.half_width
    }

    /// Wavenumber of FFT index `m` (negative frequencies for `m >= n/2`).
    pub fn wavenumber(&self, m: usize) -> f64 {
        let m = m as i64;
        let n = self.n as i64;
        let signed = if m < n / 2 { m } else { m - n };
        signed as f64 * self.dk()
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(n = {}, L = {}) vs (n = {}, L = {})",
                self.n, self.half_width, other.n, other.half_width
            )))
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n: DEFAULT_POINTS,
            half_width: DEFAULT_HALF_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldTag {
    Complex,
    Real,
}

/// Complex field sampled row-major on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    spec: GridSpec,
    values: Vec<Complex64>,
    tag: FieldTag,
}

/// Relative tolerance on `max |Im|` for a real-tagged field.
pub const REAL_TAG_TOL: f64 = 1e-12;

impl ComplexField {
    pub fn zeros(spec: GridSpec) -> Self {
        ComplexField {
            spec,
            values: vec![Complex64::new(0.0, 0.0); spec.len()],
            tag: FieldTag::Complex,
        }
    }

    /// Validated constructor for external data.
    pub fn from_values(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                spec.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(idx));
        }
        Ok(ComplexField {
            spec,
            values,
            tag: FieldTag::Complex,
        })
    }

    /// Internal constructor; the caller guarantees finiteness.
    pub(crate) fn from_raw(spec: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        ComplexField {
            spec,
            values,
            tag: FieldTag::Complex,
        }
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, f64) -> Complex64) -> Self {
        let values = (0..spec.len())
            .map(|idx| {
                let (x, y) = spec.point(idx);
                f(x, y)
            })
            .collect();
        ComplexField {
            spec,
            values,
            tag: FieldTag::Complex,
        }
    }

    pub fn from_real_fn(spec: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut field = Self::from_fn(spec, |x, y| Complex64::new(f(x, y), 0.0));
        field.tag = FieldTag::Real;
        field
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        self.tag = FieldTag::Complex;
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn tag(&self) -> FieldTag {
        self.tag
    }

    /// Tags the field as real after checking `max |Im| <= 1e-12 max |value|`.
    pub fn into_real_tagged(mut self) -> Result<Self> {
        let max_abs = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let max_im = self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        if max_im > REAL_TAG_TOL * max_abs {
            return Err(Error::Parse(format!(
                "field is not real: max |Im| = {max_im:.3e}, max |value| = {max_abs:.3e}"
            )));
        }
        for v in self.values.iter_mut() {
            v.im = 0.0;
        }
        self.tag = FieldTag::Real;
        Ok(self)
    }

    /// Drops imaginary parts and tags the field as real, without checking.
    pub(crate) fn force_real(mut self) -> Self {
        for v in self.values.iter_mut() {
            v.im = 0.0;
        }
        self.tag = FieldTag::Real;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let tag = if c.im == 0.0 { self.tag } else { FieldTag::Complex };
        ComplexField {
            spec: self.spec,
            values: self.values.iter().map(|v| v * c).collect(),
            tag,
        }
    }

    pub fn scale_in_place(&mut self, c: Complex64) {
        if c.im != 0.0 {
            self.tag = FieldTag::Complex;
        }
        for v in self.values.iter_mut() {
            *v *= c;
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: Complex64, other: &ComplexField) -> Result<()> {
        self.spec.check_same(&other.spec)?;
        if c.im != 0.0 || other.tag == FieldTag::Complex {
            self.tag = FieldTag::Complex;
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &ComplexField) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(Complex64::new(1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &ComplexField) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn conj(&self) -> Self {
        ComplexField {
            spec: self.spec,
            values: self.values.iter().map(|v| v.conj()).collect(),
            tag: self.tag,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Plain L2 norm, the common fast path.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.spec.cell_area()).sqrt()
    }
}

/// Weight exponent `sigma` of `L^2_sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightExponent(pub f64);

impl WeightExponent {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn negated(self) -> Self {
        WeightExponent(-self.0)
    }
}

/// `<x>^sigma = (1 + |x|^2)^(sigma/2)` at every grid point.
pub fn japanese_weight(spec: &GridSpec, sigma: f64) -> Vec<f64> {
    (0..spec.len())
        .map(|idx| {
            let (x, y) = spec.point(idx);
            (1.0 + x * x + y * y).powf(0.5 * sigma)
        })
        .collect()
}

/// `<f, g> = ∫ conj(f) g`, conjugate-linear in `f`.
pub fn inner_product(f: &ComplexField, g: &ComplexField) -> Result<Complex64> {
    f.spec.check_same(&g.spec)?;
    Ok(inner_unchecked(&f.values, &g.values) * f.spec.cell_area())
}

pub(crate) fn inner_unchecked(f: &[Complex64], g: &[Complex64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (a, b) in f.iter().zip(g) {
        re += a.re * b.re + a.im * b.im;
        im += a.re * b.im - a.im * b.re;
    }
    Complex64::new(re, im)
}

/// Real inner product on `C ≅ R^2`: `Re <f, g>`.
pub fn real_inner_product(f: &ComplexField, g: &ComplexField) -> Result<f64> {
    Ok(inner_product(f, g)?.re)
}

/// `(∫ |f|^p)^(1/p)`, or `max |f|` for `p = ∞`.
pub fn lp_norm(f: &ComplexField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }
    Ok(lp_norm_slice(&f.values, f.spec.cell_area(), p))
}

pub(crate) fn lp_norm_slice(values: &[Complex64], cell: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    }
    if p == 2.0 {
        return (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * cell).sqrt();
    }
    if p == 1.0 {
        return values.iter().map(|v| v.norm()).sum::<f64>() * cell;
    }
    let half_p = 0.5 * p;
    let sum: f64 = values
        .iter()
        .map(|v| {
            let s = v.norm_sqr();
            if s == 0.0 {
                0.0
            } else {
                s.powf(half_p)
            }
        })
        .sum();
    (sum * cell).powf(1.0 / p)
}

/// `|| <x>^sigma f ||_2`.
pub fn weighted_l2_norm(f: &ComplexField, sigma: WeightExponent) -> f64 {
    let spec = &f.spec;
    let cell = spec.cell_area();
    let s = sigma.0;
    let sum: f64 = f
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let (x, y) = spec.point(idx);
            (1.0 + x * x + y * y).powf(s) * v.norm_sqr()
        })
        .sum();
    (sum * cell).sqrt()
}

/// Weighted L2 norm with a precomputed squared weight `<x>^{2 sigma}`.
pub(crate) fn weighted_l2_with(values: &[Complex64], weight_sq: &[f64], cell: f64) -> f64 {
    let sum: f64 = values
        .iter()
        .zip(weight_sq)
        .map(|(v, w)| w * v.norm_sqr())
        .sum();
    (sum * cell).sqrt()
}

/// Spectral coefficients in natural `[ky][kx]` order under the continuous
/// Fourier convention `f̂(k) = (2π)^{-1} ∫ f(x) e^{-i k·x} dx`, sampled with
/// measure `dk^2`. With this normalization `||f̂||_2 = ||f||_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoefficients {
    spec: GridSpec,
    values: Vec<Complex64>,
}

impl SpectralCoefficients {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        let dk = self.spec.dk();
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dk * dk).sqrt()
    }

    /// Coefficient at wavenumber indices `(mx, my)` in FFT order.
    pub fn at(&self, mx: usize, my: usize) -> Complex64 {
        self.values[my * self.spec.n() + mx]
    }
}

pub fn forward_transform(f: &ComplexField) -> SpectralCoefficients {
    let mut sp = Spectral::new(f.spec);
    let mut values = f.values.clone();
    sp.forward_natural(&mut values);
    let scale = f.spec.cell_area() / (2.0 * PI);
    for v in values.iter_mut() {
        *v *= scale;
    }
    SpectralCoefficients {
        spec: f.spec,
        values,
    }
}

pub fn inverse_transform(c: &SpectralCoefficients) -> ComplexField {
    let mut sp = Spectral::new(c.spec);
    let mut values = c.values.clone();
    sp.inverse_natural(&mut values);
    let scale = 2.0 * PI / c.spec.cell_area();
    for v in values.iter_mut() {
        *v *= scale;
    }
    ComplexField::from_raw(c.spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: GridSpec, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexField::from_fn(spec, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn small() -> GridSpec {
        GridSpec::new(32, 4.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(16, 1.0).is_err());
        assert!(GridSpec::new(48, 1.0).is_err());
        assert!(GridSpec::new(64, -1.0).is_err());
        let g = GridSpec::new(64, 3.2).unwrap();
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert!((g.coord(0) + 3.2).abs() < 1e-15);
    }

    #[test]
    fn inner_product_of_field_with_itself_is_squared_norm() {
        let f = random_field(small(), 1);
        let ip = inner_product(&f, &f).unwrap();
        assert!(ip.re >= 0.0);
        assert!(ip.im.abs() < 1e-14 * ip.re);
        let n2 = lp_norm(&f, 2.0).unwrap();
        assert!((ip.re - n2 * n2).abs() < 1e-12 * ip.re);
    }

    #[test]
    fn fourier_modes_are_orthogonal() {
        let spec = small();
        let k = spec.dk();
        let e1 = ComplexField::from_fn(spec, |x, y| Complex64::from_polar(1.0, k * (2.0 * x + y)));
        let e2 = ComplexField::from_fn(spec, |x, y| Complex64::from_polar(1.0, k * (x - 3.0 * y)));
        let ip = inner_product(&e1, &e2).unwrap();
        assert!(ip.norm() < 1e-12);
    }

    #[test]
    fn inner_product_matches_brute_force_sum() {
        let spec = small();
        let f = random_field(spec, 2);
        let g = random_field(spec, 3);
        // Independent oracle: explicit conjugation with compensated summation,
        // in reversed order.
        let mut sum = Complex64::new(0.0, 0.0);
        let mut comp = Complex64::new(0.0, 0.0);
        for i in (0..spec.len()).rev() {
            let term = f.values()[i].conj() * g.values()[i] - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
        }
        let oracle = sum * spec.cell_area();
        let got = inner_product(&f, &g).unwrap();
        assert!((got - oracle).norm() <= 1e-12 * oracle.norm());
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let f = random_field(small(), 1);
        let g = random_field(GridSpec::new(32, 5.0).unwrap(), 1);
        assert!(matches!(inner_product(&f, &g), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn lp_norm_of_constant_field() {
        let spec = small();
        let c = 0.7;
        let f = ComplexField::from_fn(spec, |_, _| Complex64::new(0.0, c));
        for p in [1.0, 1.5, 2.0, 3.0, 6.0] {
            let expected = c * (2.0 * spec.half_width()).powf(2.0 / p);
            let got = lp_norm(&f, p).unwrap();
            assert!((got - expected).abs() < 1e-12 * expected, "p = {p}");
        }
        assert!((lp_norm(&f, f64::INFINITY).unwrap() - c).abs() < 1e-15);
    }

    #[test]
    fn lp_norm_rejects_small_exponent() {
        let f = random_field(small(), 4);
        assert!(matches!(lp_norm(&f, 0.5), Err(Error::InvalidExponent(_))));
    }

    #[test]
    fn lp_norm_matches_brute_force() {
        let spec = small();
        let f = random_field(spec, 5);
        for p in [1.0, 4.0 / 3.0, 2.5, 4.0, 6.0] {
            let mut sum = 0.0f64;
            for v in f.values() {
                sum += (v.re * v.re + v.im * v.im).sqrt().powf(p);
            }
            let oracle = (sum * spec.dx() * spec.dx()).powf(1.0 / p);
            let got = lp_norm(&f, p).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle, "p = {p}");
        }
    }

    #[test]
    fn weighted_norm_special_cases() {
        let spec = small();
        let f = random_field(spec, 6);
        let w0 = weighted_l2_norm(&f, WeightExponent(0.0));
        assert!((w0 - lp_norm(&f, 2.0).unwrap()).abs() < 1e-13 * w0);

        // Field supported only at the origin index (x = y = 0).
        let origin = spec.n() / 2 * spec.n() + spec.n() / 2;
        assert_eq!(spec.point(origin), (0.0, 0.0));
        let mut delta = ComplexField::zeros(spec);
        delta.values_mut()[origin] = Complex64::new(3.0, -1.0);
        for s in [-2.5, 1.0, 2.5] {
            let w = weighted_l2_norm(&delta, WeightExponent(s));
            assert!((w - delta.l2_norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn weighted_norm_of_gaussian_matches_oracle() {
        let spec = GridSpec::new(64, 8.0).unwrap();
        let f = ComplexField::from_real_fn(spec, |x, y| (-(x * x + y * y) / 2.0).exp());
        let sigma = 2.5;
        let dx = spec.dx();
        let mut sum = 0.0;
        for iy in 0..64 {
            for ix in 0..64 {
                let x = -8.0 + ix as f64 * dx;
                let y = -8.0 + iy as f64 * dx;
                let g = (-(x * x + y * y) / 2.0).exp();
                sum += (1.0 + x * x + y * y).powf(sigma) * g * g;
            }
        }
        let oracle = (sum * dx * dx).sqrt();
        let got = weighted_l2_norm(&f, WeightExponent(sigma));
        assert!((got - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn single_mode_has_single_coefficient() {
        let spec = small();
        let k = spec.dk();
        let f = ComplexField::from_fn(spec, |x, y| Complex64::from_polar(1.0, k * (3.0 * x - 2.0 * y)));
        let c = forward_transform(&f);
        let n = spec.n();
        let target = ((n - 2) * n) + 3;
        for (i, v) in c.values().iter().enumerate() {
            if i == target {
                assert!(v.norm() > 1.0);
            } else {
                assert!(v.norm() < 1e-10, "index {i}: {v}");
            }
        }
        assert!(c.at(3, n - 2).norm() > 1.0);
    }

    #[test]
    fn transform_roundtrip_and_parseval() {
        let f = random_field(small(), 7);
        let c = forward_transform(&f);
        let back = inverse_transform(&c);
        let err = back.sub(&f).unwrap().l2_norm();
        assert!(err < 1e-12 * f.l2_norm());
        assert!((c.l2_norm() - f.l2_norm()).abs() < 1e-12 * f.l2_norm());
    }

    #[test]
    fn real_tag_is_checked() {
        let spec = small();
        let f = ComplexField::from_fn(spec, |x, _| Complex64::new(x, 1e-6));
        assert!(f.clone().into_real_tagged().is_err());
        let g = ComplexField::from_fn(spec, |x, _| Complex64::new(x + 10.0, 1e-15));
        assert_eq!(g.into_real_tagged().unwrap().tag(), FieldTag::Real);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scale_free(a: f64, b: f64) -> f64 {
            (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn parseval(seed in any::<u64>(), amp in 1e-6f64..1e6) {
                let f = random_field(small(), seed).scaled(Complex64::new(amp, 0.0));
                let n = f.l2_norm();
                prop_assert!((n - forward_transform(&f).l2_norm()).abs() <= 1e-10 * n);
            }

            #[test]
            fn holder_l1_bound(s1 in any::<u64>(), s2 in any::<u64>()) {
                let f = random_field(small(), s1);
                let g = random_field(small(), s2);
                let prod = ComplexField::from_values(
                    small(),
                    f.values().iter().zip(g.values()).map(|(a, b)| a * b).collect(),
                ).unwrap();
                let l1 = lp_norm(&prod, 1.0).unwrap();
                prop_assert!(l1 <= f.l2_norm() * g.l2_norm());
            }

            #[test]
            fn weighted_norm_monotone_in_sigma(seed in any::<u64>(), s1 in -4.0f64..4.0, d in 0.0f64..4.0) {
                let f = random_field(small(), seed);
                let lo = weighted_l2_norm(&f, WeightExponent(s1));
                let hi = weighted_l2_norm(&f, WeightExponent(s1 + d));
                prop_assert!(lo <= hi * (1.0 + 1e-14));
            }

            #[test]
            fn inverse_undoes_forward(seed in any::<u64>()) {
                let f = random_field(small(), seed);
                let g = inverse_transform(&forward_transform(&f));
                let err = f.sub(&g).unwrap().l2_norm();
                prop_assert!(err <= 1e-12 * f.l2_norm());
            }

            #[test]
            fn lp_norm_is_homogeneous(seed in any::<u64>(), p in 1.0f64..12.0, c in 0.01f64..100.0) {
                let f = random_field(small(), seed);
                let a = lp_norm(&f.scaled(Complex64::new(0.0, c)), p).unwrap();
                let b = c * lp_norm(&f, p).unwrap();
                prop_assert!(scale_free(a, b) < 1e-12);
            }
        }
    }
}
