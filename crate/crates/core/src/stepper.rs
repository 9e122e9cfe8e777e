//! Strang split-step driver shared by the linear and nonlinear flows.
//!
//! Every step is `K½ · S_k · K½` with `K½` the exact half kinetic step and
//! `S_k` a caller-supplied pointwise substep. Adjacent half steps are fused
//! into one full kinetic step except where the state has to be observed.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::spectral::Spectral;

/// Sponge damping `exp(-eta s(x) dt)` near the box boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorberConfig {
    pub eta: f64,
    /// Width of the damping band as a fraction of the half width `L`.
    pub sponge_width: f64,
}

impl Default for AbsorberConfig {
    fn default() -> Self {
        AbsorberConfig {
            eta: 1.0,
            sponge_width: 0.2,
        }
    }
}

impl AbsorberConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.sponge_width > 0.0 && self.sponge_width < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "absorber needs eta >= 0 and sponge_width in (0, 1), got {self:?}"
            )));
        }
        Ok(())
    }

    /// Ramp `s(x) = max_i ((|x_i| - (1 - w) L) / (w L))_+^4` in `[0, 1]`.
    pub fn profile(&self, spec: &GridSpec) -> Vec<f64> {
        let l = spec.half_width();
        let inner = (1.0 - self.sponge_width) * l;
        let band = self.sponge_width * l;
        let ramp = |c: f64| {
            let d = ((c.abs() - inner) / band).clamp(0.0, 1.0);
            d.powi(4)
        };
        (0..spec.len())
            .map(|idx| {
                let (x, y) = spec.point(idx);
                ramp(x).max(ramp(y))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionScheme {
    pub dt: f64,
    /// Splitting order; only Strang (2) is implemented.
    pub order: u32,
    pub absorber: Option<AbsorberConfig>,
}

impl Default for EvolutionScheme {
    fn default() -> Self {
        EvolutionScheme {
            dt: 0.01,
            order: 2,
            absorber: None,
        }
    }
}

impl EvolutionScheme {
    pub fn new(dt: f64) -> Self {
        EvolutionScheme {
            dt,
            ..Default::default()
        }
    }

    pub fn with_absorber(mut self, absorber: AbsorberConfig) -> Self {
        self.absorber = Some(absorber);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.order != 2 {
            return Err(Error::InvalidConfig(format!(
                "only second-order splitting is available, got order {}",
                self.order
            )));
        }
        if let Some(a) = &self.absorber {
            a.validate()?;
        }
        Ok(())
    }

    /// Number of steps and the exact step covering `[s, t]`.
    pub(crate) fn steps(&self, s: f64, t: f64) -> (usize, f64) {
        let span = t - s;
        if span == 0.0 {
            return (0, 0.0);
        }
        let n = ((span.abs() / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (n, span / n as f64)
    }

    /// Pointwise damping factor over a time `tau`, or `None` without absorber.
    pub(crate) fn damping(&self, spec: &GridSpec, tau: f64) -> Option<Vec<f64>> {
        self.absorber.map(|a| {
            a.profile(spec)
                .into_iter()
                .map(|s| (-a.eta * s * tau.abs()).exp())
                .collect()
        })
    }
}

pub(crate) struct SplitStepper {
    spectral: Spectral,
    half: Vec<Complex64>,
    full: Vec<Complex64>,
}

impl SplitStepper {
    /// Kinetic factors `exp(-i |k|^2 dt/2)`; `adjoint` conjugates them.
    pub(crate) fn new(spec: GridSpec, dt: f64, adjoint: bool) -> Self {
        let spectral = Spectral::new(spec);
        let sign = if adjoint { -1.0 } else { 1.0 };
        let half = spectral.kinetic_phase(sign * 0.5 * dt);
        let full = spectral.kinetic_phase(sign * dt);
        SplitStepper {
            spectral,
            half,
            full,
        }
    }

    fn kinetic(&mut self, z: &mut [Complex64], full: bool) {
        let mult = if full { &self.full } else { &self.half };
        self.spectral.forward(z);
        for (v, m) in z.iter_mut().zip(mult) {
            *v *= m;
        }
        self.spectral.inverse(z);
    }

    /// Runs `n_steps` steps. `substep(k, z)` applies the pointwise part of
    /// step `k`; `observe(m, z)` is called with the exact state after `m`
    /// steps for every `m` in the sorted list `checkpoints`.
    pub(crate) fn run(
        &mut self,
        z: &mut [Complex64],
        n_steps: usize,
        checkpoints: &[usize],
        mut substep: impl FnMut(usize, &mut [Complex64]),
        mut observe: impl FnMut(usize, &[Complex64]) -> Result<()>,
    ) -> Result<()> {
        let mut cp = checkpoints.iter().copied().peekable();
        while cp.peek() == Some(&0) {
            observe(0, z)?;
            cp.next();
        }
        if n_steps == 0 {
            return Ok(());
        }
        self.kinetic(z, false);
        for k in 0..n_steps {
            substep(k, z);
            let done = k + 1;
            if done == n_steps || cp.peek() == Some(&done) {
                self.kinetic(z, false);
                while cp.peek() == Some(&done) {
                    observe(done, z)?;
                    cp.next();
                }
                if done < n_steps {
                    self.kinetic(z, false);
                }
            } else {
                self.kinetic(z, true);
            }
        }
        Ok(())
    }
}
