//! Continuous plants made of first-order lags in cascade plus dead time, and
//! their exact zero-order-hold discretization.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// One first-order lag `gain / (tau s + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub gain: f64,
    pub tau: f64,
}

/// Continuous-time plant `prod_i k_i / (tau_i s + 1) * exp(-dead_time s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub sections: Vec<Section>,
    pub dead_time: f64,
    pub output_noise_std: f64,
}

impl PlantModel {
    pub fn new(sections: Vec<Section>, dead_time: f64) -> Result<Self> {
        let model = Self {
            sections,
            dead_time,
            output_noise_std: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// `2 exp(-s) / (6 s + 1)`.
    pub fn example1() -> Self {
        Self {
            sections: vec![Section {
                gain: 2.0,
                tau: 6.0,
            }],
            dead_time: 1.0,
            output_noise_std: 0.0,
        }
    }

    /// `1 / (s + 1)^3`.
    pub fn example2() -> Self {
        Self {
            sections: vec![Section { gain: 1.0, tau: 1.0 }; 3],
            dead_time: 0.0,
            output_noise_std: 0.0,
        }
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.output_noise_std = std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::InvalidArgument("plant has no sections".into()));
        }
        for (i, s) in self.sections.iter().enumerate() {
            if !(s.tau > 0.0 && s.tau.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "section {i}: time constant must be positive, got {}",
                    s.tau
                )));
            }
            if !s.gain.is_finite() {
                return Err(Error::InvalidArgument(format!("section {i}: gain is not finite")));
            }
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dead time must be nonnegative, got {}",
                self.dead_time
            )));
        }
        if !(self.output_noise_std >= 0.0 && self.output_noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise std must be nonnegative, got {}",
                self.output_noise_std
            )));
        }
        Ok(())
    }
}

/// Steady-state gain: the product of the section gains.
pub fn dc_gain(model: &PlantModel) -> f64 {
    model.sections.iter().map(|s| s.gain).product()
}

/// Exact ZOH coefficients of a single lag: `x+ = a x + b u`.
pub fn zoh_first_order(gain: f64, tau: f64, dt: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let a = (-dt / tau).exp();
    Ok((a, gain * (1.0 - a)))
}

/// Number of whole samples in `dead_time`, rounded to nearest with ties to even.
pub fn delay_samples(dead_time: f64, dt: f64) -> usize {
    (dead_time / dt).round_ties_even().max(0.0) as usize
}

/// Sampled plant: `x+ = Phi x + Gamma u_delayed`, `y = x_last (+ noise)`.
///
/// `Phi` and `Gamma` are the exact ZOH of the whole cascade. Their diagonal and
/// first entry reduce to the per-section `(a_i, b_i)` of [`zoh_first_order`]; the
/// sub-diagonal terms carry the coupling between sections within one sample.
#[derive(Debug, Clone)]
pub struct DiscretePlant {
    phi: Vec<f64>,
    gamma: Vec<f64>,
    coeffs: Vec<(f64, f64)>,
    state: Vec<f64>,
    scratch: Vec<f64>,
    delay_line: VecDeque<f64>,
    noise_std: f64,
    dt: f64,
}

pub fn build_discrete_plant(model: &PlantModel, dt: f64) -> Result<DiscretePlant> {
    model.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let n = model.sections.len();
    let coeffs = model
        .sections
        .iter()
        .map(|s| zoh_first_order(s.gain, s.tau, dt))
        .collect::<Result<Vec<_>>>()?;

    // Augmented exponential exp([[A, B], [0, 0]] dt) = [[Phi, Gamma], [0, 1]].
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    for (i, s) in model.sections.iter().enumerate() {
        aug[(i, i)] = -dt / s.tau;
        let into = if i == 0 { n } else { i - 1 };
        aug[(i, into)] = s.gain * dt / s.tau;
    }
    let expm = aug.exp();

    let mut phi = vec![0.0; n * n];
    let mut gamma = vec![0.0; n];
    for i in 0..n {
        for j in 0..=i {
            phi[i * n + j] = expm[(i, j)];
        }
        gamma[i] = expm[(i, n)];
        phi[i * n + i] = coeffs[i].0;
    }
    gamma[0] = coeffs[0].1;

    let delay = delay_samples(model.dead_time, dt);
    Ok(DiscretePlant {
        phi,
        gamma,
        coeffs,
        state: vec![0.0; n],
        scratch: vec![0.0; n],
        delay_line: VecDeque::from(vec![0.0; delay]),
        noise_std: model.output_noise_std,
        dt,
    })
}

impl DiscretePlant {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay_len(&self) -> usize {
        self.delay_line.len()
    }

    pub fn order(&self) -> usize {
        self.state.len()
    }

    /// Per-section `(a_i, b_i)`.
    pub fn section_coeffs(&self) -> &[(f64, f64)] {
        &self.coeffs
    }

    /// Row-major `Phi` (lower triangular).
    pub fn transition(&self) -> &[f64] {
        &self.phi
    }

    pub fn input_vector(&self) -> &[f64] {
        &self.gamma
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Noise-free output of the last section.
    pub fn output(&self) -> f64 {
        *self.state.last().expect("plant has at least one section")
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
        self.delay_line.iter_mut().for_each(|u| *u = 0.0);
    }

    /// Advance one sample with `u` held, returning the measured output.
    pub fn step<R: Rng + ?Sized>(&mut self, u: f64, rng: &mut R) -> Result<f64> {
        let y = self.step_noiseless(u)?;
        if self.noise_std > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            Ok(y + self.noise_std * z)
        } else {
            Ok(y)
        }
    }

    pub fn step_noiseless(&mut self, u: f64) -> Result<f64> {
        ensure_finite(u, "plant input")?;
        let applied = if self.delay_line.is_empty() {
            u
        } else {
            self.delay_line.push_back(u);
            self.delay_line.pop_front().expect("non-empty delay line")
        };
        let n = self.state.len();
        for i in 0..n {
            let row = &self.phi[i * n..i * n + i + 1];
            let acc: f64 = row.iter().zip(&self.state).map(|(p, x)| p * x).sum();
            self.scratch[i] = acc + self.gamma[i] * applied;
        }
        std::mem::swap(&mut self.state, &mut self.scratch);
        Ok(self.output())
    }
}
