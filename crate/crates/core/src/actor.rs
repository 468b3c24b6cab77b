//! The PID controller with back-calculation anti-windup, viewed as a shallow
//! network: a linear layer over the feature state followed by saturation.

use serde::{Deserialize, Serialize};

use crate::env::FeatureState;
use crate::error::{Error, Result};
use crate::plant::Section;

/// Trainable weights `[kp, ki, kd, rho]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub rho: f64,
    /// Which of `[kp, ki, kd, rho]` gradient updates may change.
    pub trainable: [bool; 4],
}

/// On-disk form of [`ControllerParams`]; the mask is a property of the
/// experiment, not of the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsSnapshot {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub rho: f64,
}

impl ControllerParams {
    pub fn new(kp: f64, ki: f64, kd: f64, rho: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            rho,
            trainable: [true; 4],
        }
    }

    /// PI controller with `kd` and `rho` frozen at zero.
    pub fn pi(kp: f64, ki: f64) -> Self {
        Self::new(kp, ki, 0.0, 0.0).with_mask([true, true, false, false])
    }

    pub fn with_mask(mut self, trainable: [bool; 4]) -> Self {
        self.trainable = trainable;
        self
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.kp, self.ki, self.kd, self.rho]
    }

    pub fn set_array(&mut self, w: [f64; 4]) {
        [self.kp, self.ki, self.kd, self.rho] = w;
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&w| w == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|w| w.is_finite())
    }

    /// Back-calculation gain must stay nonnegative.
    pub fn project(&mut self) {
        if self.rho < 0.0 {
            self.rho = 0.0;
        }
    }

    pub fn snapshot(&self) -> ParamsSnapshot {
        ParamsSnapshot {
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            rho: self.rho,
        }
    }

    pub fn from_snapshot(s: ParamsSnapshot, trainable: [bool; 4]) -> Self {
        Self::new(s.kp, s.ki, s.kd, s.rho).with_mask(trainable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    pub u_min: f64,
    pub u_max: f64,
}

impl ActuatorLimits {
    pub fn new(u_min: f64, u_max: f64) -> Result<Self> {
        if !(u_min < u_max) || !u_min.is_finite() || !u_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "actuator limits need u_min < u_max, got ({u_min}, {u_max})"
            )));
        }
        Ok(Self { u_min, u_max })
    }

    pub fn range(&self) -> f64 {
        self.u_max - self.u_min
    }
}

pub fn saturate(u: f64, lim: ActuatorLimits) -> f64 {
    u.clamp(lim.u_min, lim.u_max)
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Saturation written as two ReLU units:
/// `relu(-relu(u_max - u) + u_max - u_min) + u_min`.
pub fn saturate_relu(u: f64, lim: ActuatorLimits) -> f64 {
    relu(-relu(lim.u_max - u) + lim.u_max - lim.u_min) + lim.u_min
}

/// Controller output before and after saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorOutput {
    pub u_raw: f64,
    pub u_sat: f64,
}

pub fn actor_forward(k: &ControllerParams, s: &FeatureState, lim: ActuatorLimits) -> Result<ActorOutput> {
    let u_raw = k.kp * s.e_y + k.ki * s.i_y + k.kd * s.d + k.rho * s.i_u;
    if !u_raw.is_finite() {
        return Err(Error::NonFinite("controller output".into()));
    }
    Ok(ActorOutput {
        u_raw,
        u_sat: saturate(u_raw, lim),
    })
}

/// Gradient of the saturated output with respect to `[kp, ki, kd, rho]`.
///
/// Zero in the clamped region; at exactly `u_min` or `u_max` the interior
/// branch is taken.
pub fn actor_grad(k: &ControllerParams, s: &FeatureState, lim: ActuatorLimits) -> [f64; 4] {
    let u_raw = k.kp * s.e_y + k.ki * s.i_y + k.kd * s.d + k.rho * s.i_u;
    if u_raw >= lim.u_min && u_raw <= lim.u_max {
        s.as_array()
    } else {
        [0.0; 4]
    }
}

/// First-order-plus-dead-time model `k exp(-theta s) / (tau s + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FopdtModel {
    pub k: f64,
    pub tau: f64,
    pub theta: f64,
}

/// Skogestad's half rule: keep the largest lag, split the second one evenly
/// between that lag and the dead time, and push all smaller lags into the
/// dead time.
pub fn half_rule(sections: &[Section], dead_time: f64) -> Result<FopdtModel> {
    if sections.is_empty() {
        return Err(Error::InvalidArgument("half rule needs at least one section".into()));
    }
    if sections.iter().any(|s| !(s.tau > 0.0)) {
        return Err(Error::InvalidArgument("time constants must be positive".into()));
    }
    let mut taus: Vec<f64> = sections.iter().map(|s| s.tau).collect();
    taus.sort_by(|a, b| b.total_cmp(a));
    let second = taus.get(1).copied().unwrap_or(0.0);
    let rest: f64 = taus.iter().skip(2).sum();
    Ok(FopdtModel {
        k: sections.iter().map(|s| s.gain).product(),
        tau: taus[0] + second / 2.0,
        theta: dead_time + second / 2.0 + rest,
    })
}

/// SIMC PI tuning: `Kc = tau / (k (tau_c + theta))`, `tau_I = min(tau, 4 (tau_c + theta))`.
pub fn simc_pi(m: &FopdtModel, tau_c: f64) -> Result<ControllerParams> {
    if !(tau_c > 0.0) {
        return Err(Error::InvalidArgument(format!("tau_c must be positive, got {tau_c}")));
    }
    if m.k == 0.0 || !m.k.is_finite() {
        return Err(Error::InvalidArgument("SIMC needs a nonzero plant gain".into()));
    }
    if !(m.tau > 0.0) || !(m.theta >= 0.0) {
        return Err(Error::InvalidArgument("SIMC needs tau > 0 and theta >= 0".into()));
    }
    let closed = tau_c + m.theta;
    let kc = m.tau / (m.k * closed);
    let tau_i = m.tau.min(4.0 * closed);
    Ok(ControllerParams::pi(kc, kc / tau_i))
}
