//! Closed-loop analysis for PI control of a plant: the kp-ki stability
//! boundary, an eigenvalue stability check of the sampled loop, and
//! step-response metrics.

use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::plant::{build_discrete_plant, dc_gain, PlantModel};
use crate::rl::StepRecord;

/// Samples of the imaginary-axis crossing locus in the kp-ki plane.
///
/// The real-root boundary `ki = 0` is the other piece of the stability
/// region's border and is the same line for every plant.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCurve {
    pub points: Vec<BoundaryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub omega: f64,
    pub kp: f64,
    pub ki: f64,
}

impl BoundaryCurve {
    /// `ki` on the real-root boundary.
    pub const REAL_ROOT_KI: f64 = 0.0;
}

/// Frequency response `G(j omega)` of the continuous plant.
pub fn frequency_response(model: &PlantModel, omega: f64) -> Complex64 {
    let jw = Complex64::new(0.0, omega);
    let lags: Complex64 = model
        .sections
        .iter()
        .map(|s| Complex64::new(s.gain, 0.0) / (jw * s.tau + 1.0))
        .product();
    lags * Complex64::from_polar(1.0, -omega * model.dead_time)
}

/// D-decomposition of `1 + (kp + ki / (j omega)) G(j omega) = 0`:
/// `kp = -Re(1/G)`, `ki = omega Im(1/G)`.
pub fn stability_boundary(model: &PlantModel, omega_grid: &[f64]) -> Result<BoundaryCurve> {
    model.validate()?;
    if dc_gain(model) == 0.0 {
        return Err(Error::InvalidArgument("plant has zero gain".into()));
    }
    check_grid(omega_grid)?;
    let points = omega_grid
        .iter()
        .map(|&omega| {
            let inv = frequency_response(model, omega).inv();
            BoundaryPoint {
                omega,
                kp: -inv.re,
                ki: omega * inv.im,
            }
        })
        .collect::<Vec<_>>();
    if points.iter().any(|p| !p.kp.is_finite() || !p.ki.is_finite()) {
        return Err(Error::NonFinite("stability boundary".into()));
    }
    Ok(BoundaryCurve { points })
}

fn check_grid(omega_grid: &[f64]) -> Result<()> {
    if omega_grid.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("frequencies must be positive and finite".into()));
    }
    if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("frequencies must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` frequencies evenly spaced on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Smallest positive frequency where the boundary returns to `ki = 0`,
/// i.e. where the plant phase reaches `-pi`. Found by bisection on the
/// unwrapped phase.
pub fn crossover_frequency(model: &PlantModel) -> Option<f64> {
    let phase = |w: f64| -> f64 {
        -w * model.dead_time - model.sections.iter().map(|s| (w * s.tau).atan()).sum::<f64>()
            + if dc_gain(model) < 0.0 { std::f64::consts::PI } else { 0.0 }
    };
    let target = -std::f64::consts::PI;
    let mut hi = 1e-3;
    while phase(hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    let mut lo = hi / 2.0;
    if phase(lo) <= target {
        lo = 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phase(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// State-transition matrix of the sampled PI loop with zero set-point.
///
/// State: plant sections, the input delay line (newest first) and the error
/// integral. Each sample computes `u = kp e + ki I_y`, pushes it into the
/// delay line, advances the plant with the oldest delayed input, then adds
/// the new error to the integral.
pub fn closed_loop_matrix(model: &PlantModel, kp: f64, ki: f64, dt: f64) -> Result<DMatrix<f64>> {
    let plant = build_discrete_plant(model, dt)?;
    let n = plant.order();
    let d = plant.delay_len();
    let dim = n + d + 1;
    let phi = plant.transition();
    let gamma = plant.input_vector();
    let integ = n + d;

    // u_n as a row over the state: -kp * x_last + ki * I.
    let mut u_row = vec![0.0; dim];
    u_row[n - 1] = -kp;
    u_row[integ] = ki;

    let mut m = DMatrix::<f64>::zeros(dim, dim);
    // Plant: x+ = Phi x + Gamma * (u_n if no delay, else oldest delay entry).
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = phi[i * n + j];
        }
        if d == 0 {
            for j in 0..dim {
                m[(i, j)] += gamma[i] * u_row[j];
            }
        } else {
            m[(i, n + d - 1)] += gamma[i];
        }
    }
    // Delay line shifts: q1+ = u_n, q_k+ = q_{k-1}.
    if d > 0 {
        for j in 0..dim {
            m[(n, j)] = u_row[j];
        }
        for k in 1..d {
            m[(n + k, n + k - 1)] = 1.0;
        }
    }
    // I+ = I + e+ dt = I - dt * x_last+.
    for j in 0..dim {
        m[(integ, j)] = -dt * m[(n - 1, j)];
    }
    m[(integ, integ)] += 1.0;
    Ok(m)
}

const SCHUR_MAX_ITER: usize = 10_000;

fn schur_radius(m: DMatrix<f64>) -> Option<f64> {
    Schur::try_new(m, f64::EPSILON, SCHUR_MAX_ITER)
        .map(|s| s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest eigenvalue modulus, or NaN if the QR iteration does not converge.
///
/// Loops with all gains zero decouple into exactly nilpotent blocks on which
/// the shifted QR iteration can stall; those are retried after a fixed
/// orthogonal change of basis.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if let Some(r) = schur_radius(m.clone()) {
        return r;
    }
    let n = m.nrows();
    let mix = DMatrix::<f64>::from_fn(n, n, |i, j| ((i * 7 + j * 13) as f64 * 0.37).sin());
    let q = mix.qr().q();
    schur_radius(q.transpose() * m * &q).unwrap_or(f64::NAN)
}

/// Stability of the linear sampled loop (no saturation, no anti-windup) with
/// PI gains `kp`, `ki`.
pub fn is_stable(model: &PlantModel, kp: f64, ki: f64, dt: f64) -> Result<bool> {
    if !kp.is_finite() || !ki.is_finite() {
        return Ok(false);
    }
    let m = closed_loop_matrix(model, kp, ki, dt)?;
    let rho = spectral_radius(&m);
    if !rho.is_finite() {
        return Err(Error::NonFinite(format!("eigenvalues of the loop with kp={kp}, ki={ki} did not converge")));
    }
    Ok(rho < 1.0 - 1e-9)
}

/// Response characteristics of a logged roll-out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Largest excursion past a new set-point, relative to the step size.
    pub overshoot: f64,
    /// First step index after which `|e_y| < 0.1` holds to the end of the
    /// log; the log length if the output never settles.
    pub settling_steps: usize,
    /// Steps with `u_raw != u_sat` from the last set-point change onward.
    pub recovery_steps: usize,
}

pub const SETTLING_BAND: f64 = 0.1;

/// Set-point changes in a log as `(index, previous level)`. The reset counts
/// as a change when the first set-point differs from the initial output.
fn step_changes(log: &[StepRecord]) -> Vec<(usize, f64)> {
    let mut changes = Vec::new();
    let mut prev = log[0].y;
    for (i, r) in log.iter().enumerate() {
        if r.setpoint != prev {
            changes.push((i, prev));
        }
        prev = r.setpoint;
    }
    changes
}

pub fn step_metrics(log: &[StepRecord]) -> Result<StepMetrics> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty log".into()));
    }
    let changes = step_changes(log);
    if changes.is_empty() {
        return Err(Error::InvalidArgument("log contains no set-point change".into()));
    }

    let mut overshoot: f64 = 0.0;
    for (k, &(start, prev_level)) in changes.iter().enumerate() {
        let end = changes.get(k + 1).map_or(log.len(), |c| c.0);
        let level = log[start].setpoint;
        let size = level - prev_level;
        if size == 0.0 {
            continue;
        }
        for r in &log[start..end] {
            overshoot = overshoot.max((r.y - level) * size.signum() / size.abs());
        }
    }

    let settling_steps = log
        .iter()
        .rposition(|r| (r.setpoint - r.y).abs() >= SETTLING_BAND)
        .map_or(0, |i| i + 1);

    let last_change = changes.last().expect("non-empty").0;
    let recovery_steps = log[last_change..].iter().filter(|r| r.u_raw != r.u_sat).count();

    Ok(StepMetrics {
        overshoot,
        settling_steps,
        recovery_steps,
    })
}
