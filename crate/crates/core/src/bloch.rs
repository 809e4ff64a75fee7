//! Bloch dynamics of a single isochromat under a constant control.
//!
//! In normalized units the magnetization `X = (x, y, z)` obeys
//!
//! ```text
//! x' = -Δ y + (1+α) u_y z
//! y' =  Δ x - (1+α) u_x z
//! z' =  (1+α) u_x y - (1+α) u_y x
//! ```
//!
//! i.e. `X' = ω × X` with angular velocity `ω = ((1+α) u_x, (1+α) u_y, Δ)`.
//! Because the control is constant the flow is a rotation about a fixed
//! axis and is evaluated in closed form.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation angles below this are treated as the identity.
const ANGLE_FLOOR: f64 = 1e-14;

/// Constant control amplitudes and the duration they are applied for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPulse {
    pub ux: f64,
    pub uy: f64,
    pub tf: f64,
}

impl ControlPulse {
    pub const fn new(ux: f64, uy: f64, tf: f64) -> Self {
        Self { ux, uy, tf }
    }

    /// True when `|u_x|, |u_y| <= u_max` and `0 <= t_f <= tf_max`.
    pub fn is_admissible(&self, u_max: f64, tf_max: f64) -> bool {
        self.ux.abs() <= u_max && self.uy.abs() <= u_max && self.tf >= 0.0 && self.tf <= tf_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochState {
    /// Thermal equilibrium, the north pole of the sphere.
    pub const NORTH_POLE: Self = Self {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn transverse(&self) -> TransverseReading {
        TransverseReading {
            x: self.x,
            y: self.y,
        }
    }
}

impl From<Vector3<f64>> for BlochState {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// The measurable `(x, y)` projection of a Bloch vector or of an ensemble average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransverseReading {
    pub x: f64,
    pub y: f64,
}

impl TransverseReading {
    pub const ZERO: Self = Self { x: 0.0, y: 0.0 };

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Discretized inhomogeneity values together with the common detuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub alphas: Vec<f64>,
    pub delta: f64,
}

impl AlphaGrid {
    /// Builds a grid from explicit values, which must be strictly increasing.
    pub fn new(alphas: Vec<f64>, delta: f64) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidArgument("alpha grid is empty".into()));
        }
        if alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "alpha grid must be strictly increasing".into(),
            ));
        }
        if !delta.is_finite() || alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument(
                "alpha grid values must be finite".into(),
            ));
        }
        Ok(Self { alphas, delta })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// The skew-symmetric generator `Ω` with `X' = Ω X`.
pub fn generator(pulse: &ControlPulse, alpha: f64, delta: f64) -> Matrix3<f64> {
    let s = 1.0 + alpha;
    let wx = s * pulse.ux;
    let wy = s * pulse.uy;
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0,   -delta,  wy,
        delta,  0.0,   -wx,
        -wy,    wx,     0.0,
    );
    m
}

#[inline]
fn angular_velocity(pulse: &ControlPulse, alpha: f64, delta: f64) -> Vector3<f64> {
    let s = 1.0 + alpha;
    Vector3::new(s * pulse.ux, s * pulse.uy, delta)
}

/// Exact propagation `exp(Ω t_f) x0` via the axis-angle (Rodrigues) formula.
pub fn propagate(pulse: &ControlPulse, alpha: f64, delta: f64, x0: &BlochState) -> BlochState {
    let omega = angular_velocity(pulse, alpha, delta);
    let rate = omega.norm();
    let angle = rate * pulse.tf;
    if angle.abs() < ANGLE_FLOOR {
        return *x0;
    }
    let axis = omega / rate;
    let v = x0.as_vector();
    let (sin, cos) = angle.sin_cos();
    let rotated = v * cos + axis.cross(&v) * sin + axis * (axis.dot(&v) * (1.0 - cos));
    rotated.into()
}

/// Transverse reading at `t_f` starting from the north pole.
#[inline]
pub fn propagate_transverse(pulse: &ControlPulse, alpha: f64, delta: f64) -> TransverseReading {
    let s = 1.0 + alpha;
    let wx = s * pulse.ux;
    let wy = s * pulse.uy;
    let rate = (wx * wx + wy * wy + delta * delta).sqrt();
    let angle = rate * pulse.tf;
    if angle.abs() < ANGLE_FLOOR {
        return TransverseReading::ZERO;
    }
    let (kx, ky, kz) = (wx / rate, wy / rate, delta / rate);
    let (sin, cos) = angle.sin_cos();
    // Rodrigues with x0 = e_z: k × e_z = (k_y, -k_x, 0), k · e_z = k_z.
    let c = kz * (1.0 - cos);
    TransverseReading {
        x: ky * sin + kx * c,
        y: -kx * sin + ky * c,
    }
}

/// Responses of every grid value to one pulse, in grid order.
pub fn propagate_grid(pulse: &ControlPulse, grid: &AlphaGrid) -> Vec<TransverseReading> {
    grid.alphas
        .iter()
        .map(|&a| propagate_transverse(pulse, a, grid.delta))
        .collect()
}

/// Writes the responses of every grid value into `out` as interleaved `(x, y)` pairs.
#[inline]
pub(crate) fn propagate_grid_into(pulse: &ControlPulse, grid: &AlphaGrid, out: &mut [f64]) {
    debug_assert_eq!(out.len(), 2 * grid.len());
    for (chunk, &a) in out.chunks_exact_mut(2).zip(&grid.alphas) {
        let r = propagate_transverse(pulse, a, grid.delta);
        chunk[0] = r.x;
        chunk[1] = r.y;
    }
}

/// Classical fourth-order Runge-Kutta integration of the same dynamics.
///
/// The final step is shortened so that integration ends exactly at `t_f`.
pub fn rk4_propagate(
    pulse: &ControlPulse,
    alpha: f64,
    delta: f64,
    x0: &BlochState,
    step: f64,
) -> Result<BlochState> {
    rk4_with_generator(&generator(pulse, alpha, delta), pulse.tf, x0, step)
}

/// RK4 for `X' = M X` with an arbitrary constant matrix.
pub fn rk4_with_generator(
    m: &Matrix3<f64>,
    duration: f64,
    x0: &BlochState,
    step: f64,
) -> Result<BlochState> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "RK4 step must be positive, got {step}"
        )));
    }
    let mut x = x0.as_vector();
    if duration == 0.0 {
        return Ok(*x0);
    }
    let n = (duration.abs() / step).ceil() as usize;
    let h = duration / n as f64;
    for _ in 0..n {
        let k1 = m * x;
        let k2 = m * (x + k1 * (h / 2.0));
        let k3 = m * (x + k2 * (h / 2.0));
        let k4 = m * (x + k3 * h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(x.into())
}
