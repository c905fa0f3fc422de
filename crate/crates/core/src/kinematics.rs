//! Rigid kinematics of laparoscopic instruments pivoting about a trocar.
//!
//! An instrument has four degrees of freedom relative to its trocar: pan
//! (pivot left/right), tilt (pivot up/down), spin (about the shaft) and
//! insertion depth along the shaft. Rotations compose in a fixed order:
//! pan about the trocar-frame vertical axis, tilt about the rotated
//! horizontal axis, then spin about the shaft axis.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Number of discrete actions available to an artificial agent.
pub const NUM_ACTIONS: usize = 9;

/// Index of the no-op action.
pub const NOOP: usize = 8;

/// 4-DOF trocar-relative configuration of one instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPose {
    pub pan_deg: f64,
    pub tilt_deg: f64,
    pub spin_deg: f64,
    pub insertion_mm: f64,
}

impl InstrumentPose {
    pub fn new(pan_deg: f64, tilt_deg: f64, spin_deg: f64, insertion_mm: f64) -> Self {
        Self { pan_deg, tilt_deg, spin_deg, insertion_mm }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.pan_deg, self.tilt_deg, self.spin_deg, self.insertion_mm]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Closed interval limits per DOF: (pan, tilt, spin) in degrees, insertion in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofLimits {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for DofLimits {
    fn default() -> Self {
        Self { lower: [-60.0, -60.0, -180.0, 0.0], upper: [60.0, 60.0, 180.0, 250.0] }
    }
}

impl DofLimits {
    pub fn validate(&self) -> Result<(), SimError> {
        for k in 0..4 {
            if !(self.lower[k] <= self.upper[k]) {
                return Err(SimError::Config(format!("dof {k}: lower limit {} exceeds upper limit {}", self.lower[k], self.upper[k])));
            }
        }
        if self.lower[3] < 0.0 {
            return Err(SimError::Config("insertion lower limit must be >= 0".into()));
        }
        Ok(())
    }

    pub fn clamp(&self, pose: InstrumentPose) -> InstrumentPose {
        let v = pose.as_array();
        let mut out = [0.0; 4];
        for k in 0..4 {
            out[k] = v[k].clamp(self.lower[k], self.upper[k]);
        }
        InstrumentPose::from_array(out)
    }

    pub fn contains(&self, pose: &InstrumentPose) -> bool {
        pose.as_array().iter().enumerate().all(|(k, &x)| x >= self.lower[k] && x <= self.upper[k])
    }
}

/// Trocar incision reference: pivot point and rest orientation whose third
/// column is the shaft (insertion) axis, first column horizontal, second vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrocarFrame {
    pub pivot_mm: Vector3<f64>,
    pub rest_orientation: Matrix3<f64>,
}

impl TrocarFrame {
    /// Builds a frame whose shaft axis points from `pivot` towards `aim`,
    /// with the horizontal axis perpendicular to `up`.
    pub fn looking_at(pivot: Vector3<f64>, aim: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (aim - pivot).normalize();
        let mut x = up.cross(&z);
        if x.norm() < 1e-12 {
            x = Vector3::x().cross(&z);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self { pivot_mm: pivot, rest_orientation: Matrix3::from_columns(&[x, y, z]) }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = &self.rest_orientation;
        let g = r.transpose() * r;
        (g - Matrix3::identity()).abs().max() <= tol
    }
}

/// Rigid transform of an instrument tip in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipTransform {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl TipTransform {
    pub fn shaft_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Maps a point from the tip frame into world coordinates.
    pub fn apply(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * local
    }

    /// Maps a world point into the tip frame.
    pub fn inverse_apply(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (world - self.position)
    }
}

/// Local rotation for the given pose: pan about y, then tilt about the rotated
/// x, then spin about the rotated z (intrinsic composition).
fn local_rotation(pose: &InstrumentPose) -> Matrix3<f64> {
    let pan = Rotation3::from_axis_angle(&Vector3::y_axis(), pose.pan_deg.to_radians());
    let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), pose.tilt_deg.to_radians());
    let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), pose.spin_deg.to_radians());
    (pan * tilt * spin).into_inner()
}

/// Tip position and orientation of an instrument held by `frame` at `pose`.
pub fn tip_transform(frame: &TrocarFrame, pose: &InstrumentPose) -> TipTransform {
    let rotation = frame.rest_orientation * local_rotation(pose);
    let position = frame.pivot_mm + rotation * Vector3::new(0.0, 0.0, pose.insertion_mm);
    TipTransform { rotation, position }
}

/// Per-DOF change of each discrete action id. Ordering: pan−, pan+, tilt−,
/// tilt+, spin−, spin+, insert−, insert+, no-op.
pub fn action_delta(action_id: usize) -> Result<[f64; 4], SimError> {
    if action_id >= NUM_ACTIONS {
        return Err(SimError::InvalidAction(action_id));
    }
    let mut d = [0.0; 4];
    if action_id != NOOP {
        d[action_id / 2] = if action_id % 2 == 0 { -1.0 } else { 1.0 };
    }
    Ok(d)
}

/// The action that undoes `action_id` (the no-op is its own opposite).
pub fn opposite_action(action_id: usize) -> usize {
    if action_id == NOOP {
        NOOP
    } else {
        action_id ^ 1
    }
}

/// Applies one discrete step of 1° or 1 mm, clamped to `limits`.
pub fn apply_discrete(pose: &InstrumentPose, action_id: usize, limits: &DofLimits) -> Result<InstrumentPose, SimError> {
    let d = action_delta(action_id)?;
    let v = pose.as_array();
    let mut out = v;
    for k in 0..4 {
        out[k] = v[k] + d[k];
    }
    Ok(limits.clamp(InstrumentPose::from_array(out)))
}

/// Per-tick displacement at full deflection of a continuous axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousScale(pub [f64; 4]);

impl Default for ContinuousScale {
    fn default() -> Self {
        Self([1.0, 1.0, 1.0, 1.0])
    }
}

/// Result of a continuous update; `clamped_axes` counts input components that
/// were outside [-1, 1] (or non-finite) and had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousUpdate {
    pub pose: InstrumentPose,
    pub clamped_axes: u32,
}

/// Applies a real-valued displacement `axes[k] * scale[k]` per DOF.
pub fn apply_continuous(pose: &InstrumentPose, axes: [f64; 4], scale: &ContinuousScale, limits: &DofLimits) -> ContinuousUpdate {
    let v = pose.as_array();
    let mut out = v;
    let mut clamped_axes = 0;
    for k in 0..4 {
        let a = if axes[k].is_nan() {
            clamped_axes += 1;
            0.0
        } else if !(-1.0..=1.0).contains(&axes[k]) {
            clamped_axes += 1;
            axes[k].clamp(-1.0, 1.0)
        } else {
            axes[k]
        };
        out[k] = v[k] + a * scale.0[k];
    }
    ContinuousUpdate { pose: limits.clamp(InstrumentPose::from_array(out)), clamped_axes }
}

/// Upper bound on the tip displacement caused by a single discrete action at
/// insertions up to `max_insertion_mm`.
pub fn max_step_displacement(max_insertion_mm: f64) -> f64 {
    // chord of a 1° arc at full insertion, plus one millimetre of insertion
    2.0 * max_insertion_mm * (0.5f64.to_radians()).sin() + 1.0
}
