//! Shared domain types and unit conventions.
//!
//! Forces are millinewtons, lengths meters, angles radians and time seconds.
//! Fingertip sensors report the force the object exerts on the pad in the
//! fingertip frame, with `+z` the outward pad normal. Pressing therefore shows
//! up as a negative `z` reading; [`decompose`] turns that into non-negative
//! magnitudes and everything downstream works on magnitudes.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-component vector. mN for forces, m for positions.
pub type Vec3 = Vector3<f64>;

/// Standard gravity in mN per kg.
pub const GRAVITY_MN_PER_KG: f64 = 9.81 * 1000.0;

/// World gravity direction (unit).
pub fn gravity_dir() -> Vec3 {
    Vec3::new(0.0, 0.0, -1.0)
}

/// Tolerance used when checking rotation matrices for orthonormality.
pub const ROTATION_TOL: f64 = 1e-9;

/// One 3-axis sample from a fingertip force sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingertipForce {
    pub fingertip_id: usize,
    /// Force on the pad, fingertip frame, mN.
    pub raw: Vec3,
    pub timestamp: f64,
}

impl FingertipForce {
    pub fn new(fingertip_id: usize, raw: Vec3, timestamp: f64) -> Self {
        Self {
            fingertip_id,
            raw,
            timestamp,
        }
    }
}

/// Normal/tangential split of a fingertip sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSplit {
    /// Press magnitude, mN, never negative.
    pub normal: f64,
    /// In-plane component in the fingertip frame (z is always 0).
    pub tangential_vec: Vec3,
    /// Magnitude of `tangential_vec`.
    pub tangential: f64,
}

/// Split a raw fingertip sample into press magnitude and in-plane load.
pub fn decompose(force: &FingertipForce) -> Result<ForceSplit> {
    let raw = force.raw;
    if !raw.iter().all(|c| c.is_finite()) {
        return Err(Error::RejectedSample(format!(
            "fingertip {} reported non-finite force ({}, {}, {})",
            force.fingertip_id, raw.x, raw.y, raw.z
        )));
    }
    let tangential_vec = Vec3::new(raw.x, raw.y, 0.0);
    Ok(ForceSplit {
        normal: (-raw.z).max(0.0),
        tangential: raw.x.hypot(raw.y),
        tangential_vec,
    })
}

/// Precision grasp families the posture decoder is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspType {
    Tripod,
    Pinch,
    LateralTripod,
}

impl GraspType {
    pub const ALL: [GraspType; 3] = [
        GraspType::Tripod,
        GraspType::Pinch,
        GraspType::LateralTripod,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GraspType::Tripod => "tripod",
            GraspType::Pinch => "pinch",
            GraspType::LateralTripod => "lateral_tripod",
        }
    }

    /// Position in the one-hot encoding `[tripod, pinch, lateral_tripod]`.
    pub fn index(&self) -> usize {
        match self {
            GraspType::Tripod => 0,
            GraspType::Pinch => 1,
            GraspType::LateralTripod => 2,
        }
    }

    /// Pinch only uses thumb and index; the tripod families use every finger.
    pub fn uses_all_fingers(&self) -> bool {
        !matches!(self, GraspType::Pinch)
    }
}

impl fmt::Display for GraspType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraspType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tripod" => Ok(GraspType::Tripod),
            "pinch" => Ok(GraspType::Pinch),
            "lateral_tripod" => Ok(GraspType::LateralTripod),
            other => Err(Error::UnknownGraspType(other.to_string())),
        }
    }
}

/// The two variables the controller hands to the posture decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspContext {
    pub grasp_type: GraspType,
    /// Thumb-tip to index-tip distance, m.
    pub grasp_size: f64,
}

/// Rigid transform. Rotation is kept orthonormal with det +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Rotation3::identity(), translation)
    }

    /// Roll/pitch/yaw (x, y, z fixed-axis) in radians.
    pub fn from_rpy(rpy: [f64; 3], translation: Vec3) -> Self {
        Self::new(
            Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]),
            translation,
        )
    }

    /// Build from a row-major matrix, rejecting anything that is not a proper rotation.
    pub fn from_matrix(rows: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        if !m.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max |R^T R - I| = {ortho:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
        }
        Ok(Self::new(Rotation3::from_matrix_unchecked(m), translation))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = self.rotation.matrix();
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    /// `self ∘ other`: express `other` (given in this frame) in the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Interpolate translation linearly and rotation by slerp.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let qa = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let qb = UnitQuaternion::from_rotation_matrix(&other.rotation);
        let q = qa.slerp(&qb, s);
        Pose {
            rotation: q.to_rotation_matrix(),
            translation: self.translation.lerp(&other.translation, s),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: self.rows(),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        Pose::from_matrix(repr.rotation, Vec3::from(repr.translation))
            .map_err(serde::de::Error::custom)
    }
}
