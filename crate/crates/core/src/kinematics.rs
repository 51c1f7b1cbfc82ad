//! Config-driven kinematic hand model.
//!
//! Every finger is a serial chain of revolute joints. A joint first shifts by
//! its `origin` (expressed in the previous frame), rotates by the joint angle
//! about its `axis`, then advances `link_length` along the new local x axis.
//! The fingertip frame is the end of the last link, optionally re-oriented by
//! a fixed `tip_rpy` so that local `+z` is the outward pad normal.

use std::path::Path;

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{decompose, FingertipForce, Pose, Vec3};

pub const HAND_SCHEMA: &str = "hand/1";

const DEFAULT_HAND_JSON: &str = include_str!("../data/default_hand.json");

/// Tolerance applied to joint limits when validating configurations.
pub const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FingerTag {
    Thumb,
    Index,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub axis: Unit<Vec3>,
    pub origin: Vec3,
    pub limits: [f64; 2],
    pub link_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finger {
    pub name: String,
    pub tag: FingerTag,
    pub joints: Vec<Joint>,
    pub tip_rotation: Rotation3<f64>,
}

/// Immutable hand description: palm frame plus one chain per finger.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub name: String,
    pub palm: Pose,
    pub fingers: Vec<Finger>,
    thumb: usize,
    index: usize,
    offsets: Vec<usize>,
}

/// Joint angles in model order (finger by finger), radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfiguration(pub Vec<f64>);

impl JointConfiguration {
    pub fn angles(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

// ---- file format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandFile {
    schema: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    palm: Option<FrameSpec>,
    fingers: Vec<FingerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameSpec {
    #[serde(default)]
    rpy: [f64; 3],
    #[serde(default)]
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FingerSpec {
    name: String,
    #[serde(default)]
    tag: FingerTag,
    #[serde(default)]
    tip_rpy: [f64; 3],
    joints: Vec<JointSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    #[serde(default)]
    name: Option<String>,
    axis: [f64; 3],
    origin: [f64; 3],
    limits: [f64; 2],
    link_length: f64,
}

impl HandModel {
    /// The bundled three-finger, nine-joint precision hand.
    pub fn default_hand() -> Self {
        Self::from_json_str(DEFAULT_HAND_JSON).expect("bundled hand model is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: HandFile = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<hand>".into(),
            source,
        })?;
        Self::from_file(file)
    }

    fn from_file(file: HandFile) -> Result<Self> {
        if file.schema != HAND_SCHEMA {
            return Err(Error::InvalidHand(format!(
                "schema `{}`, expected `{HAND_SCHEMA}`",
                file.schema
            )));
        }
        let palm = file
            .palm
            .map(|f| Pose::from_rpy(f.rpy, Vec3::from(f.translation)))
            .unwrap_or_default();
        let mut fingers = Vec::with_capacity(file.fingers.len());
        for (fi, spec) in file.fingers.into_iter().enumerate() {
            if spec.joints.is_empty() {
                return Err(Error::InvalidHand(format!(
                    "fingers[{fi}] `{}` has no joints",
                    spec.name
                )));
            }
            let mut joints = Vec::with_capacity(spec.joints.len());
            for (ji, j) in spec.joints.into_iter().enumerate() {
                let name = j.name.unwrap_or_else(|| format!("{}_j{}", spec.name, ji));
                let axis = Vec3::from(j.axis);
                let all_finite = axis
                    .iter()
                    .chain(&j.origin)
                    .chain(&j.limits)
                    .all(|v| v.is_finite())
                    && j.link_length.is_finite();
                if !all_finite {
                    return Err(Error::InvalidHand(format!(
                        "joint `{name}` has non-finite values"
                    )));
                }
                if axis.norm() < 1e-12 {
                    return Err(Error::InvalidHand(format!(
                        "joint `{name}` has a zero axis"
                    )));
                }
                if j.limits[0] >= j.limits[1] {
                    return Err(Error::InvalidHand(format!(
                        "joint `{name}` limits [{}, {}] are not increasing",
                        j.limits[0], j.limits[1]
                    )));
                }
                if j.link_length <= 0.0 {
                    return Err(Error::InvalidHand(format!(
                        "joint `{name}` link length {} must be positive",
                        j.link_length
                    )));
                }
                joints.push(Joint {
                    name,
                    axis: Unit::new_normalize(axis),
                    origin: Vec3::from(j.origin),
                    limits: j.limits,
                    link_length: j.link_length,
                });
            }
            let r = spec.tip_rpy;
            fingers.push(Finger {
                name: spec.name,
                tag: spec.tag,
                joints,
                tip_rotation: Rotation3::from_euler_angles(r[0], r[1], r[2]),
            });
        }
        Self::new(file.name, palm, fingers)
    }

    pub fn new(name: String, palm: Pose, fingers: Vec<Finger>) -> Result<Self> {
        if fingers.len() < 2 {
            return Err(Error::InvalidHand(format!(
                "need at least two fingers, got {}",
                fingers.len()
            )));
        }
        let find = |tag: FingerTag, label: &'static str| -> Result<usize> {
            let hits: Vec<usize> = fingers
                .iter()
                .enumerate()
                .filter(|(_, f)| f.tag == tag)
                .map(|(i, _)| i)
                .collect();
            match hits.as_slice() {
                [one] => Ok(*one),
                [] => Err(Error::MissingTag(label)),
                _ => Err(Error::InvalidHand(format!(
                    "more than one finger tagged {label}"
                ))),
            }
        };
        let thumb = find(FingerTag::Thumb, "thumb")?;
        let index = find(FingerTag::Index, "index")?;
        let mut offsets = Vec::with_capacity(fingers.len());
        let mut acc = 0;
        for f in &fingers {
            offsets.push(acc);
            acc += f.joints.len();
        }
        Ok(Self {
            name,
            palm,
            fingers,
            thumb,
            index,
            offsets,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.fingers.iter().map(|f| f.joints.len()).sum()
    }

    pub fn finger_count(&self) -> usize {
        self.fingers.len()
    }

    pub fn thumb(&self) -> usize {
        self.thumb
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn joints(&self) -> impl Iterator<Item = &Joint> {
        self.fingers.iter().flat_map(|f| f.joints.iter())
    }

    /// Fingertips that touch the object for a grasp family.
    pub fn contact_set(&self, grasp_type: crate::units::GraspType) -> Vec<usize> {
        if grasp_type.uses_all_fingers() {
            (0..self.fingers.len()).collect()
        } else {
            let mut v = vec![self.thumb, self.index];
            v.sort_unstable();
            v
        }
    }

    /// Angles of one finger inside a full configuration.
    pub fn finger_angles<'a>(&self, finger: usize, q: &'a JointConfiguration) -> &'a [f64] {
        let start = self.offsets[finger];
        &q.0[start..start + self.fingers[finger].joints.len()]
    }

    /// Check dimension and limits.
    pub fn validate(&self, q: &JointConfiguration) -> Result<()> {
        if q.len() != self.joint_count() {
            return Err(Error::JointCount {
                expected: self.joint_count(),
                got: q.len(),
            });
        }
        for (joint, &angle) in self.joints().zip(q.angles()) {
            let [lo, hi] = joint.limits;
            if !angle.is_finite() || angle < lo - LIMIT_TOL || angle > hi + LIMIT_TOL {
                return Err(Error::JointLimit {
                    joint: joint.name.clone(),
                    angle,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    /// Clamp each angle into its joint limits. Returns whether anything moved.
    pub fn clamp_to_limits(&self, q: &mut JointConfiguration) -> bool {
        let mut clamped = false;
        for (joint, angle) in self.joints().zip(q.0.iter_mut()) {
            let [lo, hi] = joint.limits;
            let c = angle.clamp(lo, hi);
            if c != *angle {
                clamped = true;
                *angle = c;
            }
        }
        clamped
    }

    fn chain_tip(&self, finger: usize, angles: &[f64]) -> Pose {
        let f = &self.fingers[finger];
        let mut pose = Pose::identity();
        for (joint, &q) in f.joints.iter().zip(angles) {
            let step = Pose::new(Rotation3::from_axis_angle(&joint.axis, q), joint.origin);
            pose = pose.compose(&step);
            pose.translation += pose.rotation * Vec3::new(joint.link_length, 0.0, 0.0);
        }
        pose.rotation *= f.tip_rotation;
        pose
    }

    /// Fingertip frames relative to the palm.
    pub fn fingertips_in_palm(&self, q: &JointConfiguration) -> Result<Vec<Pose>> {
        self.validate(q)?;
        Ok((0..self.fingers.len())
            .map(|i| {
                self.palm
                    .compose(&self.chain_tip(i, self.finger_angles(i, q)))
            })
            .collect())
    }

    /// Fingertip frames in the world, given the hand's world pose.
    pub fn forward_kinematics(
        &self,
        q: &JointConfiguration,
        hand_pose: &Pose,
    ) -> Result<Vec<Pose>> {
        Ok(self
            .fingertips_in_palm(q)?
            .iter()
            .map(|tip| hand_pose.compose(tip))
            .collect())
    }

    /// Thumb-tip to index-tip distance in meters.
    pub fn thumb_index_distance(&self, q: &JointConfiguration) -> Result<f64> {
        let tips = self.fingertips_in_palm(q)?;
        Ok((tips[self.thumb].translation - tips[self.index].translation).norm())
    }

    /// Sum of all fingertips' tangential forces expressed in the world frame.
    pub fn world_tangential(
        &self,
        q: &JointConfiguration,
        hand_pose: &Pose,
        forces: &[FingertipForce],
    ) -> Result<Vec3> {
        let all: Vec<usize> = (0..self.fingers.len()).collect();
        self.world_tangential_of(q, hand_pose, forces, &all)
    }

    /// Same as [`world_tangential`](Self::world_tangential), restricted to `subset`.
    pub fn world_tangential_of(
        &self,
        q: &JointConfiguration,
        hand_pose: &Pose,
        forces: &[FingertipForce],
        subset: &[usize],
    ) -> Result<Vec3> {
        self.check_forces(forces)?;
        let tips = self.forward_kinematics(q, hand_pose)?;
        let mut net = Vec3::zeros();
        for &i in subset {
            let split = decompose(&forces[i])?;
            net += tips[i].rotate(&split.tangential_vec);
        }
        Ok(net)
    }

    /// Samples must come one per fingertip, in model order.
    pub fn check_forces(&self, forces: &[FingertipForce]) -> Result<()> {
        if forces.len() != self.fingers.len() {
            return Err(Error::SensorCount {
                expected: self.fingers.len(),
                got: forces.len(),
            });
        }
        if let Some((i, f)) = forces
            .iter()
            .enumerate()
            .find(|(i, f)| f.fingertip_id != *i)
        {
            return Err(Error::InvalidParams(format!(
                "sample {i} carries fingertip id {}, expected {i}",
                f.fingertip_id
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn planar_hand(link: f64) -> HandModel {
        let json = format!(
            r#"{{"schema":"hand/1","fingers":[
                {{"name":"thumb","tag":"thumb","joints":[{{"axis":[0,0,1],"origin":[0,0,0],"limits":[-3,3],"link_length":{link}}}]}},
                {{"name":"index","tag":"index","joints":[{{"axis":[0,0,1],"origin":[0,0,0],"limits":[-3,3],"link_length":{link}}}]}}
            ]}}"#
        );
        HandModel::from_json_str(&json).unwrap()
    }

    #[test]
    fn fk_zero_angle() {
        let hand = planar_hand(0.1);
        let tips = hand
            .forward_kinematics(&JointConfiguration(vec![0.0, 0.0]), &Pose::identity())
            .unwrap();
        assert_abs_diff_eq!(
            tips[0].translation,
            Vec3::new(0.1, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn fk_quarter_turn() {
        let hand = planar_hand(0.1);
        let tips = hand
            .forward_kinematics(&JointConfiguration(vec![FRAC_PI_2, 0.0]), &Pose::identity())
            .unwrap();
        assert_abs_diff_eq!(
            tips[0].translation,
            Vec3::new(0.0, 0.1, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fk_hand_translation() {
        let hand = planar_hand(0.1);
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 0.5));
        let tips = hand
            .forward_kinematics(&JointConfiguration(vec![0.0, 0.0]), &pose)
            .unwrap();
        assert_abs_diff_eq!(
            tips[0].translation,
            Vec3::new(0.1, 0.0, 0.5),
            epsilon = 1e-15
        );
    }

    #[test]
    fn fk_errors() {
        let hand = planar_hand(0.1);
        assert!(matches!(
            hand.forward_kinematics(&JointConfiguration(vec![0.0]), &Pose::identity()),
            Err(Error::JointCount {
                expected: 2,
                got: 1
            })
        ));
        match hand.forward_kinematics(&JointConfiguration(vec![0.0, 3.5]), &Pose::identity()) {
            Err(Error::JointLimit { joint, .. }) => assert_eq!(joint, "index_j0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thumb_index_distance_examples() {
        // thumb and index bases placed so the tips land on the stated points
        let mk = |a: [f64; 3], b: [f64; 3]| {
            let json = format!(
                r#"{{"schema":"hand/1","fingers":[
                {{"name":"t","tag":"thumb","joints":[{{"axis":[0,0,1],"origin":[{},{},{}],"limits":[-1,1],"link_length":0.01}}]}},
                {{"name":"i","tag":"index","joints":[{{"axis":[0,0,1],"origin":[{},{},{}],"limits":[-1,1],"link_length":0.01}}]}}
            ]}}"#,
                a[0] - 0.01,
                a[1],
                a[2],
                b[0] - 0.01,
                b[1],
                b[2]
            );
            HandModel::from_json_str(&json).unwrap()
        };
        let q = JointConfiguration(vec![0.0, 0.0]);
        let d = mk([0.05, 0.0, 0.0], [-0.05, 0.0, 0.0])
            .thumb_index_distance(&q)
            .unwrap();
        assert_abs_diff_eq!(d, 0.10, epsilon = 1e-15);
        let d = mk([0.02, 0.0, 0.0], [0.02, 0.0, 0.0])
            .thumb_index_distance(&q)
            .unwrap();
        assert_eq!(d, 0.0);
        let d = mk([0.03, 0.04, 0.0], [0.0, 0.0, 0.0])
            .thumb_index_distance(&q)
            .unwrap();
        assert_abs_diff_eq!(d, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn missing_tag_is_an_error() {
        let json = r#"{"schema":"hand/1","fingers":[
            {"name":"a","tag":"thumb","joints":[{"axis":[0,0,1],"origin":[0,0,0],"limits":[-1,1],"link_length":0.01}]},
            {"name":"b","joints":[{"axis":[0,0,1],"origin":[0,0,0],"limits":[-1,1],"link_length":0.01}]}
        ]}"#;
        assert!(matches!(
            HandModel::from_json_str(json),
            Err(Error::MissingTag("index"))
        ));
    }

    #[test]
    fn rejects_bad_joint_specs() {
        let mk = |joint: &str| {
            format!(
                r#"{{"schema":"hand/1","fingers":[
                {{"name":"a","tag":"thumb","joints":[{joint}]}},
                {{"name":"b","tag":"index","joints":[{{"axis":[0,0,1],"origin":[0,0,0],"limits":[-1,1],"link_length":0.01}}]}}
            ]}}"#
            )
        };
        for bad in [
            r#"{"axis":[0,0,1],"origin":[0,0,0],"limits":[1,-1],"link_length":0.01}"#,
            r#"{"axis":[0,0,1],"origin":[0,0,0],"limits":[-1,1],"link_length":0}"#,
            r#"{"axis":[0,0,0],"origin":[0,0,0],"limits":[-1,1],"link_length":0.01}"#,
        ] {
            assert!(
                matches!(
                    HandModel::from_json_str(&mk(bad)),
                    Err(Error::InvalidHand(_))
                ),
                "{bad}"
            );
        }
        let wrong_schema =
            mk(r#"{"axis":[0,0,1],"origin":[0,0,0],"limits":[-1,1],"link_length":0.01}"#)
                .replace("hand/1", "hand/2");
        assert!(HandModel::from_json_str(&wrong_schema).is_err());
    }

    #[test]
    fn world_tangential_examples() {
        let hand = planar_hand(0.1);
        let q = JointConfiguration(vec![0.0, 0.0]);
        let zero = [
            FingertipForce::new(0, Vec3::zeros(), 0.0),
            FingertipForce::new(1, Vec3::zeros(), 0.0),
        ];
        assert_eq!(
            hand.world_tangential(&q, &Pose::identity(), &zero).unwrap(),
            Vec3::zeros()
        );

        let one = [
            FingertipForce::new(0, Vec3::new(5.0, 0.0, -20.0), 0.0),
            FingertipForce::new(1, Vec3::zeros(), 0.0),
        ];
        assert_abs_diff_eq!(
            hand.world_tangential(&q, &Pose::identity(), &one).unwrap(),
            Vec3::new(5.0, 0.0, 0.0),
            epsilon = 1e-12
        );

        let opposed = [
            FingertipForce::new(0, Vec3::new(5.0, 0.0, -20.0), 0.0),
            FingertipForce::new(1, Vec3::new(-5.0, 0.0, -20.0), 0.0),
        ];
        assert_abs_diff_eq!(
            hand.world_tangential(&q, &Pose::identity(), &opposed)
                .unwrap(),
            Vec3::zeros(),
            epsilon = 1e-12
        );

        assert!(matches!(
            hand.world_tangential(&q, &Pose::identity(), &zero[..1]),
            Err(Error::SensorCount { .. })
        ));
    }

    #[test]
    fn default_hand_shape() {
        let hand = HandModel::default_hand();
        assert_eq!(hand.finger_count(), 3);
        assert_eq!(hand.joint_count(), 9);
        assert_eq!(hand.fingers[hand.thumb()].tag, FingerTag::Thumb);
        assert_eq!(hand.contact_set(crate::units::GraspType::Pinch).len(), 2);
        assert_eq!(hand.contact_set(crate::units::GraspType::Tripod).len(), 3);
    }
}
