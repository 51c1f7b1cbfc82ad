//! Quasi-static stand-in for the hand and the grasped object.
//!
//! The object is a compliant block of width `width_m`. Closing the hand below
//! that width presses it with `stiffness * penetration / n_contacts` per
//! fingertip. Whatever load the fingers must carry (weight, support
//! reactions, inertial pushes) is split evenly across the contact fingers and
//! projected into each pad's tangent plane. Friction transmits at most
//! `mu * f_n` per finger; when the requirement exceeds the friction capacity
//! the object creeps out of the grasp and is dropped once the creep passes
//! `drop_threshold_m`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::HandModel;
use crate::synergy::{LatentPoint, SynergyDecoder};
use crate::units::{gravity_dir, FingertipForce, GraspContext, Pose, Vec3, GRAVITY_MN_PER_KG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectStatus {
    Held,
    Slipping,
    Dropped,
    OnSupport,
}

impl ObjectStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectStatus::Held => "held",
            ObjectStatus::Slipping => "slipping",
            ObjectStatus::Dropped => "dropped",
            ObjectStatus::OnSupport => "on_support",
        }
    }
}

/// Object parameters as they appear in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub mass_kg: f64,
    pub width_m: f64,
    pub mu: f64,
    #[serde(default = "default_stiffness")]
    pub stiffness_mn_per_m: f64,
    #[serde(default)]
    pub position: [f64; 3],
    /// Resting on a support at the start of the episode.
    #[serde(default = "yes")]
    pub initially_supported: bool,
}

fn default_stiffness() -> f64 {
    1.0e6
}

fn yes() -> bool {
    true
}

impl ObjectSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.mass_kg >= 0.0 && self.mass_kg.is_finite()) {
            errs.push(format!("object.mass_kg {} must be >= 0", self.mass_kg));
        }
        if !(self.width_m > 0.0 && self.width_m.is_finite()) {
            errs.push(format!("object.width_m {} must be > 0", self.width_m));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            errs.push(format!("object.mu {} must be > 0", self.mu));
        }
        if !(self.stiffness_mn_per_m > 0.0 && self.stiffness_mn_per_m.is_finite()) {
            errs.push(format!(
                "object.stiffness_mn_per_m {} must be > 0",
                self.stiffness_mn_per_m
            ));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimObject {
    pub mass_kg: f64,
    pub width_m: f64,
    pub mu: f64,
    pub stiffness_mn_per_m: f64,
    pub position: Vec3,
    pub supported: bool,
    pub status: ObjectStatus,
    pub slip_accum_m: f64,
}

impl SimObject {
    pub fn from_spec(spec: &ObjectSpec) -> Self {
        Self {
            mass_kg: spec.mass_kg,
            width_m: spec.width_m,
            mu: spec.mu,
            stiffness_mn_per_m: spec.stiffness_mn_per_m,
            position: Vec3::from(spec.position),
            supported: spec.initially_supported,
            status: if spec.initially_supported {
                ObjectStatus::OnSupport
            } else {
                ObjectStatus::Held
            },
            slip_accum_m: 0.0,
        }
    }

    /// Weight as a force vector, mN.
    pub fn weight(&self) -> Vec3 {
        gravity_dir() * (self.mass_kg * GRAVITY_MN_PER_KG)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub rate_hz: f64,
    pub noise_std_mn: f64,
    pub quantization_mn: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            rate_hz: 50.0,
            noise_std_mn: 5.0,
            quantization_mn: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlipParams {
    /// Creep speed per mN of friction deficit, m / (mN s).
    pub c_slip: f64,
    pub drop_threshold_m: f64,
}

impl Default for SlipParams {
    fn default() -> Self {
        Self {
            c_slip: 1e-5,
            drop_threshold_m: 0.005,
        }
    }
}

/// Noise-free contact solution for one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub achieved_size: f64,
    pub penetration: f64,
    pub contact: Vec<usize>,
    /// Per-fingertip press magnitude, mN (zero outside the contact set).
    pub normal: Vec<f64>,
    /// Per-fingertip tangential load the grasp must carry, world frame.
    pub required: Vec<Vec3>,
    /// Per-fingertip tangential force actually transmitted, world frame.
    pub transmitted: Vec<Vec3>,
    /// Noise-free sensor readings in fingertip frames.
    pub readings: Vec<FingertipForce>,
}

impl ContactState {
    pub fn total_normal(&self) -> f64 {
        self.normal.iter().sum()
    }

    pub fn total_required(&self) -> f64 {
        self.required.iter().map(|v| v.norm()).sum()
    }

    pub fn total_transmitted(&self) -> f64 {
        self.transmitted.iter().map(|v| v.norm()).sum()
    }
}

/// Fingertip forces produced by the commanded grasp on the object.
///
/// `external_load` is every non-gravity force acting on the object (support
/// reactions, pushes, inertial terms), mN, world frame.
pub fn contact_forces(
    obj: &SimObject,
    ctx: &GraspContext,
    model: &HandModel,
    decoder: &SynergyDecoder,
    hand_pose: &Pose,
    external_load: &Vec3,
    t: f64,
) -> Result<ContactState> {
    let q = decoder
        .decode(ctx, &LatentPoint::zeros(decoder.latent_dim()))?
        .joints;
    let achieved = model.thumb_index_distance(&q)?;
    let tips = model.forward_kinematics(&q, hand_pose)?;
    let n_fingers = model.finger_count();
    let contact = model.contact_set(ctx.grasp_type);

    let mut state = ContactState {
        achieved_size: achieved,
        penetration: 0.0,
        contact: contact.clone(),
        normal: vec![0.0; n_fingers],
        required: vec![Vec3::zeros(); n_fingers],
        transmitted: vec![Vec3::zeros(); n_fingers],
        readings: (0..n_fingers)
            .map(|i| FingertipForce::new(i, Vec3::zeros(), t))
            .collect(),
    };
    if obj.status == ObjectStatus::Dropped {
        return Ok(state);
    }

    let penetration = (obj.width_m - achieved).max(0.0);
    state.penetration = penetration;
    let n_contact = contact.len() as f64;
    let f_n = obj.stiffness_mn_per_m * penetration / n_contact;
    let share = (obj.weight() + external_load) / n_contact;

    for &i in &contact {
        let tip = &tips[i];
        let pad_normal = tip.rotate(&Vec3::z());
        let required = share - pad_normal * share.dot(&pad_normal);
        let capacity = obj.mu * f_n;
        let transmitted = if required.norm() > capacity {
            required * (capacity / required.norm())
        } else {
            required
        };
        let local = tip.rotation.inverse() * transmitted;
        state.normal[i] = f_n;
        state.required[i] = required;
        state.transmitted[i] = transmitted;
        state.readings[i].raw = Vec3::new(local.x, local.y, -f_n);
    }
    Ok(state)
}

/// Coulomb check and creep integration. Returns the new status.
pub fn slip_update(
    obj: &mut SimObject,
    normal: &[f64],
    required: &[f64],
    dt: f64,
    params: &SlipParams,
) -> ObjectStatus {
    if obj.status == ObjectStatus::Dropped {
        return obj.status;
    }
    if obj.supported {
        obj.status = ObjectStatus::OnSupport;
        return obj.status;
    }
    let capacity = obj.mu * normal.iter().sum::<f64>();
    let demand: f64 = required.iter().sum();
    obj.status = if capacity >= demand {
        ObjectStatus::Held
    } else {
        obj.slip_accum_m += params.c_slip * (demand - capacity) * dt;
        if obj.slip_accum_m > params.drop_threshold_m {
            ObjectStatus::Dropped
        } else {
            ObjectStatus::Slipping
        }
    };
    obj.status
}

/// Piecewise-linear ramp between two levels.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ramp {
    t0: f64,
    duration: f64,
    from: f64,
    to: f64,
}

impl Ramp {
    fn constant(v: f64) -> Self {
        Self {
            t0: 0.0,
            duration: 0.0,
            from: v,
            to: v,
        }
    }

    fn value(&self, t: f64) -> f64 {
        if t >= self.t0 + self.duration {
            self.to
        } else if t <= self.t0 {
            self.from
        } else {
            self.from + (self.to - self.from) * (t - self.t0) / self.duration
        }
    }

    fn end(&self) -> f64 {
        self.t0 + self.duration
    }
}

/// Scenario events that act on the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    /// Take the object off its support; the weight moves onto the fingers.
    Lift {
        #[serde(default = "default_ramp")]
        ramp_s: f64,
    },
    /// Arm motion transient, seen by the object as an inertial load.
    Move {
        accel_mps2: [f64; 3],
        duration_s: f64,
    },
    /// Mass added to the object (coins in a cup).
    AddMass { mass_kg: f64 },
    /// The object meets a surface and is pushed up by `push_mn` beyond its weight.
    SupportContact {
        #[serde(default = "default_push")]
        push_mn: f64,
        #[serde(default = "default_ramp")]
        ramp_s: f64,
    },
    /// A person takes the object's weight and lifts it slightly.
    PullUp {
        #[serde(default = "default_push")]
        push_mn: f64,
        #[serde(default = "default_ramp")]
        ramp_s: f64,
    },
    /// Re-arm the controller for a new grasp.
    Reset,
}

fn default_ramp() -> f64 {
    0.5
}

fn default_push() -> f64 {
    300.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Impulse {
    t0: f64,
    t1: f64,
    accel: Vec3,
}

/// Result of advancing the world one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldStep {
    pub readings: Vec<FingertipForce>,
    pub contact: ContactState,
    pub external_load: Vec3,
    pub status: ObjectStatus,
}

/// Object, supports, disturbances and the noisy sensor, stepped in lockstep
/// with the controller.
#[derive(Debug, Clone)]
pub struct World {
    pub object: SimObject,
    pub sensor: SensorModel,
    pub slip: SlipParams,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    weight_frac: Ramp,
    push: Ramp,
    lift_end: Option<f64>,
    impulses: Vec<Impulse>,
    last_hand: Option<Vec3>,
    held_readings: Option<Vec<FingertipForce>>,
    next_sample_t: f64,
}

impl World {
    pub fn new(
        object: SimObject,
        sensor: SensorModel,
        slip: SlipParams,
        seed: u64,
    ) -> Result<Self> {
        if !(sensor.rate_hz > 0.0) {
            return Err(Error::InvalidParams(format!(
                "sensor rate {} must be > 0",
                sensor.rate_hz
            )));
        }
        let noise = if sensor.noise_std_mn > 0.0 {
            Some(
                Normal::new(0.0, sensor.noise_std_mn)
                    .map_err(|e| Error::InvalidParams(e.to_string()))?,
            )
        } else {
            None
        };
        let w = if object.supported { 1.0 } else { 0.0 };
        Ok(Self {
            object,
            sensor,
            slip,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            weight_frac: Ramp::constant(w),
            push: Ramp::constant(0.0),
            lift_end: None,
            impulses: Vec::new(),
            last_hand: None,
            held_readings: None,
            next_sample_t: f64::NEG_INFINITY,
        })
    }

    /// Apply a scripted event at time `t`.
    pub fn apply_event(&mut self, t: f64, event: &EventKind) {
        match event {
            EventKind::Lift { ramp_s } => {
                self.weight_frac = Ramp {
                    t0: t,
                    duration: *ramp_s,
                    from: self.weight_frac.value(t),
                    to: 0.0,
                };
                self.push = Ramp {
                    t0: t,
                    duration: *ramp_s,
                    from: self.push.value(t),
                    to: 0.0,
                };
                self.lift_end = Some(self.weight_frac.end());
            }
            EventKind::Move {
                accel_mps2,
                duration_s,
            } => self.impulses.push(Impulse {
                t0: t,
                t1: t + duration_s,
                accel: Vec3::from(*accel_mps2),
            }),
            EventKind::AddMass { mass_kg } => {
                self.object.mass_kg = (self.object.mass_kg + mass_kg).max(0.0);
            }
            EventKind::SupportContact { push_mn, ramp_s }
            | EventKind::PullUp { push_mn, ramp_s } => {
                if self.object.status != ObjectStatus::Dropped {
                    self.object.supported = true;
                }
                self.lift_end = None;
                self.weight_frac = Ramp {
                    t0: t,
                    duration: *ramp_s,
                    from: self.weight_frac.value(t),
                    to: 1.0,
                };
                self.push = Ramp {
                    t0: t,
                    duration: *ramp_s,
                    from: self.push.value(t),
                    to: *push_mn,
                };
            }
            EventKind::Reset => {}
        }
    }

    /// Non-gravity forces on the object at time `t`, mN.
    pub fn external_load(&self, t: f64) -> Vec3 {
        let up = -gravity_dir();
        let mut load = up
            * (self.weight_frac.value(t) * self.object.mass_kg * GRAVITY_MN_PER_KG
                + self.push.value(t));
        for imp in &self.impulses {
            if t >= imp.t0 && t < imp.t1 {
                // kg * m/s^2 = N
                load -= imp.accel * (self.object.mass_kg * 1000.0);
            }
        }
        load
    }

    fn sample(&mut self, clean: &[FingertipForce], t: f64) -> Vec<FingertipForce> {
        let period = 1.0 / self.sensor.rate_hz;
        if let Some(held) = &self.held_readings {
            if t + 1e-12 < self.next_sample_t {
                return held
                    .iter()
                    .map(|f| FingertipForce { timestamp: t, ..*f })
                    .collect();
            }
        }
        let q = self.sensor.quantization_mn;
        let mut out = Vec::with_capacity(clean.len());
        for f in clean {
            let mut raw = f.raw;
            if let Some(noise) = &self.noise {
                for c in raw.iter_mut() {
                    *c += noise.sample(&mut self.rng);
                }
            }
            if q > 0.0 {
                raw = raw.map(|c| (c / q).round() * q);
            }
            out.push(FingertipForce::new(f.fingertip_id, raw, t));
        }
        self.held_readings = Some(out.clone());
        self.next_sample_t = if self.next_sample_t.is_finite() {
            self.next_sample_t + period
        } else {
            t + period
        };
        out
    }

    /// Solve contacts for the current command, sample the sensors, and
    /// integrate slip over `dt`.
    pub fn step(
        &mut self,
        t: f64,
        dt: f64,
        ctx: &GraspContext,
        model: &HandModel,
        decoder: &SynergyDecoder,
        hand_pose: &Pose,
    ) -> Result<WorldStep> {
        if let Some(end) = self.lift_end {
            if t >= end {
                self.object.supported = false;
                self.lift_end = None;
            }
        }
        let external = self.external_load(t);
        let contact = contact_forces(&self.object, ctx, model, decoder, hand_pose, &external, t)?;
        let readings = self.sample(&contact.readings, t);

        let normal: Vec<f64> = contact.contact.iter().map(|&i| contact.normal[i]).collect();
        let required: Vec<f64> = contact
            .contact
            .iter()
            .map(|&i| contact.required[i].norm())
            .collect();
        let before = self.object.slip_accum_m;
        let status = slip_update(&mut self.object, &normal, &required, dt, &self.slip);

        let hand = hand_pose.translation;
        if matches!(status, ObjectStatus::Held | ObjectStatus::Slipping) {
            if let Some(prev) = self.last_hand {
                self.object.position += hand - prev;
            }
            let crept = self.object.slip_accum_m - before;
            let dir = self.object.weight() + external;
            if crept > 0.0 && dir.norm() > 0.0 {
                self.object.position += dir.normalize() * crept;
            }
        }
        self.last_hand = Some(hand);

        Ok(WorldStep {
            readings,
            contact,
            external_load: external,
            status,
        })
    }
}
