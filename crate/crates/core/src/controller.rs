//! Grasp-size regulation from filtered fingertip forces.
//!
//! Each tick the controller filters the fingertip magnitudes, derives a
//! normal-force band from the tangential load, and nudges a single grasp-size
//! scalar so the averaged normal force stays inside the band:
//!
//! ```text
//! T_min = G * f_t + offset          T_max = T_min + band_width
//! f_n < T_min  ->  g -= K_s * (T_min - f_n)     (tighten)
//! f_n > T_max  ->  g += K_s * (f_n - T_max)     (loosen)
//! otherwise        g unchanged
//! ```
//!
//! When the net tangential force in the world frame points away from gravity
//! for `support_dwell_ticks` consecutive ticks the controller switches to
//! RELEASE and opens with `g += K_s * f_n` until the fingertips detach.
//! There is no way back to GRASP short of [`GripController::reset`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilteredForces, ForceFilterBank};
use crate::kinematics::{HandModel, JointConfiguration};
use crate::synergy::{LatentPoint, SynergyDecoder};
use crate::units::{decompose, gravity_dir, FingertipForce, GraspContext, GraspType, Pose, Vec3};

/// Meters of grasp-size change per mN of force error per tick, per unit of K.
pub const DEFAULT_K_UNIT: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Safety-margin gain on the tangential force (dimensionless).
    pub gain: f64,
    /// Minimum normal force per finger, mN (magnitude).
    pub offset_mn: f64,
    /// Grasp-size rate.
    pub k: f64,
    /// Converts `k` into m / (mN tick).
    pub k_unit: f64,
    /// Width of the normal-force band above `T_min`, mN.
    pub band_width_mn: f64,
    pub alpha_t: f64,
    pub alpha_n: f64,
    /// Grasp-size bounds, m. Missing bounds come from the decoder's range.
    pub g_min: Option<f64>,
    pub g_max: Option<f64>,
    /// Release ends once the averaged normal force stays below this, mN.
    pub release_detach_mn: f64,
    /// Angle from gravity beyond which the tangential load counts as support.
    pub support_angle_deg: f64,
    pub support_dwell_ticks: u32,
    /// Net tangential loads below this magnitude are treated as no load, mN.
    pub support_min_tangential_mn: f64,
    /// Average raw magnitudes across fingers before filtering.
    pub aggregate_first: bool,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            gain: 2.0,
            offset_mn: 50.0,
            k: 100.0,
            k_unit: DEFAULT_K_UNIT,
            band_width_mn: 100.0,
            alpha_t: 0.7,
            alpha_n: 0.5,
            g_min: None,
            g_max: None,
            release_detach_mn: 5.0,
            support_angle_deg: 90.0,
            support_dwell_ticks: 5,
            support_min_tangential_mn: 25.0,
            aggregate_first: false,
        }
    }
}

impl ControllerParams {
    /// Parse and validate a JSON object of parameter overrides.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<params>".into(),
            source,
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn k_scaled(&self) -> f64 {
        self.k * self.k_unit
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let finite = [
            self.gain,
            self.offset_mn,
            self.k,
            self.k_unit,
            self.band_width_mn,
            self.release_detach_mn,
            self.support_angle_deg,
            self.support_min_tangential_mn,
        ];
        if !finite.iter().all(|v| v.is_finite()) {
            errs.push("non-finite parameter".to_string());
        }
        if self.gain < 0.0 {
            errs.push(format!("gain {} must be >= 0", self.gain));
        }
        if self.offset_mn < 0.0 {
            errs.push(format!("offset_mn {} must be >= 0", self.offset_mn));
        }
        if self.k <= 0.0 || self.k_unit <= 0.0 {
            errs.push(format!(
                "k {} and k_unit {} must be > 0",
                self.k, self.k_unit
            ));
        }
        if self.band_width_mn <= 0.0 {
            errs.push(format!("band_width_mn {} must be > 0", self.band_width_mn));
        }
        for (name, a) in [("alpha_t", self.alpha_t), ("alpha_n", self.alpha_n)] {
            if !(a > 0.0 && a < 1.0) {
                errs.push(format!("{name} {a} must lie in (0, 1)"));
            }
        }
        if let (Some(lo), Some(hi)) = (self.g_min, self.g_max) {
            if !(lo < hi) {
                errs.push(format!("g_min {lo} must be below g_max {hi}"));
            }
        }
        if self.release_detach_mn < 0.0 {
            errs.push(format!(
                "release_detach_mn {} must be >= 0",
                self.release_detach_mn
            ));
        }
        if !(self.support_angle_deg > 0.0 && self.support_angle_deg < 180.0) {
            errs.push(format!(
                "support_angle_deg {} must lie in (0, 180)",
                self.support_angle_deg
            ));
        }
        if self.support_dwell_ticks == 0 {
            errs.push("support_dwell_ticks must be >= 1".to_string());
        }
        if self.support_min_tangential_mn < 0.0 {
            errs.push("support_min_tangential_mn must be >= 0".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(errs.join("; ")))
        }
    }

    /// Resolve the grasp-size bounds against the decoder's supported range.
    pub fn size_bounds(&self, decoder_range: (f64, f64)) -> Result<SizeBounds> {
        let lo = self.g_min.unwrap_or(decoder_range.0);
        let hi = self.g_max.unwrap_or(decoder_range.1);
        if !(lo < hi) {
            return Err(Error::InvalidParams(format!(
                "empty grasp-size range [{lo}, {hi}]"
            )));
        }
        Ok(SizeBounds { min: lo, max: hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeBounds {
    pub min: f64,
    pub max: f64,
}

impl SizeBounds {
    fn clamp(&self, g: f64) -> (f64, bool) {
        let c = g.clamp(self.min, self.max);
        (c, c != g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Grasp,
    Release,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Grasp => "GRASP",
            Phase::Release => "RELEASE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadClass {
    Gravity,
    Support,
}

impl fmt::Display for LoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadClass::Gravity => "gravity",
            LoadClass::Support => "support",
        })
    }
}

/// Lower edge of the normal-force band.
pub fn desired_force(params: &ControllerParams, f_t: f64) -> f64 {
    params.gain * f_t + params.offset_mn
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub g_size: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub clamped: bool,
}

/// One deadband update of the grasp size. Band edges count as inside.
pub fn grasp_step(
    params: &ControllerParams,
    bounds: SizeBounds,
    g_size: f64,
    f_n: f64,
    f_t: f64,
) -> Step {
    let t_min = desired_force(params, f_t);
    let t_max = t_min + params.band_width_mn;
    let ks = params.k_scaled();
    let next = if f_n < t_min {
        g_size - ks * (t_min - f_n)
    } else if f_n > t_max {
        g_size + ks * (f_n - t_max)
    } else {
        g_size
    };
    let (g_size, clamped) = bounds.clamp(next);
    Step {
        g_size,
        t_min,
        t_max,
        clamped,
    }
}

/// Open proportionally to the remaining normal force.
pub fn release_step(
    params: &ControllerParams,
    bounds: SizeBounds,
    g_size: f64,
    f_n: f64,
    f_t: f64,
) -> Step {
    let t_min = desired_force(params, f_t);
    let next = g_size + params.k_scaled() * f_n.max(0.0);
    let clamped = next > bounds.max;
    Step {
        g_size: next.min(bounds.max),
        t_min,
        t_max: t_min + params.band_width_mn,
        clamped,
    }
}

/// Decide whether the net tangential load comes from gravity or a support.
///
/// A zero vector has no direction and is reported as gravity.
pub fn classify_load(net_tangential: &Vec3, gravity: &Vec3, support_angle_deg: f64) -> LoadClass {
    let n = net_tangential.norm();
    let g = gravity.norm();
    if n <= f64::EPSILON || g <= f64::EPSILON {
        return LoadClass::Gravity;
    }
    let cos = (net_tangential.dot(gravity) / (n * g)).clamp(-1.0, 1.0);
    if cos.acos().to_degrees() > support_angle_deg {
        LoadClass::Support
    } else {
        LoadClass::Gravity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub phase: Phase,
    pub g_size: f64,
    pub filtered: Option<FilteredForces>,
    pub support_evidence_ticks: u32,
    pub detach_ticks: u32,
    /// Release finished: fingertips have let go of the object.
    pub released: bool,
    pub last_thresholds: (f64, f64),
}

/// Everything computed in one tick, one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub t: f64,
    pub phase: Phase,
    pub fn_raw: Vec<f64>,
    pub ft_raw: Vec<f64>,
    pub fn_filt: f64,
    pub ft_filt: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub g_size: f64,
    pub load_class: LoadClass,
    pub clamp_flag: bool,
    pub error: Option<String>,
}

impl TelemetryRecord {
    /// Column names for a hand with the given finger names.
    pub fn header<'a>(fingers: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut cols = vec!["t".to_string(), "phase".to_string()];
        for name in fingers {
            cols.push(format!("fn_raw_{name}"));
            cols.push(format!("ft_raw_{name}"));
        }
        cols.extend(
            [
                "fn_filt",
                "ft_filt",
                "t_min",
                "t_max",
                "g_size",
                "load_class",
                "clamp_flag",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols
    }

    /// Field values in header order. Error rows leave the force columns empty
    /// and report `error` as the load class.
    pub fn fields(&self, n_fingers: usize) -> Vec<String> {
        let mut out = vec![fmt_f64(self.t), self.phase.to_string()];
        if self.error.is_some() {
            out.extend(std::iter::repeat_n(String::new(), 2 * n_fingers + 4));
            out.push(fmt_f64(self.g_size));
            out.push("error".to_string());
            out.push("0".to_string());
            return out;
        }
        for (n, t) in self.fn_raw.iter().zip(&self.ft_raw) {
            out.push(fmt_f64(*n));
            out.push(fmt_f64(*t));
        }
        out.extend(
            [
                self.fn_filt,
                self.ft_filt,
                self.t_min,
                self.t_max,
                self.g_size,
            ]
            .map(fmt_f64),
        );
        out.push(self.load_class.to_string());
        out.push(if self.clamp_flag { "1" } else { "0" }.to_string());
        out
    }
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub context: GraspContext,
    pub joints: JointConfiguration,
    pub record: TelemetryRecord,
    pub phase_changed: bool,
}

/// A rejected tick. The controller state is untouched.
#[derive(Debug)]
pub struct TickFault {
    pub error: Error,
    pub record: TelemetryRecord,
}

impl fmt::Display for TickFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tick at t={} aborted: {}", self.record.t, self.error)
    }
}

impl std::error::Error for TickFault {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// The closed-loop controller: filters, state machine, and posture decoding.
#[derive(Debug, Clone)]
pub struct GripController {
    params: ControllerParams,
    grasp_type: GraspType,
    model: Arc<HandModel>,
    decoder: Arc<SynergyDecoder>,
    latent: LatentPoint,
    bounds: SizeBounds,
    contact: Vec<usize>,
    filters: ForceFilterBank,
    net_filtered: Option<Vec3>,
    state: ControllerState,
    joints: JointConfiguration,
}

impl GripController {
    pub fn new(
        params: ControllerParams,
        grasp_type: GraspType,
        model: Arc<HandModel>,
        decoder: Arc<SynergyDecoder>,
    ) -> Result<Self> {
        let latent = LatentPoint::zeros(decoder.latent_dim());
        Self::with_latent(params, grasp_type, model, decoder, latent)
    }

    pub fn with_latent(
        params: ControllerParams,
        grasp_type: GraspType,
        model: Arc<HandModel>,
        decoder: Arc<SynergyDecoder>,
        latent: LatentPoint,
    ) -> Result<Self> {
        params.validate()?;
        if !decoder.supports(grasp_type) {
            return Err(Error::UnsupportedGraspType(grasp_type.to_string()));
        }
        let bounds = params.size_bounds(decoder.size_range(grasp_type)?)?;
        let contact = model.contact_set(grasp_type);
        let filters = ForceFilterBank::new(
            model.finger_count(),
            contact.clone(),
            params.alpha_n,
            params.alpha_t,
            params.aggregate_first,
        )?;
        let joints = decoder
            .decode(
                &GraspContext {
                    grasp_type,
                    grasp_size: bounds.max,
                },
                &latent,
            )?
            .joints;
        let t0 = desired_force(&params, 0.0);
        Ok(Self {
            state: ControllerState {
                phase: Phase::Grasp,
                g_size: bounds.max,
                filtered: None,
                support_evidence_ticks: 0,
                detach_ticks: 0,
                released: false,
                last_thresholds: (t0, t0 + params.band_width_mn),
            },
            params,
            grasp_type,
            model,
            decoder,
            latent,
            bounds,
            contact,
            filters,
            net_filtered: None,
            joints,
        })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn bounds(&self) -> SizeBounds {
        self.bounds
    }

    pub fn grasp_type(&self) -> GraspType {
        self.grasp_type
    }

    pub fn model(&self) -> &HandModel {
        &self.model
    }

    pub fn joints(&self) -> &JointConfiguration {
        &self.joints
    }

    pub fn contact_set(&self) -> &[usize] {
        &self.contact
    }

    pub fn context(&self) -> GraspContext {
        GraspContext {
            grasp_type: self.grasp_type,
            grasp_size: self.state.g_size,
        }
    }

    /// Re-arm for a new episode: open hand, GRASP phase, empty filters.
    pub fn reset(&mut self) -> Result<()> {
        let fresh = Self::with_latent(
            self.params.clone(),
            self.grasp_type,
            self.model.clone(),
            self.decoder.clone(),
            self.latent.clone(),
        )?;
        *self = fresh;
        Ok(())
    }

    fn fault(&self, t: f64, error: Error) -> TickFault {
        TickFault {
            record: TelemetryRecord {
                t,
                phase: self.state.phase,
                fn_raw: Vec::new(),
                ft_raw: Vec::new(),
                fn_filt: f64::NAN,
                ft_filt: f64::NAN,
                t_min: self.state.last_thresholds.0,
                t_max: self.state.last_thresholds.1,
                g_size: self.state.g_size,
                load_class: LoadClass::Gravity,
                clamp_flag: false,
                error: Some(error.to_string()),
            },
            error,
        }
    }

    /// Run one control period on a full set of fingertip samples.
    pub fn tick(
        &mut self,
        forces: &[FingertipForce],
        hand_pose: &Pose,
    ) -> Result<TickOutput, TickFault> {
        let t = forces.first().map_or(0.0, |f| f.timestamp);
        if let Err(e) = self.model.check_forces(forces) {
            return Err(self.fault(t, e));
        }
        let splits = match forces.iter().map(decompose).collect::<Result<Vec<_>>>() {
            Ok(s) => s,
            Err(e) => return Err(self.fault(t, e)),
        };
        let net =
            match self
                .model
                .world_tangential_of(&self.joints, hand_pose, forces, &self.contact)
            {
                Ok(n) => n,
                Err(e) => return Err(self.fault(t, e)),
            };
        let fn_raw: Vec<f64> = splits.iter().map(|s| s.normal).collect();
        let ft_raw: Vec<f64> = splits.iter().map(|s| s.tangential).collect();
        let filtered = match self.filters.update(&fn_raw, &ft_raw) {
            Ok(f) => f,
            Err(e) => return Err(self.fault(t, e)),
        };

        let a = self.params.alpha_t;
        let net_f = match self.net_filtered {
            None => net,
            Some(prev) => net * a + prev * (1.0 - a),
        };
        self.net_filtered = Some(net_f);
        let load = if net_f.norm() < self.params.support_min_tangential_mn {
            LoadClass::Gravity
        } else {
            classify_load(&net_f, &gravity_dir(), self.params.support_angle_deg)
        };

        let mut phase_changed = false;
        if self.state.phase == Phase::Grasp {
            if load == LoadClass::Support {
                self.state.support_evidence_ticks += 1;
            } else {
                self.state.support_evidence_ticks = 0;
            }
            if self.state.support_evidence_ticks >= self.params.support_dwell_ticks {
                self.state.phase = Phase::Release;
                phase_changed = true;
            }
        }

        let step = match self.state.phase {
            Phase::Grasp => grasp_step(
                &self.params,
                self.bounds,
                self.state.g_size,
                filtered.normal,
                filtered.tangential,
            ),
            Phase::Release if self.state.released => {
                let t_min = desired_force(&self.params, filtered.tangential);
                Step {
                    g_size: self.state.g_size,
                    t_min,
                    t_max: t_min + self.params.band_width_mn,
                    clamped: false,
                }
            }
            Phase::Release => {
                let step = release_step(
                    &self.params,
                    self.bounds,
                    self.state.g_size,
                    filtered.normal,
                    filtered.tangential,
                );
                if filtered.normal < self.params.release_detach_mn {
                    self.state.detach_ticks += 1;
                    if self.state.detach_ticks >= self.params.support_dwell_ticks {
                        self.state.released = true;
                    }
                } else {
                    self.state.detach_ticks = 0;
                }
                step
            }
        };

        self.state.g_size = step.g_size;
        self.state.filtered = Some(filtered);
        self.state.last_thresholds = (step.t_min, step.t_max);
        let context = self.context();
        let decoded = self
            .decoder
            .decode(&context, &self.latent)
            .expect("decoder accepted this grasp type at construction");
        self.joints = decoded.joints.clone();

        Ok(TickOutput {
            context,
            joints: decoded.joints,
            phase_changed,
            record: TelemetryRecord {
                t,
                phase: self.state.phase,
                fn_raw,
                ft_raw,
                fn_filt: filtered.normal,
                ft_filt: filtered.tangential,
                t_min: step.t_min,
                t_max: step.t_max,
                g_size: step.g_size,
                load_class: load,
                clamp_flag: step.clamped || decoded.size_clamped,
                error: None,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bounds() -> SizeBounds {
        SizeBounds {
            min: 0.01,
            max: 0.1,
        }
    }

    #[test]
    fn desired_force_examples() {
        let p = ControllerParams::default();
        assert_eq!(desired_force(&p, 0.0), 50.0);
        assert_eq!(desired_force(&p, 1000.0), 2050.0);
        let off = ControllerParams { gain: 0.0, ..p };
        assert_eq!(desired_force(&off, 1234.0), 50.0);
    }

    #[test]
    fn grasp_step_branches() {
        let p = ControllerParams::default();
        let ks = p.k_scaled();
        // lower band edge is inside
        assert_eq!(grasp_step(&p, bounds(), 0.05, 50.0, 0.0).g_size, 0.05);
        // upper edge too
        assert_eq!(grasp_step(&p, bounds(), 0.05, 150.0, 0.0).g_size, 0.05);

        let s = grasp_step(&p, bounds(), 0.05, 0.0, 0.0);
        assert_abs_diff_eq!(s.g_size, 0.05 - ks * 50.0, epsilon = 1e-15);
        assert!(!s.clamped);

        let s = grasp_step(&p, bounds(), 0.05, 160.0, 0.0);
        assert_abs_diff_eq!(s.g_size, 0.05 + ks * 10.0, epsilon = 1e-15);
        assert_eq!((s.t_min, s.t_max), (50.0, 150.0));
    }

    #[test]
    fn grasp_step_clamps() {
        let p = ControllerParams::default();
        let s = grasp_step(&p, bounds(), 0.0100001, 0.0, 1e4);
        assert_eq!(s.g_size, 0.01);
        assert!(s.clamped);
    }

    #[test]
    fn release_step_examples() {
        let p = ControllerParams::default();
        assert_eq!(release_step(&p, bounds(), 0.05, 0.0, 0.0).g_size, 0.05);
        assert_abs_diff_eq!(
            release_step(&p, bounds(), 0.05, 50.0, 0.0).g_size,
            0.05 + p.k_scaled() * 50.0,
            epsilon = 1e-15
        );
        let mut g = 0.03;
        let mut prev = g;
        for k in 0..200 {
            g = release_step(&p, bounds(), g, 500.0 * 0.9f64.powi(k), 0.0).g_size;
            assert!(g >= prev);
            prev = g;
        }
        assert!(g <= 0.1);
    }

    #[test]
    fn classify_examples() {
        let down = Vec3::new(0.0, 0.0, -1.0);
        assert_eq!(
            classify_load(&Vec3::new(0.0, 0.0, -1.0), &down, 90.0),
            LoadClass::Gravity
        );
        assert_eq!(
            classify_load(&Vec3::new(0.0, 0.0, 1.0), &down, 90.0),
            LoadClass::Support
        );
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(
            classify_load(&Vec3::new(s, 0.0, -s), &down, 90.0),
            LoadClass::Gravity
        );
        assert_eq!(
            classify_load(&Vec3::zeros(), &down, 90.0),
            LoadClass::Gravity
        );
    }

    #[test]
    fn params_validation() {
        assert!(ControllerParams::default().validate().is_ok());
        for bad in [
            ControllerParams {
                alpha_t: 1.0,
                ..Default::default()
            },
            ControllerParams {
                k: 0.0,
                ..Default::default()
            },
            ControllerParams {
                band_width_mn: -1.0,
                ..Default::default()
            },
            ControllerParams {
                g_min: Some(0.1),
                g_max: Some(0.05),
                ..Default::default()
            },
            ControllerParams {
                support_dwell_ticks: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn header_matches_fields() {
        let rec = TelemetryRecord {
            t: 0.0,
            phase: Phase::Grasp,
            fn_raw: vec![1.0, 2.0],
            ft_raw: vec![0.0, 0.5],
            fn_filt: 1.5,
            ft_filt: 0.25,
            t_min: 50.5,
            t_max: 150.5,
            g_size: 0.09,
            load_class: LoadClass::Gravity,
            clamp_flag: false,
            error: None,
        };
        let header = TelemetryRecord::header(["thumb", "index"]);
        assert_eq!(header.len(), rec.fields(2).len());
        let err = TelemetryRecord {
            error: Some("x".into()),
            ..rec
        };
        assert_eq!(header.len(), err.fields(2).len());
    }
}
