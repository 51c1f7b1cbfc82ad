//! C ABI over the synergrip controller.
//!
//! Handles are opaque; every call returns an [`SgStatus`]. On failure the
//! message is kept per thread and read back with [`sg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use synergrip::controller::{ControllerParams, GripController, Phase};
use synergrip::kinematics::HandModel;
use synergrip::synergy::SynergyDecoder;
use synergrip::units::{decompose, FingertipForce, GraspType, Pose, Vec3};
use synergrip::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidModel = 5,
    RejectedSample = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgGraspType {
    Tripod = 0,
    Pinch = 1,
    LateralTripod = 2,
}

impl From<SgGraspType> for GraspType {
    fn from(g: SgGraspType) -> Self {
        match g {
            SgGraspType::Tripod => GraspType::Tripod,
            SgGraspType::Pinch => GraspType::Pinch,
            SgGraspType::LateralTripod => GraspType::LateralTripod,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgPhase {
    Grasp = 0,
    Release = 1,
}

/// Rigid transform: row-major rotation matrix and translation in metres.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgPose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// One fingertip sample in the fingertip frame, mN. +z points out of the pad.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgForce {
    pub fingertip_id: usize,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
}

/// Result of one tick. Joint angles are read with `sg_controller_joints`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgCommand {
    pub t: f64,
    pub grasp_size_m: f64,
    pub phase: SgPhase,
    pub released: bool,
    pub t_min_mn: f64,
    pub t_max_mn: f64,
}

/// Opaque controller handle.
pub struct SgController {
    inner: GripController,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SgStatus {
    match e {
        Error::Io(_) => SgStatus::Io,
        Error::Json { .. } | Error::Csv(_) | Error::Protocol(_) => SgStatus::Parse,
        Error::RejectedSample(_) | Error::SensorCount { .. } => SgStatus::RejectedSample,
        Error::InvalidHand(_)
        | Error::MissingTag(_)
        | Error::InvalidDecoder(_)
        | Error::JointCount { .. }
        | Error::JointLimit { .. }
        | Error::UnsupportedGraspType(_) => SgStatus::InvalidModel,
        _ => SgStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SgStatus, String)>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgStatus::Panic
        }
    }
}

fn fail(e: Error) -> (SgStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SgStatus, String) {
    (SgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, (SgStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (SgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

fn build(
    model: HandModel,
    decoder: Option<SynergyDecoder>,
    params: ControllerParams,
    grasp_type: SgGraspType,
) -> Result<Box<SgController>, (SgStatus, String)> {
    let decoder = match decoder {
        Some(d) => d,
        None => SynergyDecoder::default_for(&model).map_err(fail)?,
    };
    let inner = GripController::new(
        params,
        grasp_type.into(),
        Arc::new(model),
        Arc::new(decoder),
    )
    .map_err(fail)?;
    Ok(Box::new(SgController { inner }))
}

/// Controller on the bundled hand with default parameters.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sg_controller_new_default(
    grasp_type: SgGraspType,
    out: *mut *mut SgController,
) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = build(
            HandModel::default_hand(),
            None,
            ControllerParams::default(),
            grasp_type,
        )?;
        *out = Box::into_raw(c);
        Ok(())
    })
}

/// Controller from files. `decoder_path` and `params_path` may be NULL for
/// the bundled synergy and default parameters. `params_path` is a JSON object
/// with controller parameter fields.
///
/// # Safety
/// Non-NULL strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_controller_new_from_files(
    hand_path: *const c_char,
    decoder_path: *const c_char,
    params_path: *const c_char,
    grasp_type: SgGraspType,
    out: *mut *mut SgController,
) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = HandModel::load(path_arg(hand_path, "hand_path")?).map_err(fail)?;
        let decoder = if decoder_path.is_null() {
            None
        } else {
            Some(
                SynergyDecoder::load(path_arg(decoder_path, "decoder_path")?, &model)
                    .map_err(fail)?,
            )
        };
        let params = if params_path.is_null() {
            ControllerParams::default()
        } else {
            let p = path_arg(params_path, "params_path")?;
            let text = std::fs::read_to_string(p).map_err(|e| fail(e.into()))?;
            serde_json_params(&text, p)?
        };
        *out = Box::into_raw(build(model, decoder, params, grasp_type)?);
        Ok(())
    })
}

fn serde_json_params(text: &str, p: &Path) -> Result<ControllerParams, (SgStatus, String)> {
    ControllerParams::from_json_str(text)
        .map_err(|e| (status_of(&e), format!("{}: {e}", p.display())))
}

/// Free a handle. NULL is ignored.
///
/// # Safety
/// `ctrl` must come from a constructor above and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_controller_free(ctrl: *mut SgController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Number of fingertips the controller expects per tick.
///
/// # Safety
/// `ctrl` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sg_controller_finger_count(ctrl: *const SgController) -> usize {
    ctrl.as_ref().map_or(0, |c| c.inner.model().finger_count())
}

/// Number of joint angles in a command.
///
/// # Safety
/// `ctrl` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sg_controller_joint_count(ctrl: *const SgController) -> usize {
    ctrl.as_ref().map_or(0, |c| c.inner.model().joint_count())
}

/// Run one control period. `forces` holds one sample per fingertip, ordered
/// by fingertip id, all taken at time `t`. On `SG_STATUS_REJECTED_SAMPLE` the
/// controller keeps its previous command and `out` still describes it.
///
/// # Safety
/// Pointers must be valid; `forces` must point to `n_forces` elements.
#[no_mangle]
pub unsafe extern "C" fn sg_controller_tick(
    ctrl: *mut SgController,
    t: f64,
    hand_pose: *const SgPose,
    forces: *const SgForce,
    n_forces: usize,
    out: *mut SgCommand,
) -> SgStatus {
    guard(|| {
        let c = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        let pose = hand_pose.as_ref().ok_or_else(|| null("hand_pose"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if forces.is_null() && n_forces > 0 {
            return Err(null("forces"));
        }
        let samples: &[SgForce] = if n_forces == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(forces, n_forces)
        };
        let r = pose.rotation;
        let pose = Pose::from_matrix(
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            Vec3::from(pose.translation),
        )
        .map_err(fail)?;
        let forces: Vec<FingertipForce> = samples
            .iter()
            .map(|f| FingertipForce::new(f.fingertip_id, Vec3::new(f.fx, f.fy, f.fz), t))
            .collect();
        let result = c.inner.tick(&forces, &pose);
        let state = c.inner.state();
        *out = SgCommand {
            t,
            grasp_size_m: state.g_size,
            phase: match state.phase {
                Phase::Grasp => SgPhase::Grasp,
                Phase::Release => SgPhase::Release,
            },
            released: state.released,
            t_min_mn: state.last_thresholds.0,
            t_max_mn: state.last_thresholds.1,
        };
        result.map(|_| ()).map_err(|fault| fail(fault.error))
    })
}

/// Copy the current joint command into `out` (`len` must be at least the joint count).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_controller_joints(
    ctrl: *const SgController,
    out: *mut f64,
    len: usize,
) -> SgStatus {
    guard(|| {
        let c = ctrl.as_ref().ok_or_else(|| null("ctrl"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let q = &c.inner.joints().0;
        if len < q.len() {
            return Err((
                SgStatus::InvalidArgument,
                format!("buffer holds {len}, need {}", q.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, q.len()).copy_from_slice(q);
        Ok(())
    })
}

/// Re-arm for a new grasp: open hand, GRASP phase, empty filters.
///
/// # Safety
/// `ctrl` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_controller_reset(ctrl: *mut SgController) -> SgStatus {
    guard(|| {
        let c = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        c.inner.reset().map_err(fail)
    })
}

/// Split a fingertip-frame force into normal and tangential magnitudes (mN).
///
/// # Safety
/// `normal` and `tangential` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_decompose(
    fx: f64,
    fy: f64,
    fz: f64,
    normal: *mut f64,
    tangential: *mut f64,
) -> SgStatus {
    guard(|| {
        if normal.is_null() || tangential.is_null() {
            return Err(null("output"));
        }
        let s = decompose(&FingertipForce::new(0, Vec3::new(fx, fy, fz), 0.0)).map_err(fail)?;
        *normal = s.normal;
        *tangential = s.tangential;
        Ok(())
    })
}
