use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use synergrip_ffi::*;

const IDENTITY: SgPose = SgPose {
    rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    translation: [0.0; 3],
};

fn zero_forces(n: usize) -> Vec<SgForce> {
    (0..n)
        .map(|i| SgForce {
            fingertip_id: i,
            fx: 0.0,
            fy: 0.0,
            fz: 0.0,
        })
        .collect()
}

fn new_ctrl(gt: SgGraspType) -> *mut SgController {
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { sg_controller_new_default(gt, &mut c) },
        SgStatus::Ok
    );
    assert!(!c.is_null());
    c
}

fn last_error() -> String {
    let p = sg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(sg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn zero_force_closes_until_clamp() {
    let c = new_ctrl(SgGraspType::Tripod);
    let n = unsafe { sg_controller_finger_count(c) };
    assert_eq!(n, 3);
    let forces = zero_forces(n);
    let mut cmd = SgCommand {
        t: 0.0,
        grasp_size_m: 0.0,
        phase: SgPhase::Grasp,
        released: false,
        t_min_mn: 0.0,
        t_max_mn: 0.0,
    };
    let mut prev = f64::INFINITY;
    for k in 0..400 {
        let st = unsafe {
            sg_controller_tick(c, k as f64 * 0.02, &IDENTITY, forces.as_ptr(), n, &mut cmd)
        };
        assert_eq!(st, SgStatus::Ok);
        assert!(cmd.grasp_size_m <= prev);
        assert_eq!(cmd.phase, SgPhase::Grasp);
        prev = cmd.grasp_size_m;
    }
    let mut again = cmd;
    unsafe { sg_controller_tick(c, 8.0, &IDENTITY, forces.as_ptr(), n, &mut again) };
    assert_eq!(
        again.grasp_size_m, cmd.grasp_size_m,
        "clamped at the lower bound"
    );

    let mut q = vec![0.0; unsafe { sg_controller_joint_count(c) }];
    assert_eq!(
        unsafe { sg_controller_joints(c, q.as_mut_ptr(), q.len()) },
        SgStatus::Ok
    );
    assert!(q.iter().all(|v| v.is_finite()));
    assert_eq!(
        unsafe { sg_controller_joints(c, q.as_mut_ptr(), 2) },
        SgStatus::InvalidArgument
    );

    assert_eq!(unsafe { sg_controller_reset(c) }, SgStatus::Ok);
    unsafe { sg_controller_tick(c, 0.0, &IDENTITY, forces.as_ptr(), n, &mut cmd) };
    assert!(cmd.grasp_size_m > again.grasp_size_m);
    unsafe { sg_controller_free(c) };
}

#[test]
fn bad_samples_report_status_and_message() {
    let c = new_ctrl(SgGraspType::Pinch);
    let mut cmd = std::mem::MaybeUninit::<SgCommand>::uninit();
    let forces = zero_forces(2);
    let st = unsafe { sg_controller_tick(c, 0.0, &IDENTITY, forces.as_ptr(), 2, cmd.as_mut_ptr()) };
    assert_eq!(st, SgStatus::RejectedSample);
    assert!(last_error().contains("3 fingertips"), "{}", last_error());

    let mut nan = zero_forces(3);
    nan[1].fz = f64::NAN;
    let st = unsafe { sg_controller_tick(c, 0.0, &IDENTITY, nan.as_ptr(), 3, cmd.as_mut_ptr()) };
    assert_eq!(st, SgStatus::RejectedSample);

    let skew = SgPose {
        rotation: [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        translation: [0.0; 3],
    };
    let st = unsafe { sg_controller_tick(c, 0.0, &skew, forces.as_ptr(), 3, cmd.as_mut_ptr()) };
    assert_eq!(st, SgStatus::InvalidArgument);

    let st =
        unsafe { sg_controller_tick(c, 0.0, ptr::null(), forces.as_ptr(), 3, cmd.as_mut_ptr()) };
    assert_eq!(st, SgStatus::NullPointer);
    unsafe { sg_controller_free(c) };
    unsafe { sg_controller_free(ptr::null_mut()) };
}

#[test]
fn decompose_matches_core() {
    let (mut n, mut t) = (0.0, 0.0);
    assert_eq!(
        unsafe { sg_decompose(3.0, 4.0, -10.0, &mut n, &mut t) },
        SgStatus::Ok
    );
    assert_eq!((n, t), (10.0, 5.0));
    assert_eq!(
        unsafe { sg_decompose(f64::NAN, 0.0, 0.0, &mut n, &mut t) },
        SgStatus::RejectedSample
    );
    assert_eq!(
        unsafe { sg_decompose(0.0, 0.0, 0.0, ptr::null_mut(), &mut t) },
        SgStatus::NullPointer
    );
}

#[test]
fn constructor_from_files_reports_missing_file() {
    let hand = CString::new("/nonexistent/hand.json").unwrap();
    let mut c = ptr::null_mut();
    let st = unsafe {
        sg_controller_new_from_files(
            hand.as_ptr(),
            ptr::null(),
            ptr::null(),
            SgGraspType::Tripod,
            &mut c,
        )
    };
    assert_eq!(st, SgStatus::Io);
    assert!(c.is_null());
    let st = unsafe {
        sg_controller_new_from_files(
            ptr::null(),
            ptr::null(),
            ptr::null(),
            SgGraspType::Tripod,
            &mut c,
        )
    };
    assert_eq!(st, SgStatus::NullPointer);
}

#[test]
fn constructor_from_files_with_params() {
    let dir = std::env::temp_dir().join(format!("sg-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let hand = dir.join("hand.json");
    std::fs::write(&hand, include_str!("../../core/data/default_hand.json")).unwrap();
    let params = dir.join("params.json");
    std::fs::write(&params, r#"{"gain": 3.0, "band_width_mn": 80}"#).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"alpha_n": 1.5}"#).unwrap();

    let h = CString::new(hand.to_str().unwrap()).unwrap();
    let p = CString::new(params.to_str().unwrap()).unwrap();
    let b = CString::new(bad.to_str().unwrap()).unwrap();
    let mut c = ptr::null_mut();
    let st = unsafe {
        sg_controller_new_from_files(
            h.as_ptr(),
            ptr::null(),
            p.as_ptr(),
            SgGraspType::LateralTripod,
            &mut c,
        )
    };
    assert_eq!(st, SgStatus::Ok);
    let forces = zero_forces(3);
    let mut cmd = std::mem::MaybeUninit::<SgCommand>::uninit();
    unsafe { sg_controller_tick(c, 0.0, &IDENTITY, forces.as_ptr(), 3, cmd.as_mut_ptr()) };
    let cmd = unsafe { cmd.assume_init() };
    assert_eq!(cmd.t_max_mn - cmd.t_min_mn, 80.0);
    unsafe { sg_controller_free(c) };

    let mut c = ptr::null_mut();
    let st = unsafe {
        sg_controller_new_from_files(
            h.as_ptr(),
            ptr::null(),
            b.as_ptr(),
            SgGraspType::Tripod,
            &mut c,
        )
    };
    assert_eq!(st, SgStatus::InvalidArgument);
    assert!(last_error().contains("alpha"), "{}", last_error());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/synergrip.h");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let src = format!("#include \"{header}\"\nint main(void) {{ SgController *c = 0; return sg_controller_new_default(SG_GRASP_TYPE_TRIPOD, &c); }}\n");
    let file = std::env::temp_dir().join(format!("sg-header-{}.c", std::process::id()));
    std::fs::write(&file, src).unwrap();
    match Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&file)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
    std::fs::remove_file(file).ok();
}
