//! CSV recordings written by an episode.
//!
//! * `telemetry.csv`: one controller tick per row, see [`TelemetryRecord::header`].
//!   Columns: `t, phase, fn_raw_<finger>, ft_raw_<finger>` for every finger in
//!   model order, then `fn_filt, ft_filt, t_min, t_max, g_size, load_class, clamp_flag`.
//! * `sensors.csv`: what the controller saw. `t, reset, r00..r22, px, py, pz`
//!   (hand pose, row-major rotation) then `fx_<finger>, fy_<finger>, fz_<finger>`.
//!   This is the stream `replay` feeds through the bridge.
//! * `sim.csv`: ground truth from the contact model, one row per tick.
//!
//! Floats are written in shortest round-trip form so a recording parses back
//! to the exact bits that produced it.

use std::io::{Read, Write};

use crate::contact::ObjectStatus;
use crate::controller::{fmt_f64, TelemetryRecord};
use crate::error::{Error, Result};
use crate::units::{FingertipForce, Pose, Vec3};

/// One controller input: hand pose plus every fingertip sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecord {
    pub t: f64,
    /// The controller was re-armed just before this tick.
    pub reset: bool,
    pub hand_pose: Pose,
    pub forces: Vec<FingertipForce>,
}

/// Ground-truth state of the simulated object for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub mass_kg: f64,
    pub external_load: Vec3,
    pub supported: bool,
    pub achieved_size: f64,
    pub penetration: f64,
    pub sum_normal: f64,
    pub sum_required: f64,
    pub sum_transmitted: f64,
    pub status: ObjectStatus,
    pub slip_accum_m: f64,
    pub position: Vec3,
}

pub const SIM_HEADER: [&str; 16] = [
    "t",
    "mass_kg",
    "ext_x",
    "ext_y",
    "ext_z",
    "supported",
    "achieved_size",
    "penetration",
    "sum_fn",
    "sum_ft_req",
    "sum_ft_tx",
    "status",
    "slip_accum",
    "pos_x",
    "pos_y",
    "pos_z",
];

pub fn write_telemetry<W: Write>(out: W, fingers: &[&str], rows: &[TelemetryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TelemetryRecord::header(fingers.iter().copied()))?;
    for r in rows {
        w.write_record(r.fields(fingers.len()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sensor_header(fingers: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = [
        "t", "reset", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "px", "py",
        "pz",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for f in fingers {
        for axis in ["fx", "fy", "fz"] {
            h.push(format!("{axis}_{f}"));
        }
    }
    h
}

pub fn write_sensors<W: Write>(out: W, fingers: &[&str], rows: &[SensorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sensor_header(fingers))?;
    for r in rows {
        let mut rec = vec![fmt_f64(r.t), if r.reset { "1" } else { "0" }.to_string()];
        rec.extend(r.hand_pose.rows().iter().flatten().map(|v| fmt_f64(*v)));
        rec.extend(r.hand_pose.translation.iter().map(|v| fmt_f64(*v)));
        for f in &r.forces {
            rec.extend(f.raw.iter().map(|v| fmt_f64(*v)));
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, row: usize, col: usize) -> Result<f64> {
    field.parse().map_err(|_| {
        Error::Protocol(format!(
            "row {row}, column {col}: `{field}` is not a number"
        ))
    })
}

/// Read a `sensors.csv` recording back.
pub fn read_sensors<R: Read>(input: R) -> Result<Vec<SensorRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 14 || (header.len() - 14) % 3 != 0 || header.get(0) != Some("t") {
        return Err(Error::Protocol(format!(
            "not a sensor recording: unexpected header with {} columns",
            header.len()
        )));
    }
    let n_fingers = (header.len() - 14) / 3;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(col, s)| parse_f64(s, row + 2, col + 1))
            .collect::<Result<_>>()?;
        let rot = [[v[2], v[3], v[4]], [v[5], v[6], v[7]], [v[8], v[9], v[10]]];
        let hand_pose = Pose::from_matrix(rot, Vec3::new(v[11], v[12], v[13]))?;
        let t = v[0];
        let forces = (0..n_fingers)
            .map(|i| {
                FingertipForce::new(i, Vec3::new(v[14 + 3 * i], v[15 + 3 * i], v[16 + 3 * i]), t)
            })
            .collect();
        out.push(SensorRecord {
            t,
            reset: v[1] != 0.0,
            hand_pose,
            forces,
        });
    }
    Ok(out)
}

pub fn write_sim<W: Write>(out: W, rows: &[SimRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SIM_HEADER)?;
    for r in rows {
        let mut rec = vec![fmt_f64(r.t), fmt_f64(r.mass_kg)];
        rec.extend(r.external_load.iter().map(|v| fmt_f64(*v)));
        rec.push(if r.supported { "1" } else { "0" }.to_string());
        rec.extend(
            [
                r.achieved_size,
                r.penetration,
                r.sum_normal,
                r.sum_required,
                r.sum_transmitted,
            ]
            .map(fmt_f64),
        );
        rec.push(r.status.as_str().to_string());
        rec.push(fmt_f64(r.slip_accum_m));
        rec.extend(r.position.iter().map(|v| fmt_f64(*v)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pull one numeric column out of a telemetry CSV by name.
pub fn read_column<R: Read>(input: R, name: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(input);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Protocol(format!("no column `{name}`")))?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        out.push(parse_f64(&rec[idx], row + 2, idx + 1)?);
    }
    Ok(out)
}
