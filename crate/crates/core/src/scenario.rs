//! Scripted episodes: load a scenario, wire the controller to the simulated
//! hand and object, step both at the tick rate, and grade the outcome.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contact::{
    EventKind, ObjectSpec, ObjectStatus, SensorModel, SimObject, SlipParams, World,
};
use crate::controller::{ControllerParams, GripController, Phase, TelemetryRecord};
use crate::error::{Error, Result};
use crate::kinematics::HandModel;
use crate::synergy::SynergyDecoder;
use crate::telemetry::{write_sensors, write_sim, write_telemetry, SensorRecord, SimRecord};
use crate::units::{GraspType, Pose, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub t_s: f64,
    pub translation: [f64; 3],
    /// Roll, pitch, yaw in radians.
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub t_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Pass/fail checks a script asks for on top of the always-on ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    pub never_dropped: bool,
    pub max_slip_m: Option<f64>,
    pub release_transitions: Option<usize>,
    pub final_status: Option<ObjectStatus>,
    /// The controller finished opening (normal force decayed below the detach level).
    pub released: Option<bool>,
}

impl Default for Expectations {
    fn default() -> Self {
        Self {
            never_dropped: true,
            max_slip_m: None,
            release_transitions: None,
            final_status: None,
            released: None,
        }
    }
}

fn default_tick_hz() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    pub duration_s: f64,
    #[serde(default = "default_tick_hz")]
    pub tick_hz: f64,
    #[serde(default)]
    pub seed: u64,
    pub grasp_type: GraspType,
    pub object: ObjectSpec,
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub slip: SlipParams,
    #[serde(default)]
    pub hand_pose: Vec<Keyframe>,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
    #[serde(default)]
    pub expect: Expectations,
}

impl ScenarioScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<script>".into(),
            source,
        })
    }

    fn ticks(&self) -> usize {
        (self.duration_s * self.tick_hz + 1e-9).floor() as usize + 1
    }

    /// Hand pose at time `t`, interpolated between keyframes.
    pub fn hand_pose_at(&self, t: f64) -> Pose {
        let frames = &self.hand_pose;
        let pose = |k: &Keyframe| Pose::from_rpy(k.rpy, Vec3::from(k.translation));
        match frames.as_slice() {
            [] => Pose::identity(),
            [first, ..] if t <= first.t_s => pose(first),
            [.., last] if t >= last.t_s => pose(last),
            _ => {
                let i = frames.partition_point(|k| k.t_s <= t);
                let (a, b) = (&frames[i - 1], &frames[i]);
                let s = (t - a.t_s) / (b.t_s - a.t_s);
                pose(a).interpolate(&pose(b), s)
            }
        }
    }
}

fn finite(v: f64) -> bool {
    v.is_finite()
}

/// Structural and range checks. Collects every problem instead of stopping at the first.
pub fn validate_script(script: &ScenarioScript) -> std::result::Result<(), Vec<String>> {
    let mut errs = Vec::new();
    if script.name.trim().is_empty() {
        errs.push("name is empty".to_string());
    }
    if !(script.duration_s > 0.0 && finite(script.duration_s)) {
        errs.push(format!("duration_s {} must be > 0", script.duration_s));
    }
    if !(script.tick_hz > 0.0 && finite(script.tick_hz)) {
        errs.push(format!("tick_hz {} must be > 0", script.tick_hz));
    }
    errs.extend(script.object.validate());
    if let Err(Error::InvalidParams(msg)) = script.controller.validate() {
        errs.push(format!("controller: {msg}"));
    }
    let s = &script.sensor;
    if !(s.rate_hz > 0.0 && finite(s.rate_hz)) {
        errs.push(format!("sensor.rate_hz {} must be > 0", s.rate_hz));
    }
    if !(s.noise_std_mn >= 0.0 && finite(s.noise_std_mn)) {
        errs.push(format!(
            "sensor.noise_std_mn {} must be >= 0",
            s.noise_std_mn
        ));
    }
    if !(s.quantization_mn >= 0.0 && finite(s.quantization_mn)) {
        errs.push(format!(
            "sensor.quantization_mn {} must be >= 0",
            s.quantization_mn
        ));
    }
    if !(script.slip.c_slip > 0.0 && script.slip.drop_threshold_m > 0.0) {
        errs.push("slip.c_slip and slip.drop_threshold_m must be > 0".to_string());
    }
    for (i, k) in script.hand_pose.iter().enumerate() {
        if !k
            .translation
            .iter()
            .chain(&k.rpy)
            .chain([&k.t_s])
            .all(|v| v.is_finite())
        {
            errs.push(format!("hand_pose[{i}] has non-finite values"));
        }
        if i > 0 && k.t_s <= script.hand_pose[i - 1].t_s {
            errs.push(format!(
                "hand_pose[{i}].t_s = {} is not after hand_pose[{}].t_s = {}",
                k.t_s,
                i - 1,
                script.hand_pose[i - 1].t_s
            ));
        }
    }
    for (i, e) in script.events.iter().enumerate() {
        if !(e.t_s >= 0.0 && e.t_s <= script.duration_s) {
            errs.push(format!(
                "events[{i}].t_s = {} lies outside [0, {}]",
                e.t_s, script.duration_s
            ));
        }
        let bad = match &e.kind {
            EventKind::Lift { ramp_s } => !(*ramp_s >= 0.0 && finite(*ramp_s)),
            EventKind::Move {
                accel_mps2,
                duration_s,
            } => {
                !(*duration_s >= 0.0 && finite(*duration_s))
                    || !accel_mps2.iter().all(|v| v.is_finite())
            }
            EventKind::AddMass { mass_kg } => !finite(*mass_kg),
            EventKind::SupportContact { push_mn, ramp_s }
            | EventKind::PullUp { push_mn, ramp_s } => {
                !(*push_mn >= 0.0 && finite(*push_mn) && *ramp_s >= 0.0 && finite(*ramp_s))
            }
            EventKind::Reset => false,
        };
        if bad {
            errs.push(format!("events[{i}] has an invalid payload"));
        }
        if i > 0 && e.t_s < script.events[i - 1].t_s {
            errs.push(format!("events[{i}] is earlier than events[{}]", i - 1));
        }
    }
    if let Some(m) = script.expect.max_slip_m {
        if !(m > 0.0) {
            errs.push(format!("expect.max_slip_m {m} must be > 0"));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Hand model and posture decoder shared by every episode.
#[derive(Debug, Clone)]
pub struct Rig {
    pub model: Arc<HandModel>,
    pub decoder: Arc<SynergyDecoder>,
}

impl Rig {
    pub fn new(model: HandModel, decoder: SynergyDecoder) -> Self {
        Self {
            model: Arc::new(model),
            decoder: Arc::new(decoder),
        }
    }

    /// The bundled hand with its analytic synergy.
    pub fn bundled() -> Self {
        let model = HandModel::default_hand();
        let decoder =
            SynergyDecoder::default_for(&model).expect("bundled synergy matches bundled hand");
        Self::new(model, decoder)
    }

    pub fn finger_names(&self) -> Vec<&str> {
        self.model.fingers.iter().map(|f| f.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub t_start: f64,
}

/// Time windows of the four task stages; `None` when a stage never happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stages {
    pub grasp: Option<[f64; 2]>,
    pub lift: Option<[f64; 2]>,
    pub transport: Option<[f64; 2]>,
    pub release: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub name: String,
    pub seed: u64,
    pub grasp_type: GraspType,
    pub verdict: Verdict,
    pub criteria: BTreeMap<String, bool>,
    pub phase_timeline: Vec<PhaseSpan>,
    pub release_transitions: usize,
    pub slip_accum_max: f64,
    pub final_status: ObjectStatus,
    pub released: bool,
    pub stages: Stages,
    pub ticks: usize,
    pub faults: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub telemetry_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary_json: Option<PathBuf>,
}

/// Full in-memory trace of an episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub report: EpisodeReport,
    pub telemetry: Vec<TelemetryRecord>,
    pub sensors: Vec<SensorRecord>,
    pub sim: Vec<SimRecord>,
}

/// Step controller and simulator for the whole script, in memory.
pub fn simulate(script: &ScenarioScript, rig: &Rig) -> Result<Episode> {
    validate_script(script).map_err(Error::InvalidScenario)?;
    let mut controller = GripController::new(
        script.controller.clone(),
        script.grasp_type,
        rig.model.clone(),
        rig.decoder.clone(),
    )?;
    let mut world = World::new(
        SimObject::from_spec(&script.object),
        script.sensor.clone(),
        script.slip.clone(),
        script.seed,
    )?;
    let dt = 1.0 / script.tick_hz;
    let n = script.ticks();
    let mut telemetry = Vec::with_capacity(n);
    let mut sensors = Vec::with_capacity(n);
    let mut sim = Vec::with_capacity(n);
    let mut next_event = 0;
    let mut faults = 0;
    let mut dropped_ever = false;
    let mut timeline = vec![PhaseSpan {
        phase: Phase::Grasp,
        t_start: 0.0,
    }];

    for k in 0..n {
        let t = k as f64 * dt;
        let mut reset = false;
        while let Some(ev) = script.events.get(next_event) {
            if ev.t_s > t + 1e-9 {
                break;
            }
            log::debug!("t={t:.3}: event {:?}", ev.kind);
            match ev.kind {
                EventKind::Reset => {
                    controller.reset()?;
                    reset = true;
                    timeline.push(PhaseSpan {
                        phase: Phase::Grasp,
                        t_start: t,
                    });
                }
                ref kind => world.apply_event(ev.t_s, kind),
            }
            next_event += 1;
        }

        let pose = script.hand_pose_at(t);
        let step = world.step(
            t,
            dt,
            &controller.context(),
            &rig.model,
            &rig.decoder,
            &pose,
        )?;
        dropped_ever |= step.status == ObjectStatus::Dropped;
        sensors.push(SensorRecord {
            t,
            reset,
            hand_pose: pose,
            forces: step.readings.clone(),
        });
        sim.push(SimRecord {
            t,
            mass_kg: world.object.mass_kg,
            external_load: step.external_load,
            supported: world.object.supported,
            achieved_size: step.contact.achieved_size,
            penetration: step.contact.penetration,
            sum_normal: step.contact.total_normal(),
            sum_required: step.contact.total_required(),
            sum_transmitted: step.contact.total_transmitted(),
            status: step.status,
            slip_accum_m: world.object.slip_accum_m,
            position: world.object.position,
        });
        match controller.tick(&step.readings, &pose) {
            Ok(out) => {
                if out.phase_changed {
                    log::info!("t={t:.3}: {} -> {}", Phase::Grasp, out.record.phase);
                    timeline.push(PhaseSpan {
                        phase: out.record.phase,
                        t_start: t,
                    });
                }
                telemetry.push(out.record);
            }
            Err(fault) => {
                log::warn!("{fault}");
                faults += 1;
                telemetry.push(fault.record);
            }
        }
    }

    let report = grade(
        script,
        &controller,
        &telemetry,
        &sim,
        timeline,
        faults,
        dropped_ever,
    );
    Ok(Episode {
        report,
        telemetry,
        sensors,
        sim,
    })
}

fn grade(
    script: &ScenarioScript,
    controller: &GripController,
    telemetry: &[TelemetryRecord],
    sim: &[SimRecord],
    timeline: Vec<PhaseSpan>,
    faults: usize,
    dropped_ever: bool,
) -> EpisodeReport {
    let bounds = controller.bounds();
    let slip_max = sim.iter().map(|r| r.slip_accum_m).fold(0.0, f64::max);
    let final_status = sim.last().map_or(ObjectStatus::OnSupport, |r| r.status);
    let release_transitions = timeline
        .iter()
        .filter(|s| s.phase == Phase::Release)
        .count();
    let released = controller.state().released;

    let mut criteria = BTreeMap::new();
    criteria.insert("no_faults".to_string(), faults == 0);
    criteria.insert(
        "grasp_size_in_bounds".to_string(),
        telemetry
            .iter()
            .all(|r| r.g_size >= bounds.min && r.g_size <= bounds.max),
    );
    let release_sizes: Vec<f64> = telemetry
        .iter()
        .filter(|r| r.phase == Phase::Release && r.error.is_none())
        .map(|r| r.g_size)
        .collect();
    criteria.insert(
        "release_non_decreasing".to_string(),
        release_sizes.windows(2).all(|w| w[1] >= w[0]),
    );
    let limit = script
        .expect
        .max_slip_m
        .unwrap_or(script.slip.drop_threshold_m);
    criteria.insert("slip_below_limit".to_string(), slip_max < limit);
    if script.expect.never_dropped {
        criteria.insert("never_dropped".to_string(), !dropped_ever);
    }
    if let Some(n) = script.expect.release_transitions {
        criteria.insert("release_transitions".to_string(), release_transitions == n);
    }
    if let Some(s) = script.expect.final_status {
        criteria.insert("final_status".to_string(), final_status == s);
    }
    if let Some(r) = script.expect.released {
        criteria.insert("released".to_string(), released == r);
    }
    let verdict = if criteria.values().all(|v| *v) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };

    let end = script.duration_s;
    let lift = script.events.iter().find_map(|e| match e.kind {
        EventKind::Lift { ramp_s } => Some([e.t_s, (e.t_s + ramp_s).min(end)]),
        _ => None,
    });
    let release_start = timeline
        .iter()
        .find(|s| s.phase == Phase::Release)
        .map(|s| s.t_start);
    let grasp_end = lift.map(|l| l[0]).or(release_start).unwrap_or(end);
    let stages = Stages {
        grasp: Some([0.0, grasp_end]),
        lift,
        transport: lift.map(|l| [l[1], release_start.unwrap_or(end).max(l[1])]),
        release: release_start.map(|r| [r, end]),
    };

    EpisodeReport {
        name: script.name.clone(),
        seed: script.seed,
        grasp_type: script.grasp_type,
        verdict,
        criteria,
        phase_timeline: timeline,
        release_transitions,
        slip_accum_max: slip_max,
        final_status,
        released,
        stages,
        ticks: telemetry.len(),
        faults,
        telemetry_csv: None,
        summary_json: None,
    }
}

/// Run an episode and write `telemetry.csv`, `sensors.csv`, `sim.csv` and
/// `summary.json` into `out_dir`.
pub fn run_episode(script: &ScenarioScript, rig: &Rig, out_dir: &Path) -> Result<EpisodeReport> {
    let mut episode = simulate(script, rig)?;
    std::fs::create_dir_all(out_dir)?;
    let names = rig.finger_names();
    let telemetry_path = out_dir.join("telemetry.csv");
    write_telemetry(
        BufWriter::new(File::create(&telemetry_path)?),
        &names,
        &episode.telemetry,
    )?;
    write_sensors(
        BufWriter::new(File::create(out_dir.join("sensors.csv"))?),
        &names,
        &episode.sensors,
    )?;
    write_sim(
        BufWriter::new(File::create(out_dir.join("sim.csv"))?),
        &episode.sim,
    )?;
    let summary_path = out_dir.join("summary.json");
    episode.report.telemetry_csv = Some(telemetry_path);
    episode.report.summary_json = Some(summary_path.clone());
    let summary = serde_json::to_string_pretty(&episode.report).map_err(|source| Error::Json {
        path: summary_path.display().to_string(),
        source,
    })?;
    std::fs::write(&summary_path, summary + "\n")?;
    Ok(episode.report)
}

/// Overwrite one tunable by name. Controller names follow the CLI (`G`, `K`, ...).
pub fn set_param(script: &mut ScenarioScript, name: &str, value: f64) -> Result<()> {
    let c = &mut script.controller;
    match name {
        "G" | "gain" => c.gain = value,
        "K" | "k" => c.k = value,
        "k_unit" => c.k_unit = value,
        "offset" | "offset_mn" => c.offset_mn = value,
        "band_width" | "band_width_mn" => c.band_width_mn = value,
        "alpha_t" => c.alpha_t = value,
        "alpha_n" => c.alpha_n = value,
        "release_detach_mn" => c.release_detach_mn = value,
        "support_angle_deg" => c.support_angle_deg = value,
        "mu" => script.object.mu = value,
        "mass" | "mass_kg" => script.object.mass_kg = value,
        "stiffness" | "stiffness_mn_per_m" => script.object.stiffness_mn_per_m = value,
        "noise" | "noise_std_mn" => script.sensor.noise_std_mn = value,
        other => {
            return Err(Error::InvalidParams(format!(
                "unknown sweep parameter `{other}`"
            )))
        }
    }
    Ok(())
}

/// Run one episode per value, each into `out_dir/<param>_<value>/`. Episodes run in parallel.
pub fn sweep(
    script: &ScenarioScript,
    param: &str,
    values: &[f64],
    rig: &Rig,
    out_dir: &Path,
) -> Result<Vec<(f64, EpisodeReport)>> {
    let scripts: Vec<(f64, ScenarioScript)> = values
        .iter()
        .map(|&v| {
            let mut s = script.clone();
            set_param(&mut s, param, v)?;
            s.name = format!("{}-{param}_{v}", script.name);
            Ok((v, s))
        })
        .collect::<Result<_>>()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = scripts
            .iter()
            .map(|(v, s)| {
                let dir = out_dir.join(format!("{param}_{v}"));
                scope.spawn(move || run_episode(s, rig, &dir).map(|r| (*v, r)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("episode thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioScript {
        ScenarioScript::from_json_str(
            r#"{"name":"m","duration_s":2.0,"grasp_type":"tripod",
                "object":{"mass_kg":0.1,"width_m":0.07,"mu":0.8}}"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_script_is_valid() {
        assert!(validate_script(&minimal()).is_ok());
        assert_eq!(minimal().tick_hz, 50.0);
        assert_eq!(minimal().ticks(), 101);
    }

    #[test]
    fn event_past_duration_names_index() {
        let mut s = minimal();
        s.events.push(ScriptEvent {
            t_s: 0.5,
            kind: EventKind::Reset,
        });
        s.events.push(ScriptEvent {
            t_s: 3.0,
            kind: EventKind::Lift { ramp_s: 0.1 },
        });
        let errs = validate_script(&s).unwrap_err();
        assert!(errs.iter().any(|e| e.starts_with("events[1]")), "{errs:?}");
    }

    #[test]
    fn zero_tick_rate_rejected() {
        let mut s = minimal();
        s.tick_hz = 0.0;
        let errs = validate_script(&s).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("tick_hz")));
    }

    #[test]
    fn errors_are_aggregated() {
        let mut s = minimal();
        s.tick_hz = -1.0;
        s.object.mu = 0.0;
        s.controller.alpha_n = 2.0;
        assert!(validate_script(&s).unwrap_err().len() >= 3);
    }

    #[test]
    fn unknown_event_kind_fails_at_load() {
        let text = r#"{"name":"m","duration_s":2.0,"grasp_type":"tripod",
            "object":{"mass_kg":0.1,"width_m":0.07,"mu":0.8},
            "events":[{"t_s":1.0,"kind":"teleport"}]}"#;
        let err = ScenarioScript::from_json_str(text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn keyframes_interpolate() {
        let mut s = minimal();
        s.hand_pose = vec![
            Keyframe {
                t_s: 0.0,
                translation: [0.0, 0.0, 0.0],
                rpy: [0.0; 3],
            },
            Keyframe {
                t_s: 1.0,
                translation: [0.0, 0.0, 0.2],
                rpy: [std::f64::consts::FRAC_PI_2, 0.0, 0.0],
            },
        ];
        let mid = s.hand_pose_at(0.5);
        assert!((mid.translation.z - 0.1).abs() < 1e-12);
        let angle = nalgebra::UnitQuaternion::from_rotation_matrix(&mid.rotation).angle();
        assert!((angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(s.hand_pose_at(5.0).translation.z, 0.2);
        assert_eq!(s.hand_pose_at(-1.0).translation.z, 0.0);
    }

    #[test]
    fn unknown_sweep_param() {
        assert!(set_param(&mut minimal(), "warp", 1.0).is_err());
    }
}
