use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use synergrip::bridge::{self, BridgeConfig};
use synergrip::kinematics::HandModel;
use synergrip::scenario::{self, EpisodeReport, Rig, ScenarioScript, Verdict};
use synergrip::synergy::SynergyDecoder;
use synergrip::units::GraspType;
use synergrip::Error;

#[derive(Parser)]
#[command(
    name = "synergrip",
    version,
    about = "Fingertip force-feedback grasp controller"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct RigArgs {
    /// Hand model JSON (hand/1). Defaults to the bundled three-finger hand.
    #[arg(long)]
    hand: Option<PathBuf>,
    /// Posture decoder JSON (synergy/1 or decoder/1).
    #[arg(long)]
    decoder: Option<PathBuf>,
}

impl RigArgs {
    fn load(&self) -> anyhow::Result<Rig> {
        let model = match &self.hand {
            Some(p) => {
                HandModel::load(p).with_context(|| format!("loading hand {}", p.display()))?
            }
            None => HandModel::default_hand(),
        };
        let decoder = match &self.decoder {
            Some(p) => SynergyDecoder::load(p, &model)
                .with_context(|| format!("loading decoder {}", p.display()))?,
            None => SynergyDecoder::default_for(&model)
                .context("bundled synergy does not fit this hand")?,
        };
        Ok(Rig::new(model, decoder))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scripted episode and write telemetry.
    Run {
        script: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        grasp_type: Option<GraspType>,
        #[command(flatten)]
        rig: RigArgs,
    },
    /// Check a script without running it.
    Validate { script: PathBuf },
    /// Run a script once per parameter value.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        script: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        rig: RigArgs,
    },
    /// Drive the controller from a socket peer (newline-delimited JSON).
    Serve {
        #[arg(long)]
        listen: String,
        /// Take controller parameters and grasp type from this script.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        grasp_type: Option<GraspType>,
        #[command(flatten)]
        rig: RigArgs,
    },
    /// Stream a recorded sensors.csv to a running bridge.
    Replay {
        recording: PathBuf,
        #[arg(long)]
        connect: String,
    },
}

fn load_script(path: &Path) -> anyhow::Result<ScenarioScript> {
    ScenarioScript::load(path).with_context(|| format!("loading script {}", path.display()))
}

fn print_report(r: &EpisodeReport) {
    let verdict = match r.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
    };
    println!(
        "{verdict} {} ({} ticks, final {}, slip {:.4} m, release transitions {})",
        r.name,
        r.ticks,
        r.final_status.as_str(),
        r.slip_accum_max,
        r.release_transitions
    );
    for (name, ok) in &r.criteria {
        if !ok {
            println!("  failed: {name}");
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::Run {
            script,
            out,
            seed,
            grasp_type,
            rig,
        } => {
            let mut s = load_script(&script)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(gt) = grasp_type {
                s.grasp_type = gt;
            }
            let report = scenario::run_episode(&s, &rig.load()?, &out)?;
            print_report(&report);
            println!("telemetry: {}", out.join("telemetry.csv").display());
            Ok(report.verdict == Verdict::Pass)
        }
        Cmd::Validate { script } => {
            let s = load_script(&script)?;
            match scenario::validate_script(&s) {
                Ok(()) => {
                    println!("{}: ok", script.display());
                    Ok(true)
                }
                Err(errs) => {
                    for e in errs {
                        eprintln!("{}: {e}", script.display());
                    }
                    Ok(false)
                }
            }
        }
        Cmd::Sweep {
            param,
            values,
            script,
            out,
            rig,
        } => {
            let s = load_script(&script)?;
            let results = scenario::sweep(&s, &param, &values, &rig.load()?, &out)?;
            for (v, r) in &results {
                print!("{param}={v}: ");
                print_report(r);
            }
            Ok(results.iter().all(|(_, r)| r.verdict == Verdict::Pass))
        }
        Cmd::Serve {
            listen,
            script,
            grasp_type,
            rig,
        } => {
            let (params, gt) = match &script {
                Some(p) => {
                    let s = load_script(p)?;
                    (s.controller, s.grasp_type)
                }
                None => (Default::default(), GraspType::Tripod),
            };
            let config = BridgeConfig {
                params,
                grasp_type: grasp_type.unwrap_or(gt),
                rig: rig.load()?,
            };
            let listener =
                TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            bridge::serve(listener, &config)?;
            Ok(true)
        }
        Cmd::Replay { recording, connect } => {
            let commands = bridge::replay(&recording, &connect)?;
            if commands.is_empty() {
                bail!("{} holds no sensor rows", recording.display());
            }
            println!("t,grasp_size_m");
            for c in &commands {
                println!("{},{}", c.t, c.grasp_size_m);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYNERGRIP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if let Some(Error::InvalidScenario(errs)) = e.downcast_ref::<Error>() {
                for m in errs {
                    eprintln!("error: {m}");
                }
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
