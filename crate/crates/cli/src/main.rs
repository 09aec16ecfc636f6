//! `bidemo` command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bidemo_core::handeye::{solve_ax_yb_with, CalibrationSet, HandEyeConfig};
use bidemo_core::pipeline::{
    export_episode, import_episode, measure_session_latencies, process_episode, validate_episode, write_plots,
    PipelineError, ProcessConfig,
};
use bidemo_core::session::{ingest_recording, Calibration};
use bidemo_core::synth::handeye::{PoseNoise, DEFAULT_PAIRS};
use bidemo_core::synth::session::{write_episode_session, write_handeye_set, write_latency_session, EpisodeScenario};
use bidemo_core::synth::streams::{ScenarioSpec, StreamLatencies};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "bidemo", version, about = "Bimanual visuo-tactile demonstration processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve AX = YB from a pose-pair log and store the result in a calibration file.
    CalibrateHandeye {
        /// Pose pairs, one per line: controller qx qy qz qw tx ty tz, then end effector.
        pairs: PathBuf,
        /// Calibration file to create or update.
        #[arg(short, long)]
        output: PathBuf,
        /// Device id the result belongs to.
        #[arg(long, default_value = "controller-left")]
        device: String,
        #[arg(long, default_value_t = 1.0)]
        rotation_weight: f64,
        #[arg(long, default_value_t = 1.0)]
        translation_weight: f64,
    },
    /// Measure per-stream latencies from a clock recording.
    MeasureLatency {
        session: PathBuf,
        /// Calibration file to create or update.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Turn a raw recording into an episode file.
    Process {
        session: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Options file (TOML); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Match streams on raw reception times.
        #[arg(long)]
        no_latency_compensation: bool,
        /// Pedal press delimiting the episode.
        #[arg(long)]
        press: Option<usize>,
        /// Also write the validation report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-run every check on an episode file.
    Validate { episode: PathBuf },
    /// Write a synthetic recording with ground truth.
    Synth {
        scenario: Scenario,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Recording length, seconds (episode and latency scenarios).
        #[arg(long)]
        duration: Option<f64>,
        /// Uniform reception jitter half-width, seconds.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Inject no latency at all.
        #[arg(long)]
        zero_latency: bool,
        /// Pose pairs (handeye scenario).
        #[arg(long, default_value_t = DEFAULT_PAIRS)]
        pairs: usize,
        /// Rotation noise σ, degrees (handeye scenario).
        #[arg(long, default_value_t = 0.0)]
        noise_rot_deg: f64,
        /// Translation noise σ, meters (handeye scenario).
        #[arg(long, default_value_t = 0.0)]
        noise_trans: f64,
    },
    /// Summarize an episode and write diagnostic plots.
    Inspect {
        episode: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Episode,
    Latency,
    Handeye,
}

/// Options file for `process`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessFile {
    compensate: Option<bool>,
    press: Option<usize>,
    centroid_radius: Option<i64>,
    end_trim: Option<usize>,
}

enum Outcome {
    Ok,
    ValidationFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn update_calibration(path: &Path, f: impl FnOnce(&mut Calibration)) -> Result<()> {
    let mut calib = Calibration::load_or_default(path).with_context(|| format!("reading {}", path.display()))?;
    f(&mut calib);
    calib.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::CalibrateHandeye {
            pairs,
            output,
            device,
            rotation_weight,
            translation_weight,
        } => {
            let text = std::fs::read_to_string(&pairs).with_context(|| format!("reading {}", pairs.display()))?;
            let set = CalibrationSet::from_text(&text).with_context(|| format!("parsing {}", pairs.display()))?;
            let config = HandEyeConfig {
                rotation_weight,
                translation_weight,
            };
            let result = solve_ax_yb_with(&set, &config)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            update_calibration(&output, |c| {
                c.handeye.insert(device, result);
            })?;
        }
        Command::MeasureLatency { session, output } => {
            let raw = ingest_recording(&session)?;
            let table = measure_session_latencies(&raw)?;
            for r in table.records.values() {
                println!("{:<16} {:>9.4} s  ({} samples)", r.stream_id, r.t_latency, r.sample_count);
            }
            update_calibration(&output, |c| {
                for r in table.records.into_values() {
                    c.latency.insert(r);
                }
            })?;
        }
        Command::Process {
            session,
            calib,
            output,
            config,
            no_latency_compensation,
            press,
            report,
        } => {
            let file: ProcessFile = match &config {
                Some(p) => toml::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => ProcessFile::default(),
            };
            let mut cfg = ProcessConfig::default();
            cfg.compensate = file.compensate.unwrap_or(cfg.compensate) && !no_latency_compensation;
            cfg.press = press.or(file.press).unwrap_or(cfg.press);
            cfg.recon.centroid_radius = file.centroid_radius.unwrap_or(cfg.recon.centroid_radius);
            cfg.recon.end_trim = file.end_trim.unwrap_or(cfg.recon.end_trim);

            let calibration = Calibration::load(&calib).with_context(|| format!("reading {}", calib.display()))?;
            let raw = ingest_recording(&session)?;
            let (episode, rep) = match process_episode(&raw, &calibration, &cfg) {
                Ok(v) => v,
                Err(PipelineError::Rejected(rep)) => {
                    println!("{}", rep.to_json());
                    if let Some(p) = report {
                        std::fs::write(&p, rep.to_json())?;
                    }
                    eprintln!("episode rejected: {} frames skew-invalid", rep.dropped_frames);
                    return Ok(Outcome::ValidationFailed);
                }
                Err(e) => return Err(e.into()),
            };
            export_episode(&episode, &output)?;
            println!("{}", rep.to_json());
            if let Some(p) = report {
                std::fs::write(&p, rep.to_json())?;
            }
            if !rep.passed {
                return Ok(Outcome::ValidationFailed);
            }
        }
        Command::Validate { episode } => {
            let ep = import_episode(&episode)?;
            let rep = validate_episode(&ep);
            println!("{}", rep.to_json());
            if !rep.passed {
                return Ok(Outcome::ValidationFailed);
            }
        }
        Command::Synth {
            scenario,
            output,
            seed,
            duration,
            jitter,
            zero_latency,
            pairs,
            noise_rot_deg,
            noise_trans,
        } => {
            if output.exists() && std::fs::read_dir(&output)?.next().is_some() {
                bail!("{} exists and is not empty", output.display());
            }
            let latencies = if zero_latency {
                StreamLatencies::ZERO
            } else {
                StreamLatencies::TYPICAL
            };
            let mut spec = ScenarioSpec {
                seed,
                jitter,
                latencies,
                ..ScenarioSpec::default()
            };
            match scenario {
                Scenario::Episode => {
                    spec.duration = duration.unwrap_or(spec.duration);
                    let truth = write_episode_session(
                        &output,
                        &EpisodeScenario {
                            streams: spec,
                            ..EpisodeScenario::default()
                        },
                    )?;
                    println!("wrote episode session ({} master frames)", truth.streams.timelines["left/visual"].capture.len());
                }
                Scenario::Latency => {
                    spec.duration = duration.unwrap_or(5.0);
                    write_latency_session(&output, &spec)?;
                    println!("wrote latency session");
                }
                Scenario::Handeye => {
                    if pairs < 3 {
                        bail!("need at least 3 pose pairs");
                    }
                    let noise = PoseNoise {
                        rotation_deg: noise_rot_deg,
                        translation: noise_trans,
                    };
                    write_handeye_set(&output, pairs, noise, seed)?;
                    println!("wrote {pairs} pose pairs");
                }
            }
        }
        Command::Inspect { episode, plot } => {
            let ep = import_episode(&episode)?;
            let rep = validate_episode(&ep);
            let span = match (ep.frames.first(), ep.frames.last()) {
                (Some(a), Some(b)) => b.t - a.t,
                _ => 0.0,
            };
            println!("session      {}", ep.session);
            println!("software     {}", ep.software);
            println!("calibration  {}", hex::encode(ep.calibration_hash));
            println!("devices      {} / {}", ep.devices[0], ep.devices[1]);
            println!("frames       {} over {span:.2} s", ep.frames.len());
            println!("dropped      {} skew, {} reconstruction", ep.dropped_frames, ep.failed_frames);
            println!("skew         median {:.2} ms, max {:.2} ms", rep.skew.median * 1e3, rep.skew.max * 1e3);
            println!("validation   {}", if rep.passed { "pass" } else { "FAIL" });
            if let Some(dir) = plot {
                for p in write_plots(&ep, &dir)? {
                    println!("plot         {}", p.display());
                }
            }
        }
    }
    Ok(Outcome::Ok)
}
