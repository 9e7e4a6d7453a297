use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use telewalk::telelocomotion::{run_episode, EpisodeResult, PilotPoll, PilotSource, Verdict};
use telewalk_cli::checks;
use telewalk_cli::summary::EpisodeSummary;
use telewalk_pilot::bridge::{Bridge, BridgeOptions};
use telewalk_pilot::config::{EpisodeConfig, PilotDescriptor, SCENARIOS};
use telewalk_pilot::replay::write_recording;
use telewalk_pilot::scripted::ScriptedPilot;

const DEFAULT_PORT: u16 = 8765;

#[derive(Parser)]
#[command(name = "telewalk", version, about = "Pilot-driven H-LIP walking on a simulated biped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Episode config file (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory for telemetry and summary.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Seed for the scripted pilot's noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated duration [s].
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in scenario or the pilot named in --config.
    Run {
        /// velocity, backward or stand; omit when --config is given.
        scenario: Option<String>,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Drive the robot from a CSV pilot recording.
    Replay {
        csv: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Serve the live console bridge on loopback.
    Serve {
        #[arg(long, short)]
        port: Option<u16>,
        /// Loop ticks per telemetry frame sent to the console.
        #[arg(long, default_value_t = 20)]
        frame_every: u64,
        /// Run as fast as possible instead of in real time.
        #[arg(long)]
        no_realtime: bool,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run the acceptance checks.
    Check {
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
        /// Only these checks (repeatable).
        #[arg(long)]
        only: Vec<String>,
        /// List check names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Write a scripted pilot to CSV for later replay.
    Record {
        scenario: String,
        csv: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
}

fn load(scenario: Option<&str>, opts: &Overrides) -> Result<EpisodeConfig> {
    let mut cfg = match (scenario, &opts.config) {
        (Some(_), Some(_)) => bail!("give either a scenario or --config, not both"),
        (Some(name), None) => EpisodeConfig::scenario(name)
            .with_context(|| format!("unknown scenario `{name}`; expected one of {}", SCENARIOS.join(", ")))?,
        (None, Some(path)) => EpisodeConfig::load(path)?,
        (None, None) => bail!("give a scenario ({}) or --config", SCENARIOS.join(", ")),
    };
    apply(&mut cfg, opts);
    cfg.validate()?;
    Ok(cfg)
}

fn apply(cfg: &mut EpisodeConfig, opts: &Overrides) {
    if let Some(out) = &opts.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(d) = opts.duration {
        cfg.duration = Some(d);
    }
}

fn telemetry_writer(cfg: &EpisodeConfig) -> Result<BufWriter<File>> {
    fs::create_dir_all(&cfg.output.dir).with_context(|| format!("creating {}", cfg.output.dir.display()))?;
    let path = cfg.output.telemetry_path();
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn finish(cfg: &EpisodeConfig, result: &EpisodeResult, wall: f64) -> Result<ExitCode> {
    let windows = cfg.scripted_spec().map(|s| s.segment_windows()).unwrap_or_default();
    let summary = EpisodeSummary::new(result, cfg.seed, &windows);
    let path = cfg.output.summary_path();
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{:?}: {:.2} m in {:.1} s simulated ({wall:.1} s wall), {} steps, mean |DCM err| {:.4}, falls {}, QP failures {}",
        result.verdict,
        result.distance_x,
        result.duration,
        result.steps,
        result.mean_abs_dcm_error,
        result.falls,
        result.qp_failures
    );
    for s in &summary.segment_speeds {
        if let Some(v) = s.mean {
            println!("  segment {:.0}-{:.0} s: target {:+.2} m/s, mean {v:+.3} m/s", s.start, s.end, s.target);
        }
    }
    println!("telemetry: {}\nsummary: {}", cfg.output.telemetry_path().display(), path.display());
    Ok(match result.verdict {
        Verdict::Completed | Verdict::SourceEnded => ExitCode::SUCCESS,
        _ => ExitCode::from(2),
    })
}

fn run_offline(cfg: &EpisodeConfig) -> Result<ExitCode> {
    let Some((mut source, len)) = cfg.offline_source()? else {
        let port = match cfg.pilot {
            PilotDescriptor::Live { port } => port,
            _ => DEFAULT_PORT,
        };
        return serve(cfg, port, BridgeOptions::default());
    };
    let duration = cfg.episode_duration(len);
    let mut out = telemetry_writer(cfg)?;
    let start = Instant::now();
    let result = run_episode(&cfg.robot, &cfg.loop_config(), source.as_mut(), duration, Some(&mut out))?;
    out.flush()?;
    finish(cfg, &result, start.elapsed().as_secs_f64())
}

fn serve(cfg: &EpisodeConfig, port: u16, opts: BridgeOptions) -> Result<ExitCode> {
    let bridge = Bridge::bind(port, opts).with_context(|| format!("binding 127.0.0.1:{port}"))?;
    println!("console bridge listening on ws://{}", bridge.local_addr()?);
    let duration = cfg.episode_duration(None);
    let mut out = telemetry_writer(cfg)?;
    let start = Instant::now();
    let result = bridge.serve(&cfg.robot, &cfg.loop_config(), duration, Some(&mut out))?;
    out.flush()?;
    finish(cfg, &result, start.elapsed().as_secs_f64())
}

fn record(scenario: &str, csv: &Path, opts: &Overrides) -> Result<ExitCode> {
    let cfg = load(Some(scenario), opts)?;
    let spec = cfg.scripted_spec().context("record needs a scripted pilot")?;
    let duration = cfg.episode_duration(None);
    let dt = cfg.dt;
    let mut pilot = ScriptedPilot::new(spec, cfg.seed)?;
    let mut samples = Vec::new();
    for k in 1..=(duration / dt).round() as u64 {
        match pilot.poll(k as f64 * dt) {
            PilotPoll::Sample(s) => samples.push(s),
            PilotPoll::End => break,
            PilotPoll::Pending => bail!("scripted pilot returned no sample at t = {}", k as f64 * dt),
        }
    }
    write_recording(File::create(csv).with_context(|| format!("creating {}", csv.display()))?, &samples)?;
    println!("wrote {} samples to {}", samples.len(), csv.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { scenario, opts } => run_offline(&load(scenario.as_deref(), &opts)?),
        Command::Replay { csv, opts } => {
            let mut cfg = match &opts.config {
                Some(path) => EpisodeConfig::load(path)?,
                None => EpisodeConfig::with_pilot(PilotDescriptor::Replay { path: csv.clone() }),
            };
            cfg.pilot = PilotDescriptor::Replay { path: csv };
            apply(&mut cfg, &opts);
            cfg.validate()?;
            run_offline(&cfg)
        }
        Command::Serve { port, frame_every, no_realtime, opts } => {
            let mut cfg = match &opts.config {
                Some(path) => EpisodeConfig::load(path)?,
                None => EpisodeConfig::with_pilot(PilotDescriptor::Live { port: DEFAULT_PORT }),
            };
            apply(&mut cfg, &opts);
            cfg.validate()?;
            let port = port.unwrap_or(match cfg.pilot {
                PilotDescriptor::Live { port } => port,
                _ => DEFAULT_PORT,
            });
            if frame_every == 0 {
                bail!("--frame-every must be at least 1");
            }
            let bridge_opts = BridgeOptions { frame_every, realtime: !no_realtime, ..BridgeOptions::default() };
            serve(&cfg, port, bridge_opts)
        }
        Command::Check { seed, only, list } => {
            if list {
                for (name, _) in checks::CHECKS {
                    println!("{name}");
                }
                return Ok(ExitCode::SUCCESS);
            }
            if let Some(bad) = only.iter().find(|o| !checks::CHECKS.iter().any(|(n, _)| n == o)) {
                bail!("unknown check `{bad}`; see `telewalk check --list`");
            }
            let mut failed = 0;
            for (name, check) in checks::CHECKS.iter().filter(|(n, _)| only.is_empty() || only.iter().any(|o| o == n)) {
                let report = checks::run(name, *check, seed);
                println!("{report}");
                failed += usize::from(!report.passed);
            }
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Record { scenario, csv, opts } => record(&scenario, &csv, &opts),
    }
}
