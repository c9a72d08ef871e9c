use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use myoctl::analysis::{compute_metrics, AnalysisOptions, HoldsFile};
use myoctl::config::{load_model, ConfigFile};
use myoctl::record::{import_csv, parse_csv};
use myoctl::server::Server;
use myoctl::session::{replay_schedule, Engine, EngineConfig};
use myoctl::source::{EmgSource, PatientModel, ReplaySource, SynthSource};

#[derive(Parser)]
#[command(name = "engine", version, about = "sEMG hand-control engine", args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Sub>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Sub {
    /// Compute stability metrics for a recorded session.
    Analyze {
        #[arg(long)]
        record: PathBuf,
        /// TOML file of [[hold]] (or script [[segment]]) intervals.
        #[arg(long)]
        holds: Option<PathBuf>,
        /// Output path for the metrics JSON, `-` for stdout.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        hold_failure_fraction: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceKind {
    Sim,
    Replay,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "sim")]
    source: SourceKind,
    /// Patient preset (severe, moderate, mild) or model file.
    #[arg(long)]
    model: Option<String>,
    /// Intent script file.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Session CSV to play back.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the session record here.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Serve the console protocol on ADDR:PORT.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    duration: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pace ticks to wall-clock milliseconds.
    #[arg(long)]
    paced: bool,
    /// With --source replay: use the config file's parameters and schedule
    /// instead of reproducing the recorded session.
    #[arg(long)]
    fresh: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Some(Sub::Analyze {
            record,
            holds,
            out,
            hold_failure_fraction,
        }) => analyze(record, holds, out, hold_failure_fraction),
        None => run(cli.run),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn analyze(record: PathBuf, holds: Option<PathBuf>, out: PathBuf, frac: f64) -> Result<()> {
    let rec = import_csv(&record).with_context(|| format!("reading {}", record.display()))?;
    let holds = match holds {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            HoldsFile::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Vec::new(),
    };
    let metrics = compute_metrics(
        &rec,
        &holds,
        &AnalysisOptions {
            hold_failure_fraction: frac,
        },
    )?;
    let text = serde_json::to_string_pretty(&metrics)? + "\n";
    if out.as_os_str() == "-" {
        print!("{text}");
    } else {
        std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let Some(config_path) = &args.config else {
        bail!("--config is required");
    };
    let file = ConfigFile::load(config_path)?;
    let mut engine_cfg = file.engine_config()?;
    let mut schedule = file.schedule();
    if let Some(seed) = args.seed {
        engine_cfg.seed = seed;
    }
    // rows go straight to disk; nothing else reads them back here
    engine_cfg.keep_rows = false;

    let (source, duration): (Box<dyn EmgSource>, u64) = match args.source {
        SourceKind::Sim => {
            let (mut model, mut label) = file.patient_model()?;
            if let Some(m) = &args.model {
                match PatientModel::preset(m) {
                    Ok(p) => {
                        model = p;
                        label = m.to_ascii_lowercase();
                    }
                    Err(_) => {
                        model = load_model(m.as_ref())?;
                        label = m.clone();
                    }
                }
            }
            let script = match &args.script {
                Some(p) => myoctl::config::load_script(p)?,
                None => file.script()?,
            };
            let duration = args
                .duration
                .or(file.duration_ms)
                .context("--duration (or duration_ms in the config) is required for simulated sessions")?;
            let src = SynthSource::new(model, script, engine_cfg.seed)?.with_label(label);
            (Box::new(src), duration)
        }
        SourceKind::Replay => {
            let path = args.replay.as_ref().context("--replay PATH is required with --source replay")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let volts = myoctl::record::read_volts(&text).with_context(|| format!("parsing {}", path.display()))?;
            if !args.fresh {
                if let Ok(rec) = parse_csv(&text) {
                    let keep = engine_cfg.keep_rows;
                    engine_cfg = EngineConfig::from_header(&rec.header);
                    engine_cfg.keep_rows = keep;
                    if let Some(seed) = args.seed {
                        engine_cfg.seed = seed;
                    }
                    schedule = replay_schedule(&rec)?;
                }
            }
            let n = volts.len() as u64;
            let duration = args.duration.unwrap_or(n).min(n);
            (Box::new(ReplaySource::from_volts(volts, path.display().to_string())), duration)
        }
    };

    let mut engine = Engine::new(engine_cfg, source)?;
    engine.schedule(schedule);
    if let Some(p) = &args.record {
        engine.record_to(p)?;
    }
    let server = match &args.listen {
        Some(addr) => {
            let s = Server::bind(addr.as_str(), engine.command_handle(), engine.telemetry())
                .with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", s.local_addr());
            Some(s)
        }
        None => None,
    };

    let started = std::time::Instant::now();
    let summary = engine.run(duration, args.paced);
    let elapsed = started.elapsed();
    let phase = engine.phase();
    drop(server);
    engine.into_record()?;

    eprintln!(
        "{} ticks in {:.3} s{}; final phase {phase}; late ticks {} (max {} us)",
        summary.ticks,
        elapsed.as_secs_f64(),
        if summary.source_exhausted { " (source exhausted)" } else { "" },
        summary.stats.late_ticks,
        summary.stats.max_lateness_us,
    );
    if let Some(p) = &args.record {
        eprintln!("record written to {}", p.display());
    }
    Ok(())
}
