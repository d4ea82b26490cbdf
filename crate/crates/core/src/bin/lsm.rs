use std::fmt::Write as _;
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lsm::pipeline::{self, Engine, PipelineConfig};
use lsm::resources::{fit_check, report_csv, CostModel, Design};

#[derive(Parser)]
#[command(name = "lsm", version, about = "Spiking reservoir speech pipeline")]
struct Cli {
    /// JSON pipeline config; defaults apply to missing fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = EngineArg::Fixed)]
    engine: EngineArg,
    /// Output file or directory, depending on the subcommand
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-utterance stages (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Fixed,
    Float,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Fixed => Engine::Fixed,
            EngineArg::Float => Engine::Float,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Proposed,
    Traditional,
}

#[derive(Subcommand)]
enum Command {
    /// WAV directory (or the synthetic generator) to a feature CSV
    Features {
        #[arg(long)]
        wav_dir: Option<PathBuf>,
    },
    /// Feature CSV to one spike-train CSV per utterance
    Encode {
        #[arg(long)]
        features: PathBuf,
    },
    /// Run the reservoir over a spike directory; writes traces and sampled states
    Simulate {
        #[arg(long)]
        spikes: PathBuf,
    },
    /// Train the readout on a sampled-state CSV
    Train {
        #[arg(long)]
        states: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate a saved readout on a sampled-state CSV
    Eval {
        #[arg(long)]
        states: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Full pipeline with both engines on identical data
    Compare,
    /// Slice and multiplier estimate
    Resources {
        #[arg(long, default_value_t = 8)]
        neurons: u64,
        #[arg(long, default_value_t = 16)]
        synapses: u64,
        #[arg(long, value_enum, default_value_t = DesignArg::Proposed)]
        design: DesignArg,
        /// Print CSV instead of text
        #[arg(long)]
        csv: bool,
        /// Also check the model against the published figures
        #[arg(long)]
        fit_check: bool,
    },
    /// Every stage with the selected engine
    Pipeline,
}

fn out_path(cli: &Cli, what: &str) -> Result<PathBuf> {
    cli.out
        .clone()
        .with_context(|| format!("{what} needs --out"))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn workdir(cli: &Cli, cfg: &PipelineConfig, what: &str) -> Result<PathBuf> {
    match (&cli.out, &cfg.paths.workdir) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(w)) => Ok(w.clone()),
        (None, None) => bail!("{what} needs --out or paths.workdir in the config"),
    }
}

fn stage<T>(name: &str, r: lsm::Result<T>) -> Result<T> {
    r.with_context(|| format!("stage {name} failed"))
}

fn run(cli: &Cli, w: &mut String) -> Result<()> {
    let cfg = load_config(cli)?;
    let engine: Engine = cli.engine.into();
    let threads = cli.threads;
    match &cli.command {
        Command::Features { wav_dir } => {
            let out = out_path(cli, "features")?;
            let rows = stage(
                "features",
                pipeline::cmd_features(&cfg, wav_dir.as_deref(), &out, threads),
            )?;
            writeln!(w, "wrote {} feature rows to {}", rows.len(), out.display())?;
        }
        Command::Encode { features } => {
            let out = out_path(cli, "encode")?;
            let n = stage(
                "encode",
                pipeline::cmd_encode(&cfg, features, &out, threads),
            )?;
            writeln!(
                w,
                "wrote {n} spike trains of {} steps ({} s per step) to {}",
                cfg.encoding.timesteps,
                cfg.encoding.dt,
                out.display()
            )?;
        }
        Command::Simulate { spikes } => {
            let out = out_path(cli, "simulate")?;
            let states = stage(
                "simulate",
                pipeline::cmd_simulate(&cfg, spikes, &out, engine, threads),
            )?;
            writeln!(
                w,
                "{engine} engine: {} traces, sampled states in {}",
                states.len(),
                out.join(pipeline::STATES_FILE).display()
            )?;
        }
        Command::Train { states, model } => {
            let report = stage("train", pipeline::cmd_train(&cfg, states, model))?;
            write!(w, "{report}")?;
            writeln!(w, "model saved to {}", model.display())?;
        }
        Command::Eval { states, model } => {
            let e = stage("eval", pipeline::cmd_eval(states, model))?;
            writeln!(w, "accuracy: {:.2} %", 100.0 * e.accuracy)?;
            write!(
                w,
                "confusion (rows true, columns predicted):\n{}",
                e.confusion_table()
            )?;
        }
        Command::Compare => {
            let dir = workdir(cli, &cfg, "compare")?;
            let report = stage("compare", pipeline::cmd_compare(&cfg, &dir, threads))?;
            writeln!(w, "{report}")?;
        }
        Command::Resources {
            neurons,
            synapses,
            design,
            csv,
            fit_check: check,
        } => {
            let design = match design {
                DesignArg::Proposed => Design::Proposed,
                DesignArg::Traditional => Design::Traditional,
            };
            let e = stage(
                "resources",
                CostModel::default().estimate(*neurons, *synapses, design),
            )?;
            if *csv {
                write!(w, "{}", report_csv(&[(*neurons, *synapses, e)]))?;
            } else {
                writeln!(w, "design: {design}")?;
                writeln!(w, "neurons: {neurons}, synapses: {synapses}")?;
                writeln!(
                    w,
                    "slices: {} of {} ({:.2} % utilization)",
                    e.slices,
                    e.device_slices,
                    e.utilization()
                )?;
                writeln!(w, "embedded multipliers: {}", e.multipliers)?;
            }
            if *check {
                writeln!(w, "{}", fit_check())?;
            }
        }
        Command::Pipeline => {
            let dir = workdir(cli, &cfg, "pipeline")?;
            let report = stage(
                "pipeline",
                pipeline::run_pipeline(&cfg, &dir, engine, threads),
            )?;
            write!(w, "{report}")?;
            writeln!(w, "artifacts in {}", display(&dir))?;
        }
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() {
    let cli = Cli::parse();
    let mut out = String::new();
    let result = run(&cli, &mut out);
    // A closed pipe (`lsm ... | head`) is not an error.
    match std::io::stdout().lock().write_all(out.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => {
            eprintln!("error: writing output: {e}");
            std::process::exit(1);
        }
        _ => {}
    }
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
