use std::path::PathBuf;
use std::process::ExitCode;

use buildloss_cli::stages::{cmd_eval, cmd_infer, cmd_label, cmd_run, cmd_synth, cmd_train};
use buildloss_cli::{Mode, ModelChoice, PipelineConfig, PipelineError, Task};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "buildloss",
    version,
    about = "Building-level O2I/I2I radio loss classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city with ground truth.
    Synth,
    /// Detect indoor samples, compute pair losses and derive labels.
    Label,
    /// Fit the classifier (supervised or self-training).
    Train,
    /// Predict every building on every band and write loss maps.
    Infer,
    /// Score predictions against a truth table.
    Eval,
    /// label, train, infer and eval in sequence.
    Run,
}

#[derive(Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    task: Option<Task>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelChoice>,
    /// Output (and default input) directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn configure(o: &Overrides) -> Result<PipelineConfig, PipelineError> {
    let mut c = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.task {
        c.task = v;
    }
    if let Some(v) = o.mode {
        c.mode = v;
    }
    if let Some(v) = o.model {
        c.model = v;
    }
    if let Some(v) = &o.out {
        c.paths.out = v.clone();
    }
    c.validate()?;
    Ok(c)
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let c = configure(&cli.overrides)?;
    match cli.command {
        Command::Synth => cmd_synth(&c).map(drop),
        Command::Label => cmd_label(&c).map(drop),
        Command::Train => cmd_train(&c).map(drop),
        Command::Infer => cmd_infer(&c).map(drop),
        Command::Eval => {
            let run = cmd_eval(&c)?;
            for t in &run.tasks {
                for (role, r) in &t.reports {
                    println!(
                        "{:?} {role:<10} accuracy {:.4}  macro-F1 {:.4}  n={}",
                        t.link, r.accuracy, r.macro_f1, r.n
                    );
                }
            }
            Ok(())
        }
        Command::Run => cmd_run(&c).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
