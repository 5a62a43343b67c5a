use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hcn_cli::commands::{self, CleanSource, Predictions};
use hcn_cli::config::{Preset, RunConfig};
use hcn_cli::error::CliError;

/// Deraining laboratory: synthesize data, train, fine-tune, evaluate.
#[derive(Parser)]
#[command(name = "hcn", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Base hyperparameters.
    #[arg(long, default_value = "toy")]
    preset: String,

    /// key = value file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = RunConfig::preset(self.preset.parse::<Preset>()?);
        Ok(match &self.config {
            Some(path) => base.load(path)?,
            None => base,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Add synthetic rain to clean images.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of clean PPM images.
        #[arg(long, conflicts_with = "scenes", required_unless_present = "scenes")]
        clean: Option<PathBuf>,
        /// Generate this many procedural clean scenes instead.
        #[arg(long)]
        scenes: Option<usize>,
        /// Side of generated scenes.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised training on a synthesized dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoints and the metrics log.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Online self-supervised fine-tuning on unpaired rainy images.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of real rainy images.
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score derained images against ground truth.
    Eval {
        /// Dataset directory with clean references.
        #[arg(long)]
        data: PathBuf,
        /// Derain the dataset with this model.
        #[arg(long, required_unless_present = "pred", conflicts_with = "pred")]
        checkpoint: Option<PathBuf>,
        /// Directory of existing predictions named after the dataset entries.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Write tab-separated rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derain one image or a directory of images.
    Derain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump bottleneck feature maps before and after similarity mining.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Print the available layer names and exit.
        #[arg(long)]
        list: bool,
        #[arg(long, required_unless_present = "list")]
        image: Option<PathBuf>,
        #[arg(long, required_unless_present = "list")]
        layer: Option<String>,
        #[arg(long, required_unless_present = "list")]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            cfg,
            clean,
            scenes,
            size,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let source = match (&clean, scenes) {
                (Some(dir), _) => CleanSource::Dir(dir),
                (None, Some(count)) => CleanSource::Scenes { count, size },
                (None, None) => return Err(CliError::Usage("give --clean or --scenes".into())),
            };
            let entries = commands::synth(&cfg, source, &out)?;
            println!("synthesized {} pairs in {}", entries.len(), out.display());
        }
        Command::Train { cfg, data, out, resume } => {
            commands::train(&cfg.resolve()?, &data, &out, resume.as_deref())?;
        }
        Command::Finetune {
            cfg,
            checkpoint,
            real,
            out,
        } => commands::finetune(&cfg.resolve()?, &checkpoint, &real, &out)?,
        Command::Eval {
            data,
            checkpoint,
            pred,
            out,
        } => {
            let source = match (&checkpoint, &pred) {
                (Some(c), _) => Predictions::Checkpoint(c),
                (None, Some(p)) => Predictions::Dir(p),
                (None, None) => return Err(CliError::Usage("give --checkpoint or --pred".into())),
            };
            print!("{}", commands::eval(&data, source, out.as_deref())?);
        }
        Command::Derain { checkpoint, input, out } => {
            for path in commands::derain(&checkpoint, &input, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Inspect {
            checkpoint,
            list,
            image,
            layer,
            out,
        } => {
            if list {
                for site in commands::list_sites(&checkpoint)? {
                    println!("{site}");
                }
            } else {
                let (Some(image), Some(layer), Some(out)) = (image, layer, out) else {
                    return Err(CliError::Usage("--image, --layer and --out are required".into()));
                };
                let n = commands::inspect(&checkpoint, &image, &layer, &out)?;
                println!("wrote {n} feature maps to {}", out.display());
            }
        }
        Command::Config { cfg } => print!("{}", cfg.resolve()?.dump()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
