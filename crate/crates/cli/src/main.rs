use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphormer_cli::{
    ablate, attn_export, count_report, eval, gen_data, resolve_config, train, CliError, CliResult, ConfigArgs,
    EvalSource, ModelSource, EXIT_CONFIG,
};
use mesh_graphormer::config::{Preset, Split};

#[derive(Parser)]
#[command(name = "graphormer", version, about = "Train and inspect mesh-regression transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    PaperFaithful,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct ConfigOpts {
    /// TOML overrides applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides train.workers.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigOpts {
    fn args(&self) -> ConfigArgs {
        ConfigArgs {
            config: self.config.clone(),
            preset: match self.preset {
                PresetArg::Desk => Preset::Desk,
                PresetArg::PaperFaithful => Preset::PaperFaithful,
            },
            seed: self.seed,
            workers: self.workers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config.toml, metrics.csv and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and print (or write) a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file from `gen-data`; defaults to the config's split.
        #[arg(long, conflicts_with = "split")]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train and evaluate every cell of the [ablation] section.
    Ablate {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the head-averaged attention map of the last layer.
    Attn {
        /// Without a checkpoint the model is initialized from the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigOpts,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Token whose attention row is exported, e.g. joint0 or vertex12.
        #[arg(long, default_value = "joint0")]
        query: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-module parameter and mult-add counts against the graph-free baseline.
    CountParams {
        #[command(flatten)]
        cfg: ConfigOpts,
    },
    /// Write one split of the synthetic dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { cfg, out } => {
            let config = resolve_config(&cfg.args())?;
            let s = train(&config, &out)?;
            println!(
                "trained {} epochs; test mpjpe {:.3} pa_mpjpe {:.3} mpve {:.3}; checkpoint {}",
                s.records.len(),
                s.test.mpjpe,
                s.test.pa_mpjpe,
                s.test.mpve,
                s.checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            out,
            workers,
        } => {
            let source = match dataset {
                Some(p) => EvalSource::Dataset(p),
                None => EvalSource::Split(split.map_or(Split::Test, Split::from)),
            };
            let json = eval(&checkpoint, &source, workers)?.to_json();
            match out {
                Some(p) => std::fs::write(&p, json).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?,
                None => print!("{json}"),
            }
        }
        Command::Ablate { cfg, out } => {
            let config = resolve_config(&cfg.args())?;
            let rows = ablate(&config, &out, |msg| eprintln!("{msg}"))?;
            print!("{}", graphormer_cli::render_table(&rows));
        }
        Command::Attn {
            checkpoint,
            cfg,
            sample,
            split,
            query,
            out,
        } => {
            let source = match checkpoint {
                Some(p) => ModelSource::Checkpoint(p),
                None => ModelSource::Init(resolve_config(&cfg.args())?),
            };
            let e = attn_export(&source, split.into(), sample, &query, &out)?;
            println!("wrote {n}x{n} attention map and `{}` row to {}", e.query, out.display(), n = e.names.len());
        }
        Command::CountParams { cfg } => {
            let config = resolve_config(&cfg.args())?;
            print!("{}", count_report(&config)?.render());
        }
        Command::GenData { cfg, split, out } => {
            let config = resolve_config(&cfg.args())?;
            let n = gen_data(&config, split.into(), &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
