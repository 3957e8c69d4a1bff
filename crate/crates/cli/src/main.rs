mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmia_core::eval::AttackKind;

use commands::AttackRequest;
use config::{Overrides, RunConfig};

/// Membership-inference auditing with reference-model ensembles.
#[derive(Parser, Debug)]
#[command(name = "gmia", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; omitted tables take built-in defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (relative paths resolve against $GMIA_OUTPUT_ROOT when set).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config field, e.g. `--set protocol.training.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(short, long, default_value_t = 0, global = true)]
    jobs: usize,
    /// Replace existing output of the same stage.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the bootstrap reference ensemble.
    TrainRefs,
    /// Flag vulnerable records in the target pool.
    SelectTargets {
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Search for enhancing records (defaults to the selected records).
    GenEnhancing {
        #[arg(long = "record", value_delimiter = ',')]
        records: Vec<String>,
    },
    /// Attack records against target models.
    Attack {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long = "record", value_delimiter = ',', required = true)]
        records: Vec<String>,
        /// Protocol target model ids (target-NNN); all when neither this nor --model-file is given.
        #[arg(long = "model", value_delimiter = ',')]
        models: Vec<String>,
        /// Model parameter files written by the toolkit.
        #[arg(long = "model-file")]
        model_files: Vec<PathBuf>,
    },
    /// Run the full protocol and write report, summary and curves.
    Evaluate {
        #[arg(long, value_enum, default_value_t = Preset::Protocol)]
        preset: Preset,
        #[arg(long, value_enum, value_delimiter = ',')]
        kinds: Vec<KindArg>,
    },
    /// Run the two-feature demonstration.
    ToyDemo,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Direct,
    Indirect,
}

impl From<KindArg> for AttackKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Direct => AttackKind::Direct,
            KindArg::Indirect => AttackKind::Indirect,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// The configured membership-inference protocol.
    Protocol,
    /// The two-feature demonstration.
    Toy,
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut overrides = Overrides {
        seed: g.seed,
        output_dir: g.out.clone(),
        set: g.set.clone(),
    };
    if let Command::SelectTargets { delta, beta } = &cli.command {
        if let Some(d) = delta {
            overrides.set.push(format!("protocol.selection.delta={d:?}"));
        }
        if let Some(b) = beta {
            overrides.set.push(format!("protocol.selection.beta={b:?}"));
        }
    }
    let (cfg, data) = RunConfig::resolve(g.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::TrainRefs => commands::train_refs(&cfg, &data, g.force),
        Command::SelectTargets { .. } => commands::select_targets(&cfg, &data, g.force),
        Command::GenEnhancing { records } => commands::gen_enhancing(&cfg, &data, records, g.force),
        Command::Attack {
            kind,
            records,
            models,
            model_files,
        } => commands::attack(
            &cfg,
            &data,
            &AttackRequest {
                kind: (*kind).into(),
                records,
                models,
                model_files,
            },
            g.force,
        ),
        Command::Evaluate { preset: Preset::Toy, .. } | Command::ToyDemo => commands::toy_demo(&cfg, g.force),
        Command::Evaluate { kinds, .. } => {
            let kinds: Vec<AttackKind> = kinds.iter().map(|&k| k.into()).collect();
            commands::evaluate(&cfg, &data, (!kinds.is_empty()).then_some(&kinds[..]), g.force)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.global.jobs;
    match gmia_core::par::with_jobs(jobs, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
