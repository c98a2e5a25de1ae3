use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfst_dknn::dknn::Variant;
use cfst_dknn::error::{Error, Result};
use cfst_dknn::pipeline::{run_pipeline, run_stage, PipelineConfig, Stage};

/// Axial capacity of circular CFST columns with a constraint-trained network.
#[derive(Parser, Debug)]
#[command(name = "cfst", version)]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Specimen CSV to ingest instead of generating synthetic data.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Synthetic sample count.
    #[arg(long, global = true)]
    synthetic_n: Option<usize>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Hidden layers (1-5).
    #[arg(long, global = true)]
    hidden_layers: Option<usize>,
    /// Comma-separated network variants, e.g. ANN,ANNWT.
    #[arg(long, global = true, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or ingest the specimen table.
    Synth,
    /// Engineered features and correlation matrix.
    Features,
    /// Three importance rankings and the consensus subset.
    Select,
    /// Isolation-forest anomaly screening.
    Screen,
    /// Train the configured network variants.
    Train,
    /// Design-code capacity table.
    Codes,
    /// Metrics and strength-class breakdown of trained models.
    Evaluate,
    /// Label-noise robustness sweep.
    Robustness,
    /// One-at-a-time sensitivity of the primary model.
    Sensitivity,
    /// Shapley importance, GA dependence grid and steel-ratio guidance.
    Explain,
    /// All stages in order.
    Pipeline,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(d) = &cli.data {
        cfg.data.path = Some(d.clone());
    }
    if let Some(n) = cli.synthetic_n {
        cfg.data.synthetic_n = n;
    }
    if let Some(e) = cli.epochs {
        cfg.train.epochs = e;
    }
    if let Some(h) = cli.hidden_layers {
        cfg.train.hidden_layers = h;
    }
    if let Some(v) = &cli.variants {
        cfg.models.variants = v.iter().map(|s| s.parse()).collect::<Result<Vec<Variant>>>()?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let stage = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::Pipeline => None,
        Command::Synth => Some(Stage::Synth),
        Command::Features => Some(Stage::Features),
        Command::Select => Some(Stage::Select),
        Command::Screen => Some(Stage::Screen),
        Command::Train => Some(Stage::Train),
        Command::Codes => Some(Stage::Codes),
        Command::Evaluate => Some(Stage::Evaluate),
        Command::Robustness => Some(Stage::Robustness),
        Command::Sensitivity => Some(Stage::Sensitivity),
        Command::Explain => Some(Stage::Explain),
    };
    let manifest = match stage {
        Some(s) => run_stage(s, &cfg)?,
        None => run_pipeline(&cfg)?,
    };
    for a in &manifest.artifact_list {
        println!("{}  {}", a.sha256, cfg.output_dir.join(&a.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
