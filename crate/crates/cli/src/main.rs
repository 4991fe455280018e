mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glyphmix::mixture::Variant;

use config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Runtime(String),
}

impl From<glyphmix::Error> for CliError {
    fn from(e: glyphmix::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Unsupervised typeface clustering of glyph images.
#[derive(Parser, Debug)]
#[command(name = "glyphmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Number of mixture components.
    #[arg(long, value_name = "INT")]
    k: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Dataset manifest (JSON Lines).
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    epochs: Option<usize>,
    /// Char classes to synthesize, e.g. `EFH`.
    #[arg(long, value_name = "LETTERS")]
    classes: Option<String>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|_| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a perturbed synthetic corpus, its manifest and truth records.
    Synth(CommonArgs),
    /// Fit one mixture per char class; writes a checkpoint and loss CSVs.
    Train(CommonArgs),
    /// Write clustering metrics and NLL bounds as JSON.
    Eval(CommonArgs),
    /// Write per-image cluster ids as CSV.
    Assign(CommonArgs),
    /// Write inverse-warped images and unaligned/aligned average images.
    Align(CommonArgs),
    /// Write template grids and example warped/edited templates.
    ExportTemplates(CommonArgs),
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            variant: self.variant,
            k: self.k,
            epochs: self.epochs,
            classes: self.classes.clone(),
            out: self.out.clone(),
            checkpoint: self.checkpoint.clone(),
            manifest: self.manifest.clone(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (args, cmd): (&CommonArgs, fn(&config::RunConfig) -> Result<(), CliError>) =
        match &cli.command {
            Command::Synth(a) => (a, commands::synth),
            Command::Train(a) => (a, commands::train),
            Command::Eval(a) => (a, commands::eval),
            Command::Assign(a) => (a, commands::assign),
            Command::Align(a) => (a, commands::align),
            Command::ExportTemplates(a) => (a, commands::export_templates),
        };
    let cfg = config::RunConfig::load(args.config.as_deref(), &args.overrides())?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
