//! `fairtab` command line: synthetic data, generator and encoder training,
//! embedding export, evaluation and ablation reports.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;
pub mod svg;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairtab::faircl::{Augmentation, Representation};

/// Bad input or configuration; exit code 1.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// 1 for rejected inputs, 2 for failures during the work itself
/// (non-finite numerics, IO on outputs).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ValidationError>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<fairtab::Error>() {
            use fairtab::Error as E;
            return match e {
                E::NonFinite(_) | E::Io { .. } | E::Serde(_) => EXIT_RUNTIME,
                _ => EXIT_VALIDATION,
            };
        }
    }
    EXIT_RUNTIME
}

#[derive(Debug, Parser)]
#[command(name = "fairtab", version, about = "Fair representations for tabular data")]
pub struct Cli {
    /// Log training progress.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic benchmark and its schema.
    Synth(SynthArgs),
    /// Train the counterfactual generator.
    FitGenerator(FitGeneratorArgs),
    /// Write a counterfactual twin for every row of a dataset.
    Counterfactuals(CounterfactualArgs),
    /// Train the encoder and keep its last snapshots.
    FitEncoder(FitEncoderArgs),
    /// Export embeddings of a dataset under one snapshot.
    Embed(EmbedArgs),
    /// Probe the snapshots (or raw features) and write metrics and plots.
    Evaluate(EvaluateArgs),
    /// Merge metrics files into one comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Strength of the group dependence.
    #[arg(long, default_value_t = 2.0)]
    pub bias: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `data.csv` and `schema.toml`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed for every stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config `out_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitGeneratorArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[arg(long)]
    pub generator: PathBuf,
    /// CSV in the generator's schema.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AugArg {
    Tabmix,
    Gaussian,
    Dropout,
}

impl From<AugArg> for Augmentation {
    fn from(a: AugArg) -> Self {
        match a {
            AugArg::Tabmix => Augmentation::TabMix,
            AugArg::Gaussian => Augmentation::Gaussian,
            AugArg::Dropout => Augmentation::Dropout,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReprArg {
    Contrastive,
    Projection,
}

impl From<ReprArg> for Representation {
    fn from(r: ReprArg) -> Self {
        match r {
            ReprArg::Contrastive => Representation::Contrastive,
            ReprArg::Projection => Representation::Projection,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitEncoderArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Generator checkpoint; defaults to `<out_dir>/generator.json`.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub no_align: bool,
    #[arg(long)]
    pub no_distribution: bool,
    #[arg(long)]
    pub no_self_kd: bool,
    #[arg(long, value_enum)]
    pub aug: Option<AugArg>,
    /// Layer served to downstream probes.
    #[arg(long, value_enum)]
    pub representation: Option<ReprArg>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    /// CSV in the snapshot's schema.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Probe the encoded inputs instead of the snapshots.
    #[arg(long)]
    pub raw: bool,
    /// Defaults to `<out_dir>/generator.json`.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Defaults to `<out_dir>/encoder`.
    #[arg(long)]
    pub encoder_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSVs or run directories, in table order.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::FitGenerator(a) => commands::fit_generator(&a),
        Command::Counterfactuals(a) => commands::counterfactuals(&a),
        Command::FitEncoder(a) => commands::fit_encoder(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        assert_eq!(exit_code(&invalid("x")), 1);
        assert_eq!(exit_code(&fairtab::Error::NonFinite("loss".into()).into()), 2);
        let wrapped = anyhow::Error::from(fairtab::Error::Schema("s".into())).context("loading");
        assert_eq!(exit_code(&wrapped), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("disk full")), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
