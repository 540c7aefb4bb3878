mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spoofcm::experiment::ClassifierKind;
use spoofcm::features::{Dynamics, FeatureKind};
use spoofcm::protocol::{Domain, Split};
use spoofcm::synthgen::SpoofRecipe;

#[derive(Parser, Debug)]
#[command(name = "spoofcm", version, about = "Spoofing countermeasure toolkit: synthesis, features, classifiers and evaluation")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth(SynthArgs),
    /// Extract and cache features for every utterance of a manifest.
    Extract(ExtractArgs),
    /// Train a countermeasure on the train split.
    Train(TrainArgs),
    /// Score one split of one domain with a trained model.
    Score(ScoreArgs),
    /// Compute minDCF and EER from a score file.
    Evaluate(EvaluateArgs),
    /// Run the native-versus-combined grid over features and classifiers.
    Experiment(ExperimentArgs),
    /// Manifest utilities.
    #[command(subcommand)]
    Manifest(ManifestCommand),
}

#[derive(Subcommand, Debug)]
enum ManifestCommand {
    /// Check speaker disjointness and print per-split counts.
    Validate {
        manifest: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct CorpusArgs {
    /// JSON corpus description; flags below override its fields.
    #[arg(long)]
    corpus_config: Option<PathBuf>,
    #[arg(long)]
    speakers_per_domain: Option<usize>,
    #[arg(long)]
    utts_per_speaker: Option<usize>,
    /// Attack recipe `ATTACK=kind:lo:hi`; repeat for several.
    #[arg(long = "recipe", value_parser = parse_recipe)]
    recipes: Vec<SpoofRecipe>,
    #[arg(long)]
    min_duration_s: Option<f64>,
    #[arg(long)]
    max_duration_s: Option<f64>,
}

fn parse_recipe(s: &str) -> Result<SpoofRecipe, String> {
    s.parse().map_err(|e: spoofcm::synthgen::SynthError| e.to_string())
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for `wav/` and `manifest.tsv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    corpus: CorpusArgs,
}

/// Experiment configuration: a JSON file plus per-field overrides.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    feature: Option<FeatureKind>,
    #[arg(long)]
    classifier: Option<ClassifierKind>,
    #[arg(long, value_delimiter = ',')]
    train_domains: Option<Vec<Domain>>,
    #[arg(long, value_delimiter = ',')]
    eval_domains: Option<Vec<Domain>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    #[arg(long)]
    pi_spf: Option<f64>,
    #[arg(long)]
    num_ceps: Option<usize>,
    #[arg(long)]
    include_c0: Option<bool>,
    #[arg(long, value_parser = parse_dynamics)]
    dynamics: Option<Dynamics>,
    #[arg(long)]
    num_filters: Option<usize>,
    #[arg(long)]
    cqt_bins_per_octave: Option<usize>,
    #[arg(long)]
    cqt_octaves: Option<usize>,
    #[arg(long)]
    resample_period: Option<usize>,
    #[arg(long)]
    gmm_components: Option<usize>,
    #[arg(long)]
    gmm_max_iter: Option<usize>,
    #[arg(long)]
    gmm_max_frames_per_class: Option<usize>,
    #[arg(long)]
    gbdt_num_trees: Option<usize>,
    #[arg(long)]
    gbdt_max_depth: Option<usize>,
    #[arg(long)]
    gbdt_learning_rate: Option<f64>,
    /// Grid features for `experiment`.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<FeatureKind>>,
    /// Grid classifiers for `experiment`.
    #[arg(long, value_delimiter = ',')]
    classifiers: Option<Vec<ClassifierKind>>,
}

fn parse_dynamics(s: &str) -> Result<Dynamics, String> {
    match s {
        "static" => Ok(Dynamics::Static),
        "delta" => Ok(Dynamics::Delta),
        "delta_delta" => Ok(Dynamics::DeltaDelta),
        other => Err(format!("unknown dynamics '{other}' (static, delta, delta_delta)")),
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache_dir: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache_dir: PathBuf,
    #[arg(long)]
    eval_domain: Domain,
    #[arg(long, default_value = "eval")]
    split: Split,
    #[arg(long)]
    scores_out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Manifest used to group spoof trials by attack.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Existing corpus manifest.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    manifest: Option<PathBuf>,
    /// Generate a corpus into this directory first.
    #[arg(long)]
    synth: Option<PathBuf>,
    /// Directory for feature caches (defaults next to the manifest).
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Where to write `results.csv`, `results.txt` and `metadata.json` (defaults to the work directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
