use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "mcf", version, about = "Train, evaluate and inspect fused prior/policy navigation controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one bundle per mode, one member per seed.
    Train(TrainArgs),
    /// Compare controllers on shared episodes and write report.json / report.md.
    Eval(EvalArgs),
    /// Run one traced episode.
    Demo(DemoArgs),
    /// Collect curves, heatmaps and the gating schedule into tidy CSVs.
    PlotData(PlotDataArgs),
    /// Validate an arena file or builtin name and check start-to-goal reachability.
    ArenaCheck(ArenaCheckArgs),
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// JSON run configuration; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory. Nothing is written outside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated modes: mcf, e2e, demo_buffer, no_gating.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Comma-separated builtin names or arena files.
    #[arg(long, value_delimiter = ',')]
    pub arenas: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Early-training exploration episodes recorded per mode into heatmap.csv.
    #[arg(long, default_value_t = 0)]
    pub heatmap_episodes: u64,
    #[arg(long, default_value = "corridor")]
    pub heatmap_arena: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained bundle directory; needed by mcf and policy_only.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Environment groups: train, unseen, or arena names/files.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["train".to_string(), "unseen".to_string()])]
    pub env: Vec<String>,
    /// Comma-separated: mcf, policy_only, prior, random.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["mcf".to_string(), "policy_only".to_string(), "prior".to_string(), "random".to_string()])]
    pub methods: Vec<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample the fused distribution instead of acting on its mean.
    #[arg(long)]
    pub stochastic: bool,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "unseen")]
    pub arena: String,
    /// mcf, policy_only, prior or random. Defaults to mcf with a bundle, prior without.
    #[arg(long)]
    pub controller: Option<String>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the per-step JSON-lines trace.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub stochastic: bool,
}

#[derive(Args, Debug)]
pub struct PlotDataArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Points sampled from the gating schedule.
    #[arg(long, default_value_t = 101)]
    pub alpha_points: usize,
}

#[derive(Args, Debug)]
pub struct ArenaCheckArgs {
    /// Builtin arena name or JSON file.
    pub arena: String,
    #[arg(long, default_value_t = 20.0)]
    pub resolution: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCF_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Demo(a) => commands::demo(a),
        Command::PlotData(a) => commands::plot_data(a),
        Command::ArenaCheck(a) => commands::arena_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
