mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "geonode", version, about = "Compile, evaluate and fit differentiable shape programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a graph and print its evaluation order and parameter table.
    Compile {
        /// Graph file, or the name of a bundled graph.
        graph: String,
    },
    /// Evaluate a graph once.
    Eval(EvalArgs),
    /// Recover parameters for one scene directory.
    Fit(FitArgs),
    /// Generate synthetic scenes with known parameters.
    Synth(SynthArgs),
    /// Compare search variants over a directory of scenes.
    Bench(BenchArgs),
    /// Compare reverse-mode Chamfer gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    graph: String,
    /// Override one parameter, as NAME=VALUE. Repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Write the mesh as Wavefront OBJ.
    #[arg(long, value_name = "PATH")]
    obj: Option<PathBuf>,
    /// Report cold and warm forward times.
    #[arg(long)]
    time: bool,
    /// Repetitions for --time.
    #[arg(long, default_value_t = 100)]
    runs: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    graph: String,
    scene: PathBuf,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 30)]
    sims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    /// Skip Adam refinement at leaves.
    #[arg(long)]
    no_refine: bool,
    /// Select by exploration bonus only.
    #[arg(long)]
    no_exploit: bool,
    /// Cap on scene points used by the Chamfer term.
    #[arg(long, default_value_t = 2048)]
    max_points: usize,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    graph: String,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    views: usize,
    #[arg(long, default_value_t = 10000)]
    points: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    graph: String,
    scenes: PathBuf,
    /// Comma-separated subset of full, no_refine, no_refine_no_exploit, random.
    #[arg(long, default_value = "full,no_refine,no_refine_no_exploit,random")]
    variants: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 30)]
    sims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2048)]
    max_points: usize,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Exit with status 3 unless the full variant beats the ablations.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    graph: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Write the per-derivative report as JSON.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Compile { graph } => commands::compile(&graph),
        Command::Eval(a) => commands::eval(a),
        Command::Fit(a) => commands::fit(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
