//! Command-line front end for the truck-and-drone solver.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors
//! (missing or malformed files, bad instances), 3 for numeric failures
//! (decoding, training, or gap arithmetic). `TSPD_THREADS` caps the
//! worker pool before any parallel work starts.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tspd_core::decoder::{decode_eval, DecodeMode};
use tspd_core::env::Trajectory;
use tspd_core::eval::{evaluate, format_table, write_csv, EvalMode};
use tspd_core::instance::{
    generate_instances, load_instances, save_instances, Family, Instance,
};
use tspd_core::model::ModelConfig;
use tspd_core::nn::checkpoint;
use tspd_core::nn::tensor::Parameters;
use tspd_core::oracle::{exact_optimum, greedy_nearest, random_rollout, EXACT_LIMIT};
use tspd_core::par::limit_threads;
use tspd_core::render::render_svg;
use tspd_core::rng::Rng;
use tspd_core::training::{train, Mode, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "tspd", version, about = "Truck-and-drone delivery routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reproducible instance set.
    Generate(GenerateArgs),
    /// Train the policy and critic networks.
    Train(TrainArgs),
    /// Evaluate a checkpoint over an instance set.
    Eval(EvalArgs),
    /// Solve an instance set with a reference solver.
    Oracle(OracleArgs),
    /// Solve one instance with a checkpoint and dump the trajectory.
    Solve(SolveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    CornerDepot,
    RandomDepot,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::CornerDepot => Family::CornerDepot,
            FamilyArg::RandomDepot => Family::RandomDepot,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Nodes per instance, depot included.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FamilyArg::CornerDepot)]
    family: FamilyArg,
    /// Coordinate scale of the unit square.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Drone-to-truck speed ratio.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Output directory for inst_NNNN.txt files and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 500)]
    epochs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr_actor: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr_critic: f64,
    /// Priority gate threshold on the mean absolute advantage.
    #[arg(long, default_value_t = 0.5)]
    gate: f64,
    #[arg(long, value_enum, default_value_t = FamilyArg::CornerDepot)]
    family: FamilyArg,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    validate_every: u64,
    #[arg(long, default_value_t = 100)]
    validation_size: usize,
    /// Apply updates inline instead of on dedicated threads.
    #[arg(long)]
    sync: bool,
    /// Model shape, e.g. "d_h=128 heads=8 layers=3 d_ff=512 d_sparse=16 l_dec=1".
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "train_out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalModeArg {
    Greedy,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Exact,
    Greedy,
    File,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory produced by `generate`.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalModeArg::Greedy)]
    mode: EvalModeArg,
    /// Samples per instance in sample mode.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source of reference costs for gap reporting.
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
    /// CSV of reference costs (instance,cost) when --reference file.
    #[arg(long)]
    refs_file: Option<PathBuf>,
    /// Write the per-instance report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Exact,
    Greedy,
    Random,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instances: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverArg::Exact)]
    solver: SolverArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write instance,cost CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A single instance file.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalModeArg::Greedy)]
    mode: EvalModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render the route to this SVG file.
    #[arg(long)]
    svg: Option<PathBuf>,
}

enum CliError {
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn numeric<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numeric(e.to_string())
}

fn load_checkpoint(path: &Path) -> Result<(Parameters, ModelConfig), CliError> {
    let ckpt = checkpoint::load(path).map_err(data)?;
    let cfg = ModelConfig::parse(&ckpt.config).map_err(CliError::Data)?;
    Ok((ckpt.params, cfg))
}

fn run_generate(args: GenerateArgs) -> Result<(), CliError> {
    let set = generate_instances(
        args.n,
        args.count,
        args.seed,
        args.family.into(),
        args.scale,
        args.alpha,
    )
    .map_err(data)?;
    save_instances(&set, &args.out).map_err(data)?;
    println!(
        "wrote {} instances of {} nodes to {}",
        set.instances.len(),
        args.n,
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let model = match &args.model {
        Some(text) => ModelConfig::parse(text).map_err(CliError::Data)?,
        None => ModelConfig::default(),
    };
    let cfg = TrainConfig {
        model,
        n: args.n,
        batch: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        lr_actor: args.lr_actor,
        lr_critic: args.lr_critic,
        gate: args.gate,
        family: args.family.into(),
        scale: args.scale,
        alpha: args.alpha,
        validate_every: args.validate_every,
        validation_size: args.validation_size,
        mode: if args.sync { Mode::Sync } else { Mode::Async },
        out_dir: args.out,
    };
    let report = train(&cfg).map_err(|e| match e {
        TrainError::Decode(_) => numeric(e),
        _ => data(e),
    })?;
    println!(
        "trained {} epochs ({} actor updates, {} critic updates)",
        report.epochs_run, report.actor_updates, report.critic_updates
    );
    println!("best validation cost {}", report.best_val_cost);
    println!("final validation cost {}", report.final_val_cost);
    println!("metrics: {}", report.metrics.display());
    println!("checkpoint: {}", report.checkpoint.display());
    Ok(())
}

fn read_refs_file(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(data)?;
    let mut refs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("instance") {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line);
        let cost: f64 = field
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("{}:{}: bad cost {field:?}", path.display(), ln + 1)))?;
        refs.push(cost);
    }
    Ok(refs)
}

fn reference_costs(
    choice: ReferenceArg,
    refs_file: Option<&Path>,
    insts: &[Instance],
) -> Result<Vec<f64>, CliError> {
    match choice {
        ReferenceArg::File => {
            let path = refs_file
                .ok_or_else(|| CliError::Data("--reference file needs --refs-file".into()))?;
            read_refs_file(path)
        }
        ReferenceArg::Exact => insts
            .iter()
            .map(|inst| exact_optimum(inst).map(|s| s.cost).map_err(numeric))
            .collect(),
        ReferenceArg::Greedy => insts
            .iter()
            .map(|inst| greedy_nearest(inst).map(|s| s.cost).map_err(numeric))
            .collect(),
    }
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let (params, cfg) = load_checkpoint(&args.checkpoint)?;
    let set = load_instances(&args.instances).map_err(data)?;
    let refs = match args.reference {
        Some(choice) => Some(reference_costs(choice, args.refs_file.as_deref(), &set.instances)?),
        None => None,
    };
    let mode = match args.mode {
        EvalModeArg::Greedy => EvalMode::Greedy,
        EvalModeArg::Sample => EvalMode::BestOf(args.k),
    };
    let report = evaluate(&params, &set.instances, refs.as_deref(), &cfg, mode, args.seed)
        .map_err(numeric)?;
    print!("{}", format_table(&report));
    if let Some(path) = &args.csv {
        write_csv(&report, path).map_err(data)?;
        println!("csv: {}", path.display());
    }
    Ok(())
}

fn run_oracle(args: OracleArgs) -> Result<(), CliError> {
    let set = load_instances(&args.instances).map_err(data)?;
    let mut lines = vec!["instance,cost".to_string()];
    for (i, inst) in set.instances.iter().enumerate() {
        let cost = match args.solver {
            SolverArg::Exact => {
                if inst.n() > EXACT_LIMIT {
                    return Err(CliError::Data(format!(
                        "exact solver handles at most {EXACT_LIMIT} nodes, instance {i} has {}",
                        inst.n()
                    )));
                }
                exact_optimum(inst).map_err(numeric)?.cost
            }
            SolverArg::Greedy => greedy_nearest(inst).map_err(numeric)?.cost,
            SolverArg::Random => {
                let mut rng = Rng::new(args.seed).derive(i as u64);
                random_rollout(inst, &mut rng).map_err(numeric)?.cost()
            }
        };
        lines.push(format!("{i},{cost}"));
    }
    let text = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).map_err(data)?;
            println!("wrote {} costs to {}", set.instances.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_solve(args: SolveArgs) -> Result<(), CliError> {
    let (params, cfg) = load_checkpoint(&args.checkpoint)?;
    let inst = Instance::load(&args.instance).map_err(data)?;
    let mut rng = Rng::new(args.seed);
    let mode = match args.mode {
        EvalModeArg::Greedy => DecodeMode::Greedy,
        EvalModeArg::Sample => DecodeMode::Sample,
    };
    let traj: Trajectory = decode_eval(&params, &inst, &cfg, mode, &mut rng).map_err(numeric)?;
    print!("{}", traj.dump());
    if let Some(path) = &args.svg {
        std::fs::write(path, render_svg(&traj, &inst)).map_err(data)?;
        println!("svg: {}", path.display());
    }
    Ok(())
}

fn main() {
    if let Ok(text) = std::env::var("TSPD_THREADS") {
        match text.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = limit_threads(n) {
                    eprintln!("could not limit threads: {e}");
                    std::process::exit(2);
                }
            }
            _ => {
                eprintln!("TSPD_THREADS must be a positive integer, got {text:?}");
                std::process::exit(2);
            }
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) =>
        {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };

    let result = match cli.command {
        Command::Generate(args) => run_generate(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Oracle(args) => run_oracle(args),
        Command::Solve(args) => run_solve(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}
