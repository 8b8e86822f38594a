use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qoe_bandit::harness::{self, Aggregation, ExperimentConfig, Policy};
use qoe_bandit::simenv::Environment;
use qoe_bandit::solicitation::Schedule;

#[derive(Parser)]
#[command(name = "qoe-bandit", version, about = "QoE-driven DNN selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded multi-user experiment and write CSV outputs.
    Run(RunArgs),
    /// Pre-train a transfer QPN on pooled multi-user samples.
    Pretrain(PretrainArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Key-value (TOML) config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    sessions: Option<u64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// always | fss:<T> | fssut:<alpha>
    #[arg(long)]
    schedule: Option<Schedule>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// none | mean | sequence
    #[arg(long)]
    aggregation: Option<Aggregation>,
    #[arg(long)]
    mixed_fraction: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Parameter file from `pretrain`, used to initialize every learner.
    #[arg(long)]
    transfer_params: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&PathBuf>) -> qoe_bandit::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(args: RunArgs) -> qoe_bandit::Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { cfg.$field = v; })*};
    }
    set!(policy, sessions, users, seed, repetitions, schedule, lambda, gamma, aggregation, mixed_fraction, threads);
    cfg.validate()?;

    let pretrained = args.transfer_params.as_deref().map(harness::load_params).transpose()?;
    let result = harness::run_experiment_with(&cfg, pretrained.as_ref())?;
    harness::write_outputs(&result, &args.out)?;

    let (qoe, qoe_sd) = result.average_qoe();
    let regret = result.mean_regret().last().copied().unwrap_or(0.0);
    let m_regret = result.mean_m_regret().last().copied().unwrap_or(0.0);
    println!(
        "{}: {} runs x {} sessions, average QoE {qoe:.4} ± {qoe_sd:.4}, regret {regret:.3}, m-regret {m_regret:.3}",
        cfg.policy,
        result.runs.len(),
        cfg.sessions
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn pretrain(args: PretrainArgs) -> qoe_bandit::Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let env = Environment::new(cfg.env.clone())?;
    let params = harness::pretrain_transfer_qpn(
        &env,
        cfg.seed,
        cfg.pretrain_samples_per_user,
        cfg.pretrain_users,
        &cfg.pretrain_config(),
    )?;
    harness::save_params(&params, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Pretrain(args) => pretrain(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
