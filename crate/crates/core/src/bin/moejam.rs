use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moejam::channel::mean_channel;
use moejam::config::RunConfig;
use moejam::gradcheck;
use moejam::oracle::{grid_search, policy_gap, PolicyGap};
use moejam::policy::{Algorithm, Checkpoint};
use moejam::report;
use moejam::sweep::{jobs, run_sweep};

#[derive(Parser)]
#[command(name = "moejam", version, about = "Friendly-jamming power allocation with diffusion and MoE policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (algorithm, seed) pair and write CSVs and checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated subset of moe_gdm, gdm, ddpg.
        #[arg(long, value_delimiter = ',')]
        algos: Option<Vec<Algorithm>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Hold the channel at its path-loss mean for every step.
        #[arg(long)]
        freeze_channel: bool,
    },
    /// Summarize a merged learning-curve CSV.
    Compare { csv: PathBuf },
    /// Project a merged CSV onto algorithm, mean_sr_sum, mean_see_sum.
    Scatter {
        csv: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search on the frozen channel, optionally scoring a checkpoint.
    Oracle {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the full default configuration.
    DefaultConfig,
}

fn load(config: &ConfigArg) -> Result<RunConfig, String> {
    match &config.config {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(RunConfig::default()),
    }
}

fn open(path: &Path) -> Result<File, String> {
    File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Train { config, algos, seeds, out, workers, freeze_channel } => {
            let mut cfg = load(&config)?;
            if freeze_channel {
                cfg.env.freeze_channel = true;
            }
            let algorithms = match algos {
                Some(a) => a,
                None => cfg.algorithms().map_err(|e| e.to_string())?,
            };
            let seeds = seeds.unwrap_or_else(|| cfg.run.seeds.clone());
            let out = out.unwrap_or_else(|| cfg.run.out_dir.clone());
            let workers = workers.unwrap_or(cfg.run.workers);
            let sweep = run_sweep(&cfg, &jobs(&algorithms, &seeds), &out, workers).map_err(|e| e.to_string())?;
            print!("{}", sweep.summary);
            Ok(sweep.all_ok())
        }
        Command::Compare { csv } => {
            let rows = report::read_records(open(&csv)?).map_err(|e| e.to_string())?;
            print!("{}", report::compare(&rows).map_err(|e| e.to_string())?.render());
            Ok(true)
        }
        Command::Scatter { csv, out } => {
            let input = open(&csv)?;
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(&path).map_err(|e| e.to_string())?);
                    report::scatter(input, &mut w).map_err(|e| e.to_string())?;
                    w.flush().map_err(|e| e.to_string())?;
                }
                None => {
                    report::scatter(input, &mut io::stdout().lock()).map_err(|e| e.to_string())?;
                }
            }
            Ok(true)
        }
        Command::Oracle { config, resolution, checkpoint } => {
            let cfg = load(&config)?;
            let resolution = resolution.unwrap_or(cfg.oracle.resolution);
            let ch = mean_channel(&cfg.scenario).map_err(|e| e.to_string())?;
            let best = grid_search(&ch, &cfg.scenario, cfg.env.reward_weight, resolution, cfg.oracle.budget).map_err(|e| e.to_string())?;
            let powers: Vec<String> = best.best_allocation.powers().iter().map(|p| p.to_string()).collect();
            println!("resolution,evaluations,best_reward,best_allocation");
            println!("{},{},{},{}", best.resolution, best.evaluations, best.best_reward, powers.join(" "));
            if let Some(path) = checkpoint {
                let ckpt = Checkpoint::load(&path).map_err(|e| e.to_string())?;
                let gap = policy_gap(&ckpt.policy, &ch, &cfg.scenario, &cfg.env, resolution, cfg.oracle.rollout_seed)
                    .map_err(|e| e.to_string())?;
                match gap {
                    PolicyGap::Ratio { ratio, policy_reward, .. } => {
                        println!("policy_reward,policy_gap\n{policy_reward},{ratio}")
                    }
                    PolicyGap::Degenerate => println!("policy_gap\ndegenerate"),
                }
            }
            Ok(true)
        }
        Command::Gradcheck { draws, seed } => {
            let reports = gradcheck::run_suite(draws, seed);
            println!("check,draws,checked,skipped_kinks,max_rel_error,tolerance,status");
            for r in &reports {
                println!(
                    "{},{},{},{},{:e},{:e},{}",
                    r.name,
                    r.draws,
                    r.checked,
                    r.skipped_kinks,
                    r.max_rel_error,
                    r.tolerance,
                    if r.passed() { "pass" } else { "FAIL" }
                );
            }
            Ok(reports.iter().all(|r| r.passed()))
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
