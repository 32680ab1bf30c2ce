//! Command-line entry point for the solar trading laboratory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use solarlab::agents::{evaluate, run_episode, train, Policy, PpoConfig, PpoPolicy, RandomPolicy, SellOnly};
use solarlab::dataio::write_dataset_csv;
use solarlab::env::write_trajectory_csv;
use solarlab::forecast::{load_moe, save_moe, train_moe, write_forecast_audit, BestDayPolicy};
use solarlab::harness::{
    build_envs, derive_seed, emit_report, load_data, parse_override, run_experiment_into, run_gradcheck_suite,
    ExperimentConfig, ResultsTable, GRADCHECK_TOLERANCE,
};
use solarlab::nn::{load_params, save_params};
use solarlab::{seeded_rng, Error, Result};

#[derive(Parser)]
#[command(
    name = "solarlab",
    version,
    about = "Solar energy trading agents and price forecasters"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file (`key = value` lines with `[section]` headers)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Evaluation episodes
    #[arg(long)]
    episodes: Option<usize>,
    /// Override any config key, e.g. `--set ppo.clip=0.3` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentKind {
    SellOnly,
    Random,
    Ppo,
    Moe,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic `day,price,generation` dataset
    Synth {
        #[arg(long, default_value_t = 365)]
        days: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a PPO agent on the chronological training split
    TrainPpo {
        #[command(flatten)]
        common: Common,
    },
    /// Train the mixture-of-experts price forecaster
    TrainMoe {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate one agent on the test split
    Evaluate {
        #[arg(long, value_enum)]
        agent: AgentKind,
        /// Actor checkpoint for `ppo`, forecaster checkpoint for `moe`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the first episode's per-step trajectory here
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full protocol and write every table and chart
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference checks of every network's gradients
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

enum EpochTarget {
    Ppo,
    Moe,
}

fn load_config(c: &Common, epochs: EpochTarget) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &c.set {
        let (k, v) = parse_override(s)?;
        cfg.set(&k, &v)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(e) = c.epochs {
        match epochs {
            EpochTarget::Ppo => {
                cfg.ppo.epochs = e;
                cfg.ppo_short_epochs = cfg.ppo_short_epochs.min(e);
            }
            EpochTarget::Moe => cfg.moe.epochs = e,
        }
    }
    if let Some(n) = c.episodes {
        cfg.episodes.ppo = n;
        cfg.episodes.moe = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn header(cfg: &ExperimentConfig) -> String {
    format!(
        "# solarlab {} config_hash={} seed={}",
        env!("CARGO_PKG_VERSION"),
        cfg.hash(),
        cfg.seed
    )
}

fn cmd_synth(days: usize, c: &Common) -> Result<()> {
    let mut cfg = load_config(c, EpochTarget::Ppo)?;
    cfg.set("data.days", &days.to_string())?;
    if let Some(s) = c.seed {
        cfg.set("data.seed", &s.to_string())?;
    }
    let data = load_data(&cfg.data)?;
    let path = c.out.clone().unwrap_or_else(|| PathBuf::from("dataset.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_dataset_csv(&data, &path)?;
    println!("wrote {} days to {}", data.len(), path.display());
    Ok(())
}

fn cmd_train_ppo(c: &Common) -> Result<()> {
    let cfg = load_config(c, EpochTarget::Ppo)?;
    let data = load_data(&cfg.data)?;
    let (_, _, train_env, _) = build_envs(&data, &cfg)?;
    let ppo_cfg = PpoConfig {
        seed: cfg.seed,
        ..cfg.ppo.clone()
    };
    info!("training PPO for {} epochs on {} days", ppo_cfg.epochs, train_env.len());
    let out = train(&train_env, &ppo_cfg)?;
    create_dir(&cfg.out_dir)?;
    save_params(&out.agent.actor, &cfg.out_dir.join("actor.spnn"))?;
    save_params(&out.agent.critic, &cfg.out_dir.join("critic.spnn"))?;
    let results = ResultsTable {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        curve: out.curve,
        ..Default::default()
    };
    emit_report(&results, &cfg.out_dir)?;
    println!(
        "wrote actor.spnn, critic.spnn and training_curve.csv to {}",
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_train_moe(c: &Common) -> Result<()> {
    let cfg = load_config(c, EpochTarget::Moe)?;
    let data = load_data(&cfg.data)?;
    let moe_cfg = solarlab::forecast::MoeConfig {
        seed: cfg.seed,
        ..cfg.moe.clone()
    };
    info!(
        "training {} forecaster for {} epochs",
        moe_cfg.embedding, moe_cfg.epochs
    );
    let trained = train_moe(&data, &moe_cfg)?;
    create_dir(&cfg.out_dir)?;
    save_moe(&trained.model, &cfg.out_dir.join("moe.spmo"))?;
    let head = header(&cfg);
    write_forecast_audit(&trained.model, &data, &cfg.out_dir.join("forecast_audit.csv"), &head)?;
    let r = trained.report;
    let report = format!(
        "{head}\nembedding,train_mse,train_mse_augmented,test_rmse\n{},{},{},{}\n",
        moe_cfg.embedding, r.train_mse, r.train_mse_augmented, r.test_rmse
    );
    let path = cfg.out_dir.join("moe_report.csv");
    std::fs::write(&path, report).map_err(|e| Error::io(&path, e))?;
    println!("train MSE {:.4}  test RMSE {:.4}", r.train_mse, r.test_rmse);
    Ok(())
}

fn cmd_evaluate(agent: AgentKind, checkpoint: Option<&Path>, trajectory: Option<&Path>, c: &Common) -> Result<()> {
    let cfg = load_config(c, EpochTarget::Ppo)?;
    let data = load_data(&cfg.data)?;
    let (_, _, _, test_env) = build_envs(&data, &cfg)?;
    let need =
        |what: &str| checkpoint.ok_or_else(|| Error::Config(format!("--checkpoint is required for the {what} agent")));
    let (name, policy, episodes): (&str, Box<dyn Policy>, usize) = match agent {
        AgentKind::SellOnly => (
            "SellOnly",
            Box::new(SellOnly),
            c.episodes.unwrap_or(cfg.episodes.sell_only),
        ),
        AgentKind::Random => (
            "Random",
            Box::new(RandomPolicy),
            c.episodes.unwrap_or(cfg.episodes.random),
        ),
        AgentKind::Ppo => {
            let actor = load_params(need("ppo")?)?;
            (
                "PPO",
                Box::new(PpoPolicy {
                    actor,
                    greedy: cfg.ppo_greedy,
                }),
                cfg.episodes.ppo,
            )
        }
        AgentKind::Moe => {
            let model = load_moe(need("moe")?)?;
            let days: Vec<u32> = test_env.days().iter().map(|d| d.day).collect();
            ("MoE", Box::new(BestDayPolicy::new(&model, &days)?), cfg.episodes.moe)
        }
    };
    let seed = derive_seed(cfg.seed, 20);
    let result = evaluate(policy.as_ref(), &test_env, episodes, seed)?;
    create_dir(&cfg.out_dir)?;
    let mut csv = format!("{}\nepisode,total\n", header(&cfg));
    for (i, t) in result.totals.iter().enumerate() {
        csv.push_str(&format!("{},{t}\n", i + 1));
    }
    let path = cfg.out_dir.join(format!("eval_{}.csv", name.to_ascii_lowercase()));
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    if let Some(tp) = trajectory {
        let mut env = test_env.clone();
        env.record_trajectory(true);
        // same stream as the first evaluated episode
        run_episode(policy.as_ref(), &mut env, &mut seeded_rng(seed, 0))?;
        let rows = env.trajectory().unwrap_or(&[]);
        write_trajectory_csv(rows, tp, &format!("{}\n", header(&cfg)))?;
    }
    println!("{name}: mean total {:.4} over {episodes} episode(s)", result.mean);
    Ok(())
}

fn cmd_experiment(c: &Common) -> Result<()> {
    let cfg = load_config(c, EpochTarget::Ppo)?;
    let mut results = ResultsTable::default();
    let outcome = run_experiment_into(&cfg, &mut results);
    if let Err(e) = outcome {
        // flush what finished for post-mortem inspection
        let partial = cfg.out_dir.join("partial");
        if emit_report(&results, &partial).is_ok() {
            eprintln!("partial results written to {}", partial.display());
        }
        return Err(e);
    }
    emit_report(&results, &cfg.out_dir)?;
    let copy = cfg.out_dir.join("config.ini");
    std::fs::write(&copy, cfg.to_text()).map_err(|e| Error::io(&copy, e))?;
    println!("{:<12} {:>8} {:>14} {:>14}", "agent", "episodes", "mean", "reference");
    for a in &results.agents {
        let reference = a.reference_mean.map(|r| r.to_string()).unwrap_or_default();
        println!(
            "{:<12} {:>8} {:>14.4} {:>14}",
            a.name,
            a.totals.len(),
            a.mean,
            reference
        );
    }
    for r in &results.embeddings {
        println!(
            "{:<8} E={:<2} train MSE {:>10.4}  test RMSE {:>8.4}",
            r.embedding.to_string(),
            r.experts,
            r.report.train_mse,
            r.report.test_rmse
        );
    }
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<bool> {
    let cases = run_gradcheck_suite(seed)?;
    let mut ok = true;
    for c in &cases {
        println!(
            "{:<18} max rel error {:.3e} over {:>6} params  {}",
            c.name,
            c.report.max_rel_error,
            c.report.checked,
            if c.passed() { "PASS" } else { "FAIL" }
        );
        ok &= c.passed();
    }
    println!(
        "tolerance {GRADCHECK_TOLERANCE:e}: {}",
        if ok { "all passed" } else { "FAILED" }
    );
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::Synth { days, common } => cmd_synth(*days, common),
        Command::TrainPpo { common } => cmd_train_ppo(common),
        Command::TrainMoe { common } => cmd_train_moe(common),
        Command::Evaluate {
            agent,
            checkpoint,
            trajectory,
            common,
        } => cmd_evaluate(*agent, checkpoint.as_deref(), trajectory.as_deref(), common),
        Command::Experiment { common } => cmd_experiment(common),
        Command::Gradcheck { seed } => match cmd_gradcheck(*seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
