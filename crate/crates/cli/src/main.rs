use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use coopfl_core::attack::AttackKind;
use coopfl_core::config::{metadata_text, Attackers, ScenarioConfig};
use coopfl_core::engine::{resolve_thresholds, run_experiment, ExperimentPlan};
use coopfl_core::metrics::{metrics_csv, seesaw_csv, sweep_csv, write_file, SweepRow};
use coopfl_core::strategies::{CooperationMode, StrategyKind};

/// Worker threads; unset or 0 means one per core.
const WORKERS_ENV: &str = "COOPFL_WORKERS";

#[derive(Parser)]
#[command(name = "coopfl", version, about = "Choice-based federated learning simulator for cell sleep control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and metadata.toml.
    Run(RunArgs),
    /// FedAvg against the configured strategy for 0..=A attackers.
    Sweep(SweepArgs),
    /// One staged run with a decreasing number of attackers.
    Seesaw(SeesawArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long = "attack-kind")]
    attack_kind: Option<String>,
    #[arg(long)]
    attackers: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Highest attacker count, as `A` or `0..A`.
    #[arg(long)]
    attackers: String,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
}

#[derive(Args)]
struct SeesawArgs {
    #[command(flatten)]
    common: Common,
    /// Active attackers per stage, e.g. `4,3,2,1,0`.
    #[arg(long, value_delimiter = ',')]
    schedule: Vec<usize>,
    /// Rounds per stage; defaults to the config value, else 8.
    #[arg(long = "rounds-per-stage")]
    rounds_per_stage: Option<usize>,
}

/// Failures split by exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<coopfl_core::Error> for Failure {
    fn from(e: coopfl_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Seesaw(args) => cmd_seesaw(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn workers() -> Result<usize, Failure> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| config_error(anyhow!("{WORKERS_ENV} must be a non-negative integer, got {v:?}"))),
    }
}

struct Loaded {
    config: ScenarioConfig,
    defaulted: Vec<String>,
}

impl Loaded {
    fn read(path: &Path) -> Result<Self, Failure> {
        let loaded = ScenarioConfig::load(path).map_err(config_error)?;
        Ok(Self { config: loaded.config, defaulted: loaded.defaulted })
    }

    /// Drops `section.key` from the defaulted list after a flag set it.
    fn overridden(&mut self, key: &str) {
        let prefix = format!("{key} = ");
        self.defaulted.retain(|d| !d.starts_with(&prefix));
    }

    fn plan(&self) -> Result<ExperimentPlan, Failure> {
        self.config.to_plan().map_err(config_error)
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut loaded = Loaded::read(&args.common.config)?;
    let cfg = &mut loaded.config;
    let mut set = Vec::new();
    if let Some(s) = &args.strategy {
        cfg.strategy.kind = s.parse::<StrategyKind>().map_err(config_error)?;
        set.push("strategy.kind");
    }
    if let Some(k) = &args.attack_kind {
        cfg.attack.kind = k.parse::<AttackKind>().map_err(config_error)?;
        set.push("attack.kind");
    }
    if let Some(n) = args.attackers {
        cfg.attack.attackers = Attackers::Count(n);
        set.push("attack.attackers");
    }
    if let Some(g) = args.gamma {
        cfg.attack.gamma = g;
        set.push("attack.gamma");
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
        set.push("run.seed");
    }
    cfg.run.workers = workers()?;
    for key in set {
        loaded.overridden(key);
    }
    let plan = loaded.plan()?;
    let result = run_experiment(&plan).context("experiment failed")?;
    let out = &args.common.out;
    write_file(&out.join("metrics.csv"), &metrics_csv(&result.records)?)?;
    let mut resolved = loaded.config.clone();
    resolved.run.workers = 0;
    let meta = metadata_text(&resolved, &result.thresholds, &loaded.defaulted)?;
    write_file(&out.join("metadata.toml"), meta.as_bytes())?;
    let s = result.summary;
    println!(
        "{} rounds: throughput {:.4e} bit/s, energy efficiency {:.4e} bit/J, reward {:.4}, risk {:.3}, cooperation {:.3}",
        result.records.len(),
        s.system_throughput,
        s.energy_efficiency,
        s.mean_benign_reward,
        s.risk_level,
        s.cooperation_level
    );
    Ok(())
}

fn parse_max_attackers(text: &str) -> Result<usize> {
    let upper = match text.split_once("..") {
        Some((lo, hi)) => {
            if lo.trim() != "0" {
                bail!("attacker range must start at 0, got {text:?}");
            }
            hi.trim_start_matches('=')
        }
        None => text,
    };
    upper.trim().parse().with_context(|| format!("bad attacker count {text:?}"))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("building worker pool")
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let loaded = Loaded::read(&args.common.config)?;
    let max = parse_max_attackers(&args.attackers).map_err(config_error)?;
    if args.replicas == 0 {
        return Err(config_error(anyhow!("--replicas must be positive")));
    }
    let base = loaded.plan()?;
    if max >= base.run.clients {
        return Err(config_error(anyhow!("--attackers {max} needs fewer than run.clients = {}", base.run.clients)));
    }
    let choice = base.strategy.kind.name();
    let mut fedavg = base.clone();
    fedavg.strategy.kind = StrategyKind::FedAvg;
    fedavg.strategy.cooperation = CooperationMode::Fixed(1.0);
    let frameworks = [("fedavg", fedavg), (choice, base.clone())];

    let mut jobs = Vec::new();
    for (name, plan) in &frameworks {
        for a in 0..=max {
            for r in 0..args.replicas {
                let mut p = plan.clone();
                p.run.seed = base.run.seed + r as u64;
                p.run.workers = 1;
                p.attack.attackers = (0..a).collect();
                jobs.push((*name, a, r, p));
            }
        }
    }
    let out = &args.common.out;
    let results = pool(workers()?)?.install(|| {
        jobs.par_iter()
            .map(|(name, a, r, plan)| -> Result<_> {
                let result = run_experiment(plan).with_context(|| format!("{name} with {a} attackers, replica {r}"))?;
                let dir = out.join("runs").join(format!("{name}-a{a}-r{r}"));
                write_file(&dir.join("metrics.csv"), &metrics_csv(&result.records)?)?;
                Ok(result.summary)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::new();
    for (name, _) in &frameworks {
        for a in 0..=max {
            let runs: Vec<_> =
                jobs.iter().zip(&results).filter(|(j, _)| j.0 == *name && j.1 == a).map(|(_, s)| s).collect();
            rows.push(SweepRow {
                framework: name.to_string(),
                attackers: a,
                throughput: runs.iter().map(|s| s.system_throughput).collect(),
                energy_efficiency: runs.iter().map(|s| s.energy_efficiency).collect(),
                reward: runs.iter().map(|s| s.mean_benign_reward).collect(),
            });
        }
    }
    write_file(&out.join("sweep_summary.csv"), &sweep_csv(&rows)?)?;
    let thresholds = resolve_thresholds(&base)?;
    write_file(&out.join("metadata.toml"), metadata_text(&loaded.config, &thresholds, &loaded.defaulted)?.as_bytes())?;
    for row in &rows {
        println!(
            "{:<18} attackers {}  throughput {:.4e}  energy efficiency {:.4e}  reward {:.4}",
            row.framework,
            row.attackers,
            coopfl_core::metrics::mean(&row.throughput),
            coopfl_core::metrics::mean(&row.energy_efficiency),
            coopfl_core::metrics::mean(&row.reward)
        );
    }
    Ok(())
}

fn cmd_seesaw(args: SeesawArgs) -> Result<(), Failure> {
    let mut loaded = Loaded::read(&args.common.config)?;
    if args.schedule.is_empty() {
        return Err(config_error(anyhow!("--schedule needs at least one stage")));
    }
    let per = args.rounds_per_stage.or(Some(loaded.config.attack.rounds_per_stage).filter(|p| *p > 0)).unwrap_or(8);
    if per == 0 {
        return Err(config_error(anyhow!("--rounds-per-stage must be positive")));
    }
    let peak = args.schedule.iter().copied().max().unwrap_or(0);
    let cfg = &mut loaded.config;
    cfg.attack.attackers = Attackers::Count(peak);
    cfg.attack.stages = args.schedule.clone();
    cfg.attack.rounds_per_stage = per;
    cfg.run.rounds = per * args.schedule.len();
    cfg.run.workers = workers()?;
    for key in ["attack.attackers", "attack.stages", "attack.rounds_per_stage", "run.rounds"] {
        loaded.overridden(key);
    }
    let plan = loaded.plan()?;
    let result = run_experiment(&plan).context("staged experiment failed")?;
    let out = &args.common.out;
    write_file(&out.join("seesaw.csv"), &seesaw_csv(&result.records, per, args.schedule.len())?)?;
    let mut resolved = loaded.config.clone();
    resolved.run.workers = 0;
    write_file(
        &out.join("metadata.toml"),
        metadata_text(&resolved, &result.thresholds, &loaded.defaulted)?.as_bytes(),
    )?;
    for (stage, attackers) in args.schedule.iter().enumerate() {
        let recs = &result.records[stage * per..(stage + 1) * per];
        let mean = |f: fn(&coopfl_core::engine::RoundRecord) -> f64| recs.iter().map(f).sum::<f64>() / per as f64;
        println!(
            "stage {stage} ({attackers} attackers): risk {:.3}  cooperation {:.3}  reward {:.4}",
            mean(|r| r.risk_level),
            mean(|r| r.cooperation_level),
            mean(|r| r.mean_benign_reward)
        );
    }
    Ok(())
}
