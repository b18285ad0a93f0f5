use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use reuse_core::agents::StrategyKind;
use reuse_core::harness::{run_experiment, ExperimentConfig, TopologySource};

#[derive(Parser)]
#[command(
    name = "reuse",
    version,
    about = "Distributed Bayesian optimization of WLAN spatial reuse"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run strategies over seeded replications and write CSV metrics.
    Run(RunArgs),
    /// Write a generated topology as JSON.
    Gen {
        /// Generator spec, e.g. gen:office:10:5:50x30:7
        #[arg(long)]
        topology: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Topology file or generator spec (gen:office:... or gen:apartment:...).
    #[arg(long)]
    topology: Option<String>,
    /// inspire, default, dsc, thompson or all; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    first_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oracle override as key=value; repeatable.
    #[arg(long = "oracle-param", value_name = "KEY=VALUE")]
    oracle_param: Vec<String>,
    #[arg(long)]
    loss_prob: Option<f64>,
    /// Fixed regret reference in [0, 1] instead of the best observed reward.
    #[arg(long)]
    regret_reference: Option<f64>,
}

fn parse_strategies(raw: &[String]) -> Result<Vec<StrategyKind>> {
    let mut out = Vec::new();
    for name in raw {
        if name.eq_ignore_ascii_case("all") {
            out.extend(StrategyKind::ALL);
        } else {
            out.push(name.parse()?);
        }
    }
    out.dedup();
    Ok(out)
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        None => {
            let Some(topology) = &args.topology else {
                bail!("--topology is required without --config");
            };
            if args.strategy.is_empty() {
                bail!("--strategy is required without --config");
            }
            ExperimentConfig::new(topology.parse()?, Vec::new(), "results")
        }
    };
    if let Some(t) = args.topology {
        cfg.topology = t.parse::<TopologySource>()?;
    }
    if !args.strategy.is_empty() {
        cfg.strategies = parse_strategies(&args.strategy)?;
    }
    if let Some(v) = args.iters {
        cfg.iterations = v;
    }
    if let Some(v) = args.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = args.first_seed {
        cfg.first_seed = v;
    }
    if let Some(v) = args.out {
        cfg.out_dir = v;
    }
    if let Some(v) = args.loss_prob {
        cfg.loss_prob = v;
    }
    if args.regret_reference.is_some() {
        cfg.regret_reference = args.regret_reference;
    }
    for kv in &args.oracle_param {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--oracle-param expects KEY=VALUE, got `{kv}`"))?;
        let value: f64 = v.trim().parse().with_context(|| format!("bad number in `{kv}`"))?;
        cfg.oracle.set(k.trim(), value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let base = args.config.as_ref().and_then(|p| p.parent().map(PathBuf::from));
            let cfg = build_config(args)?;
            let summary = run_experiment(&cfg, base.as_deref())?;
            for s in &summary.strategies {
                println!(
                    "{:<9} final regret {:>8.3}  reward {:.4}  starving {:>5.1}  throughput {:>8.1} Mbps",
                    s.strategy.name(),
                    s.median_final_regret,
                    s.median_final_reward,
                    s.median_final_starving,
                    s.median_final_throughput
                );
            }
            println!("wrote {} in {:.1} s", cfg.out_dir.display(), summary.wall_time_s);
        }
        Command::Gen { topology, out } => {
            let source: TopologySource = topology.parse()?;
            if matches!(source, TopologySource::File(_)) {
                bail!("gen expects a gen:office:... or gen:apartment:... spec");
            }
            let t = source.resolve(None)?;
            std::fs::write(&out, t.to_json()).with_context(|| format!("writing {}", out.display()))?;
            println!("{} APs, {} STAs -> {}", t.ap_count(), t.sta_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
