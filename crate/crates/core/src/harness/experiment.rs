use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{cumulative_regret, ema, median, quartiles, EMA_ALPHA};
use super::HarnessError;
use crate::agents::{Orchestrator, OrchestratorSettings, RoundOutcome, StrategyKind};
use crate::channel::ChannelOracle;

/// Trailing rounds summarized as the "final" behavior of a run.
pub const SUMMARY_WINDOW: usize = 50;

/// One round of one seeded run, as written to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    #[serde(rename = "iter")]
    pub iteration: usize,
    #[serde(rename = "reward")]
    pub global_reward: f64,
    #[serde(rename = "norm_reward")]
    pub normalized_reward: f64,
    /// Γ_t − Γ_{t−1}; not a CSV column, rebuilt from `regret` on read.
    #[serde(skip)]
    pub regret_increment: f64,
    #[serde(rename = "regret")]
    pub cumulative_regret: f64,
    #[serde(rename = "starving")]
    pub starving_count: usize,
    #[serde(rename = "cum_throughput_mbps")]
    pub cumulated_throughput: f64,
}

/// Raw outcome of one (strategy, seed) run.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub outcomes: Vec<RoundOutcome>,
    /// Wall-clock seconds spent in each round.
    pub round_seconds: Vec<f64>,
}

impl SeedRun {
    pub fn wall_seconds(&self) -> f64 {
        self.round_seconds.iter().sum()
    }

    pub fn normalized_rewards(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.normalized_reward).collect()
    }
}

pub fn run_seed(
    oracle: &ChannelOracle,
    strategy: StrategyKind,
    seed: u64,
    iterations: usize,
    loss_prob: f64,
) -> Result<SeedRun, HarnessError> {
    let mut settings = OrchestratorSettings::new(strategy, seed);
    settings.loss_prob = loss_prob;
    let mut orchestrator = Orchestrator::new(oracle.clone(), &settings);
    let mut outcomes = Vec::with_capacity(iterations);
    let mut round_seconds = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        outcomes.push(orchestrator.run_round()?);
        round_seconds.push(start.elapsed().as_secs_f64());
    }
    log::debug!("{strategy} seed {seed}: {iterations} rounds");
    Ok(SeedRun {
        strategy,
        seed,
        outcomes,
        round_seconds,
    })
}

/// Regret post-pass. The reference defaults to the best normalized reward
/// of any run; returns it with one record series per run.
pub fn finalize_runs(runs: &[SeedRun], reference: Option<f64>) -> (f64, Vec<Vec<MetricsRecord>>) {
    let reference = reference.unwrap_or_else(|| {
        runs.iter()
            .flat_map(|r| r.outcomes.iter().map(|o| o.normalized_reward))
            .fold(0.0, f64::max)
    });
    let records = runs
        .iter()
        .map(|run| {
            let gamma = cumulative_regret(&run.normalized_rewards(), reference);
            run.outcomes
                .iter()
                .zip(&gamma)
                .enumerate()
                .map(|(t, (o, &g))| MetricsRecord {
                    seed: run.seed,
                    iteration: o.iteration,
                    global_reward: o.global_reward,
                    normalized_reward: o.normalized_reward,
                    regret_increment: if t == 0 { g } else { g - gamma[t - 1] },
                    cumulative_regret: g,
                    starving_count: o.starving_count,
                    cumulated_throughput: o.cumulated_throughput,
                })
                .collect()
        })
        .collect();
    (reference, records)
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: Vec<MetricsRecord> = Vec::new();
    for row in rdr.deserialize() {
        let mut rec: MetricsRecord = row?;
        rec.regret_increment = match out.last() {
            Some(prev) if prev.seed == rec.seed && rec.iteration > 1 => rec.cumulative_regret - prev.cumulative_regret,
            _ => rec.cumulative_regret,
        };
        out.push(rec);
    }
    Ok(out)
}

fn write_quartiles_csv(path: &Path, series: &[Vec<MetricsRecord>]) -> Result<(), HarnessError> {
    type Column = fn(&MetricsRecord) -> f64;
    let columns: [(&str, Column); 4] = [
        ("norm_reward", |r| r.normalized_reward),
        ("regret", |r| r.cumulative_regret),
        ("starving", |r| r.starving_count as f64),
        ("cum_throughput_mbps", |r| r.cumulated_throughput),
    ];
    let smoothed: Vec<[Vec<f64>; 3]> = columns
        .iter()
        .map(|(_, get)| {
            let reps: Vec<Vec<f64>> = series.iter().map(|s| s.iter().map(get).collect()).collect();
            quartiles(&reps).map(|q| ema(&q, EMA_ALPHA))
        })
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iter".to_string()];
    for (name, _) in &columns {
        header.extend((1..=3).map(|q| format!("{name}_q{q}")));
    }
    w.write_record(&header)?;
    let len = smoothed[0][0].len();
    for t in 0..len {
        let mut row = vec![(t + 1).to_string()];
        for qs in &smoothed {
            row.extend(qs.iter().map(|q| q[t].to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub seeds: Vec<u64>,
    /// Γ at the last round, per seed.
    pub final_regret: Vec<f64>,
    pub median_final_regret: f64,
    /// Across seeds, of each seed's median over the last rounds.
    pub median_final_reward: f64,
    pub median_final_starving: f64,
    pub median_final_throughput: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub topology: String,
    pub ap_count: usize,
    pub sta_count: usize,
    pub iterations: usize,
    pub dt_ms: f64,
    pub regret_reference: f64,
    pub strategies: Vec<StrategySummary>,
    pub wall_time_s: f64,
}

fn tail_median(records: &[MetricsRecord], get: impl Fn(&MetricsRecord) -> f64) -> f64 {
    let start = records.len().saturating_sub(SUMMARY_WINDOW);
    median(&records[start..].iter().map(get).collect::<Vec<_>>())
}

fn summarize(strategy: StrategyKind, runs: &[&SeedRun], records: &[&Vec<MetricsRecord>]) -> StrategySummary {
    let final_regret: Vec<f64> = records
        .iter()
        .map(|r| r.last().map_or(0.0, |m| m.cumulative_regret))
        .collect();
    let across =
        |get: fn(&MetricsRecord) -> f64| median(&records.iter().map(|r| tail_median(r, get)).collect::<Vec<_>>());
    StrategySummary {
        strategy,
        seeds: runs.iter().map(|r| r.seed).collect(),
        median_final_regret: median(&final_regret),
        final_regret,
        median_final_reward: across(|m| m.normalized_reward),
        median_final_starving: across(|m| m.starving_count as f64),
        median_final_throughput: across(|m| m.cumulated_throughput),
        wall_time_s: runs.iter().map(|r| r.wall_seconds()).sum(),
    }
}

fn ensure_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

/// Run every (strategy, seed) pair, then write under `out_dir`:
/// `<strategy>/seed_<k>.csv`, `<strategy>/quartiles.csv` and `summary.json`.
/// Relative topology paths resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let topology = cfg.topology.resolve(base)?;
    let oracle = ChannelOracle::new(&topology, cfg.oracle.clone());
    ensure_dir(&cfg.out_dir)?;

    let jobs: Vec<(StrategyKind, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.seed_list().into_iter().map(move |seed| (s, seed)))
        .collect();
    let runs: Vec<SeedRun> = jobs
        .par_iter()
        .map(|&(strategy, seed)| run_seed(&oracle, strategy, seed, cfg.iterations, cfg.loss_prob))
        .collect::<Result<_, _>>()?;
    let (reference, records) = finalize_runs(&runs, cfg.regret_reference);

    let mut summaries = Vec::new();
    for &strategy in &cfg.strategies {
        let dir: PathBuf = cfg.out_dir.join(strategy.name());
        ensure_dir(&dir)?;
        let picked: Vec<usize> = (0..runs.len()).filter(|&k| runs[k].strategy == strategy).collect();
        for &k in &picked {
            write_metrics_csv(&dir.join(format!("seed_{}.csv", runs[k].seed)), &records[k])?;
        }
        let series: Vec<Vec<MetricsRecord>> = picked.iter().map(|&k| records[k].clone()).collect();
        write_quartiles_csv(&dir.join("quartiles.csv"), &series)?;
        summaries.push(summarize(
            strategy,
            &picked.iter().map(|&k| &runs[k]).collect::<Vec<_>>(),
            &picked.iter().map(|&k| &records[k]).collect::<Vec<_>>(),
        ));
    }

    let summary = ExperimentSummary {
        topology: cfg.topology.to_string(),
        ap_count: topology.ap_count(),
        sta_count: topology.sta_count(),
        iterations: cfg.iterations,
        dt_ms: cfg.dt_ms,
        regret_reference: reference,
        strategies: summaries,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let path = cfg.out_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| HarnessError::io(&path, e))?;
    Ok(summary)
}
