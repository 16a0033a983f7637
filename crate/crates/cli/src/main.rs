use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use sponsored_market::competitive::SolverSettings;
use sponsored_market::experiment::{self, ExperimentConfig, Mode, SweepSpec};
use sponsored_market::model::GenerationConfig;

/// Runs seeded sponsored-data market experiments and writes one CSV row per
/// instance and solution mode.
#[derive(Debug, Parser)]
#[command(name = "sponsored-market", version)]
struct Args {
    /// Flat key=value file using the long flag names; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mu_a: Option<f64>,
    #[arg(long)]
    mu_b: Option<f64>,
    #[arg(long)]
    mu_g: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    /// Base seed; replication k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// competitive, cooperative or both.
    #[arg(long)]
    mode: Option<String>,
    /// param:start:stop:steps with param one of n, mu_g, c.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

const KEYS: [&str; 15] = [
    "n",
    "mu-a",
    "mu-b",
    "mu-g",
    "c",
    "gamma",
    "s",
    "t",
    "seed",
    "mode",
    "sweep",
    "replications",
    "tol",
    "max-iter",
    "out",
];

fn read_config_file(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), lineno + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown key {key:?}", path.display(), lineno + 1);
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Flag value, else file value, else none.
fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
) -> anyhow::Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("config key {key}: {e}")),
    }
}

fn build_config(args: Args) -> anyhow::Result<ExperimentConfig> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => HashMap::new(),
    };
    let defaults = GenerationConfig::default();
    let generation = GenerationConfig {
        n: pick(args.n, &file, "n")?.unwrap_or(defaults.n),
        mu_a: pick(args.mu_a, &file, "mu-a")?.unwrap_or(defaults.mu_a),
        mu_b: pick(args.mu_b, &file, "mu-b")?.unwrap_or(defaults.mu_b),
        mu_g: pick(args.mu_g, &file, "mu-g")?.unwrap_or(defaults.mu_g),
        c: pick(args.c, &file, "c")?.unwrap_or(defaults.c),
        gamma: pick(args.gamma, &file, "gamma")?.unwrap_or(defaults.gamma),
        s: pick(args.s, &file, "s")?.unwrap_or(defaults.s),
        t: pick(args.t, &file, "t")?.unwrap_or(defaults.t),
        seed: pick(args.seed, &file, "seed")?.unwrap_or(defaults.seed),
    };
    let base = ExperimentConfig::default();
    let mut solver = SolverSettings::default();
    if let Some(tol) = pick(args.tol, &file, "tol")? {
        solver.tol = tol;
    }
    if let Some(max_iter) = pick(args.max_iter, &file, "max-iter")? {
        solver.max_iter = max_iter;
    }
    let cfg = ExperimentConfig {
        generation,
        mode: pick::<Mode>(args.mode.map(|m| m.parse()).transpose()?, &file, "mode")?
            .unwrap_or(base.mode),
        sweep: pick::<SweepSpec>(args.sweep.map(|s| s.parse()).transpose()?, &file, "sweep")?,
        replications: pick(args.replications, &file, "replications")?.unwrap_or(base.replications),
        competitive: solver,
        cooperative: solver,
        output_path: pick(args.out, &file, "out")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: Args) -> anyhow::Result<()> {
    let cfg = build_config(args)?;
    let rows = experiment::run_experiment(&cfg)?;
    match &cfg.output_path {
        None => experiment::to_csv(&rows, std::io::stdout().lock())?,
        Some(path) => {
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            eprintln!(
                "wrote {} rows ({failed} failed) to {}",
                rows.len(),
                path.display()
            );
            for s in experiment::summarize(&rows)? {
                let value = s.sweep_value.map_or("-".to_string(), |v| v.to_string());
                eprintln!(
                    "{value:>8} {:<12} demand {:>10.4} cp {:>10.4} sp {:>10.4} aggregate {:>10.4} (n={})",
                    s.mode, s.mean.total_demand, s.mean.cp_profit, s.mean.sp_revenue, s.mean.aggregate_payoff, s.count
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
