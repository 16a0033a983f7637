//! Seeded parameter sweeps over random instances, one CSV row per
//! (sweep value, seed, mode).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::competitive::{self, SolverSettings};
use crate::cooperative;
use crate::demand::{DemandProfile, Strategy};
use crate::error::{MarketError, Result};
use crate::model::{
    build_matrices, generate_instance, EquilibriumMatrices, GenerationConfig, MarketInstance,
};
use crate::validate;

/// Bumped whenever the column set or its order changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Competitive,
    Cooperative,
    Both,
}

impl Mode {
    fn solved(self) -> &'static [Mode] {
        match self {
            Mode::Competitive => &[Mode::Competitive],
            Mode::Cooperative => &[Mode::Cooperative],
            Mode::Both => &[Mode::Competitive, Mode::Cooperative],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Competitive => "competitive",
            Mode::Cooperative => "cooperative",
            Mode::Both => "both",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "competitive" => Ok(Mode::Competitive),
            "cooperative" => Ok(Mode::Cooperative),
            "both" => Ok(Mode::Both),
            _ => Err(MarketError::InvalidConfig(format!(
                "unknown mode {s:?} (expected competitive, cooperative or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    N,
    MuG,
    C,
}

impl FromStr for SweepParam {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepParam::N),
            "mu_g" | "mu-g" => Ok(SweepParam::MuG),
            "c" => Ok(SweepParam::C),
            _ => Err(MarketError::InvalidConfig(format!(
                "unknown sweep parameter {s:?} (expected n, mu_g or c)"
            ))),
        }
    }
}

/// `steps` evenly spaced values from `start` to `stop`, both included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl SweepSpec {
    pub fn values(&self) -> Vec<f64> {
        let span = self.stop - self.start;
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                if k + 1 == self.steps {
                    self.stop
                } else {
                    self.start + span * k as f64 / last
                }
            })
            .collect()
    }

    fn apply(&self, base: &GenerationConfig, value: f64) -> GenerationConfig {
        let mut cfg = base.clone();
        match self.param {
            SweepParam::N => cfg.n = value.round() as usize,
            SweepParam::MuG => cfg.mu_g = value,
            SweepParam::C => cfg.c = value,
        }
        cfg
    }
}

impl FromStr for SweepSpec {
    type Err = MarketError;

    /// `param:start:stop:steps`.
    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || MarketError::InvalidConfig(format!("sweep {s:?} is not param:start:stop:steps"));
        let parts: Vec<&str> = s.split(':').collect();
        let [param, start, stop, steps] = parts[..] else {
            return Err(bad());
        };
        Ok(SweepSpec {
            param: param.parse()?,
            start: start.parse().map_err(|_| bad())?,
            stop: stop.parse().map_err(|_| bad())?,
            steps: steps.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generation: GenerationConfig,
    pub mode: Mode,
    pub sweep: Option<SweepSpec>,
    /// Seeds per sweep point: `generation.seed + k` for `k < replications`.
    pub replications: usize,
    pub competitive: SolverSettings<f64>,
    pub cooperative: SolverSettings<f64>,
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            mode: Mode::Both,
            sweep: None,
            replications: 10,
            competitive: SolverSettings::default(),
            cooperative: SolverSettings::default(),
            output_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(MarketError::InvalidConfig(
                "replications must be at least 1".into(),
            ));
        }
        for (name, s) in [
            ("competitive", &self.competitive),
            ("cooperative", &self.cooperative),
        ] {
            if !(s.tol > 0.0) || s.max_iter < 1 {
                return Err(MarketError::InvalidConfig(format!(
                    "{name} solver needs tol > 0 and max_iter >= 1"
                )));
            }
        }
        self.generation.validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.steps < 2 {
                return Err(MarketError::InvalidConfig(
                    "sweep needs at least 2 steps".into(),
                ));
            }
            if !sweep.start.is_finite() || !sweep.stop.is_finite() {
                return Err(MarketError::InvalidConfig(
                    "sweep bounds must be finite".into(),
                ));
            }
            for v in sweep.values() {
                if sweep.param == SweepParam::N && (v.fract() != 0.0 || v < 1.0) {
                    return Err(MarketError::InvalidConfig(format!(
                        "sweep over n needs positive integers, got {v}"
                    )));
                }
                sweep.apply(&self.generation, v).validate()?;
            }
        }
        Ok(())
    }

    fn points(&self) -> Vec<(Option<f64>, GenerationConfig)> {
        match &self.sweep {
            None => vec![(None, self.generation.clone())],
            Some(sweep) => sweep
                .values()
                .into_iter()
                .map(|v| (Some(v), sweep.apply(&self.generation, v)))
                .collect(),
        }
    }
}

/// One solved (or failed) instance. Numeric fields are NaN when `status` is
/// not `ok`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub mode: &'static str,
    pub total_demand: f64,
    pub price: f64,
    pub mean_sponsorship: f64,
    pub cp_profit: f64,
    pub sp_revenue: f64,
    pub aggregate_payoff: f64,
    pub sum_user_utility: f64,
    pub iterations: Option<usize>,
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub status: String,
}

impl SweepRow {
    fn failed(
        sweep_value: Option<f64>,
        seed: u64,
        mode: Mode,
        a1: bool,
        err: &MarketError,
    ) -> Self {
        Self {
            sweep_value,
            seed,
            mode: mode.as_str(),
            total_demand: f64::NAN,
            price: f64::NAN,
            mean_sponsorship: f64::NAN,
            cp_profit: f64::NAN,
            sp_revenue: f64::NAN,
            aggregate_payoff: f64::NAN,
            sum_user_utility: f64::NAN,
            iterations: None,
            a1,
            a2: false,
            a3: false,
            status: err.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

struct Solved {
    strategy: Strategy<f64>,
    demand: DemandProfile<f64>,
    cp_profit: f64,
    sp_revenue: f64,
    iterations: usize,
}

fn solve(
    inst: &MarketInstance<f64>,
    mats: &EquilibriumMatrices<f64>,
    mode: Mode,
    cfg: &ExperimentConfig,
) -> Result<Solved> {
    match mode {
        Mode::Competitive => {
            let r = competitive::solve_competitive(inst, mats, &cfg.competitive)?;
            Ok(Solved {
                strategy: r.strategy,
                demand: r.demand,
                cp_profit: r.payoffs.cp_profit,
                sp_revenue: r.payoffs.sp_revenue,
                iterations: r.iterations,
            })
        }
        Mode::Cooperative | Mode::Both => {
            let r = cooperative::solve_cooperative_closed_form(inst, mats)?;
            Ok(Solved {
                strategy: r.strategy,
                demand: r.demand,
                cp_profit: r.cp_profit,
                sp_revenue: r.sp_revenue,
                iterations: r.iterations,
            })
        }
    }
}

fn run_point(
    cfg: &ExperimentConfig,
    sweep_value: Option<f64>,
    gen: &GenerationConfig,
) -> Vec<SweepRow> {
    let modes = cfg.mode.solved();
    let seed = gen.seed;
    let setup = generate_instance::<f64>(gen).and_then(|inst| {
        let mats = build_matrices(&inst)?;
        Ok((inst, mats))
    });
    let (inst, mats) = match setup {
        Ok(v) => v,
        Err(e) => {
            return modes
                .iter()
                .map(|&m| SweepRow::failed(sweep_value, seed, m, false, &e))
                .collect()
        }
    };
    let a1 = validate::check_assumption1(&inst).holds;
    modes
        .iter()
        .map(|&mode| {
            let solved = match solve(&inst, &mats, mode, cfg) {
                Ok(s) => s,
                Err(e) => return SweepRow::failed(sweep_value, seed, mode, a1, &e),
            };
            let checks = validate::assess(&inst, &mats, &solved.strategy);
            let (a2, a3) = checks
                .map(|r| (r.a2.holds, r.a3.holds))
                .unwrap_or((false, false));
            let theta = solved.strategy.theta();
            SweepRow {
                sweep_value,
                seed,
                mode: mode.as_str(),
                total_demand: solved.demand.total(),
                price: solved.strategy.p(),
                mean_sponsorship: theta.sum() / theta.len() as f64,
                cp_profit: solved.cp_profit,
                sp_revenue: solved.sp_revenue,
                aggregate_payoff: solved.cp_profit + solved.sp_revenue,
                sum_user_utility: solved.demand.utilities.sum(),
                iterations: Some(solved.iterations),
                a1,
                a2,
                a3,
                status: "ok".to_string(),
            }
        })
        .collect()
}

/// Runs every sweep point and replication, in parallel, and returns rows in
/// (sweep value, seed, mode) order. Writes the CSV when an output path is
/// configured. Solver failures are recorded per row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let jobs: Vec<(Option<f64>, GenerationConfig)> = cfg
        .points()
        .into_iter()
        .flat_map(|(value, gen)| {
            (0..cfg.replications as u64).map(move |k| {
                let mut g = gen.clone();
                g.seed = gen.seed.wrapping_add(k);
                (value, g)
            })
        })
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(value, gen)| run_point(cfg, *value, gen))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if let Some(path) = &cfg.output_path {
        write_csv(&rows, path)?;
    }
    Ok(rows)
}

fn io_error(e: impl fmt::Display) -> MarketError {
    MarketError::Io(e.to_string())
}

/// CSV with one header row; column names are the `SweepRow` field names and
/// `status` comes last.
pub fn to_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    if rows.is_empty() {
        writer.write_record(CSV_COLUMNS).map_err(io_error)?;
    }
    for row in rows {
        writer.serialize(row).map_err(io_error)?;
    }
    writer.flush().map_err(io_error)
}

pub const CSV_COLUMNS: [&str; 15] = [
    "sweep_value",
    "seed",
    "mode",
    "total_demand",
    "price",
    "mean_sponsorship",
    "cp_profit",
    "sp_revenue",
    "aggregate_payoff",
    "sum_user_utility",
    "iterations",
    "a1",
    "a2",
    "a3",
    "status",
];

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_error)?;
    to_csv(rows, std::io::BufWriter::new(file))
}

/// Per-column statistics over the successful rows of one group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ColumnStats {
    pub total_demand: f64,
    pub price: f64,
    pub mean_sponsorship: f64,
    pub cp_profit: f64,
    pub sp_revenue: f64,
    pub aggregate_payoff: f64,
    pub sum_user_utility: f64,
    pub iterations: f64,
}

impl ColumnStats {
    fn columns(row: &SweepRow) -> [f64; 8] {
        [
            row.total_demand,
            row.price,
            row.mean_sponsorship,
            row.cp_profit,
            row.sp_revenue,
            row.aggregate_payoff,
            row.sum_user_utility,
            row.iterations.map_or(f64::NAN, |i| i as f64),
        ]
    }

    fn from_array(v: [f64; 8]) -> Self {
        Self {
            total_demand: v[0],
            price: v[1],
            mean_sponsorship: v[2],
            cp_profit: v[3],
            sp_revenue: v[4],
            aggregate_payoff: v[5],
            sum_user_utility: v[6],
            iterations: v[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub mode: &'static str,
    /// Successful rows the statistics are taken over.
    pub count: usize,
    pub failures: usize,
    pub mean: ColumnStats,
    /// Sample standard deviation; zero for a single row.
    pub std_dev: ColumnStats,
}

/// Mean and sample standard deviation per (sweep value, mode), in first-seen
/// order. Failed rows are counted but excluded from the statistics.
pub fn summarize(rows: &[SweepRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(MarketError::EmptyInput);
    }
    let mut order: Vec<(Option<u64>, &'static str)> = Vec::new();
    let mut groups: BTreeMap<(Option<u64>, &'static str), Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        let key = (row.sweep_value.map(f64::to_bits), row.mode);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(row);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let ok: Vec<[f64; 8]> = members
                .iter()
                .filter(|r| r.is_ok())
                .map(|r| ColumnStats::columns(r))
                .collect();
            let count = ok.len() as f64;
            let mut mean = [0.0; 8];
            let mut std_dev = [0.0; 8];
            for j in 0..8 {
                mean[j] = ok.iter().map(|c| c[j]).sum::<f64>() / count;
                std_dev[j] = if ok.len() > 1 {
                    let ss: f64 = ok.iter().map(|c| (c[j] - mean[j]).powi(2)).sum();
                    (ss / (count - 1.0)).sqrt()
                } else if ok.len() == 1 {
                    0.0
                } else {
                    f64::NAN
                };
            }
            SummaryRow {
                sweep_value: key.0.map(f64::from_bits),
                mode: key.1,
                count: ok.len(),
                failures: members.len() - ok.len(),
                mean: ColumnStats::from_array(mean),
                std_dev: ColumnStats::from_array(std_dev),
            }
        })
        .collect())
}
