//! Experiment orchestration: arrival-rate sweeps, the five standard
//! comparison tables, and CSV emission.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::config::{lu_formula, AssignmentPolicy, ConfigError, IQueueDiscipline, SystemConfig};
use crate::des::{self, SimError};
use crate::equilibrium::{self, EquilibriumError};
use crate::fluid::{integrate_family, FluidError, IntegrationSettings, OdeFamily};

/// The arrival-rate grid used by every table.
pub const TABLE_LAMBDAS: [f64; 10] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("unknown table id {0}; tables are 1..=5")]
    UnknownTable(u8),
    #[error("refusing to emit non-finite value for {variant}/{metric} at lambda = {lambda}")]
    NonFiniteValue {
        lambda: f64,
        variant: String,
        metric: String,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Where a result came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ResultSource {
    Equilibrium,
    Formula,
    Ode,
    Sim,
}

impl ResultSource {
    pub fn label(&self) -> &'static str {
        match self {
            ResultSource::Equilibrium => "equilibrium",
            ResultSource::Formula => "formula",
            ResultSource::Ode => "ode",
            ResultSource::Sim => "sim",
        }
    }
}

impl fmt::Display for ResultSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One output record.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub lambda: f64,
    pub variant: String,
    pub metric: String,
    pub value: f64,
    /// Standard error where available (sim columns), blank otherwise.
    pub dispersion: Option<f64>,
    pub source: ResultSource,
}

/// Execution scale. Desk shrinks the simulated system and trial count to
/// something a laptop finishes; full matches the reference protocol
/// (10000 servers, 1000 dispatchers, 1000 trials per cell).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Desk,
    Full,
}

impl Tier {
    /// `(n, m, trials)` for simulation columns.
    pub fn sim_scale(&self) -> (u32, u32, u32) {
        match self {
            Tier::Desk => (1_000, 100, 50),
            Tier::Full => (10_000, 1_000, 1_000),
        }
    }
}

/// What a single invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Fluid,
    Equilibrium,
    Formula,
    Table,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub cfg: SystemConfig,
    pub integration: IntegrationSettings,
    pub trials: u32,
    pub seed: u64,
    pub warmup: f64,
    pub horizon: f64,
    pub table_id: u8,
    pub tier: Tier,
}

impl ExperimentSpec {
    pub fn new(mode: Mode, cfg: SystemConfig) -> Self {
        ExperimentSpec {
            mode,
            cfg,
            integration: IntegrationSettings::default(),
            trials: 10,
            seed: 1,
            warmup: des::DEFAULT_WARMUP,
            horizon: des::DEFAULT_HORIZON,
            table_id: 1,
            tier: Tier::Desk,
        }
    }

    /// Mode-specific field validation, before anything runs.
    pub fn validate(&self) -> Result<(), HarnessError> {
        match self.mode {
            Mode::Simulate => {
                self.cfg.clone().validated()?;
                if !(self.horizon > self.warmup) {
                    return Err(SimError::InvalidWindow {
                        warmup: self.warmup,
                        horizon: self.horizon,
                    }
                    .into());
                }
            }
            Mode::Fluid => {
                self.integration.validate()?;
                OdeFamily::from_config(&self.cfg)?;
            }
            Mode::Equilibrium | Mode::Formula => {
                if !(self.cfg.lambda > 0.0 && self.cfg.lambda < 1.0) {
                    return Err(ConfigError::UnstableRate(self.cfg.lambda).into());
                }
            }
            Mode::Table => {
                if !(1..=5).contains(&self.table_id) {
                    return Err(HarnessError::UnknownTable(self.table_id));
                }
            }
        }
        Ok(())
    }
}

/// Canonical variant label for a configuration.
pub fn variant_label(cfg: &SystemConfig) -> String {
    match cfg.policy {
        AssignmentPolicy::JiqRandom => {
            let mut label = String::from("jiq-random");
            if cfg.z > 0 {
                label.push_str(&format!("-z{}", cfg.z));
            }
            if cfg.discipline == Some(IQueueDiscipline::Lcfs) {
                label.push_str("-lcfs");
            }
            label
        }
        AssignmentPolicy::JiqSqd(d) => {
            let mut label = format!("jiq-sq{d}");
            if cfg.z > 0 {
                label.push_str(&format!("-z{}", cfg.z));
            }
            if cfg.discipline == Some(IQueueDiscipline::Lcfs) {
                label.push_str("-lcfs");
            }
            label
        }
        AssignmentPolicy::Supermarket(d) => format!("sq{d}"),
    }
}

fn finite_row(
    lambda: f64,
    variant: String,
    metric: &str,
    value: f64,
    dispersion: Option<f64>,
    source: ResultSource,
) -> Result<ResultRow, HarnessError> {
    if !value.is_finite() {
        return Err(HarnessError::NonFiniteValue {
            lambda,
            variant,
            metric: metric.to_string(),
        });
    }
    Ok(ResultRow {
        lambda,
        variant,
        metric: metric.to_string(),
        value,
        dispersion,
        source,
    })
}

/// Simulation rows (mean and variance of the time in system) for one cell.
fn sim_cell(
    cfg: &SystemConfig,
    seed: u64,
    trials: u32,
    warmup: f64,
    horizon: f64,
) -> Result<Vec<ResultRow>, HarnessError> {
    let agg = des::run_trials(cfg, seed, trials, warmup, horizon)?;
    let variant = variant_label(cfg);
    Ok(vec![
        finite_row(
            cfg.lambda,
            variant.clone(),
            "mean_time",
            agg.mean_time,
            Some(agg.se_mean),
            ResultSource::Sim,
        )?,
        finite_row(
            cfg.lambda,
            variant,
            "var_time",
            agg.var_time,
            Some(agg.se_var),
            ResultSource::Sim,
        )?,
    ])
}

fn ode_cell(cfg: &SystemConfig, settings: &IntegrationSettings) -> Result<ResultRow, HarnessError> {
    let family = OdeFamily::from_config(cfg)?;
    let run = integrate_family(family, cfg.lambda, cfg.r, settings)?;
    finite_row(
        cfg.lambda,
        variant_label(cfg),
        "mean_time",
        run.mean_time,
        None,
        ResultSource::Ode,
    )
}

fn equilibrium_cell(
    cfg: &SystemConfig,
    settings: &IntegrationSettings,
) -> Result<ResultRow, HarnessError> {
    let sol = equilibrium::solve_equilibrium(
        cfg.lambda,
        cfg.r,
        equilibrium::DEFAULT_TOLERANCE,
        settings.i_max,
        settings.c_max,
    )?;
    let (_, mean_time) = equilibrium::equilibrium_metrics(&sol, cfg.lambda);
    finite_row(
        cfg.lambda,
        variant_label(cfg),
        "mean_time",
        mean_time,
        None,
        ResultSource::Equilibrium,
    )
}

fn formula_cell(cfg: &SystemConfig) -> Result<ResultRow, HarnessError> {
    let value = lu_formula(cfg.lambda, cfg.r)?;
    finite_row(
        cfg.lambda,
        variant_label(cfg),
        "mean_time",
        value,
        None,
        ResultSource::Formula,
    )
}

/// Stable per-cell seed so every table cell gets an independent stream.
fn cell_seed(master: u64, table: u8, lambda_idx: usize, column: u64) -> u64 {
    des::derive_seed(
        master,
        (table as u64) * 1_000_000 + (lambda_idx as u64) * 1_000 + column,
    )
}

/// Runs one of the five standard tables over the full arrival-rate grid.
///
/// 1. JIQ-Random mean time: sim vs ODE vs closed-form baseline.
/// 2. Early threshold z = 1: sim vs ODE, with JIQ-Random sims alongside.
/// 3. LCFS I-queues: sim vs ODE, with FCFS sims alongside.
/// 4. JIQ-SQ(2): sim vs ODE, with JIQ-Random sims alongside.
/// 5. Mean and variance: supermarket SQ(2) vs JIQ z = 1 vs JIQ-Random (sims).
pub fn run_table(table_id: u8, tier: Tier, seed: u64) -> Result<Vec<ResultRow>, HarnessError> {
    run_table_on_grid(table_id, tier, seed, &TABLE_LAMBDAS)
}

/// [`run_table`] restricted to a sub-grid; the acceptance suite uses this to
/// spot-check individual cells.
pub fn run_table_on_grid(
    table_id: u8,
    tier: Tier,
    seed: u64,
    lambdas: &[f64],
) -> Result<Vec<ResultRow>, HarnessError> {
    if !(1..=5).contains(&table_id) {
        return Err(HarnessError::UnknownTable(table_id));
    }
    let (n, m, trials) = tier.sim_scale();
    let r = 10.0;
    let settings = IntegrationSettings::default();
    let (warmup, horizon) = (des::DEFAULT_WARMUP, des::DEFAULT_HORIZON);

    let base = move |lambda: f64| SystemConfig::jiq_random(lambda, r).with_sizes(n, m);
    let mut rows = Vec::new();
    for (lidx, &lambda) in lambdas.iter().enumerate() {
        let base_cfg = base(lambda);
        match table_id {
            1 => {
                let sim = sim_cell(&base_cfg, cell_seed(seed, 1, lidx, 0), trials, warmup, horizon)?;
                rows.extend(sim.into_iter().take(1));
                rows.push(ode_cell(&base_cfg, &settings)?);
                rows.push(formula_cell(&base_cfg)?);
            }
            2 => {
                let thr = base_cfg.clone().with_threshold(1);
                let sim = sim_cell(&thr, cell_seed(seed, 2, lidx, 0), trials, warmup, horizon)?;
                rows.extend(sim.into_iter().take(1));
                rows.push(ode_cell(&thr, &settings)?);
                let sim = sim_cell(&base_cfg, cell_seed(seed, 2, lidx, 1), trials, warmup, horizon)?;
                rows.extend(sim.into_iter().take(1));
            }
            3 => {
                let lcfs = base_cfg.clone().with_discipline(IQueueDiscipline::Lcfs);
                let sim = sim_cell(&lcfs, cell_seed(seed, 3, lidx, 0), trials, warmup, horizon)?;
                rows.extend(sim.into_iter().take(1));
                rows.push(ode_cell(&lcfs, &settings)?);
                let sim = sim_cell(&base_cfg, cell_seed(seed, 3, lidx, 1), trials, warmup, horizon)?;
                rows.extend(sim.into_iter().take(1));
            }
            4 => {
                let sqd = base_cfg.clone().with_policy(AssignmentPolicy::JiqSqd(2));
                let sim = sim_cell(&sqd, cell_seed(seed, 4, lidx, 0), trials, warmup, horizon)?;
                rows.extend(sim.into_iter().take(1));
                rows.push(ode_cell(&sqd, &settings)?);
                let sim = sim_cell(&base_cfg, cell_seed(seed, 4, lidx, 1), trials, warmup, horizon)?;
                rows.extend(sim.into_iter().take(1));
            }
            5 => {
                let mut market = SystemConfig::jiq_random(lambda, r).with_sizes(n, m);
                market = market.with_policy(AssignmentPolicy::Supermarket(2));
                let thr = base_cfg.clone().with_threshold(1);
                for (col, cfg) in [(0u64, &market), (1, &thr), (2, &base_cfg)] {
                    let sim = sim_cell(cfg, cell_seed(seed, 5, lidx, col), trials, warmup, horizon)?;
                    rows.extend(sim);
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(rows)
}

/// Runs the spec's mode once per grid point, holding everything else fixed.
pub fn run_sweep(spec: &ExperimentSpec, lambdas: &[f64]) -> Result<Vec<ResultRow>, HarnessError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (lidx, &lambda) in lambdas.iter().enumerate() {
        let mut cfg = spec.cfg.clone();
        cfg.lambda = lambda;
        match spec.mode {
            Mode::Formula => rows.push(formula_cell(&cfg)?),
            Mode::Equilibrium => rows.push(equilibrium_cell(&cfg, &spec.integration)?),
            Mode::Fluid => rows.push(ode_cell(&cfg, &spec.integration)?),
            Mode::Simulate => {
                let seed = cell_seed(spec.seed, 0, lidx, 0);
                rows.extend(sim_cell(&cfg, seed, spec.trials, spec.warmup, spec.horizon)?);
            }
            Mode::Table => {
                return Err(HarnessError::UnknownTable(spec.table_id));
            }
        }
    }
    Ok(rows)
}

/// Renders `v` with six significant digits (plain notation).
pub fn format_sig(v: f64, sig: i32) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    // Take the decimal exponent after rounding to `sig` digits, so values
    // like 9.9999999 render as 10.0000 rather than 10.00000.
    let sci = format!("{:.*e}", (sig - 1).max(0) as usize, v);
    let exponent: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    let decimals = (sig - 1 - exponent).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Writes rows as CSV in deterministic order (lambda ascending, then source,
/// variant, metric).
pub fn write_csv<W: Write>(out: &mut W, rows: &[ResultRow]) -> Result<(), HarnessError> {
    for row in rows {
        if !row.value.is_finite() {
            return Err(HarnessError::NonFiniteValue {
                lambda: row.lambda,
                variant: row.variant.clone(),
                metric: row.metric.clone(),
            });
        }
    }
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.variant.cmp(&b.variant))
            .then_with(|| a.metric.cmp(&b.metric))
    });
    let io_err = |source| HarnessError::Io {
        path: "<writer>".to_string(),
        source,
    };
    writeln!(out, "lambda,variant,metric,value,dispersion,source").map_err(io_err)?;
    for row in sorted {
        let dispersion = row
            .dispersion
            .map(|d| format_sig(d, 6))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.lambda,
            row.variant,
            row.metric,
            format_sig(row.value, 6),
            dispersion,
            row.source
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// [`write_csv`] to a file path.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    write_csv(&mut out, rows).map_err(|e| match e {
        HarnessError::Io { source, .. } => HarnessError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })?;
    out.flush().map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}
