//! Command-line front end: simulations, fluid integrations, equilibrium
//! solves, arrival-rate sweeps, and the five standard comparison tables.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use jiq_core::config::{lu_formula, AssignmentPolicy, IQueueDiscipline, SystemConfig};
use jiq_core::des;
use jiq_core::equilibrium;
use jiq_core::fluid::{self, IntegrationSettings, OdeFamily};
use jiq_core::harness::{
    emit_csv, run_sweep, run_table, variant_label, write_csv, ExperimentSpec, Mode, ResultRow,
    ResultSource, Tier, TABLE_LAMBDAS,
};

#[derive(Debug, Parser)]
#[command(
    name = "jiq",
    about = "Join-Idle-Queue load balancing: simulation, fluid ODEs, and equilibrium analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    JiqRandom,
    JiqSqd,
    Supermarket,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DisciplineArg {
    Fcfs,
    Lcfs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TierArg {
    Desk,
    Full,
}

impl From<TierArg> for Tier {
    fn from(t: TierArg) -> Tier {
        match t {
            TierArg::Desk => Tier::Desk,
            TierArg::Full => Tier::Full,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Arrival rate per server, in (0, 1)
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    /// Servers per dispatcher
    #[arg(long, default_value_t = 10.0)]
    r: f64,
    /// Assignment policy
    #[arg(long, value_enum, default_value_t = PolicyArg::JiqRandom)]
    policy: PolicyArg,
    /// I-queue service order (JIQ policies only)
    #[arg(long, value_enum)]
    discipline: Option<DisciplineArg>,
    /// Early-join threshold: join an I-queue at z or fewer jobs (0 = only when idle)
    #[arg(long, default_value_t = 0)]
    z: u32,
    /// Probe count for SQ(d) policies
    #[arg(long, default_value_t = 2)]
    d: u32,
}

impl ModelArgs {
    fn config(&self) -> SystemConfig {
        let mut cfg = SystemConfig::jiq_random(self.lambda, self.r);
        cfg.z = self.z;
        match self.policy {
            PolicyArg::JiqRandom => {}
            PolicyArg::JiqSqd => cfg.policy = AssignmentPolicy::JiqSqd(self.d),
            PolicyArg::Supermarket => {
                cfg.policy = AssignmentPolicy::Supermarket(self.d);
                cfg.discipline = None;
            }
        }
        if let Some(d) = self.discipline {
            cfg.discipline = Some(match d {
                DisciplineArg::Fcfs => IQueueDiscipline::Fcfs,
                DisciplineArg::Lcfs => IQueueDiscipline::Lcfs,
            });
        }
        cfg
    }
}

#[derive(Debug, Args)]
struct IntegrationArgs {
    /// Euler step size
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Integration horizon
    #[arg(long, default_value_t = 10_000.0)]
    t_end: f64,
    /// I-queue length / position truncation
    #[arg(long, default_value_t = 128)]
    imax: usize,
    /// Job-count truncation
    #[arg(long, default_value_t = 128)]
    cmax: usize,
}

impl IntegrationArgs {
    fn settings(&self) -> IntegrationSettings {
        IntegrationSettings {
            step: self.step,
            t_end: self.t_end,
            i_max: self.imax,
            c_max: self.cmax,
            record_every: 1.0,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-system discrete-event simulation
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Server count n
        #[arg(long, default_value_t = 10_000)]
        servers: u32,
        /// Dispatcher count m (default: servers / r)
        #[arg(long)]
        dispatchers: Option<u32>,
        /// Simulated time horizon
        #[arg(long, default_value_t = 10_000.0)]
        horizon: f64,
        /// Start of the measurement window
        #[arg(long, default_value_t = 5_000.0)]
        warmup: f64,
        /// Independent trials (aggregated)
        #[arg(long, default_value_t = 10)]
        trials: u32,
        /// Master seed; per-trial seeds derive from (seed, trial)
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write result rows as CSV here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
        /// Dump per-trial job records to <prefix>.trial<k>.csv
        #[arg(long)]
        dump_records: Option<PathBuf>,
    },
    /// Integrate the fluid-limit ODEs
    Fluid {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        integration: IntegrationArgs,
        /// Write the sampled trajectory CSV here
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve the JIQ-Random fluid fixed point
    Equilibrium {
        #[command(flatten)]
        model: ModelArgs,
        /// I-queue length / position truncation
        #[arg(long, default_value_t = 128)]
        imax: usize,
        /// Job-count truncation
        #[arg(long, default_value_t = 128)]
        cmax: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Closed-form mean-time baseline
    Formula {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Reproduce one of the five standard comparison tables
    Table {
        /// Table id: 1 JIQ-Random sim/ODE/formula, 2 early threshold z=1,
        /// 3 LCFS I-queues, 4 JIQ-SQ(2), 5 mean+variance vs supermarket
        id: u8,
        /// desk: 1000 servers, 50 trials; full: 10000 servers, 1000 trials
        #[arg(long, value_enum, default_value_t = TierArg::Desk)]
        tier: TierArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run one mode across an arrival-rate grid
    Sweep {
        /// Which computation to sweep
        #[arg(value_enum)]
        mode: SweepMode,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        integration: IntegrationArgs,
        /// Comma-separated arrival rates (default: the standard table grid)
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1_000)]
        servers: u32,
        #[arg(long)]
        dispatchers: Option<u32>,
        #[arg(long, default_value_t = 10_000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 5_000.0)]
        warmup: f64,
        #[arg(long, default_value_t = 10)]
        trials: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepMode {
    Simulate,
    Fluid,
    Equilibrium,
    Formula,
}

impl From<SweepMode> for Mode {
    fn from(m: SweepMode) -> Mode {
        match m {
            SweepMode::Simulate => Mode::Simulate,
            SweepMode::Fluid => Mode::Fluid,
            SweepMode::Equilibrium => Mode::Equilibrium,
            SweepMode::Formula => Mode::Formula,
        }
    }
}

fn dispatcher_count(servers: u32, dispatchers: Option<u32>, r: f64) -> Result<u32> {
    match dispatchers {
        Some(m) => Ok(m),
        None => {
            let m = servers as f64 / r;
            if m.fract() != 0.0 || m < 1.0 {
                bail!("cannot derive a whole dispatcher count from n = {servers}, r = {r}; pass --dispatchers");
            }
            Ok(m as u32)
        }
    }
}

/// Everything a run needs to be reconstructible from its log.
fn echo_config(lines: &[(&str, String)]) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "# resolved configuration");
    for (k, v) in lines {
        let _ = writeln!(err, "#   {k} = {v}");
    }
}

fn cfg_lines(cfg: &SystemConfig) -> Vec<(&'static str, String)> {
    let mut lines = vec![
        ("lambda", cfg.lambda.to_string()),
        ("r", cfg.r.to_string()),
        ("policy", variant_label(cfg)),
    ];
    if let Some(d) = cfg.discipline {
        lines.push(("discipline", format!("{d:?}").to_lowercase()));
    }
    lines.push(("z", cfg.z.to_string()));
    if let Some(n) = cfg.n {
        lines.push(("servers", n.to_string()));
    }
    if let Some(m) = cfg.m {
        lines.push(("dispatchers", m.to_string()));
    }
    lines
}

fn deliver(rows: &[ResultRow], output: Option<&PathBuf>) -> Result<()> {
    match output {
        Some(path) => {
            emit_csv(rows, path)?;
            eprintln!("# wrote {} rows to {}", rows.len(), path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_csv(&mut out, rows)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            model,
            servers,
            dispatchers,
            horizon,
            warmup,
            trials,
            seed,
            output,
            dump_records,
        } => {
            let mut cfg = model.config();
            cfg.n = Some(servers);
            cfg.m = if cfg.policy.is_jiq() {
                Some(dispatcher_count(servers, dispatchers, cfg.r)?)
            } else {
                dispatchers
            };
            let cfg = cfg.validated()?;
            let mut lines = cfg_lines(&cfg);
            lines.extend([
                ("horizon", horizon.to_string()),
                ("warmup", warmup.to_string()),
                ("trials", trials.to_string()),
                ("seed", seed.to_string()),
            ]);
            echo_config(&lines);

            if let Some(prefix) = &dump_records {
                for trial in 0..trials {
                    let trial_seed = des::derive_seed(seed, trial as u64);
                    let (_, records) = des::run_one_trial(&cfg, trial_seed, warmup, horizon, true)?;
                    let path = prefix.with_extension(format!("trial{trial}.csv"));
                    let mut file = std::fs::File::create(&path)
                        .with_context(|| format!("cannot write {}", path.display()))?;
                    writeln!(file, "arrival,completion,server,assignment")?;
                    for rec in records.unwrap_or_default() {
                        writeln!(
                            file,
                            "{},{},{},{}",
                            rec.arrival,
                            rec.completion,
                            rec.server,
                            rec.assignment.label()
                        )?;
                    }
                    eprintln!("# wrote records to {}", path.display());
                }
            }

            let agg = des::run_trials(&cfg, seed, trials, warmup, horizon)?;
            let variant = variant_label(&cfg);
            let mk = |metric: &str, value: f64, disp: Option<f64>| ResultRow {
                lambda: cfg.lambda,
                variant: variant.clone(),
                metric: metric.to_string(),
                value,
                dispersion: disp,
                source: ResultSource::Sim,
            };
            let rows = vec![
                mk("mean_time", agg.mean_time, Some(agg.se_mean)),
                mk("var_time", agg.var_time, Some(agg.se_var)),
                mk("fraction_random", agg.fraction_random, None),
                mk("max_load", agg.max_load as f64, None),
            ];
            deliver(&rows, output.as_ref())
        }

        Command::Fluid {
            model,
            integration,
            output,
        } => {
            let cfg = model.config();
            let family = OdeFamily::from_config(&cfg)?;
            let settings = integration.settings();
            let mut lines = cfg_lines(&cfg);
            lines.extend([
                ("step", settings.step.to_string()),
                ("t_end", settings.t_end.to_string()),
                ("imax", settings.i_max.to_string()),
                ("cmax", settings.c_max.to_string()),
            ]);
            echo_config(&lines);

            let run = fluid::integrate_family(family, cfg.lambda, cfg.r, &settings)?;
            if let Some(path) = &output {
                let mut file = std::fs::File::create(path)
                    .with_context(|| format!("cannot write {}", path.display()))?;
                fluid::write_trajectory(&mut file, &run.trajectory, cfg.lambda)?;
                eprintln!(
                    "# wrote {} trajectory samples to {}",
                    run.trajectory.len(),
                    path.display()
                );
            }
            eprintln!(
                "# clamped_mass = {:.3e}, max resid_q = {:.3e}, max resid_s = {:.3e}",
                run.clamped_mass, run.max_resid_q, run.max_resid_s
            );
            let variant = variant_label(&cfg);
            let mk = |metric: &str, value: f64| ResultRow {
                lambda: cfg.lambda,
                variant: variant.clone(),
                metric: metric.to_string(),
                value,
                dispersion: None,
                source: ResultSource::Ode,
            };
            let rows = vec![
                mk("mean_time", run.mean_time),
                mk("mean_load", run.mean_jobs),
                mk("q0", run.q0),
            ];
            let mut out = std::io::stdout().lock();
            write_csv(&mut out, &rows)?;
            Ok(())
        }

        Command::Equilibrium {
            model,
            imax,
            cmax,
            output,
        } => {
            let cfg = model.config();
            if !matches!(cfg.policy, AssignmentPolicy::JiqRandom) || cfg.z > 0 {
                bail!("the equilibrium solver covers the base JIQ-Random model only");
            }
            let mut lines = cfg_lines(&cfg);
            lines.extend([
                ("imax", imax.to_string()),
                ("cmax", cmax.to_string()),
                ("tol", equilibrium::DEFAULT_TOLERANCE.to_string()),
            ]);
            echo_config(&lines);

            let sol = equilibrium::solve_equilibrium(
                cfg.lambda,
                cfg.r,
                equilibrium::DEFAULT_TOLERANCE,
                imax,
                cmax,
            )?;
            let (mean_jobs, mean_time) = equilibrium::equilibrium_metrics(&sol, cfg.lambda);
            eprintln!(
                "# s1_nil = {}, q0 = {}, residual = {:.3e}, iterations = {}",
                sol.candidate.x,
                sol.candidate.q_bar[0],
                sol.residual,
                sol.iterations
            );
            let variant = variant_label(&cfg);
            let mk = |metric: &str, value: f64| ResultRow {
                lambda: cfg.lambda,
                variant: variant.clone(),
                metric: metric.to_string(),
                value,
                dispersion: None,
                source: ResultSource::Equilibrium,
            };
            let rows = vec![
                mk("mean_time", mean_time),
                mk("mean_load", mean_jobs),
                mk("s1_nil", sol.candidate.x),
                mk("q0", sol.candidate.q_bar[0]),
            ];
            deliver(&rows, output.as_ref())
        }

        Command::Formula { model, output } => {
            let cfg = model.config();
            echo_config(&cfg_lines(&cfg));
            let value = lu_formula(cfg.lambda, cfg.r)?;
            let rows = vec![ResultRow {
                lambda: cfg.lambda,
                variant: variant_label(&cfg),
                metric: "mean_time".to_string(),
                value,
                dispersion: None,
                source: ResultSource::Formula,
            }];
            deliver(&rows, output.as_ref())
        }

        Command::Table {
            id,
            tier,
            seed,
            output,
        } => {
            let tier: Tier = tier.into();
            let (n, m, trials) = tier.sim_scale();
            echo_config(&[
                ("table", id.to_string()),
                ("tier", format!("{tier:?}").to_lowercase()),
                ("servers", n.to_string()),
                ("dispatchers", m.to_string()),
                ("trials", trials.to_string()),
                ("seed", seed.to_string()),
                ("lambdas", format!("{TABLE_LAMBDAS:?}")),
            ]);
            let rows = run_table(id, tier, seed)?;
            deliver(&rows, output.as_ref())
        }

        Command::Sweep {
            mode,
            model,
            integration,
            lambdas,
            servers,
            dispatchers,
            horizon,
            warmup,
            trials,
            seed,
            output,
        } => {
            let mode: Mode = mode.into();
            let mut cfg = model.config();
            if mode == Mode::Simulate {
                cfg.n = Some(servers);
                cfg.m = if cfg.policy.is_jiq() {
                    Some(dispatcher_count(servers, dispatchers, cfg.r)?)
                } else {
                    dispatchers
                };
            }
            let grid = lambdas.unwrap_or_else(|| TABLE_LAMBDAS.to_vec());
            let mut spec = ExperimentSpec::new(mode, cfg);
            spec.integration = integration.settings();
            spec.trials = trials;
            spec.seed = seed;
            spec.warmup = warmup;
            spec.horizon = horizon;
            let mut lines = cfg_lines(&spec.cfg);
            lines.extend([
                ("mode", format!("{mode:?}").to_lowercase()),
                ("lambdas", format!("{grid:?}")),
                ("seed", seed.to_string()),
                ("trials", trials.to_string()),
            ]);
            echo_config(&lines);
            let rows = run_sweep(&spec, &grid)?;
            deliver(&rows, output.as_ref())
        }
    }
}
