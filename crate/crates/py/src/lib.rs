//! Python bindings for the JIQ load-balancing toolkit.
//!
//! Exposes the closed-form baseline, the equilibrium solver, the fluid-limit
//! integrator, and the finite-system simulator. Results come back as dicts
//! keyed like the CSV columns of the `jiq` CLI.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use jiq_core::config::{self, AssignmentPolicy, IQueueDiscipline, SystemConfig};
use jiq_core::des;
use jiq_core::equilibrium;
use jiq_core::fluid::{self, IntegrationSettings, OdeFamily};

fn to_py_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_config(
    lambda: f64,
    r: f64,
    policy: &str,
    discipline: &str,
    z: u32,
    d: u32,
) -> PyResult<SystemConfig> {
    let mut cfg = SystemConfig::jiq_random(lambda, r);
    cfg.z = z;
    match policy {
        "jiq-random" => {}
        "jiq-sqd" => cfg.policy = AssignmentPolicy::JiqSqd(d),
        "supermarket" => {
            cfg.policy = AssignmentPolicy::Supermarket(d);
            cfg.discipline = None;
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown policy {other:?}; expected jiq-random, jiq-sqd, or supermarket"
            )))
        }
    }
    if cfg.policy.is_jiq() {
        cfg.discipline = Some(match discipline {
            "fcfs" => IQueueDiscipline::Fcfs,
            "lcfs" => IQueueDiscipline::Lcfs,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown discipline {other:?}; expected fcfs or lcfs"
                )))
            }
        });
    }
    Ok(cfg)
}

/// Closed-form mean time in system for JIQ-Random under the idle-I-queue
/// approximation: 1 + lambda / ((1 - lambda)(1 + r)).
#[pyfunction]
fn lu_formula(lambda: f64, r: f64) -> PyResult<f64> {
    config::lu_formula(lambda, r).map_err(to_py_err)
}

/// Solves the JIQ-Random fluid fixed point by bisection on total server
/// mass. Returns a dict with s1_nil, q0, rho, mean_load, mean_time,
/// residual, and iterations.
#[pyfunction]
#[pyo3(signature = (lambda, r, tol=1e-12, imax=128, cmax=128))]
fn solve_equilibrium<'py>(
    py: Python<'py>,
    lambda: f64,
    r: f64,
    tol: f64,
    imax: usize,
    cmax: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let sol = equilibrium::solve_equilibrium(lambda, r, tol, imax, cmax).map_err(to_py_err)?;
    let (mean_load, mean_time) = equilibrium::equilibrium_metrics(&sol, lambda);
    let out = PyDict::new(py);
    out.set_item("s1_nil", sol.candidate.x)?;
    out.set_item("q0", sol.candidate.q_bar[0])?;
    out.set_item("rho", sol.candidate.rho)?;
    out.set_item("mean_load", mean_load)?;
    out.set_item("mean_time", mean_time)?;
    out.set_item("residual", sol.residual)?;
    out.set_item("iterations", sol.iterations)?;
    Ok(out)
}

/// Integrates the fluid-limit ODEs from the standard initial condition
/// (all I-queues empty, every server holding one job). Returns a dict with
/// mean_load, mean_time, q0, conservation residuals, and clamped_mass.
#[pyfunction]
#[pyo3(signature = (lambda, r, policy="jiq-random", discipline="fcfs", z=0, d=2,
                    step=0.01, t_end=10_000.0, imax=128, cmax=128))]
#[allow(clippy::too_many_arguments)]
fn integrate_fluid<'py>(
    py: Python<'py>,
    lambda: f64,
    r: f64,
    policy: &str,
    discipline: &str,
    z: u32,
    d: u32,
    step: f64,
    t_end: f64,
    imax: usize,
    cmax: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config(lambda, r, policy, discipline, z, d)?;
    let family = OdeFamily::from_config(&cfg).map_err(to_py_err)?;
    let settings = IntegrationSettings {
        step,
        t_end,
        i_max: imax,
        c_max: cmax,
        record_every: 1.0,
    };
    let run = py
        .detach(|| fluid::integrate_family(family, lambda, r, &settings))
        .map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("mean_load", run.mean_jobs)?;
    out.set_item("mean_time", run.mean_time)?;
    out.set_item("q0", run.q0)?;
    out.set_item("resid_q", run.resid_q)?;
    out.set_item("resid_s", run.resid_s)?;
    out.set_item("resid_consistency", run.resid_consistency)?;
    out.set_item("clamped_mass", run.clamped_mass)?;
    out.set_item("steps", run.steps)?;
    Ok(out)
}

/// Runs seeded finite-system simulations and aggregates the trials.
/// Returns a dict with mean_time, se_mean, var_time, se_var,
/// fraction_random, and max_load.
#[pyfunction]
#[pyo3(signature = (lambda, servers, dispatchers=None, r=10.0, policy="jiq-random",
                    discipline="fcfs", z=0, d=2, trials=10, seed=1,
                    warmup=5_000.0, horizon=10_000.0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    lambda: f64,
    servers: u32,
    dispatchers: Option<u32>,
    r: f64,
    policy: &str,
    discipline: &str,
    z: u32,
    d: u32,
    trials: u32,
    seed: u64,
    warmup: f64,
    horizon: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = parse_config(lambda, r, policy, discipline, z, d)?;
    cfg.n = Some(servers);
    cfg.m = if cfg.policy.is_jiq() {
        Some(dispatchers.unwrap_or((servers as f64 / r) as u32))
    } else {
        dispatchers
    };
    let agg = py
        .detach(|| des::run_trials(&cfg, seed, trials, warmup, horizon))
        .map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("mean_time", agg.mean_time)?;
    out.set_item("se_mean", agg.se_mean)?;
    out.set_item("var_time", agg.var_time)?;
    out.set_item("se_var", agg.se_var)?;
    out.set_item("fraction_random", agg.fraction_random)?;
    out.set_item("max_load", agg.max_load)?;
    out.set_item("trials", trials)?;
    Ok(out)
}

/// The arrival-rate grid used by the standard comparison tables.
#[pyfunction]
fn table_lambdas() -> Vec<f64> {
    jiq_core::harness::TABLE_LAMBDAS.to_vec()
}

#[pymodule]
fn jiq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(lu_formula, m)?)?;
    m.add_function(wrap_pyfunction!(solve_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_fluid, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(table_lambdas, m)?)?;
    Ok(())
}
