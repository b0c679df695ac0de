//! Fixed-step forward-Euler integration of the fluid ODE families.

use std::io::Write;

use super::deriv::{
    deriv_early_threshold_into, deriv_jiq_random_into, deriv_jiq_sqd_into, deriv_lcfs_into,
    OdeFamily,
};
use super::state::{
    from_tail, init_state, to_tail, FluidError, FluidState, FluidVector, IntegrationSettings,
    TailState,
};

/// One sampled point of an integration trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub q0: f64,
    pub mean_load: f64,
    pub resid_q: f64,
    pub resid_s: f64,
}

/// Result of [`euler_integrate`].
#[derive(Debug, Clone)]
pub struct Integration<S> {
    pub state: S,
    pub steps: u64,
    /// Total negative mass produced by discretization overshoot and clamped
    /// back to zero.
    pub clamped_mass: f64,
    /// Largest `|sum q - 1|` and `|sum s - 1|` seen at any sampled point.
    pub max_resid_q: f64,
    pub max_resid_s: f64,
    pub trajectory: Vec<TrajectorySample>,
}

/// Iterates `state <- state + step * deriv(state)` for `ceil(t_end / step)`
/// steps, clamping negative entries to zero and sampling the trajectory
/// every `record_every` time units.
pub fn euler_integrate<S, F>(
    mut deriv: F,
    start: &S,
    settings: &IntegrationSettings,
) -> Result<Integration<S>, FluidError>
where
    S: FluidVector,
    F: FnMut(&S, &mut S),
{
    settings.validate()?;
    let steps_total = (settings.t_end / settings.step).ceil() as u64;
    let stride = ((settings.record_every / settings.step).round() as u64).max(1);

    let mut cur = start.clone();
    let mut dbuf = start.clone();
    let mut clamped = 0.0_f64;
    let mut traj = Vec::with_capacity((steps_total / stride + 2) as usize);
    let mut max_rq = 0.0_f64;
    let mut max_rs = 0.0_f64;

    let mut record = |st: &S, max_rq: &mut f64, max_rs: &mut f64| {
        // The consistency residual needs r, so samples carry only the two
        // mass residuals; q0 here is the empty-I-queue fraction.
        let (rq, rs, _) = st.residuals(1.0);
        *max_rq = max_rq.max(rq);
        *max_rs = max_rs.max(rs);
        traj.push(TrajectorySample {
            t: st.time(),
            q0: st.q_empty(),
            mean_load: st.mean_jobs_per_server(),
            resid_q: rq,
            resid_s: rs,
        });
    };
    record(&cur, &mut max_rq, &mut max_rs);

    let h = settings.step;
    for k in 0..steps_total {
        deriv(&cur, &mut dbuf);
        let mut acc = 0.0_f64;
        {
            let dparts = dbuf.parts();
            let parts = cur.parts_mut();
            for (part, dpart) in parts.into_iter().zip(dparts) {
                for (v, d) in part.iter_mut().zip(dpart) {
                    let nv = *v + h * *d;
                    let neg = nv.min(0.0);
                    clamped -= neg;
                    let nv = nv - neg;
                    acc += nv;
                    *v = nv;
                }
            }
        }
        if !acc.is_finite() {
            return Err(FluidError::NonFinite { step: k + 1 });
        }
        cur.set_time(h * (k + 1) as f64);
        if (k + 1) % stride == 0 || k + 1 == steps_total {
            record(&cur, &mut max_rq, &mut max_rs);
        }
    }

    Ok(Integration {
        state: cur,
        steps: steps_total,
        clamped_mass: clamped,
        max_resid_q: max_rq,
        max_resid_s: max_rs,
        trajectory: traj,
    })
}

/// A completed integration of one derivative family, with the final state in
/// direct coordinates and the headline metrics.
#[derive(Debug, Clone)]
pub struct FluidRun {
    pub family: OdeFamily,
    pub lambda: f64,
    pub r: f64,
    pub final_state: FluidState,
    pub mean_jobs: f64,
    pub mean_time: f64,
    pub q0: f64,
    pub resid_q: f64,
    pub resid_s: f64,
    pub resid_consistency: f64,
    pub max_resid_q: f64,
    pub max_resid_s: f64,
    pub clamped_mass: f64,
    pub steps: u64,
    pub trajectory: Vec<TrajectorySample>,
}

/// Builds the standard initial condition (every server holding one job, all
/// I-queues empty) and integrates the given family to `settings.t_end`.
pub fn integrate_family(
    family: OdeFamily,
    lambda: f64,
    r: f64,
    settings: &IntegrationSettings,
) -> Result<FluidRun, FluidError> {
    settings.validate()?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(FluidError::BadSettings("lambda must lie in (0, 1)"));
    }
    if !(r > 0.0) {
        return Err(FluidError::BadSettings("r must be positive"));
    }

    let start = init_state(settings.i_max, settings.c_max);
    let (integration, final_state): (Integration<FluidState>, FluidState) = match family {
        OdeFamily::JiqRandom => {
            let run = euler_integrate(
                |s: &FluidState, o: &mut FluidState| deriv_jiq_random_into(s, lambda, r, o),
                &start,
                settings,
            )?;
            let st = run.state.clone();
            (run, st)
        }
        OdeFamily::EarlyThreshold { z } => {
            let run = euler_integrate(
                |s: &FluidState, o: &mut FluidState| {
                    deriv_early_threshold_into(s, lambda, r, z, o)
                },
                &start,
                settings,
            )?;
            let st = run.state.clone();
            (run, st)
        }
        OdeFamily::Lcfs => {
            let run = euler_integrate(
                |s: &FluidState, o: &mut FluidState| deriv_lcfs_into(s, lambda, r, o),
                &start,
                settings,
            )?;
            let st = run.state.clone();
            (run, st)
        }
        OdeFamily::JiqSqd { d } => {
            if d < 1 {
                return Err(FluidError::BadSettings("probe count d must be at least 1"));
            }
            let tail_start = to_tail(&start);
            let run = euler_integrate(
                |s: &TailState, o: &mut TailState| deriv_jiq_sqd_into(s, lambda, r, d, o),
                &tail_start,
                settings,
            )?;
            let final_state = from_tail(&run.state);
            let fluid_run = Integration {
                state: final_state.clone(),
                steps: run.steps,
                clamped_mass: run.clamped_mass,
                max_resid_q: run.max_resid_q,
                max_resid_s: run.max_resid_s,
                trajectory: run.trajectory,
            };
            (fluid_run, final_state)
        }
    };

    let mean_jobs = final_state.mean_jobs_per_server();
    let mean_time = final_state.mean_time_in_system(lambda)?;
    let (rq, rs, rc) = final_state.residuals(r);
    Ok(FluidRun {
        family,
        lambda,
        r,
        q0: final_state.q_empty(),
        final_state,
        mean_jobs,
        mean_time,
        resid_q: rq,
        resid_s: rs,
        resid_consistency: rc,
        max_resid_q: integration.max_resid_q,
        max_resid_s: integration.max_resid_s,
        clamped_mass: integration.clamped_mass,
        steps: integration.steps,
        trajectory: integration.trajectory,
    })
}

/// Writes a sampled trajectory as CSV.
pub fn write_trajectory<W: Write>(
    out: &mut W,
    samples: &[TrajectorySample],
    lambda: f64,
) -> std::io::Result<()> {
    writeln!(out, "t,q0,mean_load,mean_time,resid_q,resid_s")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.t,
            s.q0,
            s.mean_load,
            s.mean_load / lambda,
            s.resid_q,
            s.resid_s
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_derivative_is_fixed_point() {
        let start = init_state(8, 8);
        let settings = IntegrationSettings {
            step: 0.5,
            t_end: 100.0,
            i_max: 8,
            c_max: 8,
            record_every: 10.0,
        };
        let run = euler_integrate(
            |_s: &FluidState, o: &mut FluidState| {
                o.q.iter_mut().for_each(|v| *v = 0.0);
                o.s.iter_mut().for_each(|v| *v = 0.0);
                o.s_nil.iter_mut().for_each(|v| *v = 0.0);
            },
            &start,
            &settings,
        )
        .unwrap();
        assert_eq!(run.state.q, start.q);
        assert_eq!(run.state.s, start.s);
        assert_eq!(run.state.s_nil, start.s_nil);
        assert_eq!(run.steps, 200);
        assert_eq!(run.clamped_mass, 0.0);
    }

    #[test]
    fn aborts_on_non_finite_state() {
        let start = init_state(4, 4);
        let settings = IntegrationSettings {
            step: 1.0,
            t_end: 10.0,
            i_max: 4,
            c_max: 4,
            record_every: 1.0,
        };
        let res = euler_integrate(
            |_s: &FluidState, o: &mut FluidState| {
                o.q[0] = f64::NAN;
            },
            &start,
            &settings,
        );
        match res {
            Err(FluidError::NonFinite { step }) => assert_eq!(step, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn clamping_reports_overshoot() {
        let start = init_state(4, 4);
        let settings = IntegrationSettings {
            step: 1.0,
            t_end: 1.0,
            i_max: 4,
            c_max: 4,
            record_every: 1.0,
        };
        // Derivative pushes q[0] from 1 to -1: one unit of clamped mass.
        let run = euler_integrate(
            |_s: &FluidState, o: &mut FluidState| {
                o.q.iter_mut().for_each(|v| *v = 0.0);
                o.s.iter_mut().for_each(|v| *v = 0.0);
                o.s_nil.iter_mut().for_each(|v| *v = 0.0);
                o.q[0] = -2.0;
            },
            &start,
            &settings,
        )
        .unwrap();
        assert_eq!(run.state.q[0], 0.0);
        assert_eq!(run.clamped_mass, 1.0);
    }

    #[test]
    fn short_integration_stays_conservative() {
        // i_max = 32 visibly leaks during the start-up transient at this
        // load (the I-queues overshoot their equilibrium lengths), so use a
        // roomier truncation here.
        let settings = IntegrationSettings {
            step: 0.01,
            t_end: 50.0,
            i_max: 64,
            c_max: 64,
            record_every: 5.0,
        };
        let run = integrate_family(OdeFamily::JiqRandom, 0.9, 10.0, &settings).unwrap();
        assert!(run.max_resid_q < 1e-10, "resid_q = {}", run.max_resid_q);
        assert!(run.max_resid_s < 1e-10, "resid_s = {}", run.max_resid_s);
        assert!(run.resid_consistency < 1e-10, "resid_c = {}", run.resid_consistency);
        // heading toward the equilibrium load 0.9 * 1.83659 = 1.6529
        assert!(run.mean_jobs > 1.6 && run.mean_jobs < 1.6529);
        assert!(!run.trajectory.is_empty());
    }

    #[test]
    fn trajectory_csv_shape() {
        let samples = vec![TrajectorySample {
            t: 1.0,
            q0: 0.5,
            mean_load: 0.9,
            resid_q: 0.0,
            resid_s: 0.0,
        }];
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &samples, 0.9).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,q0,mean_load,mean_time,resid_q,resid_s"));
        assert_eq!(lines.next(), Some("1,0.5,0.9,1,0,0"));
        assert_eq!(lines.next(), None);
    }
}
