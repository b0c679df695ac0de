//! Time-derivative builders for the four ODE families.
//!
//! All builders treat entries beyond the truncation bounds as zero, write
//! the derivative into a caller-provided buffer of the same shape, and are
//! pure functions of the state.

use super::state::{FluidError, FluidState, TailState};
use crate::config::{AssignmentPolicy, IQueueDiscipline, SystemConfig};

/// Which derivative family to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeFamily {
    JiqRandom,
    EarlyThreshold { z: u32 },
    Lcfs,
    JiqSqd { d: u32 },
}

impl OdeFamily {
    /// Maps a validated config onto a derivative family. The families are
    /// modeled separately, so combinations (LCFS + threshold, SQ(d) +
    /// threshold) are rejected even though the simulator supports them.
    pub fn from_config(cfg: &SystemConfig) -> Result<Self, FluidError> {
        let unsupported = |what: &str| Err(FluidError::UnsupportedFamily(what.to_string()));
        match (cfg.policy, cfg.discipline, cfg.z) {
            (AssignmentPolicy::Supermarket(_), _, _) => {
                unsupported("the supermarket policy has no I-queue fluid model")
            }
            (AssignmentPolicy::JiqRandom, Some(IQueueDiscipline::Fcfs), 0) => {
                Ok(OdeFamily::JiqRandom)
            }
            (AssignmentPolicy::JiqRandom, Some(IQueueDiscipline::Fcfs), z) => {
                Ok(OdeFamily::EarlyThreshold { z })
            }
            (AssignmentPolicy::JiqRandom, Some(IQueueDiscipline::Lcfs), 0) => Ok(OdeFamily::Lcfs),
            (AssignmentPolicy::JiqRandom, Some(IQueueDiscipline::Lcfs), _) => {
                unsupported("LCFS combined with an early threshold is not modeled")
            }
            (AssignmentPolicy::JiqSqd(d), Some(IQueueDiscipline::Fcfs), 0) => {
                Ok(OdeFamily::JiqSqd { d })
            }
            (AssignmentPolicy::JiqSqd(_), _, _) => {
                unsupported("SQ(d) I-queue selection is modeled only with FCFS and z = 0")
            }
            (_, None, _) => unsupported("JIQ fluid models need an I-queue discipline"),
        }
    }
}

/// dq/dt and ds/dt for base JIQ-Random (FCFS I-queues, join when idle).
pub fn deriv_jiq_random(
    state: &FluidState,
    lambda: f64,
    r: f64,
) -> Result<FluidState, FluidError> {
    state.check_shape()?;
    let mut out = FluidState::zeroed(state.i_max, state.c_max);
    deriv_jiq_random_into(state, lambda, r, &mut out);
    Ok(out)
}

pub(crate) fn deriv_jiq_random_into(
    state: &FluidState,
    lambda: f64,
    r: f64,
    out: &mut FluidState,
) {
    let im = state.i_max;
    let cm = state.c_max;
    let s1n = state.s_nil[0];
    let lr = lambda * r;
    let q = &state.q[..];

    // I-queue lengths. An arrival at an empty I-queue is forwarded at once,
    // so q[0] has no arrival loss term.
    out.q[0] = lr * q[1] - r * q[0] * s1n;
    for i in 1..=im {
        let q_next = if i < im { q[i + 1] } else { 0.0 };
        out.q[i] = lr * (q_next - q[i]) - r * (q[i] - q[i - 1]) * s1n;
    }

    let q0 = q[0];
    let lq0 = lambda * q0;

    // Row i = 0: completions from (1, j), random arrivals leaving, joins of
    // newly idle servers onto length-(j-1) I-queues, and front pops at the
    // holding I-queue shifting positions down.
    {
        let row = &state.s[0..im];
        let above = &state.s[im..2 * im];
        let o = &mut out.s[0..im];
        for j in 0..im - 1 {
            o[j] = above[j] - lq0 * row[j] + s1n * q[j] + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = above[j] - lq0 * row[j] + s1n * q[j] + lr * (0.0 - row[j]);
    }

    // Rows 1..c_max-1 (completion inflow from above, random arrivals, pops).
    for i in 1..cm {
        let lo = i * im;
        let row = &state.s[lo..lo + im];
        let below = &state.s[lo - im..lo];
        let above = &state.s[lo + im..lo + 2 * im];
        let o = &mut out.s[lo..lo + im];
        for j in 0..im - 1 {
            o[j] = above[j] - row[j] + lq0 * (below[j] - row[j]) + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = above[j] - row[j] + lq0 * (below[j] - row[j]) + lr * (0.0 - row[j]);
    }

    // Top row i = c_max: no completion inflow from above the truncation.
    if cm >= 1 {
        let lo = cm * im;
        let row = &state.s[lo..lo + im];
        let below = &state.s[lo - im..lo];
        let o = &mut out.s[lo..lo + im];
        for j in 0..im - 1 {
            o[j] = 0.0 - row[j] + lq0 * (below[j] - row[j]) + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = 0.0 - row[j] + lq0 * (below[j] - row[j]) + lr * (0.0 - row[j]);
    }

    // Unenqueued servers. s_nil[0] is job count 1; there is no s_nil for
    // zero jobs because a newly idle unenqueued server joins immediately.
    for i in 1..=cm {
        let v = state.s_nil[i - 1];
        let up = if i < cm { state.s_nil[i] } else { 0.0 };
        let dn = if i >= 2 { state.s_nil[i - 2] } else { 0.0 };
        let front = state.s[(i - 1) * im]; // s[i-1][1]: front server gaining a job
        out.s_nil[i - 1] = up - v + lq0 * (dn - v) + lr * front;
    }

    out.time = 0.0;
}

/// Early-threshold variant: an unenqueued server joins an I-queue whenever a
/// completion drops its job count to `z` or below. `z = 0` reproduces
/// [`deriv_jiq_random`] entry for entry.
pub fn deriv_early_threshold(
    state: &FluidState,
    lambda: f64,
    r: f64,
    z: u32,
) -> Result<FluidState, FluidError> {
    state.check_shape()?;
    let mut out = FluidState::zeroed(state.i_max, state.c_max);
    deriv_early_threshold_into(state, lambda, r, z, &mut out);
    Ok(out)
}

pub(crate) fn deriv_early_threshold_into(
    state: &FluidState,
    lambda: f64,
    r: f64,
    z: u32,
    out: &mut FluidState,
) {
    let im = state.i_max;
    let cm = state.c_max;
    let z = z as usize;
    let lr = lambda * r;
    let q = &state.q[..];

    // Join flux: completions at unenqueued servers with 1..=z+1 jobs leave
    // them at <= z jobs, triggering a join.
    let mut flux = 0.0;
    for k in 1..=(z + 1).min(cm) {
        flux += state.s_nil[k - 1];
    }

    out.q[0] = lr * q[1] - r * q[0] * flux;
    for i in 1..=im {
        let q_next = if i < im { q[i + 1] } else { 0.0 };
        out.q[i] = lr * (q_next - q[i]) - r * (q[i] - q[i - 1]) * flux;
    }

    let q0 = q[0];
    let lq0 = lambda * q0;

    {
        let row = &state.s[0..im];
        let above = &state.s[im..2 * im];
        let s1n = state.s_nil[0];
        let o = &mut out.s[0..im];
        for j in 0..im - 1 {
            o[j] = above[j] - lq0 * row[j] + s1n * q[j] + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = above[j] - lq0 * row[j] + s1n * q[j] + lr * (0.0 - row[j]);
    }

    for i in 1..cm {
        let lo = i * im;
        let row = &state.s[lo..lo + im];
        let below = &state.s[lo - im..lo];
        let above = &state.s[lo + im..lo + 2 * im];
        let o = &mut out.s[lo..lo + im];
        for j in 0..im - 1 {
            o[j] = above[j] - row[j] + lq0 * (below[j] - row[j]) + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = above[j] - row[j] + lq0 * (below[j] - row[j]) + lr * (0.0 - row[j]);
    }
    if cm >= 1 {
        let lo = cm * im;
        let row = &state.s[lo..lo + im];
        let below = &state.s[lo - im..lo];
        let o = &mut out.s[lo..lo + im];
        for j in 0..im - 1 {
            o[j] = 0.0 - row[j] + lq0 * (below[j] - row[j]) + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = 0.0 - row[j] + lq0 * (below[j] - row[j]) + lr * (0.0 - row[j]);
    }

    // Early joins land enqueued servers with 1..=z jobs at position j of a
    // length-(j-1) I-queue.
    for i in 1..=z.min(cm) {
        if i + 1 > cm {
            break;
        }
        let joiner = state.s_nil[i]; // s_nil[i+1] in 1-based job count
        let o = &mut out.s[i * im..(i + 1) * im];
        for j in 0..im {
            o[j] += joiner * q[j];
        }
    }

    for i in 1..=cm {
        let v = state.s_nil[i - 1];
        let up = if i < cm { state.s_nil[i] } else { 0.0 };
        let dn = if i >= 2 { state.s_nil[i - 2] } else { 0.0 };
        let front = state.s[(i - 1) * im];
        if i <= z {
            // A completion at i+1 jobs triggers a join, so nothing flows
            // down into the unenqueued pool here.
            out.s_nil[i - 1] = 0.0 - v + lq0 * (dn - v) + lr * front;
        } else {
            out.s_nil[i - 1] = up - v + lq0 * (dn - v) + lr * front;
        }
    }

    out.time = 0.0;
}

/// LCFS I-queues: joiners are inserted at the front, shifting everyone back;
/// positions are still counted from the front, which is popped on arrivals.
pub fn deriv_lcfs(state: &FluidState, lambda: f64, r: f64) -> Result<FluidState, FluidError> {
    state.check_shape()?;
    let mut out = FluidState::zeroed(state.i_max, state.c_max);
    deriv_lcfs_into(state, lambda, r, &mut out);
    Ok(out)
}

pub(crate) fn deriv_lcfs_into(state: &FluidState, lambda: f64, r: f64, out: &mut FluidState) {
    let im = state.i_max;
    let cm = state.c_max;
    let s1n = state.s_nil[0];
    let lr = lambda * r;
    let rs1n = r * s1n;
    let q = &state.q[..];

    // The q equations do not depend on the I-queue discipline.
    out.q[0] = lr * q[1] - r * q[0] * s1n;
    for i in 1..=im {
        let q_next = if i < im { q[i + 1] } else { 0.0 };
        out.q[i] = lr * (q_next - q[i]) - r * (q[i] - q[i - 1]) * s1n;
    }

    let q0 = q[0];
    let lq0 = lambda * q0;

    // Row i = 0. Joins enter only position 1; other positions gain from the
    // front-insertion shift.
    {
        let row = &state.s[0..im];
        let above = &state.s[im..2 * im];
        let o = &mut out.s[0..im];
        o[0] = above[0] - lq0 * row[0] + lr * (if im > 1 { row[1] } else { 0.0 } - row[0])
            - rs1n * row[0]
            + s1n;
        for j in 1..im - 1 {
            o[j] = above[j] - lq0 * row[j]
                + lr * (row[j + 1] - row[j])
                + rs1n * (row[j - 1] - row[j]);
        }
        if im > 1 {
            let j = im - 1;
            o[j] = above[j] - lq0 * row[j] + lr * (0.0 - row[j]) + rs1n * (row[j - 1] - row[j]);
        }
    }

    let lcfs_row = |row: &[f64], below: &[f64], above: &[f64], o: &mut [f64]| {
        o[0] = above[0] - row[0]
            + lq0 * (below[0] - row[0])
            + lr * (if im > 1 { row[1] } else { 0.0 } - row[0])
            - rs1n * row[0];
        for j in 1..im - 1 {
            o[j] = above[j] - row[j]
                + lq0 * (below[j] - row[j])
                + lr * (row[j + 1] - row[j])
                + rs1n * (row[j - 1] - row[j]);
        }
        if im > 1 {
            let j = im - 1;
            o[j] = above[j] - row[j]
                + lq0 * (below[j] - row[j])
                + lr * (0.0 - row[j])
                + rs1n * (row[j - 1] - row[j]);
        }
    };

    let zeros = vec![0.0; im];
    for i in 1..=cm {
        let lo = i * im;
        let above: &[f64] = if i < cm {
            &state.s[lo + im..lo + 2 * im]
        } else {
            &zeros
        };
        // Split-borrow: copy the row bounds first.
        let (head, tail) = state.s.split_at(lo);
        let below = &head[lo - im..];
        let row = &tail[..im];
        // o cannot overlap the input state.
        let o = &mut out.s[lo..lo + im];
        lcfs_row(row, below, above, o);
    }

    // Unenqueued servers evolve exactly as in the base model.
    for i in 1..=cm {
        let v = state.s_nil[i - 1];
        let up = if i < cm { state.s_nil[i] } else { 0.0 };
        let dn = if i >= 2 { state.s_nil[i - 2] } else { 0.0 };
        let front = state.s[(i - 1) * im];
        out.s_nil[i - 1] = up - v + lq0 * (dn - v) + lr * front;
    }

    out.time = 0.0;
}

/// SQ(d) I-queue selection in tail coordinates: a joining server probes `d`
/// I-queues and picks the shortest, so it lands on a queue of length `i - 1`
/// with probability `q_hat[i-1]^d - q_hat[i]^d`.
pub fn deriv_jiq_sqd(
    state: &TailState,
    lambda: f64,
    r: f64,
    d: u32,
) -> Result<TailState, FluidError> {
    state.check_shape()?;
    if d < 1 {
        return Err(FluidError::BadSettings("probe count d must be at least 1"));
    }
    let mut out = TailState::zeroed(state.i_max, state.c_max);
    deriv_jiq_sqd_into(state, lambda, r, d, &mut out);
    Ok(out)
}

pub(crate) fn deriv_jiq_sqd_into(
    state: &TailState,
    lambda: f64,
    r: f64,
    d: u32,
    out: &mut TailState,
) {
    let im = state.i_max;
    let cm = state.c_max;
    let s1n = state.s_nil[0];
    let lr = lambda * r;
    let d = d as i32;
    let qh = &state.q_hat[..];

    // q_hat[0] == 1 is an identity, not a dynamic quantity.
    out.q_hat[0] = 0.0;
    for i in 1..=im {
        let next = if i < im { qh[i + 1] } else { 0.0 };
        out.q_hat[i] =
            -lr * (qh[i] - next) + r * (qh[i - 1].powi(d) - qh[i].powi(d)) * s1n;
    }

    let q0 = qh[0] - qh[1];
    let lq0 = lambda * q0;

    {
        let row = &state.s[0..im];
        let above = &state.s[im..2 * im];
        let o = &mut out.s[0..im];
        for j in 0..im - 1 {
            let join = qh[j].powi(d) - qh[j + 1].powi(d);
            o[j] = above[j] - lq0 * row[j] + s1n * join + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        let join = qh[j].powi(d) - qh[j + 1].powi(d);
        o[j] = above[j] - lq0 * row[j] + s1n * join + lr * (0.0 - row[j]);
    }

    for i in 1..cm {
        let lo = i * im;
        let row = &state.s[lo..lo + im];
        let below = &state.s[lo - im..lo];
        let above = &state.s[lo + im..lo + 2 * im];
        let o = &mut out.s[lo..lo + im];
        for j in 0..im - 1 {
            o[j] = above[j] - row[j] + lq0 * (below[j] - row[j]) + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = above[j] - row[j] + lq0 * (below[j] - row[j]) + lr * (0.0 - row[j]);
    }
    if cm >= 1 {
        let lo = cm * im;
        let row = &state.s[lo..lo + im];
        let below = &state.s[lo - im..lo];
        let o = &mut out.s[lo..lo + im];
        for j in 0..im - 1 {
            o[j] = 0.0 - row[j] + lq0 * (below[j] - row[j]) + lr * (row[j + 1] - row[j]);
        }
        let j = im - 1;
        o[j] = 0.0 - row[j] + lq0 * (below[j] - row[j]) + lr * (0.0 - row[j]);
    }

    for i in 1..=cm {
        let v = state.s_nil[i - 1];
        let up = if i < cm { state.s_nil[i] } else { 0.0 };
        let dn = if i >= 2 { state.s_nil[i - 2] } else { 0.0 };
        let front = state.s[(i - 1) * im];
        out.s_nil[i - 1] = up - v + lq0 * (dn - v) + lr * front;
    }

    out.time = 0.0;
}
