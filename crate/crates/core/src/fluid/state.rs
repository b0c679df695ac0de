//! Fluid state containers, conversions, and state-derived metrics.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FluidError {
    #[error("mismatched array dimensions: {0}")]
    DimensionMismatch(String),
    #[error("non-finite values encountered at step {step}")]
    NonFinite { step: u64 },
    #[error("invalid integration settings: {0}")]
    BadSettings(&'static str),
    #[error("mean time in system needs lambda > 0, got {0}")]
    ZeroLambda(f64),
    #[error("inconsistent state: arrival pmf mass {mass} deviates from 1 beyond tolerance")]
    InconsistentPmf { mass: f64 },
    #[error("no fluid model for this configuration: {0}")]
    UnsupportedFamily(String),
}

/// Fluid state in direct coordinates (`q[i]` = fraction of I-queues with
/// exactly `i` servers).
///
/// Layout contract: `q.len() == i_max + 1`, `s.len() == (c_max + 1) * i_max`
/// with `s[i * i_max + (j - 1)]` holding the `(i, j)` entry for job count
/// `i` in `0..=c_max` and position `j` in `1..=i_max`, and
/// `s_nil.len() == c_max` with `s_nil[i - 1]` holding job count `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub q: Vec<f64>,
    pub s: Vec<f64>,
    pub s_nil: Vec<f64>,
    pub i_max: usize,
    pub c_max: usize,
    pub time: f64,
}

/// Fluid state in tail coordinates: `q_hat[i]` is the fraction of I-queues
/// with *at least* `i` servers (`q_hat[0] == 1`, nonincreasing). The server
/// arrays are identical to [`FluidState`].
#[derive(Debug, Clone, PartialEq)]
pub struct TailState {
    pub q_hat: Vec<f64>,
    pub s: Vec<f64>,
    pub s_nil: Vec<f64>,
    pub i_max: usize,
    pub c_max: usize,
    pub time: f64,
}

/// Forward-Euler integration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationSettings {
    pub step: f64,
    pub t_end: f64,
    pub i_max: usize,
    pub c_max: usize,
    /// Sampling interval for trajectory output, in time units.
    pub record_every: f64,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        IntegrationSettings {
            step: 0.01,
            t_end: 10_000.0,
            i_max: 128,
            c_max: 128,
            record_every: 1.0,
        }
    }
}

impl IntegrationSettings {
    pub fn validate(&self) -> Result<(), FluidError> {
        if !(self.step > 0.0) {
            return Err(FluidError::BadSettings("step must be positive"));
        }
        if !(self.t_end >= 0.0) {
            return Err(FluidError::BadSettings("t_end must be nonnegative"));
        }
        if self.i_max < 1 || self.c_max < 1 {
            return Err(FluidError::BadSettings("truncation bounds must be at least 1"));
        }
        if !(self.record_every > 0.0) {
            return Err(FluidError::BadSettings("record_every must be positive"));
        }
        Ok(())
    }
}

/// Initial condition: all I-queues empty, every server holding one job and
/// not enqueued.
pub fn init_state(i_max: usize, c_max: usize) -> FluidState {
    assert!(i_max >= 1 && c_max >= 1, "truncation bounds must be at least 1");
    let mut st = FluidState::zeroed(i_max, c_max);
    st.q[0] = 1.0;
    st.s_nil[0] = 1.0;
    st
}

/// Shared view of the three component arrays, so integration and sampling
/// work on both coordinate systems.
pub trait FluidVector: Clone {
    fn parts(&self) -> [&[f64]; 3];
    fn parts_mut(&mut self) -> [&mut [f64]; 3];
    fn dims(&self) -> (usize, usize);
    fn time(&self) -> f64;
    fn set_time(&mut self, t: f64);
    /// Fraction of empty I-queues.
    fn q_empty(&self) -> f64;
    /// `(|sum q - 1|, |sum s - 1|, |sum i*q_i - r * sum s_{i,j}|)`.
    fn residuals(&self, r: f64) -> (f64, f64, f64);

    /// Mean jobs per server: `sum_i i * (sum_j s[i][j] + s_nil[i])`.
    fn mean_jobs_per_server(&self) -> f64 {
        let [_, s, s_nil] = self.parts();
        let (i_max, c_max) = self.dims();
        let mut total = 0.0;
        for i in 1..=c_max {
            let row_sum: f64 = s[i * i_max..(i + 1) * i_max].iter().sum();
            total += i as f64 * (row_sum + s_nil[i - 1]);
        }
        total
    }

    /// Little's law: mean time in system given per-server arrival rate.
    fn mean_time_in_system(&self, lambda: f64) -> Result<f64, FluidError> {
        if !(lambda > 0.0) {
            return Err(FluidError::ZeroLambda(lambda));
        }
        Ok(self.mean_jobs_per_server() / lambda)
    }
}

impl FluidState {
    pub fn zeroed(i_max: usize, c_max: usize) -> Self {
        assert!(i_max >= 1 && c_max >= 1);
        FluidState {
            q: vec![0.0; i_max + 1],
            s: vec![0.0; (c_max + 1) * i_max],
            s_nil: vec![0.0; c_max],
            i_max,
            c_max,
            time: 0.0,
        }
    }

    /// `s[i][j]` accessor; `j` is 1-based.
    pub fn s(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= self.c_max && (1..=self.i_max).contains(&j));
        self.s[i * self.i_max + (j - 1)]
    }

    pub fn set_s(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i <= self.c_max && (1..=self.i_max).contains(&j));
        self.s[i * self.i_max + (j - 1)] = value;
    }

    /// `s_nil[i]` accessor; `i` is in `1..=c_max`.
    pub fn s_nil(&self, i: usize) -> f64 {
        debug_assert!((1..=self.c_max).contains(&i));
        self.s_nil[i - 1]
    }

    pub fn set_s_nil(&mut self, i: usize, value: f64) {
        debug_assert!((1..=self.c_max).contains(&i));
        self.s_nil[i - 1] = value;
    }

    pub(crate) fn check_shape(&self) -> Result<(), FluidError> {
        if self.q.len() != self.i_max + 1
            || self.s.len() != (self.c_max + 1) * self.i_max
            || self.s_nil.len() != self.c_max
        {
            return Err(FluidError::DimensionMismatch(format!(
                "q: {} (want {}), s: {} (want {}), s_nil: {} (want {})",
                self.q.len(),
                self.i_max + 1,
                self.s.len(),
                (self.c_max + 1) * self.i_max,
                self.s_nil.len(),
                self.c_max
            )));
        }
        Ok(())
    }
}

impl TailState {
    pub fn zeroed(i_max: usize, c_max: usize) -> Self {
        assert!(i_max >= 1 && c_max >= 1);
        TailState {
            q_hat: vec![0.0; i_max + 1],
            s: vec![0.0; (c_max + 1) * i_max],
            s_nil: vec![0.0; c_max],
            i_max,
            c_max,
            time: 0.0,
        }
    }

    pub(crate) fn check_shape(&self) -> Result<(), FluidError> {
        if self.q_hat.len() != self.i_max + 1
            || self.s.len() != (self.c_max + 1) * self.i_max
            || self.s_nil.len() != self.c_max
        {
            return Err(FluidError::DimensionMismatch(format!(
                "q_hat: {} (want {}), s: {} (want {}), s_nil: {} (want {})",
                self.q_hat.len(),
                self.i_max + 1,
                self.s.len(),
                (self.c_max + 1) * self.i_max,
                self.s_nil.len(),
                self.c_max
            )));
        }
        Ok(())
    }
}

impl FluidVector for FluidState {
    fn parts(&self) -> [&[f64]; 3] {
        [&self.q, &self.s, &self.s_nil]
    }
    fn parts_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.q, &mut self.s, &mut self.s_nil]
    }
    fn dims(&self) -> (usize, usize) {
        (self.i_max, self.c_max)
    }
    fn time(&self) -> f64 {
        self.time
    }
    fn set_time(&mut self, t: f64) {
        self.time = t;
    }
    fn q_empty(&self) -> f64 {
        self.q[0]
    }
    fn residuals(&self, r: f64) -> (f64, f64, f64) {
        conservation_residuals(self, r)
    }
}

impl FluidVector for TailState {
    fn parts(&self) -> [&[f64]; 3] {
        [&self.q_hat, &self.s, &self.s_nil]
    }
    fn parts_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.q_hat, &mut self.s, &mut self.s_nil]
    }
    fn dims(&self) -> (usize, usize) {
        (self.i_max, self.c_max)
    }
    fn time(&self) -> f64 {
        self.time
    }
    fn set_time(&mut self, t: f64) {
        self.time = t;
    }
    fn q_empty(&self) -> f64 {
        self.q_hat[0] - self.q_hat[1]
    }
    fn residuals(&self, r: f64) -> (f64, f64, f64) {
        // In tail coordinates the q-mass identity reads q_hat[0] = 1, and the
        // enqueued-server count is sum_{i>=1} q_hat[i].
        let resid_q = (self.q_hat[0] - 1.0).abs();
        let s_total: f64 =
            self.s.iter().sum::<f64>() + self.s_nil.iter().sum::<f64>();
        let enqueued_iq: f64 = self.q_hat[1..].iter().sum();
        let enqueued_srv: f64 = self.s.iter().sum();
        (
            resid_q,
            (s_total - 1.0).abs(),
            (enqueued_iq - r * enqueued_srv).abs(),
        )
    }
}

/// Cumulative-tail transform: `q_hat[i] = sum_{k >= i} q[k]`.
pub fn to_tail(state: &FluidState) -> TailState {
    let mut out = TailState {
        q_hat: vec![0.0; state.i_max + 1],
        s: state.s.clone(),
        s_nil: state.s_nil.clone(),
        i_max: state.i_max,
        c_max: state.c_max,
        time: state.time,
    };
    let mut acc = 0.0;
    for i in (0..=state.i_max).rev() {
        acc += state.q[i];
        out.q_hat[i] = acc;
    }
    out
}

/// Inverse of [`to_tail`]: `q[i] = q_hat[i] - q_hat[i + 1]`.
pub fn from_tail(state: &TailState) -> FluidState {
    let mut out = FluidState {
        q: vec![0.0; state.i_max + 1],
        s: state.s.clone(),
        s_nil: state.s_nil.clone(),
        i_max: state.i_max,
        c_max: state.c_max,
        time: state.time,
    };
    for i in 0..state.i_max {
        out.q[i] = state.q_hat[i] - state.q_hat[i + 1];
    }
    out.q[state.i_max] = state.q_hat[state.i_max];
    out
}

/// The three conservation residuals of a direct-coordinate state.
pub fn conservation_residuals(state: &FluidState, r: f64) -> (f64, f64, f64) {
    let q_total: f64 = state.q.iter().sum();
    let s_total: f64 = state.s.iter().sum::<f64>() + state.s_nil.iter().sum::<f64>();
    let enqueued_iq: f64 = state
        .q
        .iter()
        .enumerate()
        .map(|(i, &v)| i as f64 * v)
        .sum();
    let enqueued_srv: f64 = state.s.iter().sum();
    (
        (q_total - 1.0).abs(),
        (s_total - 1.0).abs(),
        (enqueued_iq - r * enqueued_srv).abs(),
    )
}

/// Mean and variance of an arriving job's time in system, read off the state.
///
/// An arrival lands on the front server of a nonempty I-queue, or on a
/// uniformly random server when the I-queue is empty, so the assigned
/// server's job count `i` has pmf
/// `P(i) = r * s[i][1] + q[0] * (sum_j s[i][j] + s_nil[i])`.
/// Given `i`, the sojourn is the sum of `i + 1` unit-mean exponential
/// services (the server works FCFS), with mean and variance both `i + 1`.
pub fn arrival_outcome_moments(
    state: &FluidState,
    _lambda: f64,
    r: f64,
) -> Result<(f64, f64), FluidError> {
    const PMF_TOLERANCE: f64 = 1e-6;
    let q0 = state.q[0];
    let mut mass = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for i in 0..=state.c_max {
        let row = &state.s[i * state.i_max..(i + 1) * state.i_max];
        let row_sum: f64 = row.iter().sum();
        let nil = if i >= 1 { state.s_nil[i - 1] } else { 0.0 };
        let p = r * row[0] + q0 * (row_sum + nil);
        let sojourn = (i + 1) as f64;
        mass += p;
        mean += sojourn * p;
        second += sojourn * sojourn * p;
    }
    if (mass - 1.0).abs() > PMF_TOLERANCE {
        return Err(FluidError::InconsistentPmf { mass });
    }
    // Var = E[Var | i] + Var[E | i]; conditional mean and variance are both i+1.
    let variance = mean + (second - mean * mean);
    Ok((mean, variance))
}
