//! Mean-field fluid limit of the JIQ system.
//!
//! The limiting state tracks three families of fractions:
//!
//! * `q[i]` — fraction of I-queues holding exactly `i` servers;
//! * `s[i][j]` — fraction of servers with `i` jobs sitting at position `j`
//!   (from the front) of some I-queue;
//! * `s_nil[i]` — fraction of servers with `i` jobs not on any I-queue.
//!
//! Truncation bounds `i_max` (I-queue length / position) and `c_max` (job
//! count) make the state finite; entries beyond the bounds read as zero in
//! the derivative stencils, so mass that would cross a bound leaks out and
//! is visible in the conservation residuals.

mod deriv;
mod integrate;
mod state;

pub use deriv::{
    deriv_early_threshold, deriv_jiq_random, deriv_jiq_sqd, deriv_lcfs, OdeFamily,
};
pub use integrate::{
    euler_integrate, integrate_family, write_trajectory, FluidRun, Integration, TrajectorySample,
};
pub use state::{
    arrival_outcome_moments, conservation_residuals, from_tail, init_state, to_tail, FluidError,
    FluidState, FluidVector, IntegrationSettings, TailState,
};
