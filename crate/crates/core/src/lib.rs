//! Analysis toolkit for distributed Join-Idle-Queue (JIQ) load balancing.
//!
//! A cluster of `n` servers is fed by `m` dispatchers (ratio `r = n/m`).
//! Each dispatcher keeps an *I-queue* of servers that registered as idle;
//! an arriving job goes to a server popped from the I-queue, or to a
//! uniformly random server when the I-queue is empty. The toolkit studies
//! this system three ways:
//!
//! * [`des`] — finite-system discrete-event simulation of JIQ (random or
//!   SQ(d) I-queue selection, FCFS/LCFS I-queues, early-threshold joins)
//!   and of the I-queue-less supermarket baseline;
//! * [`fluid`] — the mean-field fluid limit: coupled ODEs over I-queue
//!   length fractions and server (job count × I-queue position) fractions,
//!   integrated by forward Euler;
//! * [`equilibrium`] — the fluid fixed point for JIQ-Random, solved by
//!   bisection on total server mass.
//!
//! [`harness`] drives all three over an arrival-rate grid and emits CSV.

// Guards are written `!(x > 0.0)` so NaN parameters are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod des;
pub mod equilibrium;
pub mod fluid;
pub mod harness;

pub use config::{AssignmentPolicy, ConfigError, IQueueDiscipline, SystemConfig};
