//! Online non-preemptive scheduling engines with job rejection, plus the
//! machinery to certify their guarantees empirically.
//!
//! The crate bundles three engines and their support tooling:
//!
//! * [`flowtime`] — total flow-time minimization on unrelated machines.
//!   Jobs are dispatched on arrival via a price function, executed in
//!   shortest-processing-time order, and occasionally rejected by two
//!   counter rules. The engine also builds a feasible dual solution
//!   (per-job prices and per-machine step functions) online.
//! * [`flow_energy`] — weighted flow-time plus energy under speed scaling
//!   with power `P(s) = s^alpha`. Dispatch is by a weighted price, the
//!   queue is ordered by density `w/p`, speeds are fixed when a job
//!   starts, and rejection is driven by a weight counter.
//! * [`energy_min`] — deadline-constrained energy minimization over
//!   discretized speeds and start times. Each arriving job greedily
//!   commits the strategy of minimum marginal energy; dual variables come
//!   from an empirical smoothness constant of the power function.
//!
//! [`verify`] turns the dual-feasibility conditions of all three engines
//! into numeric constraint checkers, [`oracle`] provides brute-force
//! optima and two adaptive lower-bound adversaries, and [`instance`]
//! holds the shared job/instance/trace vocabulary with deterministic
//! seeded generators and JSON/CSV serialization.

#![forbid(unsafe_code)]

pub mod energy_min;
pub mod flow_energy;
pub mod flowtime;
pub mod instance;
pub mod oracle;
pub mod verify;
