//! Statistical routing for multihop cognitive-radio networks.
//!
//! Given a network description (node positions, primary-user geometry,
//! propagation statistics), this crate computes jointly optimal routes,
//! transmission probabilities, and transmit-powers by
//!
//! 1. modeling per-link SINR statistics with a log-normal (Fenton-Wilkinson)
//!    approximation ([`channel`]),
//! 2. convexifying the resulting rate-maximization problem and driving a
//!    successive-convex-approximation loop whose iterates remain feasible
//!    ([`sca`], backed by the barrier solver in [`convex`]),
//! 3. optionally solving each convex subproblem by distributed ADMM over
//!    simulated message passing ([`admm`]), with per-primary-user
//!    interference budgets allocated by a primal-decomposition master
//!    ([`budget`]), and
//! 4. verifying end-to-end packet deliverability by absorbing-chain analysis
//!    and seeded Monte-Carlo simulation ([`delivery`]).
//!
//! The [`report`] module bundles the pieces into reproducible pipeline runs
//! that emit CSV traces and a JSON summary; the `statroute` binary in the
//! companion CLI crate is a thin wrapper around it.

pub mod admm;
pub mod budget;
pub mod channel;
pub mod convex;
pub mod delivery;
pub mod model;
pub mod report;
pub mod sca;
pub mod scenario;
pub mod units;
