//! Event-driven simulation of the two-type spatial Lambda-Fleming-Viot voter
//! model on `R^d`, together with the exact and Monte Carlo instruments used to
//! watch its cluster freeze.
//!
//! The crate is organised around four modules:
//!
//! * [`geometry`]: balls, finite ball unions, volumes and exact uniform
//!   sampling over unions.
//! * [`chain`]: the embedded jump chain `(Y_n, Delta_n)` stored as an
//!   append-only event log with lazy frequency evaluation, its continuous-time
//!   clock, the non-spatial warm-up chain and the monotone coupling.
//! * [`oracle`]: independent reference implementations (exact piecewise
//!   constant fields on the line, dense grids in higher dimension).
//! * [`diagnostics`]: total mass, local averages, the mass-change identity,
//!   martingale drift, `tau_alpha`, forbidden regions and the product bound,
//!   plus a verification suite that runs them all.
//!
//! Monte Carlo work is split into fixed-size chunks, each with its own random
//! substream, so results do not depend on whether the `parallel` feature (rayon)
//! is enabled or on the number of worker threads.

pub mod chain;
pub mod diagnostics;
mod error;
pub mod exec;
pub mod geometry;
pub mod grid;
pub mod oracle;
pub mod rng;
pub mod stats;

pub use chain::{ChainState, Event, InitialBlock, Params, Trajectory};
pub use error::{Error, Result};
pub use geometry::{Ball, BallUnion, Point};
pub use stats::Estimate;
