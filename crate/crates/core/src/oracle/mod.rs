//! Independent reference implementations.
//!
//! On the line, `Y_n` is held exactly as a sorted-breakpoint piecewise
//! constant function and `Phi_n` as the piecewise linear profile derived from
//! it. In higher dimension a dense grid replays every event on every cell
//! centre.

mod field1d;
mod grid_field;

pub use field1d::{PhiProfile, PiecewiseField1D, MERGE_TOLERANCE};
pub use grid_field::{grid_replay, GridField, DEFAULT_CELL_BUDGET};
