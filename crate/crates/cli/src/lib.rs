//! Timing harness and report rows shared by the `voxelkit` binary and its
//! acceptance suite.

pub mod report;
pub mod timing;

pub use report::{TimingReport, TimingRow, REPORT_SCHEMA};
pub use timing::{measure, median, Measured};
