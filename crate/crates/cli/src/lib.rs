//! Experiment runner and acceptance battery for `fluctlab`.

pub mod battery;
pub mod config;
pub mod experiments;
pub mod output;
