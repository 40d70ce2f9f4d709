//! File formats, configuration, reports and the experiment harness around
//! `smaat-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;

pub use error::{LabError, Result};
