//! Experiment runner for the `mvsde` schemes: presets, TOML configs and the
//! CSV/JSON artifacts they produce.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod presets;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind, ModelRef, SchemeEntry};
pub use error::{CliError, Result};
pub use presets::{preset, DEFAULT_SEED, PRESETS};
pub use runner::{manifest, run_experiment, Failure, Report};

use std::path::Path;

/// A preset name, or a path to a TOML config if the argument names a file.
pub fn resolve(target: &str, full: bool) -> Result<ExperimentConfig> {
    let path = Path::new(target);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    } else {
        preset(target, full)
    }
}
