//! File formats, run manifests and the `lfednet` command line on top of
//! [`lfednet_core`].
//!
//! - [`records`]: the hourly load and temperature CSV.
//! - [`formats`]: system and training-configuration JSON, the model bundle.
//! - [`artifacts`]: schedule, forecast, log and evaluation CSVs.
//! - [`manifest`]: atomic output writing with a hashed run manifest.
//! - [`cli`]: subcommands and exit statuses.

pub mod artifacts;
pub mod cli;
pub mod error;
pub mod formats;
pub mod fsio;
pub mod manifest;
pub mod observer;
pub mod records;

pub use error::{Error, Result};
pub use formats::ModelBundle;
