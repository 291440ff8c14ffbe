//! Subcommands of the `mogp` binary and model-bundle persistence.

pub mod bundle_file;
pub mod commands;
pub mod output;

pub use bundle_file::{BundleFile, BUNDLE_FORMAT, BUNDLE_VERSION};
