//! Orchestration for the `refracta` command: configuration, the staged
//! on-disk pipeline and exit-code classification.

pub mod config;
pub mod exit;
pub mod stages;

pub use config::{Config, ConfigError, Overrides};
pub use stages::{RenderSource, Stage, StageRun, Workspace};
