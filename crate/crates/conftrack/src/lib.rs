//! File formats, TrackML ingestion, SVG event displays and the command
//! line pipeline around `conftrack-core`.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod svg;
pub mod trackml;

pub use config::RunConfig;
pub use error::{Error, Result};
