//! Library surface of the experiment runner, used by the binary and the
//! acceptance suite.

pub mod config;
pub mod pipeline;
pub mod presets;
