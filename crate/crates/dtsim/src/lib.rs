//! IO, file formats, scenario orchestration, and the CLI around
//! `dtsim-core`.

pub mod config;
pub mod formats;
pub mod scenario;
