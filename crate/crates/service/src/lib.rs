//! Command-line pipeline and HTTP API for tacrolimus TDM built on `tdm-core`.
//!
//! - [`cli`]: `tdm fit | evaluate | split | simulate | summarize | serve`.
//! - [`api`]: JSON endpoints under `/api`.
//! - [`store`]: per-patient append-only journals.
//! - [`models`]: model definitions served by the API.

pub mod api;
pub mod cli;
pub mod models;
pub mod store;
