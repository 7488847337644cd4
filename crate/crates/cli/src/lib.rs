//! Coordination server and operator tooling for the proctor protocol engine.
//!
//! - [`server`]: the HTTP API over a single orchestrator.
//! - [`client`]: blocking client for that API.
//! - [`connector`]: HTTP model endpoints for evaluation.
//! - [`keys`]: identity files and the encrypted salt vault.
//! - [`commands`]: the `proctor` command line.

pub mod api;
pub mod client;
pub mod commands;
pub mod connector;
pub mod keys;
pub mod server;
