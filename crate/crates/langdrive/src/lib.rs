//! Run loop, LLM gateways, evaluation harness and telemetry service around
//! `langdrive-core`.

use std::collections::BTreeMap;

pub mod config;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod io;
pub mod orchestrator;
pub mod server;
pub mod store;

/// `{k: v, ...}` with compact numbers, for logs and summaries.
pub fn format_map(map: &BTreeMap<String, f64>) -> String {
    let body: Vec<String> = map.iter().map(|(k, v)| format!("{k}: {}", langdrive_core::fmt::compact(*v))).collect();
    format!("{{{}}}", body.join(", "))
}
