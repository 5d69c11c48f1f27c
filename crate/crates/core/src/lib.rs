//! Graph-based exploration of websites for collecting web-agent training
//! trajectories, with simulated sites, baselines and dataset tooling.

pub mod action;
pub mod analysis;
pub mod agent;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod datastore;
pub mod explorer;
pub mod llm;
pub mod reward;
pub mod simenv;
pub mod types;
pub mod urls;
