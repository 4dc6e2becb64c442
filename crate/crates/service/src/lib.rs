//! HTTP gateway and command-line front end over `fraudlens-core`.

pub mod app;
pub mod cli;
pub mod config;
pub mod ratelimit;
pub mod remote;
