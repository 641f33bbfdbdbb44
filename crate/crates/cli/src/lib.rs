//! HTTP service, stdio adapter and console tools for rowlight.

pub mod config;
pub mod remote;
pub mod repl;
pub mod server;
pub mod stdio;

pub use config::Config;
pub use server::Service;
