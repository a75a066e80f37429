pub mod config;
pub mod controllers;
pub mod error;
pub mod learn;
pub mod metrics;
pub mod personas;
pub mod pipeline;
pub mod rollout;
pub mod sim;
pub mod stylespace;

pub use config::Config;
pub use error::{Error, Result};
