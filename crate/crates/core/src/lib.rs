pub mod bundle;
pub mod config;
pub mod error;
pub mod eval;
pub mod forward;
pub mod gridworld;
pub mod pipeline;
pub mod reward;
pub mod theory;
pub mod tinynn;

pub use error::{Error, Result};
