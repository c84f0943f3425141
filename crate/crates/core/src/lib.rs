pub mod autodiff;
pub mod config;
pub mod envs;
pub mod error;
pub mod eval;
pub mod figures;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod rl;
pub mod training;

pub use error::{Error, Result};
