pub mod arm_sim;
pub mod dmp;
pub mod error;
pub mod exec;
pub mod manifold;
pub mod pipeline;
pub mod plot;
pub mod power;
pub mod seed;
pub mod skill;

pub use error::{Error, Result};
