//! Partially identifiable representations from a partially randomized
//! energy-based model, and CATE meta-learners that consume them.

pub mod cate;
pub mod config;
pub mod dgp;
pub mod ebm;
pub mod error;
pub mod eval;
pub mod nce;
pub mod numerics;
pub mod partition;
pub mod pipeline;

pub use error::{Error, Result};
