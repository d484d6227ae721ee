#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dpo;
pub mod env;
pub mod error;
pub mod eval;
pub mod frames;
pub mod linalg;
pub mod oracle;
pub mod ot;
pub mod policy;
pub mod representation;
pub mod reward_models;
pub mod rng;

pub use error::{Error, Result};
