#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod attack;
pub mod baselines;
pub mod blackbox;
pub mod cluster;
pub mod data;
pub mod dp;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
