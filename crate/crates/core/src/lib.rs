#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod cellnet;
pub mod config;
pub mod coop;
pub mod dqn;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod strategies;

pub use error::{Error, Result};
