//! Quantum denoising diffusion on a dense state-vector simulator.
//!
//! The crate is organised bottom-up: [`qstate`] simulates circuits, [`embed`]
//! and [`vqc`] turn images into states and states back into pixels, [`grad`]
//! differentiates and optimizes circuit parameters, [`models`] assembles the
//! Q-Dense and QU-Net denoisers, [`diffusion`] and [`uss`] train and sample
//! them, [`metrics`] scores samples, and [`cli`] drives reproducible runs.

pub mod cli;
pub mod data;
pub mod diffusion;
pub mod embed;
pub mod error;
pub mod grad;
pub mod image;
pub mod metrics;
pub mod models;
pub mod qstate;
pub mod uss;
pub mod vqc;

pub use error::{Error, Result};
