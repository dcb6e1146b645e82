//! Bounded stochastic models for forecast errors of normalized power production.

pub mod calibrate;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod ingest;
pub mod likelihood;
pub mod manifest;
pub mod model;
pub mod moments;
pub mod optim;
pub mod selftest;
pub mod simulate;
pub mod synth;

pub use error::{Error, Result};
