//! Bloom-intensity forecasting from sparse daily satellite rasters.
//!
//! The crate is organized by pipeline stage: [`raster`] and [`impute`] clean
//! the daily grids, [`features`] turns them into per-day records, [`dataset`]
//! windows records into labelled samples, [`nn`] and [`train`] fit the
//! Transformer-BiLSTM forecaster, and [`eval`] scores it against a
//! persistence baseline. [`pipeline`] wires the stages to files on disk.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod impute;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod train;

pub use error::{Error, Result};
