//! Reconstruction of component-level power-system time series.
//!
//! Starting from a single network snapshot and public regional aggregates,
//! the crate
//!
//! * places snapshot substations on candidate geolocations ([`geo_recon`]),
//! * maps anonymized market offers onto snapshot generators ([`bid_map`]),
//! * samples mean-one multipliers with separable spatial (RBF) and temporal
//!   (exponential) correlation ([`stsample`]),
//! * splits regional totals into per-component series that add up exactly
//!   ([`disagg`]),
//! * nudges loads so every period admits a DC-feasible dispatch ([`dcfeas`]),
//! * and measures how the result compares with history ([`validate`]).
//!
//! [`pipeline`] wires the stages together behind a single configuration.

pub mod bid_map;
pub mod dcfeas;
pub mod disagg;
pub mod error;
pub mod geo_recon;
pub mod grid_model;
pub mod pipeline;
pub mod seeds;
pub mod stsample;
pub mod synth;
pub mod validate;

pub use error::{Error, ErrorKind, Result};
