//! Weighted sum-rate optimization for a full-duplex base station serving two
//! users through a simultaneously transmitting and reflecting surface
//! (STAR-RIS).
//!
//! The pipeline alternates a WMMSE loop over beamformers, uplink powers and
//! receivers with successive concave minorization of the rates in the surface
//! coefficients, under energy splitting (ES), mode selection (MS) or time
//! switching (TS). Baseline schemes reuse the same orchestrator with a
//! different [`rates::RateModel`] or coefficient projection.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod protocols;
pub mod rates;
pub mod rng;
pub mod sca;
pub mod units;
pub mod wmmse;

pub use config::{validate_config, SystemConfig, ValidatedConfig};
pub use error::{Error, Result};
pub use model::{AllocationState, ChannelSet, Protocol, RateReport, StarCoefficients};
