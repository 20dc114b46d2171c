//! Monte-Carlo model and analysis pipeline for a hybrid intensified camera
//! (sCMOS behind an image intensifier, with a PMT watching the phosphor)
//! whose gate closes adaptively after a set number of photon detections.
//!
//! The chain is: momentum-correlated photon pairs plus background
//! ([`source`]) → photocathode, MCP and phosphor ([`intensifier`]) →
//! sCMOS image and PMT pulse train ([`readout`]) under a gate controller
//! ([`gating`]) → spot fitting ([`extraction`]) → correlation analysis
//! ([`analysis`]) and brightness-based time tagging ([`timetag`]).

pub mod analysis;
pub mod config;
pub mod error;
pub mod extraction;
pub mod gating;
pub mod intensifier;
pub mod lm;
pub mod readout;
pub mod record;
pub mod rng;
pub mod source;
pub mod timetag;

pub use config::RunConfig;
pub use error::ConfigError;
