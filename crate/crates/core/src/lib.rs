//! Exact spectral laboratory for the symmetric inclusion process on finite
//! weighted graphs.
//!
//! The crate assembles dense generators for the single-particle random walk,
//! the k-particle inclusion process, its labeled (symmetric and lookdown)
//! versions and the Brownian energy process restricted to homogeneous
//! polynomials. Every structural identity between them is available as a
//! residual check, and a continuous-time simulator provides Monte-Carlo
//! cross-validation.

pub mod bep;
pub mod config_space;
pub mod error;
pub mod graph;
pub mod intertwiners;
pub mod linalg;
pub mod lookdown;
pub mod sim;
pub mod sip;
pub mod stats;

pub use config_space::{state_cap, ConfigSpace, ParticleConfig, SipMeasure, DEFAULT_STATE_CAP};
pub use error::{Result, SipError};
pub use graph::{Graph, GraphFile, Preset, RwGenerator};
pub use linalg::{IdentityReport, Spectrum};
pub use sip::{GapReport, SipGenerator};
