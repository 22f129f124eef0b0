//! Turn-level prosodic entrainment analysis for two-speaker conversations.
//!
//! The crate covers the full pipeline: corpus ingestion ([`corpus`]), pitch
//! and intensity extraction ([`prosody`]), overlapped sectioning of the turn
//! sequence ([`sectioning`]), synchrony classification ([`synchrony`]),
//! turn-pair difference series ([`entrainment`]), corpus-level correlation
//! against session ratings ([`analysis`] / [`report`]), and a synthetic dyad
//! generator for testing and demos ([`synth`]).
//!
//! Numeric kernels are generic over the scalar type via [`float::Real`];
//! the concrete pipeline runs at [`Scalar`] precision.

pub mod analysis;
pub mod corpus;
pub mod entrainment;
pub mod float;
pub mod prosody;
pub mod report;
pub mod sectioning;
pub mod stats;
pub mod synchrony;
pub mod synth;

/// Scalar type the concrete analysis pipeline runs at.
pub type Scalar = f64;

/// Correlation result at pipeline precision.
pub type Corr = stats::CorrResult<Scalar>;
