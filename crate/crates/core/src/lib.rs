//! Data-aided channel estimation for uplink/downlink decoupled HetNets.
//!
//! A single macro base station (MBS) with `M` antennas sits at the centre of a
//! disc-shaped cell populated by `S` small-cell base stations (SBSs, `N`
//! antennas each) and `K` single-antenna UEs. UEs associate independently in
//! uplink and downlink; a *decoupled* UE sends its uplink to an SBS but is
//! served in downlink by the MBS, which therefore never sees a clean pilot
//! estimate of its channel from its own uplink receiver.
//!
//! The three-stage scheme modelled here:
//!
//! 1. uplink training with orthogonal pilots ([`phy`], [`estimators`]),
//! 2. uplink data detection at each UE's uplink BS ([`detectors`]), with a
//!    closed-form BER prediction for the MMSE receiver ([`ber`]),
//! 3. joint pilot + decoded-data MMSE estimation at the MBS, weighted by the
//!    predicted error statistics of the decoded symbols ([`data_aided`]).
//!
//! [`downlink`] turns channel estimates into ZF precoders and rates and
//! [`experiments`] runs seeded, parallel parameter sweeps over all of it.

pub mod ber;
pub mod data_aided;
pub mod detectors;
pub mod downlink;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod phy;
pub mod rng;
pub mod scenario;
pub mod special;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
