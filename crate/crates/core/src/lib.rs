//! Two-layer context privacy for sensor networks.
//!
//! Layer 1 hides where a reading came from (phantom routing over the
//! simulated field in [`netsim`], see [`phantom`]). Layer 2 hides what the
//! reading was: sources perturb their values with random quadratic masks and
//! an aggregator-forwarder recovers only the sum ([`ppda`]), over channels
//! keyed by the two-bank scheme in [`keymgmt`]. [`pipeline`] wires the layers
//! together per privacy level and [`climetrics`] hosts the experiment harness.

pub mod netsim;
pub mod phantom;
pub mod keymgmt;
pub mod ppda;
pub mod pipeline;
pub mod climetrics;
