//! Simulation and numerical-analysis toolkit for repeated first-price
//! auctions paid in artificial currency ("pseudo-markets").
//!
//! The crate is organized bottom-up:
//!
//! * [`values`]: value distributions, the ideal-utility benchmark and the
//!   Bernoulli reduction that maps any value law onto Bernoulli(α).
//! * [`mechanism`]: the auction engine (budgets, clamping, tie-breaking,
//!   transcripts).
//! * [`strategies`]: bidding policies, robust ones and adversarial ones.
//! * [`bounds`]: closed-form and numerically optimized bounds used both as
//!   answers and as oracles against simulation.
//! * [`harness`]: Monte Carlo experiments, robustness sweeps and figure
//!   reproduction.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod mechanism;
pub mod rng;
pub mod strategies;
pub mod values;

pub use error::{Error, Result};
