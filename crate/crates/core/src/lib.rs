//! Inventory placement for downstream online fulfillment.
//!
//! The crate covers the hindsight-optimal transportation LP and its
//! sample-average placement program, dependent randomized rounding with a
//! Monte Carlo approximation certificate, placement and fulfillment
//! procedures for RDC/FDC star networks, demand models, an order-log
//! pipeline, and an experiment harness.

pub mod demand;
pub mod error;
pub mod fulfillment;
pub mod gallery;
pub mod harness;
pub mod lp;
pub mod model;
pub mod pipeline;
pub mod placement;
pub mod rng;
pub mod rounding;
pub mod surrogate;

pub use error::{Error, Result};
pub use model::{
    degree_profile, load_factor, ArrivalSequence, DegreeProfile, DemandScenario, FractionalPlacement,
    NetworkInstance, Placement, Request, StarNetwork, StarShape,
};
