//! Mode-4 C-V2X sidelink simulator with one-shot reselection and HARQ,
//! plus an analytical model of the inter-packet gap tail.

pub mod analytic;
pub mod channel;
pub mod congestion;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod resource_grid;
pub mod runner;
pub mod scheduler;

pub use error::{Error, Result};
pub use resource_grid::{Bandwidth, ResourcePool, TxSlotId};
