//! Clock-free multi-sensor backscatter: a simulator of the tag's analog
//! chain, voltage-division multiplexing onto a VCO, a channel model, and the
//! receiver that tracks the frequency staircase and rebuilds each sensor.

pub mod error;
pub mod harness;
pub mod iqfile;
pub mod modem;
pub mod rx;
pub mod signal;
pub mod tag;
pub mod vdm;

pub use error::{Error, Result};
