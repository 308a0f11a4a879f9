//! Link-level simulation of rate-splitting multiuser MIMO downlinks with
//! regularized block diagonalization or MMSE precoding and common-stream
//! combining at the receivers.
//!
//! Modules build on each other in order: [`model`] (configuration, stream
//! layout, power allocation), [`channel`] (estimates, CSIT errors, seeded
//! RNG), [`precoding`], [`combining`], [`rates`] (instantaneous and ergodic
//! rates), [`analysis`] (closed forms for RBD and their verification) and
//! [`sim`] (scenario sweeps and CSV output).

mod error;
pub mod linalg;
pub mod model;
pub mod channel;
pub mod precoding;
pub mod combining;
pub mod rates;
pub mod analysis;
pub mod sim;

pub use channel::{ChannelSet, RngSeed};
pub use combining::CombinerKind;
pub use error::{Error, Result};
pub use model::{CsitError, PowerAllocation, RateReport, StreamLayout, SystemConfig};
pub use precoding::{CommonPowerGrid, PrecoderKind, PrecoderSet};
pub use rates::{CommonAggregation, EsrEstimate, EsrSetup};
pub use sim::{Scenario, Sweep, SweepResult};
