//! Liquid state machine with stochastic-synapse spiking neurons in fixed
//! point, a floating-point reference, an LPC speech front end, Poisson spike
//! encoding, an MLP readout and an FPGA area model.

// `!(x > 0.0)` is used on purpose so NaN fails validation; `FxValue::add`
// and friends saturate and are not the operator traits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod encoding;
pub mod error;
pub mod frontend;
pub mod fxp;
pub mod lfsr;
pub mod neuron;
pub mod pipeline;
pub mod readout;
pub mod reference;
pub mod reservoir;
pub mod resources;

pub use error::{Error, Result};
