//! Perfect simulation of countable networks of interacting neurons.
//!
//! Each neuron carries a non-negative integer membrane potential. External
//! stimuli increment it; a threshold-`k` spike attempt fires when the
//! potential is at least `k`, resetting the neuron and incrementing its
//! postsynaptic targets. Exact stationary samples of one neuron's potential
//! are produced in two passes:
//!
//! 1. [`backward`] explores the clan of ancestors going back in time until it
//!    empties, recording a tagged event log;
//! 2. [`replay`] runs that log forward from the deepest event and reads off
//!    the potential at time zero.
//!
//! [`sampler`] wires both passes into reproducible batches (including the
//! finite/infinite coupled sampler), [`oracle`] is an independent forward
//! simulator of finite networks used to validate the sampler, and
//! [`report`]/[`verify`] turn empirical runs into machine-readable bound
//! checks.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod histogram;
pub mod model;
pub mod model_file;
pub mod oracle;
pub mod replay;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod verify;

pub use model::{ModelError, ModelSpec, NeuronId, Potential, RateVector, Threshold};
