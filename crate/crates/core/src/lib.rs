//! GATE: graph CCA-based temporal self-supervised pretraining and
//! label-efficient fine-tuning for dynamic functional-connectivity
//! classification on a population graph.

pub mod augment;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod model;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod synth;
pub mod trainer;

pub use error::{GateError, Result};
