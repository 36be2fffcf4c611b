//! Truck-and-drone routing: a deterministic joint-delivery environment,
//! exact and heuristic reference solvers, and a neural policy trained with
//! an asynchronous actor-critic loop.

pub mod critic;
pub mod decoder;
pub mod encoder;
pub mod env;
pub mod eval;
pub mod instance;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod render;
pub mod rng;
pub mod training;
