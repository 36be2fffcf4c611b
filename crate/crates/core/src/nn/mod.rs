//! Minimal neural-network stack: dense f64 tensors, an eager tape with
//! reverse-mode gradients, the AdaBelief optimizer, a cosine learning-rate
//! schedule, and a self-describing checkpoint file.

pub mod checkpoint;
pub mod graph;
pub mod optim;
pub mod schedule;
pub mod tensor;

pub use graph::{fd_check, Graph, NnError, Var};
pub use tensor::{Parameters, Tensor};
