//! A small deterministic tensor engine: arrays, a reverse-mode graph, the
//! layer primitives both networks need, AdamW and a checkpoint archive.

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
mod real;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader};
pub use optim::{AdamW, ParameterSet};
pub use real::{gemm, Real};
pub use tensor::{grad_enabled, no_grad, Array, Var};
