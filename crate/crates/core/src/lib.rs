//! Neural-network training with interchangeable first-order oracles.
//!
//! The crate trains feed-forward networks built from alternating linear
//! transfers and parameter-free nonlinearities. Parameter update directions
//! come from one of two oracles: classical backpropagation, or proximal
//! (implicit) steps on each linear layer solved exactly or by matrix-free
//! conjugate gradient. Outer optimizers (SGD, Nesterov momentum, Adam)
//! consume either oracle through the same interface.

pub mod direction;
pub mod error;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod penalty;
pub mod proxprop;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use direction::{DirectionSet, LayerDirection};
pub use error::{Error, Result};
pub use network::{Block, ForwardCache, Network};
pub use optim::{Dataset, Oracle, OptimKind, Optimizer, RunLog, TrainSettings};
pub use proxprop::{ProxConfig, ProxMode};
pub use tensor::Tensor;
