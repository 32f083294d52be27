//! Exact and certified local Lipschitz constants of feedforward ReLU networks.
//!
//! The crate unrolls the chain rule of a ReLU network into a mixed-integer
//! program and solves it with an in-crate branch-and-bound engine on top of a
//! bounded-variable simplex solver. Interval bound propagation supplies the
//! big-M constants and the FastLip bound; cheaper estimators, a brute-force
//! region enumerator and a graph-reduction network generator complete the
//! toolbox.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod bnb;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod interval;
pub mod lp;
pub mod mip;
pub mod network;
pub mod norms;
pub mod oracle;
pub mod reduction;
pub mod rng;
pub mod scalar;
pub mod vector_ext;

pub use error::{Error, Result};
pub use norms::{InputNorm, OutputNorm};
pub use scalar::Scalar;

pub type Network = network::ReLUNetwork<f64>;
pub type NetworkF32 = network::ReLUNetwork<f32>;
pub type Domain = interval::Hyperbox<f64>;
pub type DomainF32 = interval::Hyperbox<f32>;



pub type Model = mip::MipModel<f64>;
