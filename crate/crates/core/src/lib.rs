//! Multiply-free threshold networks inspired by Kolmogorov-Arnold networks.
//!
//! Every edge of a network carries one learnable binary threshold and every
//! neuron sums the resulting `+1`/`-1` values, so inference needs only
//! comparators and integer adders. The crate covers
//!
//! * [`threshold_math`]: piecewise-constant functions, their closed-form
//!   decomposition into weighted thresholds and integer quantization,
//! * [`model`]: integer inference and the binary model format,
//! * [`trainer`]: straight-through training of real shadow parameters and
//!   export to integer thresholds,
//! * [`datasets`]: MNIST and CIFAR-10 readers,
//! * [`sim`]: a cycle-level systolic-array simulator comparing BiKA,
//!   XNOR-popcount and MAC processing elements.

pub mod datasets;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod sim;
pub mod tensor;
pub mod threshold_math;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{BikaModel, ThresholdConnection};
pub use tensor::IntTensor;
