//! Model parameters: the affine branching rate `alpha`, Black-Scholes-type
//! kernels and the discrete-maturity drift matrix.

mod alpha;
mod discrete;
mod kernels;
mod mlp;

pub use alpha::{AlphaFile, AlphaFunction, AlphaRepr, NEURAL_PRIMITIVE_INTERVALS};
pub use discrete::{build_beta_matrix, DiscreteHjmConfig};
pub use kernels::{check_admissibility, AdmissibilityReport, BsKernels, Kernel};
pub use mlp::{Activation, DenseLayer, MlpAlpha, OUTPUT_BIAS};
