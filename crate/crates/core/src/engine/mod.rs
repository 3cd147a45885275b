//! Dense numeric kernel: tensors, named parameter sets, differentiable
//! primitives, optimizers and a finite-difference gradient verifier.

mod gradcheck;
mod ops;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, AffineMap, DifferentiableMap};
pub use ops::{
    affine, affine_backward, cosine_backward, cosine_similarity, mse, mse_backward,
    softmax_temp, softmax_temp_backward, AffineGrads, Cosine,
};
pub(crate) use ops::{affine_into, cosine, cosine_backward_into, softmax_unchecked};
pub use optim::{adam_step, sgd_step, AdamState};
pub use params::ParamSet;
pub use tensor::{dot, norm, Tensor};
