//! Higher-order total directional variation (TDV) for tensor-valued images.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: order-ℓ tensor fields on a planar grid and their pointwise
//!   algebra (tensor product, trace, index shifts, scalar product, norms).
//! - [`diff`]: forward-difference weighted gradients and the weighted
//!   divergences defined as their exact negative adjoints.
//! - [`anisotropy`]: the weighting matrix fields `M_j` (identity, constant
//!   rotation-contraction, structure-tensor driven).
//! - [`tdv`]: the regulariser itself, evaluated through its minimum
//!   representation, plus a supremum-based lower-bound oracle.
//! - [`solver`]: a primal-dual solver for TDV-regularised denoising and
//!   inpainting.
//! - [`io`], [`cli`], [`verify`]: file formats, the command-line front end and
//!   the identity checks it can run.

pub mod anisotropy;
pub mod cli;
pub mod diff;
pub mod error;
pub mod io;
pub mod solver;
pub mod tdv;
pub mod tensor;
pub mod verify;

pub use anisotropy::{
    identity_field, rotation_contraction_field, structure_tensor_field, StructureTensorParams, WeightCollection,
    WeightField,
};
pub use diff::{grad, weighted_div, weighted_div_order, weighted_grad, weighted_grad_order};
pub use error::{Result, TdvError};
pub use solver::{energy, estimate_operator_norm, solve, ForwardOp, Problem, SolveState};
pub use tdv::{cascade_value, dual_sup_value, tdv_value, AlphaVector, CascadeVariables};
pub use tensor::{Grid, TensorField};
