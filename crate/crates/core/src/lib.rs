//! Heavy-tail spectral analysis of projection weights and TopK
//! activation-sparsity allocation.
//!
//! The pipeline has three stages, each producing an inspectable artifact:
//!
//! 1. [`spectral`] computes the eigenvalues of `WᵀW` for every projection and
//!    fits a Hill tail exponent `α`.
//! 2. [`allocation`] maps the exponents to per-projection sparsity ratios with
//!    an affine rule, rescaled so the parameter-weighted sparsity hits a
//!    global target.
//! 3. [`sparsify`] keeps the `K` largest-magnitude input entries of each
//!    projection and skips the remaining weight columns.
//!
//! [`harness`] runs the whole thing on synthetic layer stacks and
//! [`theory`] checks the scaling laws that motivate the allocation rule.

pub mod allocation;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod sparsify;
pub mod spectral;
pub mod tensor_store;
pub mod theory;

pub use error::{Error, Result};

pub use allocation::{allocate, theoretical_k, uniform_plan, AllocationConfig, AllocationPlan, PlanEntry, ProjDims};
pub use spectral::{analyze_all, correlation_spectrum, energy_capture, hill_alpha, weak_lp_norm, SpectrumRecord};
pub use sparsify::{masked_project, topk_mask, truncation_error, TopKResult};
pub use theory::{CheckName, TheoryReport};
pub use tensor_store::{load_tensor_file, parse_name, save_tensor_file, synth_powerlaw_matrix, ProjKey, ProjKind, WeightMatrix};
