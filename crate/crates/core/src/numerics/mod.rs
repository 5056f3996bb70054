//! Complex-valued linear algebra primitives, special matrices, and
//! deterministic random-number streams.
//!
//! Everything here is 64-bit: the classical estimators (MMSE refinement in
//! particular) need the full mantissa, and the gradient-check oracles for the
//! neural side are run against this module's arithmetic.

mod linalg;
mod rng;
mod special;

pub use linalg::{cholesky_ok, hermitian_solve, CMatrix, CVector, C64};
pub use rng::{RngStream, StreamDomain};
pub use special::{
    dft_shift_grid, dft_shift_matrix, steering_vector, zadoff_chu_combiner,
    zadoff_chu_combiner_with_root,
};
