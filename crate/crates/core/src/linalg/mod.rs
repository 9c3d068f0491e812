//! Dense and compressed-row matrices.

mod dense;
mod sparse;

pub use dense::Matrix;
pub use sparse::Csr;
