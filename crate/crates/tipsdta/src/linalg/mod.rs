//! Complex Hermitian / positive semidefinite matrix algebra with
//! block-diagonal structure.

pub mod block;
pub mod dense;
pub mod eig;
pub mod partition;

pub use block::{HermitianBlockMatrix, REL_EIG_CLIP};
pub use dense::{CMat, CVec};
pub use eig::{hermitian_eig, HermitianEig, HERMITIAN_REL_TOL};
pub use partition::{build_partition, BlockScheme, FrequencyPartition};
