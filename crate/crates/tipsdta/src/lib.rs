//! Blind source separation for determined multichannel mixtures.
//!
//! The separator alternates between two coupled estimation problems: a complex
//! demixing matrix per frequency bin, updated by vectorwise coordinate descent
//! on a majorizing surrogate of the negative log-likelihood, and a positive
//! semidefinite tensor factorization of the per-source covariance over the
//! stacked-frequency spectrum, under a multivariate complex Student's t prior
//! (t-IPSDTA). Both half-steps are majorization-minimization steps, so the
//! cost is nonincreasing throughout a run.
//!
//! Module map:
//!
//! - [`linalg`]: complex Hermitian eigensolver, block-diagonal PSD matrix
//!   algebra, frequency partitions.
//! - [`signal`]: WAV input/output and STFT analysis/synthesis.
//! - [`model`]: the PSDTF source model (activations and basis matrices) and
//!   checkpoint serialization.
//! - [`demix`](mod@demix): demixing matrices, auxiliary weights, weighted
//!   covariances, and the VCD row update.
//! - [`psdtf`]: multiplicative activation updates and basis matrix updates.
//! - [`pipeline`]: the cost function, the full separation loop, projection
//!   back, and the cost trace.
//! - [`eval`]: synthetic mixing, SI-SDR metrics, and test-signal generation.

pub mod demix;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod psdtf;
pub mod signal;

pub use error::{Error, Result};

pub use demix::{compute_pi, demix, demix_sweep, vcd_update, AuxiliaryWeights, DemixingSet};
pub use linalg::{
    build_partition, hermitian_eig, BlockScheme, FrequencyPartition, HermitianBlockMatrix,
};
pub use model::{Dof, ModelConfig, SourceModel};
pub use pipeline::{cost, projection_back, separate, CostTrace, SeparationResult};
pub use signal::{istft, read_wav, stft, write_wav, SpectrogramTensor, WaveformBatch};
