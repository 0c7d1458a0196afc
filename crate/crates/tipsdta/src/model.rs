//! The PSDTF source model: nonnegative activations `v[k, j, n]` and
//! trace-normalized Hermitian PSD basis matrices `U[k, n]`, block-diagonal
//! over a shared frequency partition. The model covariance of source `n` at
//! frame `j` is the conic sum `R[j, n] = sum_k v[k, j, n] U[k, n]`.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array3;
use num_complex::Complex64;
use rand::{rngs::StdRng, Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockScheme, FrequencyPartition, HermitianBlockMatrix};

/// Multiplicative updates cannot recover from exact zeros, so activations are
/// floored here after every update.
pub const ACTIVATION_FLOOR: f64 = 1e-12;

/// Degree-of-freedom parameter of the Student's t source prior. Infinity is a
/// first-class value and selects the Gaussian model exactly (the auxiliary
/// weights short-circuit to 1 and the cost uses the analytic limit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dof(f64);

impl Dof {
    pub const GAUSSIAN: Dof = Dof(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "degree-of-freedom parameter must be positive (or inf), got {value}"
            )));
        }
        Ok(Dof(value))
    }

    pub fn is_gaussian(&self) -> bool {
        self.0.is_infinite()
    }

    pub fn get(&self) -> f64 {
        self.0
    }

    /// Auxiliary weight pi = (nu + 2 I) / (nu + 2 q) for the quadratic form
    /// q = y^H R^-1 y of a `dim`-bin spectrum; exactly 1 in the Gaussian limit.
    pub fn weight(&self, quad: f64, dim: usize) -> f64 {
        if self.is_gaussian() {
            1.0
        } else {
            let nu = self.0;
            (nu + 2.0 * dim as f64) / (nu + 2.0 * quad)
        }
    }

    /// Per-(frame, source) likelihood term: ((nu + 2 I)/2) ln(1 + 2 q / nu),
    /// degenerating to q itself in the Gaussian limit.
    pub fn log_term(&self, quad: f64, dim: usize) -> f64 {
        if self.is_gaussian() {
            quad
        } else {
            let nu = self.0;
            0.5 * (nu + 2.0 * dim as f64) * (2.0 * quad / nu).ln_1p()
        }
    }
}

impl std::str::FromStr for Dof {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Dof::GAUSSIAN);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("cannot parse '{s}' as a dof value")))?;
        Dof::new(v)
    }
}

impl std::fmt::Display for Dof {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_gaussian() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Dof {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_gaussian() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Dof {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Dof;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a positive number or \"inf\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<Dof, E> {
                Dof::new(v).map_err(E::custom)
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Dof, E> {
                Dof::new(v as f64).map_err(E::custom)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Dof, E> {
                Dof::new(v as f64).map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Dof, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Run configuration shared by the optimizer and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dof: Dof,
    /// Bases per source (shared across sources).
    pub num_bases: usize,
    pub block_scheme: BlockScheme,
    pub outer_iterations: usize,
    /// Demixing sweeps per outer iteration; each sweep refreshes the auxiliary
    /// weights before updating any row.
    pub vcd_sweeps: usize,
    /// Relative ridge coefficient: every covariance inversion adds
    /// `ridge * trace(block) / dim(block)` to the block diagonal.
    pub ridge: f64,
    pub seed: u64,
    /// Channel the separated sources are re-imaged onto (0-based).
    pub reference_channel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dof: Dof(1.0),
            num_bases: 2,
            block_scheme: BlockScheme::Pairs,
            outer_iterations: 100,
            vcd_sweeps: 10,
            ridge: 1e-10,
            seed: 0,
            reference_channel: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bases == 0 {
            return Err(Error::InvalidConfig("need at least one basis".into()));
        }
        if self.vcd_sweeps == 0 {
            return Err(Error::InvalidConfig("need at least one VCD sweep".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "ridge must be finite and >= 0, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SourceModel {
    partition: Arc<FrequencyPartition>,
    /// (K, J, N), strictly positive.
    activations: Array3<f64>,
    /// K * N basis matrices, index `k * N + n`.
    bases: Vec<HermitianBlockMatrix>,
    num_sources: usize,
}

impl SourceModel {
    /// Random initialization: activations uniform on (0, 1), bases diagonal
    /// with uniform (0, 1) entries, then trace-normalized. Deterministic for a
    /// given seed.
    pub fn init(
        config: &ModelConfig,
        partition: Arc<FrequencyPartition>,
        frames: usize,
        sources: usize,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.num_bases;
        let mut rng = StdRng::seed_from_u64(config.seed);
        let mut activations = Array3::zeros((k, frames, sources));
        for ki in 0..k {
            for j in 0..frames {
                for n in 0..sources {
                    activations[(ki, j, n)] = rng.gen::<f64>().max(ACTIVATION_FLOOR);
                }
            }
        }
        let mut bases = Vec::with_capacity(k * sources);
        for _ki in 0..k {
            for _n in 0..sources {
                let mut u = HermitianBlockMatrix::zeros(Arc::clone(&partition));
                for l in 0..partition.num_blocks() {
                    let b = u.block_mut(l);
                    for d in 0..b.nrows() {
                        b[(d, d)] = Complex64::new(rng.gen::<f64>().max(ACTIVATION_FLOOR), 0.0);
                    }
                }
                bases.push(u);
            }
        }
        let mut model = Self {
            partition,
            activations,
            bases,
            num_sources: sources,
        };
        model.normalize_bases()?;
        Ok(model)
    }

    pub fn from_parts(
        partition: Arc<FrequencyPartition>,
        activations: Array3<f64>,
        bases: Vec<HermitianBlockMatrix>,
    ) -> Result<Self> {
        let (k, _j, n) = activations.dim();
        if bases.len() != k * n {
            return Err(Error::DimensionMismatch {
                context: format!("{} bases for K={k}, N={n}", bases.len()),
            });
        }
        for b in &bases {
            if b.partition() != &partition && **b.partition() != *partition {
                return Err(Error::DimensionMismatch {
                    context: "basis partition differs from model partition".into(),
                });
            }
        }
        Ok(Self {
            partition,
            activations,
            bases,
            num_sources: n,
        })
    }

    pub fn partition(&self) -> &Arc<FrequencyPartition> {
        &self.partition
    }

    pub fn num_bases(&self) -> usize {
        self.activations.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.activations.dim().1
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_bins(&self) -> usize {
        self.partition.num_bins()
    }

    pub fn activations(&self) -> &Array3<f64> {
        &self.activations
    }

    pub fn activations_mut(&mut self) -> &mut Array3<f64> {
        &mut self.activations
    }

    pub fn basis(&self, k: usize, n: usize) -> &HermitianBlockMatrix {
        &self.bases[k * self.num_sources + n]
    }

    pub fn basis_mut(&mut self, k: usize, n: usize) -> &mut HermitianBlockMatrix {
        let idx = k * self.num_sources + n;
        &mut self.bases[idx]
    }

    /// Model covariance R[j, n] = sum_k v[k, j, n] U[k, n].
    pub fn assemble_r(&self, frame: usize, source: usize) -> HermitianBlockMatrix {
        let mut r = HermitianBlockMatrix::zeros(Arc::clone(&self.partition));
        for k in 0..self.num_bases() {
            let v = self.activations[(k, frame, source)];
            r.add_scaled_assign(self.basis(k, source), v);
        }
        r
    }

    /// Rescale every basis to unit trace and push the scale into the
    /// activations; every assembled covariance is unchanged up to round-off.
    pub fn normalize_bases(&mut self) -> Result<()> {
        let (k_count, frames, sources) = self.activations.dim();
        for k in 0..k_count {
            for n in 0..sources {
                let tau = self.basis(k, n).trace();
                if !(tau > 0.0) || !tau.is_finite() {
                    return Err(Error::DegenerateBasis {
                        basis: k,
                        source_index: n,
                        reason: format!("trace {tau} is not positive"),
                    });
                }
                self.basis_mut(k, n).scale(1.0 / tau);
                for j in 0..frames {
                    self.activations[(k, j, n)] *= tau;
                }
            }
        }
        Ok(())
    }
}

// --- checkpoint serialization -----------------------------------------------
//
// JSON document, one per saved model:
// {
//   "format": "tipsdta-model-v1",
//   "bins": I, "frames": J, "sources": N, "bases": K,
//   "config": { ...ModelConfig... },
//   "partition": [[start, len], ...],
//   "activations": [K*J*N floats, index (k, j, n) row-major],
//   "basis_blocks": [ per basis (k*N + n): [ per block: [re, im, re, im, ...]
//                     row-major ] ]
// }

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    bins: usize,
    frames: usize,
    sources: usize,
    bases: usize,
    config: ModelConfig,
    partition: Vec<(usize, usize)>,
    activations: Vec<f64>,
    basis_blocks: Vec<Vec<Vec<f64>>>,
}

pub fn save_checkpoint(
    writer: impl Write,
    model: &SourceModel,
    config: &ModelConfig,
) -> Result<()> {
    let (k, j, n) = model.activations.dim();
    let mut activations = Vec::with_capacity(k * j * n);
    for ki in 0..k {
        for ji in 0..j {
            for ni in 0..n {
                activations.push(model.activations[(ki, ji, ni)]);
            }
        }
    }
    let partition = model
        .partition
        .blocks()
        .iter()
        .map(|b| (b.start, b.len()))
        .collect();
    let basis_blocks = model
        .bases
        .iter()
        .map(|u| {
            u.blocks()
                .iter()
                .map(|b| {
                    let mut flat = Vec::with_capacity(2 * b.len());
                    for r in 0..b.nrows() {
                        for c in 0..b.ncols() {
                            flat.push(b[(r, c)].re);
                            flat.push(b[(r, c)].im);
                        }
                    }
                    flat
                })
                .collect()
        })
        .collect();
    let doc = CheckpointDoc {
        format: "tipsdta-model-v1".into(),
        bins: model.num_bins(),
        frames: j,
        sources: n,
        bases: k,
        config: config.clone(),
        partition,
        activations,
        basis_blocks,
    };
    serde_json::to_writer(writer, &doc).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(reader: impl Read) -> Result<(SourceModel, ModelConfig)> {
    let doc: CheckpointDoc =
        serde_json::from_reader(reader).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if doc.format != "tipsdta-model-v1" {
        return Err(Error::Checkpoint(format!(
            "unknown checkpoint format '{}'",
            doc.format
        )));
    }
    let blocks = doc.partition.iter().map(|&(s, l)| s..s + l).collect();
    let partition = Arc::new(FrequencyPartition::from_blocks(blocks)?);
    if partition.num_bins() != doc.bins {
        return Err(Error::Checkpoint(format!(
            "partition covers {} bins, header says {}",
            partition.num_bins(),
            doc.bins
        )));
    }
    let (k, j, n) = (doc.bases, doc.frames, doc.sources);
    if doc.activations.len() != k * j * n {
        return Err(Error::Checkpoint(format!(
            "expected {} activations, found {}",
            k * j * n,
            doc.activations.len()
        )));
    }
    let mut activations = Array3::zeros((k, j, n));
    let mut it = doc.activations.iter();
    for ki in 0..k {
        for ji in 0..j {
            for ni in 0..n {
                activations[(ki, ji, ni)] = *it.next().expect("length checked");
            }
        }
    }
    if doc.basis_blocks.len() != k * n {
        return Err(Error::Checkpoint(format!(
            "expected {} bases, found {}",
            k * n,
            doc.basis_blocks.len()
        )));
    }
    let mut bases = Vec::with_capacity(k * n);
    for flat_blocks in &doc.basis_blocks {
        if flat_blocks.len() != partition.num_blocks() {
            return Err(Error::Checkpoint("basis block count mismatch".into()));
        }
        let mut mats = Vec::with_capacity(flat_blocks.len());
        for (range, flat) in partition.blocks().iter().zip(flat_blocks) {
            let d = range.len();
            if flat.len() != 2 * d * d {
                return Err(Error::Checkpoint(format!(
                    "block payload has {} values, expected {}",
                    flat.len(),
                    2 * d * d
                )));
            }
            let mut m = crate::linalg::CMat::zeros((d, d));
            for r in 0..d {
                for c in 0..d {
                    let base = 2 * (r * d + c);
                    m[(r, c)] = Complex64::new(flat[base], flat[base + 1]);
                }
            }
            mats.push(m);
        }
        bases.push(HermitianBlockMatrix::from_blocks(
            Arc::clone(&partition),
            mats,
        )?);
    }
    let model = SourceModel::from_parts(partition, activations, bases)?;
    Ok((model, doc.config))
}
