//! Source-model updates: multiplicative activation updates and the
//! sandwiched basis-matrix update, both majorization-minimization steps for
//! the source terms of the cost under the Student's t prior.

use std::sync::Arc;

use ndarray::{s, Array3};
use num_complex::Complex64;

use crate::demix::{compute_pi_with, AuxiliaryWeights, CovarianceCache};
use crate::error::{Error, Result};
use crate::linalg::dense::hermitian_part;
use crate::linalg::{HermitianBlockMatrix, REL_EIG_CLIP};
use crate::model::{Dof, SourceModel, ACTIVATION_FLOOR};

/// Counters for degenerate update ratios (zero denominator traces are treated
/// as "no update" rather than aborting the run).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActivationStats {
    pub skipped_ratios: usize,
}

/// Multiplicative activation update, all (k, j, n) with the model covariance
/// frozen at the pre-update state:
///
/// v <- v * sqrt( pi * z^H U z / tr(R^-1 U) ),  z = R^-1 y.
pub fn update_activations(
    model: &mut SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    ridge: f64,
) -> Result<ActivationStats> {
    let cache = CovarianceCache::build(model, ridge)?;
    update_activations_with(model, y, pi, &cache)
}

pub fn update_activations_with(
    model: &mut SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    cache: &CovarianceCache,
) -> Result<ActivationStats> {
    let (bases, frames, sources) = model.activations().dim();
    debug_assert_eq!(y.dim().1, frames);
    debug_assert_eq!(y.dim().2, sources);
    let mut stats = ActivationStats::default();
    for j in 0..frames {
        for n in 0..sources {
            let rinv = cache.rinv(j, n);
            let z = rinv.matvec(y.slice(s![.., j, n]));
            let weight = pi.get(j, n);
            for k in 0..bases {
                let u = model.basis(k, n);
                let numer = (weight * u.quad_form(z.view())).max(0.0);
                let denom = rinv.trace_product(u);
                let ratio = if denom > 0.0 && numer.is_finite() && denom.is_finite() {
                    numer / denom
                } else {
                    stats.skipped_ratios += 1;
                    1.0
                };
                let v = &mut model.activations_mut()[(k, j, n)];
                *v = (*v * ratio.sqrt()).max(ACTIVATION_FLOOR);
            }
        }
    }
    Ok(stats)
}

/// The two accumulated statistics that drive the basis update:
///
/// ```text
/// scatter[k,n] = sum_j v[k,j,n] * pi[j,n] * (R^-1 y)(R^-1 y)^H
/// weight[k,n]  = sum_j v[k,j,n] * R^-1
/// ```
#[derive(Debug)]
pub struct BasisUpdateTerms {
    pub scatter: Vec<HermitianBlockMatrix>,
    pub weight: Vec<HermitianBlockMatrix>,
    sources: usize,
}

impl BasisUpdateTerms {
    pub fn scatter(&self, k: usize, n: usize) -> &HermitianBlockMatrix {
        &self.scatter[k * self.sources + n]
    }

    pub fn weight(&self, k: usize, n: usize) -> &HermitianBlockMatrix {
        &self.weight[k * self.sources + n]
    }
}

pub fn basis_update_terms(
    model: &SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    ridge: f64,
) -> Result<BasisUpdateTerms> {
    let cache = CovarianceCache::build(model, ridge)?;
    Ok(basis_update_terms_with(model, y, pi, &cache))
}

pub fn basis_update_terms_with(
    model: &SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    cache: &CovarianceCache,
) -> BasisUpdateTerms {
    let (bases, frames, sources) = model.activations().dim();
    let partition = Arc::clone(model.partition());
    let mut scatter: Vec<HermitianBlockMatrix> = (0..bases * sources)
        .map(|_| HermitianBlockMatrix::zeros(Arc::clone(&partition)))
        .collect();
    let mut weight: Vec<HermitianBlockMatrix> = (0..bases * sources)
        .map(|_| HermitianBlockMatrix::zeros(Arc::clone(&partition)))
        .collect();
    for j in 0..frames {
        for n in 0..sources {
            let rinv = cache.rinv(j, n);
            let z = rinv.matvec(y.slice(s![.., j, n]));
            let w = pi.get(j, n);
            for k in 0..bases {
                let v = model.activations()[(k, j, n)];
                if v == 0.0 {
                    continue;
                }
                scatter[k * sources + n].add_scaled_outer(&z, v * w);
                weight[k * sources + n].add_scaled_assign(rinv, v);
            }
        }
    }
    BasisUpdateTerms {
        scatter,
        weight,
        sources,
    }
}

/// Basis matrix update, blockwise:
///
/// U <- U S^(1/2) ( S^(1/2) U T U S^(1/2) )^(-1/2) S^(1/2) U
///
/// with S the scatter and T the weight statistic, covariances frozen at the
/// start of the step. The result is a PSD congruence, re-symmetrized and
/// eigenvalue-clipped to absorb round-off.
pub fn update_bases(
    model: &mut SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    ridge: f64,
) -> Result<()> {
    let cache = CovarianceCache::build(model, ridge)?;
    update_bases_with(model, y, pi, &cache, ridge)
}

pub fn update_bases_with(
    model: &mut SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    cache: &CovarianceCache,
    ridge: f64,
) -> Result<()> {
    let (bases, _frames, sources) = model.activations().dim();
    let terms = basis_update_terms_with(model, y, pi, cache);
    for k in 0..bases {
        for n in 0..sources {
            let s_half = terms.scatter(k, n).psd_sqrt_auto()?;
            let t = terms.weight(k, n);
            let u = model.basis(k, n);
            let num_blocks = u.partition().num_blocks();
            let mut new_blocks = Vec::with_capacity(num_blocks);
            for l in 0..num_blocks {
                // a = S^(1/2) U, inner = a T a^H
                let a = s_half.block(l).dot(u.block(l));
                let ah = crate::linalg::dense::adjoint(&a);
                let inner = hermitian_part(&a.dot(t.block(l)).dot(&ah));
                let block = match inverse_sqrt_with_retry(&inner, ridge, k, n)? {
                    // the update degenerates to the zero block as the scatter
                    // vanishes; a dead block simply stops contributing
                    None => crate::linalg::CMat::zeros((a.nrows(), a.ncols())),
                    // U' = (S^(1/2) U)^H inner^(-1/2) (S^(1/2) U)
                    Some(inv_half) => hermitian_part(&ah.dot(&inv_half).dot(&a)),
                };
                if block.iter().any(|z| !z.is_finite()) {
                    return Err(Error::DegenerateUpdate { basis: k, source_index: n });
                }
                new_blocks.push(block);
            }
            let mut updated = HermitianBlockMatrix::from_blocks(
                Arc::clone(model.partition()),
                new_blocks,
            )?;
            updated.clip_negative_eigs()?;
            *model.basis_mut(k, n) = updated;
        }
    }
    Ok(())
}

/// Inverse principal square root of a Hermitian PSD block. A numerically
/// singular block gets one trace-scaled ridge retry. `None` means the block
/// is numerically zero (the caller's update limit is then the zero block);
/// persistent failure on a nonzero block is a degenerate-update error naming
/// the basis.
fn inverse_sqrt_with_retry(
    inner: &crate::linalg::CMat,
    ridge: f64,
    k: usize,
    n: usize,
) -> Result<Option<crate::linalg::CMat>> {
    let eig = crate::linalg::hermitian_eig(inner)?;
    if eig.values.iter().any(|l| !l.is_finite()) {
        return Err(Error::DegenerateUpdate { basis: k, source_index: n });
    }
    let lmax = eig.max_value();
    let floor = REL_EIG_CLIP * lmax;
    if !(floor > 0.0) {
        // the true matrix is PSD, so a spectrum that is non-positive (or so
        // small the clip floor underflows) is a vanished block plus noise
        return Ok(None);
    }
    if eig.values.iter().all(|&l| l > floor) {
        return Ok(Some(eig.recompose_with(|l| 1.0 / l.sqrt())));
    }
    // ridge retry: eigenvalues below the floor are lifted onto it, which is a
    // PSD projection of the rounding noise
    let dim = inner.nrows() as f64;
    let trace: f64 = eig.values.iter().sum();
    let shift = (ridge.max(REL_EIG_CLIP) * trace.max(0.0) / dim).max(floor);
    Ok(Some(eig.recompose_with(|l| 1.0 / l.max(shift).sqrt())))
}

/// One full source-model sweep:
/// refresh pi, update activations (covariances frozen), reassemble, refresh
/// pi again, update bases (covariances frozen), then re-normalize traces.
pub fn source_sweep(
    model: &mut SourceModel,
    y: &Array3<Complex64>,
    dof: Dof,
    ridge: f64,
) -> Result<ActivationStats> {
    let cache = CovarianceCache::build(model, ridge)?;
    source_sweep_with(model, y, dof, ridge, &cache)
}

/// [`source_sweep`] with the pre-update covariance cache supplied by the
/// caller (the demixing phase of an outer iteration already built it). The
/// rebuilt mid-sweep cache keeps the incoming cache's ridge anchor, so both
/// half-steps descend one fixed effective objective.
pub fn source_sweep_with(
    model: &mut SourceModel,
    y: &Array3<Complex64>,
    dof: Dof,
    ridge: f64,
    cache: &CovarianceCache,
) -> Result<ActivationStats> {
    let pi = compute_pi_with(y, cache, dof);
    let stats = update_activations_with(model, y, &pi, cache)?;
    let cache = CovarianceCache::build_anchored(model, cache.eps())?;
    let pi = compute_pi_with(y, &cache, dof);
    update_bases_with(model, y, &pi, &cache, ridge)?;
    model.normalize_bases()?;
    Ok(stats)
}
