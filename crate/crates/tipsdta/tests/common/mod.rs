//! Shared helpers for the integration suites: instance generators and naive
//! dense reference implementations, written as plain elementwise loops with
//! their own Gauss-Jordan elimination so they share no code with the
//! optimized blockwise paths they are used to check.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{rngs::StdRng, Rng, SeedableRng};
use std::sync::Arc;
use tipsdta::demix::{AuxiliaryWeights, DemixingSet};
use tipsdta::linalg::{build_partition, BlockScheme, CMat, CVec, FrequencyPartition};
use tipsdta::model::{Dof, ModelConfig, SourceModel};
use tipsdta::signal::SpectrogramTensor;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_tensor(bins: usize, frames: usize, ch: usize, seed: u64) -> Array3<Complex64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut x = Array3::zeros((bins, frames, ch));
    for v in x.iter_mut() {
        *v = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    x
}

/// Wrap raw bin-frame-channel data in a tensor with a consistent synthetic
/// frame geometry (window 2*(bins-1), hop window/2).
pub fn tensor_from(data: Array3<Complex64>) -> SpectrogramTensor {
    let (bins, frames, _ch) = data.dim();
    let win = 2 * (bins - 1);
    let hop = win / 2;
    let len = frames.saturating_sub(1) * hop;
    SpectrogramTensor::from_parts(data, win, hop, 16000, len).unwrap()
}

pub fn random_model(
    bins: usize,
    frames: usize,
    sources: usize,
    bases: usize,
    scheme: BlockScheme,
    seed: u64,
) -> (SourceModel, Arc<FrequencyPartition>) {
    let cfg = ModelConfig {
        num_bases: bases,
        block_scheme: scheme,
        seed,
        ..ModelConfig::default()
    };
    let partition = Arc::new(build_partition(bins, &cfg.block_scheme).unwrap());
    let model = SourceModel::init(&cfg, Arc::clone(&partition), frames, sources).unwrap();
    (model, partition)
}

pub fn random_demixing(bins: usize, sources: usize, seed: u64) -> DemixingSet {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut w = DemixingSet::identity(bins, sources);
    for i in 0..bins {
        loop {
            for r in 0..sources {
                for col in 0..sources {
                    let base = if r == col { 1.0 } else { 0.0 };
                    w.matrix_mut(i)[(r, col)] = c(
                        base + rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    );
                }
            }
            if naive_det(w.matrix(i)).norm() > 0.2 {
                break;
            }
        }
    }
    w
}

pub fn random_hermitian_pd(n: usize, rng: &mut StdRng) -> CMat {
    let mut b = CMat::zeros((n, n));
    for r in 0..n {
        for col in 0..n {
            b[(r, col)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    let mut out = CMat::zeros((n, n));
    for r in 0..n {
        for col in 0..n {
            let mut acc = c(0.0, 0.0);
            for k in 0..n {
                acc += b[(r, k)] * b[(col, k)].conj();
            }
            out[(r, col)] = acc;
        }
        out[(r, r)] += 0.05;
    }
    out
}

// --- naive dense reference implementations ---------------------------------

/// Gauss-Jordan inverse with partial pivoting.
pub fn naive_inverse(a: &CMat) -> CMat {
    let n = a.nrows();
    let mut aug = Array2::zeros((n, 2 * n));
    for r in 0..n {
        for col in 0..n {
            aug[(r, col)] = a[(r, col)];
        }
        aug[(r, n + r)] = c(1.0, 0.0);
    }
    for k in 0..n {
        let mut pivot_row = k;
        let mut best = aug[(k, k)].norm();
        for r in k + 1..n {
            if aug[(r, k)].norm() > best {
                best = aug[(r, k)].norm();
                pivot_row = r;
            }
        }
        assert!(best > 0.0, "naive_inverse: singular input");
        if pivot_row != k {
            for col in 0..2 * n {
                let tmp = aug[(k, col)];
                aug[(k, col)] = aug[(pivot_row, col)];
                aug[(pivot_row, col)] = tmp;
            }
        }
        let pivot = aug[(k, k)];
        for col in 0..2 * n {
            aug[(k, col)] /= pivot;
        }
        for r in 0..n {
            if r == k {
                continue;
            }
            let factor = aug[(r, k)];
            if factor.norm() == 0.0 {
                continue;
            }
            for col in 0..2 * n {
                let sub = factor * aug[(k, col)];
                aug[(r, col)] -= sub;
            }
        }
    }
    let mut inv = CMat::zeros((n, n));
    for r in 0..n {
        for col in 0..n {
            inv[(r, col)] = aug[(r, n + col)];
        }
    }
    inv
}

/// Determinant by elimination with partial pivoting.
pub fn naive_det(a: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut m = a.clone();
    let mut det = c(1.0, 0.0);
    for k in 0..n {
        let mut pivot_row = k;
        let mut best = m[(k, k)].norm();
        for r in k + 1..n {
            if m[(r, k)].norm() > best {
                best = m[(r, k)].norm();
                pivot_row = r;
            }
        }
        if best == 0.0 {
            return c(0.0, 0.0);
        }
        if pivot_row != k {
            for col in 0..n {
                let tmp = m[(k, col)];
                m[(k, col)] = m[(pivot_row, col)];
                m[(pivot_row, col)] = tmp;
            }
            det = -det;
        }
        det *= m[(k, k)];
        for r in k + 1..n {
            let factor = m[(r, k)] / m[(k, k)];
            for col in k..n {
                let sub = factor * m[(k, col)];
                m[(r, col)] -= sub;
            }
        }
    }
    det
}

/// log det of a Hermitian positive definite matrix (real part of the pivoted
/// elimination determinant).
pub fn naive_logdet_hermitian(a: &CMat) -> f64 {
    let det = naive_det(a);
    assert!(det.re > 0.0, "naive_logdet: non-PD determinant {det}");
    det.re.ln()
}

pub fn dense_r(model: &SourceModel, frame: usize, source: usize) -> CMat {
    let bins = model.num_bins();
    let mut r = CMat::zeros((bins, bins));
    for k in 0..model.num_bases() {
        let v = model.activations()[(k, frame, source)];
        let u = model.basis(k, source).to_dense();
        for a in 0..bins {
            for b in 0..bins {
                r[(a, b)] += u[(a, b)] * v;
            }
        }
    }
    r
}

/// Direct elementwise evaluation of the cost (no ridge, no block shortcuts).
pub fn naive_cost(
    w: &DemixingSet,
    model: &SourceModel,
    y: &Array3<Complex64>,
    dof: Dof,
) -> f64 {
    let (bins, frames, sources) = y.dim();
    let mut acc = 0.0;
    for j in 0..frames {
        for n in 0..sources {
            let r = dense_r(model, j, n);
            let rinv = naive_inverse(&r);
            let mut quad = c(0.0, 0.0);
            for a in 0..bins {
                for b in 0..bins {
                    quad += y[(a, j, n)].conj() * rinv[(a, b)] * y[(b, j, n)];
                }
            }
            acc += naive_logdet_hermitian(&r);
            if dof.is_gaussian() {
                acc += quad.re;
            } else {
                let nu = dof.get();
                acc += 0.5 * (nu + 2.0 * bins as f64) * (2.0 * quad.re / nu).ln_1p();
            }
        }
    }
    let mut det_acc = 0.0;
    for i in 0..bins {
        det_acc += naive_det(w.matrix(i)).norm().powi(2).ln();
    }
    acc - frames as f64 * det_acc
}

/// Direct evaluation of the weighted covariance Q and coupling gamma over the
/// dense inverse, looping every bin pair.
pub fn naive_q_gamma(
    x: &Array3<Complex64>,
    model: &SourceModel,
    pi: &AuxiliaryWeights,
    w: &DemixingSet,
    bin: usize,
    source: usize,
) -> (CMat, CVec) {
    let (bins, frames, mics) = x.dim();
    let mut q = CMat::zeros((mics, mics));
    let mut gamma = CVec::zeros(mics);
    for j in 0..frames {
        let rinv = naive_inverse(&dense_r(model, j, source));
        let weight = pi.get(j, source);
        for m1 in 0..mics {
            for m2 in 0..mics {
                q[(m1, m2)] +=
                    rinv[(bin, bin)] * weight * x[(bin, j, m1)] * x[(bin, j, m2)].conj();
            }
        }
        for other in 0..bins {
            if other == bin {
                continue;
            }
            let coef = rinv[(other, bin)] * weight;
            let w_other = w.row_vector(other, source);
            for m1 in 0..mics {
                let mut acc = c(0.0, 0.0);
                for m2 in 0..mics {
                    acc += coef * x[(bin, j, m1)] * x[(other, j, m2)].conj() * w_other[m2];
                }
                gamma[m1] += acc;
            }
        }
    }
    let inv_frames = 1.0 / frames as f64;
    q.mapv_inplace(|z| z * inv_frames);
    gamma.mapv_inplace(|z| z * inv_frames);
    (q, gamma)
}

/// Direct evaluation of the basis-update statistics over dense inverses:
/// scatter = sum_j v pi R^-1 (y y^H) R^-1 and weight = sum_j v R^-1.
pub fn naive_scatter_weight(
    model: &SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    basis: usize,
    source: usize,
) -> (CMat, CMat) {
    let (bins, frames, _sources) = y.dim();
    let mut scatter = CMat::zeros((bins, bins));
    let mut weight = CMat::zeros((bins, bins));
    for j in 0..frames {
        let rinv = naive_inverse(&dense_r(model, j, source));
        let v = model.activations()[(basis, j, source)];
        let p = pi.get(j, source);
        // z = R^-1 y
        let mut z = CVec::zeros(bins);
        for a in 0..bins {
            let mut acc = c(0.0, 0.0);
            for b in 0..bins {
                acc += rinv[(a, b)] * y[(b, j, source)];
            }
            z[a] = acc;
        }
        for a in 0..bins {
            for b in 0..bins {
                scatter[(a, b)] += z[a] * z[b].conj() * (v * p);
                weight[(a, b)] += rinv[(a, b)] * v;
            }
        }
    }
    (scatter, weight)
}

pub fn rel_frobenius_diff(a: &CMat, b: &CMat) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y).norm_sqr();
        den += y.norm_sqr();
    }
    (num / den.max(1e-300)).sqrt()
}
