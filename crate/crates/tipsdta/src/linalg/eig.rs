//! Hermitian eigendecomposition by cyclic Jacobi rotations.
//!
//! Each rotation factors the off-diagonal target into phase times magnitude,
//! then applies the classical symmetric 2x2 rotation to the magnitudes. The
//! accumulated eigenvector matrix is a product of exact unitaries, so it stays
//! orthonormal to machine precision regardless of conditioning. Quadratic
//! convergence makes this entirely adequate for the small blocks this crate
//! works on (partition blocks and demixing-sized matrices).

use ndarray::Array2;
use num_complex::Complex64;

use super::dense::{frobenius, hermitian_asymmetry, hermitian_part, CMat};
use crate::error::{Error, Result};

/// Relative Frobenius asymmetry above which an input is rejected.
pub const HERMITIAN_REL_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the matching eigenvectors.
    pub vectors: CMat,
}

impl HermitianEig {
    /// V f(lambda) V^H, re-symmetrized.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.values.len();
        let mut out = CMat::zeros((n, n));
        for (k, &lambda) in self.values.iter().enumerate() {
            let fl = f(lambda);
            if fl == 0.0 {
                continue;
            }
            for r in 0..n {
                let vr = self.vectors[(r, k)] * fl;
                for c in 0..n {
                    out[(r, c)] += vr * self.vectors[(c, k)].conj();
                }
            }
        }
        hermitian_part(&out)
    }

    pub fn recompose(&self) -> CMat {
        self.recompose_with(|l| l)
    }

    pub fn max_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Rejects non-square input and input whose relative Frobenius asymmetry
/// exceeds [`HERMITIAN_REL_TOL`]; round-off level asymmetry is folded away by
/// working on the Hermitian part.
pub fn hermitian_eig(a: &CMat) -> Result<HermitianEig> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|z| !z.is_finite()) {
        return Err(Error::NotHermitian {
            asymmetry: f64::INFINITY,
        });
    }
    let asym = hermitian_asymmetry(a);
    if asym > HERMITIAN_REL_TOL {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let n = a.nrows();
    let mut m = hermitian_part(a);
    let mut v: CMat = Array2::eye(n);
    if n > 1 {
        jacobi(&mut m, &mut v);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let raw: Vec<f64> = (0..n).map(|k| m[(k, k)].re).collect();
    order.sort_by(|&p, &q| raw[p].partial_cmp(&raw[q]).expect("finite eigenvalues"));

    let values: Vec<f64> = order.iter().map(|&k| raw[k]).collect();
    let mut vectors = CMat::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(HermitianEig { values, vectors })
}

fn off_diag_sq(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                acc += m[(p, q)].norm_sqr();
            }
        }
    }
    acc
}

fn jacobi(m: &mut CMat, v: &mut CMat) {
    let n = m.nrows();
    let fro = frobenius(m);
    if fro == 0.0 {
        return;
    }
    let tol_sq = {
        let tol = (n as f64) * f64::EPSILON * fro;
        tol * tol
    };
    for _ in 0..MAX_SWEEPS {
        if off_diag_sq(m) <= tol_sq {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let g = m[(p, q)];
                let mag = g.norm();
                if mag == 0.0 {
                    continue;
                }
                let phase = g.unscale(mag);
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                // smaller-magnitude root of t^2 + 2*tau*t - 1 = 0
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(m, v, p, q, phase, c, s);
            }
        }
    }
}

/// Apply the unitary G (identity except G[p,p] = phase*c, G[p,q] = phase*s,
/// G[q,p] = -s, G[q,q] = c) as M <- G^H M G and V <- V G.
fn rotate(m: &mut CMat, v: &mut CMat, p: usize, q: usize, phase: Complex64, c: f64, s: f64) {
    let n = m.nrows();
    let pc = phase * c;
    let ps = phase * s;
    for r in 0..n {
        let mp = m[(r, p)];
        let mq = m[(r, q)];
        m[(r, p)] = mp * pc - mq * s;
        m[(r, q)] = mp * ps + mq * c;
    }
    let pc_h = phase.conj() * c;
    let ps_h = phase.conj() * s;
    for col in 0..n {
        let rp = m[(p, col)];
        let rq = m[(q, col)];
        m[(p, col)] = rp * pc_h - rq * s;
        m[(q, col)] = rp * ps_h + rq * c;
    }
    // the rotation zeroes this pair exactly; keep the diagonal real
    m[(p, q)] = Complex64::new(0.0, 0.0);
    m[(q, p)] = Complex64::new(0.0, 0.0);
    m[(p, p)] = Complex64::new(m[(p, p)].re, 0.0);
    m[(q, q)] = Complex64::new(m[(q, q)].re, 0.0);
    for r in 0..n {
        let vp = v[(r, p)];
        let vq = v[(r, q)];
        v[(r, p)] = vp * pc - vq * s;
        v[(r, q)] = vp * ps + vq * c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::{adjoint, identity};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, rng: &mut StdRng) -> CMat {
        let mut a = CMat::zeros((n, n));
        for r in 0..n {
            for col in 0..n {
                a[(r, col)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        hermitian_part(&a)
    }

    #[test]
    fn identity_eigenvalues_are_ones() {
        let eig = hermitian_eig(&identity(2)).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        let vvh = eig.vectors.dot(&adjoint(&eig.vectors));
        assert!(frobenius(&(&vvh - &identity(2))) < 1e-12);
    }

    #[test]
    fn diagonal_eigenvalues_sorted_ascending() {
        let a = ndarray::array![[c(3.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        let eig = hermitian_eig(&a).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn random_hermitian_reconstructs() {
        let mut rng = StdRng::seed_from_u64(7);
        for n in [2usize, 3, 4, 8, 16] {
            let a = random_hermitian(n, &mut rng);
            let eig = hermitian_eig(&a).unwrap();
            let recon = eig.recompose();
            let err = frobenius(&(&recon - &a)) / frobenius(&a).max(1e-300);
            assert!(err < 1e-12, "n={n}: reconstruction error {err:.3e}");
            let vvh = eig.vectors.dot(&adjoint(&eig.vectors));
            let orth = frobenius(&(&vvh - &identity(n)));
            assert!(orth < 1e-10 * n as f64, "n={n}: orthonormality {orth:.3e}");
            for k in 1..n {
                assert!(eig.values[k] >= eig.values[k - 1]);
            }
        }
    }

    #[test]
    fn rejects_non_square_and_non_hermitian() {
        let rect = CMat::zeros((2, 3));
        assert!(matches!(
            hermitian_eig(&rect),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        let skew = ndarray::array![[c(1.0, 0.0), c(1.0, 0.0)], [c(2.0, 0.0), c(1.0, 0.0)]];
        assert!(matches!(
            hermitian_eig(&skew),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn zero_matrix_is_fine() {
        let eig = hermitian_eig(&CMat::zeros((3, 3))).unwrap();
        assert!(eig.values.iter().all(|&l| l == 0.0));
    }
}
