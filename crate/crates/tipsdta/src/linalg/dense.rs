//! Dense complex matrix helpers: Hermitian hygiene, norms, and an LU
//! factorization with partial pivoting for the small general (non-Hermitian)
//! systems that show up in the demixing updates.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

pub type CMat = Array2<Complex64>;
pub type CVec = Array1<Complex64>;

pub fn identity(n: usize) -> CMat {
    Array2::eye(n)
}

pub fn unit_vector(n: usize, index: usize) -> CVec {
    let mut e = CVec::zeros(n);
    e[index] = Complex64::new(1.0, 0.0);
    e
}

/// Conjugate transpose.
pub fn adjoint(a: &CMat) -> CMat {
    let mut out = CMat::zeros((a.ncols(), a.nrows()));
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            out[(c, r)] = a[(r, c)].conj();
        }
    }
    out
}

/// Hermitian part (A + A^H) / 2.
pub fn hermitian_part(a: &CMat) -> CMat {
    let n = a.nrows();
    let mut out = a.clone();
    for r in 0..n {
        for c in 0..n {
            out[(r, c)] = (a[(r, c)] + a[(c, r)].conj()) * 0.5;
        }
    }
    out
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// || A - A^H ||_F / max(||A||_F, eps): zero for an exactly Hermitian matrix.
pub fn hermitian_asymmetry(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut asym = 0.0;
    for r in 0..n {
        for c in 0..n {
            asym += (a[(r, c)] - a[(c, r)].conj()).norm_sqr();
        }
    }
    let fro = frobenius(a);
    if fro == 0.0 {
        0.0
    } else {
        (asym.sqrt() / 2.0) / fro
    }
}

pub fn matvec(a: &CMat, x: &CVec) -> CVec {
    let mut out = CVec::zeros(a.nrows());
    for r in 0..a.nrows() {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..a.ncols() {
            acc += a[(r, c)] * x[c];
        }
        out[r] = acc;
    }
    out
}

/// x^H A y.
pub fn sesquilinear(x: &CVec, a: &CMat, y: &CVec) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            acc += x[r].conj() * a[(r, c)] * y[c];
        }
    }
    acc
}

/// LU factorization with partial pivoting. Never fails; exact singularity is
/// recorded in the `singular` flag and surfaces as `None` from the solvers.
pub struct Lu {
    lu: CMat,
    swaps: Vec<(usize, usize)>,
    singular: bool,
}

pub fn lu_factor(a: &CMat) -> Lu {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "LU requires a square matrix");
    let mut lu = a.clone();
    let mut swaps = Vec::new();
    let mut singular = false;
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_mag = lu[(k, k)].norm();
        for r in k + 1..n {
            let mag = lu[(r, k)].norm();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag == 0.0 || !pivot_mag.is_finite() {
            singular = true;
            continue;
        }
        if pivot_row != k {
            for c in 0..n {
                let tmp = lu[(k, c)];
                lu[(k, c)] = lu[(pivot_row, c)];
                lu[(pivot_row, c)] = tmp;
            }
            swaps.push((k, pivot_row));
        }
        let pivot = lu[(k, k)];
        for r in k + 1..n {
            let factor = lu[(r, k)] / pivot;
            lu[(r, k)] = factor;
            for c in k + 1..n {
                let sub = factor * lu[(k, c)];
                lu[(r, c)] -= sub;
            }
        }
    }
    Lu { lu, swaps, singular }
}

impl Lu {
    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn solve(&self, b: &CVec) -> Option<CVec> {
        if self.singular {
            return None;
        }
        let n = self.lu.nrows();
        let mut x = b.clone();
        for &(i, j) in &self.swaps {
            x.swap(i, j);
        }
        // forward substitution, unit lower triangle
        for r in 1..n {
            let mut acc = x[r];
            for c in 0..r {
                acc -= self.lu[(r, c)] * x[c];
            }
            x[r] = acc;
        }
        // back substitution
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in r + 1..n {
                acc -= self.lu[(r, c)] * x[c];
            }
            x[r] = acc / self.lu[(r, r)];
        }
        Some(x)
    }

    /// Solve with one step of iterative refinement against the original
    /// matrix; recovers most of the accuracy lost to ill conditioning.
    pub fn solve_refined(&self, a: &CMat, b: &CVec) -> Option<CVec> {
        let mut x = self.solve(b)?;
        let ax = matvec(a, &x);
        let residual: CVec = b
            .iter()
            .zip(ax.iter())
            .map(|(bv, av)| bv - av)
            .collect();
        if let Some(correction) = self.solve(&residual) {
            let refined: CVec = x
                .iter()
                .zip(correction.iter())
                .map(|(xv, cv)| xv + cv)
                .collect();
            if refined.iter().all(|z| z.is_finite()) {
                x = refined;
            }
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<CMat> {
        let n = self.lu.nrows();
        let mut out = CMat::zeros((n, n));
        for k in 0..n {
            let col = self.solve(&unit_vector(n, k))?;
            for r in 0..n {
                out[(r, k)] = col[r];
            }
        }
        Some(out)
    }

    pub fn det(&self) -> Complex64 {
        if self.singular {
            return Complex64::new(0.0, 0.0);
        }
        let n = self.lu.nrows();
        let mut d = Complex64::new(if self.swaps.len() % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
        for k in 0..n {
            d *= self.lu[(k, k)];
        }
        d
    }

    /// log |det A|^2, or -inf when singular.
    pub fn log_abs_det_sq(&self) -> f64 {
        if self.singular {
            return f64::NEG_INFINITY;
        }
        let n = self.lu.nrows();
        let mut acc = 0.0;
        for k in 0..n {
            acc += self.lu[(k, k)].norm().ln();
        }
        2.0 * acc
    }
}

pub fn solve(a: &CMat, b: &CVec) -> Option<CVec> {
    lu_factor(a).solve(b)
}

pub fn inverse(a: &CMat) -> Option<CMat> {
    lu_factor(a).inverse()
}

pub fn det(a: &CMat) -> Complex64 {
    lu_factor(a).det()
}
