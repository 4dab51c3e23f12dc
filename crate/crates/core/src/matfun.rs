//! Functions of small Hermitian matrices through eigen-decomposition.

use nalgebra::SymmetricEigen;

use crate::lattice::{Mat, C64};

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    if n == 1 {
        return (vec![m[(0, 0)].re], Mat::identity(1, 1));
    }
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// `f(M)` for Hermitian `M`.
pub fn hermitian_fn(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let n = m.nrows();
    if n == 1 {
        return Mat::from_element(1, 1, C64::new(f(m[(0, 0)].re), 0.0));
    }
    let (vals, vecs) = hermitian_eigen(m);
    let mut scaled = vecs.clone();
    for (c, v) in vals.iter().enumerate() {
        let fv = f(*v);
        for r in 0..n {
            scaled[(r, c)] *= fv;
        }
    }
    let out = scaled * vecs.adjoint();
    (&out + out.adjoint()) * C64::new(0.5, 0.0)
}

pub fn hermitian_exp(m: &Mat) -> Mat {
    hermitian_fn(m, f64::exp)
}

pub fn hermitian_log(m: &Mat) -> Mat {
    hermitian_fn(m, f64::ln)
}

pub fn hermitian_sqrt(m: &Mat) -> Mat {
    hermitian_fn(m, f64::sqrt)
}

pub fn hermitian_inv_sqrt(m: &Mat) -> Mat {
    hermitian_fn(m, |v| 1.0 / v.sqrt())
}

pub fn hermitian_pow(m: &Mat, p: f64) -> Mat {
    hermitian_fn(m, |v| v.powf(p))
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    hermitian_eigen(m).0[0]
}

/// Inverse of a small positive (or merely invertible) matrix.
pub fn inverse(m: &Mat) -> Mat {
    if m.nrows() == 1 {
        return Mat::from_element(1, 1, C64::new(1.0, 0.0) / m[(0, 0)]);
    }
    m.clone().try_inverse().unwrap_or_else(|| Mat::from_element(m.nrows(), m.ncols(), C64::new(f64::NAN, 0.0)))
}

/// Largest entry modulus.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.norm()))
}

/// Hermitian part.
pub fn herm(m: &Mat) -> Mat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `X^{†K} = K^{-1} X^* K`, the adjoint with respect to the Hermitian form `K`.
pub fn adjoint_wrt(x: &Mat, k: &Mat, k_inv: &Mat) -> Mat {
    k_inv * x.adjoint() * k
}

/// Symmetrization of an endomorphism `h` that is self-adjoint for `K`:
/// returns `K^{1/2} h K^{-1/2}` (Hermitian) together with `K^{1/2}` and `K^{-1/2}`.
pub struct KFrame {
    pub sqrt: Mat,
    pub inv_sqrt: Mat,
}

impl KFrame {
    pub fn new(k: &Mat) -> Self {
        KFrame { sqrt: hermitian_sqrt(k), inv_sqrt: hermitian_inv_sqrt(k) }
    }

    pub fn symmetrize(&self, h: &Mat) -> Mat {
        herm(&(&self.sqrt * h * &self.inv_sqrt))
    }

    pub fn unsymmetrize(&self, hs: &Mat) -> Mat {
        &self.inv_sqrt * hs * &self.sqrt
    }
}
