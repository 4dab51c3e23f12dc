//! Restarted, right-preconditioned GMRES for matrix-free complex operators.

use crate::error::{Error, Result};
use crate::lattice::C64;

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iters: usize,
    /// Relative residual target `‖b − Ax‖ / ‖b‖`.
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions { restart: 40, max_iters: 2000, tol: 1e-12 }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `A x = b` with right preconditioner `M⁻¹` (`x = M⁻¹ y`), starting from `x0`.
pub fn gmres(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    precond: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    x0: Option<Vec<C64>>,
    opts: GmresOptions,
) -> Result<GmresOutcome> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.unwrap_or_else(|| vec![C64::new(0.0, 0.0); n]);
    if bnorm == 0.0 {
        return Ok(GmresOutcome { x: vec![C64::new(0.0, 0.0); n], iterations: 0, rel_residual: 0.0 });
    }
    let mut total = 0;
    loop {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= opts.tol {
            return Ok(GmresOutcome { x, iterations: total, rel_residual: rel });
        }
        if total >= opts.max_iters {
            return Err(Error::SolveFailed { residual: rel, iterations: total });
        }
        let m = opts.restart;
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![C64::new(0.0, 0.0); m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..m {
            let z = precond(&basis[k]);
            let mut w = apply(&z);
            // modified Gram-Schmidt
            for (i, v) in basis.iter().enumerate() {
                let h = dot(v, &w);
                hess[i][k] = h;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= h * vi);
            }
            let hnext = norm(&w);
            hess[k + 1][k] = C64::new(hnext, 0.0);
            // apply previous rotations
            for i in 0..k {
                let t = cs[i].conj() * hess[i][k] + sn[i].conj() * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let a = hess[k][k];
            let bb = hess[k + 1][k];
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                cs[k] = C64::new(1.0, 0.0);
                sn[k] = C64::new(0.0, 0.0);
            } else {
                cs[k] = a / denom;
                sn[k] = bb / denom;
            }
            hess[k][k] = cs[k].conj() * a + sn[k].conj() * bb;
            hess[k + 1][k] = C64::new(0.0, 0.0);
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            k_used = k + 1;
            total += 1;
            let est = g[k + 1].norm() / bnorm;
            if hnext > 0.0 {
                basis.push(w.iter().map(|v| v / hnext).collect());
            }
            if est <= opts.tol * 0.5 || hnext == 0.0 || total >= opts.max_iters {
                break;
            }
        }
        // back substitution
        let mut y = vec![C64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        let mut update = vec![C64::new(0.0, 0.0); n];
        for (yi, v) in y.iter().zip(&basis) {
            update.iter_mut().zip(v).for_each(|(u, vi)| *u += yi * vi);
        }
        let dx = precond(&update);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    }
}
