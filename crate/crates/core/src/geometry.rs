//! Base Hermitian metric on the torus: fundamental form, contraction,
//! torsion, metric classification and the Gauduchon conformal gauge.
//!
//! Component convention: the metric matrix at a site has entry `(k, j)`
//! equal to `g_{k̄j}`; the inverse matrix has entry `(j, k)` equal to
//! `g^{jk̄}`. Forms follow `ω^n` meaning `ω^n/n!`, so the volume density in
//! Lebesgue measure is `det g`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::{dz, dzbar, wedge_sign, Form};
use crate::krylov::{gmres, GmresOptions};
use crate::lattice::{LatticeGrid, Mat, MatrixField, ScalarField, C64, I};
use crate::matfun;

/// Base metric recipes. Mode vectors hold one integer per real axis.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Flat,
    /// `g_{k̄j} = δ_{jk} + ∂_j∂_{k̄}φ` with `φ = amplitude·cos(2π m·x)/|κ|²`.
    KaehlerPerturbed { amplitude: f64, mode: Vec<i32> },
    /// Diagonal entries each depending on the other complex plane plus a
    /// real off-diagonal coupling; not Kähler and not Gauduchon for n = 2.
    Nonkaehler { amplitude: f64, mode: Vec<i32> },
    /// Explicit entries: `entries[k][j]` is `g_{k̄j}` before volume normalization.
    Entries { entries: Vec<Vec<Expr>> },
}

impl MetricSpec {
    /// Entry formulas realizing the preset on an `n`-dimensional torus.
    pub fn entry_formulas(&self, grid: &LatticeGrid) -> Result<Vec<Vec<Expr>>> {
        let n = grid.complex_dim();
        let periods = grid.periods();
        let phase = |m: &[i32]| -> Result<Expr> {
            if m.len() != 2 * n {
                return Err(Error::Config(format!("mode must have {} integers, got {}", 2 * n, m.len())));
            }
            let terms: Vec<String> = m
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0)
                .map(|(a, v)| format!("{}*x{}", 2.0 * PI * *v as f64 / periods[a], a))
                .collect();
            if terms.is_empty() {
                Ok(Expr::real(0.0))
            } else {
                Expr::parse(&terms.join("+"))
            }
        };
        match self {
            MetricSpec::Flat => Ok((0..n)
                .map(|k| (0..n).map(|j| Expr::real(if j == k { 1.0 } else { 0.0 })).collect())
                .collect()),
            MetricSpec::KaehlerPerturbed { amplitude, mode } => {
                let theta = phase(mode)?;
                let kappa: Vec<C64> = (0..n)
                    .map(|j| {
                        let k0 = 2.0 * PI * mode[2 * j] as f64 / periods[2 * j];
                        let k1 = 2.0 * PI * mode[2 * j + 1] as f64 / periods[2 * j + 1];
                        C64::new(0.5 * k0, -0.5 * k1)
                    })
                    .collect();
                let norm2: f64 = kappa.iter().map(|k| k.norm_sqr()).sum();
                if norm2 == 0.0 {
                    return Err(Error::Config("kaehler_perturbed needs a nonzero mode".into()));
                }
                // ∂_j∂_k̄ cos θ = −κ_j κ̄_k cos θ
                Ok((0..n)
                    .map(|k| {
                        (0..n)
                            .map(|j| {
                                let c = -amplitude * kappa[j] * kappa[k].conj() / norm2;
                                let delta = if j == k { 1.0 } else { 0.0 };
                                Expr::Add(
                                    Box::new(Expr::real(delta)),
                                    Box::new(Expr::Mul(Box::new(Expr::Const(c)), Box::new(Expr::Cos(Box::new(theta.clone()))))),
                                )
                            })
                            .collect()
                    })
                    .collect())
            }
            MetricSpec::Nonkaehler { amplitude, mode } => {
                let theta = phase(mode)?;
                if n == 1 {
                    return Ok(vec![vec![Expr::parse(&format!("1+{amplitude}*cos({theta})"))?]]);
                }
                let swapped: Vec<i32> = vec![mode[2], mode[3], mode[0], mode[1]];
                let theta_sw = phase(&swapped)?;
                let e = amplitude;
                Ok(vec![
                    vec![
                        Expr::parse(&format!("1+{e}*cos({theta_sw})"))?,
                        Expr::parse(&format!("{}*sin({theta}+{theta_sw})", e / 2.0))?,
                    ],
                    vec![
                        Expr::parse(&format!("{}*sin({theta}+{theta_sw})", e / 2.0))?,
                        Expr::parse(&format!("1+{e}*cos({theta})"))?,
                    ],
                ])
            }
            MetricSpec::Entries { entries } => {
                if entries.len() != n || entries.iter().any(|row| row.len() != n) {
                    return Err(Error::Config(format!("metric entries must be {n}x{n}")));
                }
                Ok(entries.clone())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct HermitianMetricField {
    grid: Arc<LatticeGrid>,
    g: MatrixField,
    g_inv: MatrixField,
    vol: ScalarField,
    // (l*n + k)*n + j  ->  T_{l k̄ j}
    torsion: Vec<Vec<C64>>,
    torsion_trace: Vec<ScalarField>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassificationResiduals {
    pub kaehler_res: f64,
    pub semikaehler_res: f64,
    pub gauduchon_res: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TorsionIdentityResiduals {
    pub semik_id: f64,
    pub gaud_id: f64,
}

/// Evaluates entry formulas into a metric with volume normalized to one.
pub fn build_metric(grid: &Arc<LatticeGrid>, spec: &MetricSpec) -> Result<HermitianMetricField> {
    let entries = spec.entry_formulas(grid)?;
    let n = grid.complex_dim();
    let g = MatrixField::from_fn(grid, n, |x| Mat::from_fn(n, n, |k, j| entries[k][j].eval(x)));
    HermitianMetricField::from_matrix_field(g)
}

impl HermitianMetricField {
    /// Builds caches from raw `g_{k̄j}` values, rescaling by a constant so the volume is one.
    pub fn from_matrix_field(g: MatrixField) -> Result<Self> {
        let grid = g.grid().clone();
        let n = grid.complex_dim();
        if g.dim() != n {
            return Err(Error::ShapeMismatch(format!("metric must be {n}x{n}")));
        }
        let mut min_eig = f64::INFINITY;
        let mut worst_herm = 0.0f64;
        for m in g.values() {
            worst_herm = worst_herm.max(matfun::max_abs(&(m - m.adjoint())));
            min_eig = min_eig.min(matfun::min_eigenvalue(m));
        }
        if worst_herm > 1e-10 {
            return Err(Error::ShapeMismatch(format!("metric is not Hermitian (defect {worst_herm:e})")));
        }
        if !(min_eig > 0.0) {
            return Err(Error::MetricNotPositive { min_eig });
        }
        let g = g.map(matfun::herm);
        let det = g.map_scalar(|m| C64::new(m.determinant().re, 0.0));
        let volume = det.values().iter().map(|v| v.re).sum::<f64>() * grid.cell_area();
        let c = volume.powf(-1.0 / n as f64);
        let g = g.map(|m| m * C64::new(c, 0.0));
        Ok(Self::with_caches(g))
    }

    fn with_caches(g: MatrixField) -> Self {
        let grid = g.grid().clone();
        let n = grid.complex_dim();
        let g_inv = g.map(matfun::inverse).map(matfun::herm);
        // g_inv stored with entry (j,k) = g^{jk̄}: inverse of G[(k,j)] = g_{k̄j} gives
        // Σ_k Ginv[j,k] G[k,l] = δ_jl, which is g^{jk̄} g_{k̄l} = δ.
        let vol = g.map_scalar(|m| C64::new(m.determinant().re, 0.0));
        // ∂_l g_{k̄j}
        let mut dg = vec![vec![Vec::new(); n * n]; n];
        for k in 0..n {
            for j in 0..n {
                let (gz, _) = grid.gradients(&g.component(k, j));
                for (l, d) in gz.into_iter().enumerate() {
                    dg[l][k * n + j] = d;
                }
            }
        }
        let sites = grid.sites();
        let mut torsion = vec![vec![C64::new(0.0, 0.0); sites]; n * n * n];
        for l in 0..n {
            for k in 0..n {
                for j in 0..n {
                    let t = &mut torsion[(l * n + k) * n + j];
                    for s in 0..sites {
                        t[s] = dg[l][k * n + j][s] - dg[j][k * n + l][s];
                    }
                }
            }
        }
        let torsion_trace = (0..n)
            .map(|j| {
                let vals = (0..sites)
                    .map(|s| {
                        let gi = g_inv.at(s);
                        let mut acc = C64::new(0.0, 0.0);
                        for p in 0..n {
                            for k in 0..n {
                                acc += gi[(p, k)] * torsion[(j * n + k) * n + p][s];
                            }
                        }
                        acc
                    })
                    .collect();
                ScalarField::from_vec(&grid, vals)
            })
            .collect();
        HermitianMetricField { grid, g, g_inv, vol, torsion, torsion_trace }
    }

    pub fn grid(&self) -> &Arc<LatticeGrid> {
        &self.grid
    }

    pub fn complex_dim(&self) -> usize {
        self.grid.complex_dim()
    }

    pub fn g(&self) -> &MatrixField {
        &self.g
    }

    pub fn g_inv(&self) -> &MatrixField {
        &self.g_inv
    }

    pub fn vol(&self) -> &ScalarField {
        &self.vol
    }

    /// `T_{l k̄ j}` as a site array.
    pub fn torsion(&self, l: usize, k: usize, j: usize) -> &[C64] {
        let n = self.complex_dim();
        &self.torsion[(l * n + k) * n + j]
    }

    /// `τ_j = g^{pk̄} T_{j k̄ p}`.
    pub fn torsion_trace(&self) -> &[ScalarField] {
        &self.torsion_trace
    }

    pub fn max_torsion(&self) -> f64 {
        self.torsion.iter().flat_map(|t| t.iter()).fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// `∫ f ω^n`.
    pub fn integrate(&self, f: &ScalarField) -> C64 {
        f.integrate_unchecked(&self.vol)
    }

    pub fn volume(&self) -> f64 {
        self.vol.values().iter().map(|v| v.re).sum::<f64>() * self.grid.cell_area()
    }

    /// Complex Laplacian `Δφ = g^{jk̄} ∂_j ∂_{k̄} φ` on raw site values.
    pub fn complex_laplacian(&self, phi: &[C64]) -> Vec<C64> {
        let n = self.complex_dim();
        let spec = self.grid.spectrum(phi);
        let sites = self.grid.sites();
        let mut out = vec![C64::new(0.0, 0.0); sites];
        for j in 0..n {
            for k in 0..n {
                let mut d: Vec<C64> =
                    (0..sites).map(|s| spec[s] * self.grid.sym_z(j)[s] * self.grid.sym_zbar(k)[s]).collect();
                self.grid.fft_inverse(&mut d);
                for s in 0..sites {
                    out[s] += self.g_inv.at(s)[(j, k)] * d[s];
                }
            }
        }
        out
    }

    /// Constant-coefficient preconditioner: inverse of the complex Laplacian
    /// built from the site-averaged inverse metric, scaled by `1/scale`.
    /// Annihilates the mean and unresolved modes.
    pub fn averaged_laplacian_inverse(&self, r: &[C64], scale: C64) -> Vec<C64> {
        let n = self.complex_dim();
        let sites = self.grid.sites();
        let mut avg = Mat::zeros(n, n);
        for m in self.g_inv.values() {
            avg += m;
        }
        avg /= C64::new(sites as f64, 0.0);
        let mut spec = self.grid.spectrum(r);
        for s in 0..sites {
            let mut sym = C64::new(0.0, 0.0);
            for j in 0..n {
                for k in 0..n {
                    sym += avg[(j, k)] * self.grid.sym_z(j)[s] * self.grid.sym_zbar(k)[s];
                }
            }
            spec[s] = if sym.norm() > 1e-14 { spec[s] / (sym * scale) } else { C64::new(0.0, 0.0) };
        }
        self.grid.fft_inverse(&mut spec);
        spec
    }

    /// Fundamental form `ω = (i/2) g_{k̄j} dz^j ∧ dz̄^k`.
    pub fn omega(&self) -> Form {
        let n = self.complex_dim();
        let mut w = Form::zero(&self.grid);
        for k in 0..n {
            for j in 0..n {
                let sign = wedge_sign(dz(j), dzbar(k)).unwrap_or(0.0);
                w.add_term(dz(j) | dzbar(k), &self.g.component(k, j), C64::new(0.0, 0.5 * sign));
            }
        }
        w
    }

    /// `ω^p / p!`.
    pub fn omega_power(&self, p: usize) -> Form {
        let omega = self.omega();
        let mut out = Form::function(&ScalarField::real_constant(&self.grid, 1.0));
        for q in 1..=p {
            out = out.wedge(&omega).scale(C64::new(1.0 / q as f64, 0.0));
        }
        out
    }

    /// Largest eigenvalue of the complex Laplacian symbol over the grid.
    pub fn max_laplacian_symbol(&self) -> f64 {
        let lam_max = self
            .g_inv
            .values()
            .iter()
            .map(|m| matfun::hermitian_eigen(m).0.last().copied().unwrap_or(0.0))
            .fold(0.0f64, f64::max);
        lam_max * self.grid.max_flat_laplacian_symbol()
    }
}

/// `g^{jk̄} ψ_{k̄j}` where `psi[k*n + j]` holds `ψ_{k̄j}`.
pub fn lambda_contract(psi: &[MatrixField], g: &HermitianMetricField) -> Result<MatrixField> {
    let n = g.complex_dim();
    if psi.len() != n * n {
        return Err(Error::ShapeMismatch(format!("(1,1)-form needs {} components, got {}", n * n, psi.len())));
    }
    let d = psi[0].dim();
    if psi.iter().any(|p| p.dim() != d) {
        return Err(Error::ShapeMismatch("(1,1)-form components disagree in size".into()));
    }
    let sites = g.grid().sites();
    let values = (0..sites)
        .map(|s| {
            let gi = g.g_inv().at(s);
            let mut acc = Mat::zeros(d, d);
            for j in 0..n {
                for k in 0..n {
                    acc += psi[k * n + j].at(s) * gi[(j, k)];
                }
            }
            acc
        })
        .collect();
    Ok(MatrixField::from_vec(g.grid(), d, values))
}

pub fn classification_residuals(g: &HermitianMetricField) -> ClassificationResiduals {
    let n = g.complex_dim();
    let kaehler_res = g.omega().d().max_abs();
    if n == 1 {
        return ClassificationResiduals { kaehler_res, semikaehler_res: 0.0, gauduchon_res: 0.0 };
    }
    let wp = g.omega_power(n - 1);
    ClassificationResiduals {
        kaehler_res,
        semikaehler_res: wp.d().max_abs(),
        gauduchon_res: wp.delbar().del().max_abs(),
    }
}

/// `(∇^k τ_k, g^{kj̄} τ_k conj(τ_j))` pointwise.
fn gauduchon_torsion_parts(g: &HermitianMetricField) -> (ScalarField, ScalarField) {
    let n = g.complex_dim();
    let sites = g.grid().sites();
    let tau = g.torsion_trace();
    // ∂_{j̄} τ_k
    let dbar: Vec<Vec<Vec<C64>>> = tau.iter().map(|t| (0..n).map(|j| g.grid().dzbar(t.values(), j)).collect()).collect();
    let (mut div, mut quad) = (Vec::with_capacity(sites), Vec::with_capacity(sites));
    for s in 0..sites {
        let gi = g.g_inv().at(s);
        let (mut a, mut b) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for k in 0..n {
            for j in 0..n {
                a += gi[(k, j)] * dbar[k][j][s];
                b += gi[(k, j)] * tau[k].values()[s] * tau[j].values()[s].conj();
            }
        }
        div.push(a);
        quad.push(b);
    }
    (ScalarField::from_vec(g.grid(), div), ScalarField::from_vec(g.grid(), quad))
}

/// Pointwise `∇^k τ_k + g^{kj̄} τ_k conj(τ_j)` (vanishes for Gauduchon metrics).
pub fn gauduchon_torsion_field(g: &HermitianMetricField) -> ScalarField {
    let (div, quad) = gauduchon_torsion_parts(g);
    &div + &quad
}

/// `v^{j̄} = g^{kj̄} τ_k`, one field per `j`.
pub fn contracted_torsion(g: &HermitianMetricField) -> Vec<ScalarField> {
    let n = g.complex_dim();
    let tau = g.torsion_trace();
    (0..n)
        .map(|j| {
            let vals = (0..g.grid().sites())
                .map(|s| (0..n).map(|k| g.g_inv().at(s)[(k, j)] * tau[k].values()[s]).sum())
                .collect();
            ScalarField::from_vec(g.grid(), vals)
        })
        .collect()
}

pub fn torsion_identity_residuals(g: &HermitianMetricField) -> TorsionIdentityResiduals {
    let semik_id = contracted_torsion(g).iter().map(|f| f.max_abs()).fold(0.0, f64::max);
    TorsionIdentityResiduals { semik_id, gaud_id: gauduchon_torsion_field(g).max_abs() }
}

/// Torsion side of the (0,1)-form identity: `ψ_{j̄} g^{kj̄} τ_k`.
pub fn torsion_one_form_torsion_side(g: &HermitianMetricField, psi: &[ScalarField]) -> ScalarField {
    let v = contracted_torsion(g);
    let mut acc = ScalarField::constant(g.grid(), C64::new(0.0, 0.0));
    for (pj, vj) in psi.iter().zip(&v) {
        acc = &acc + &(pj * vj);
    }
    acc
}

/// Form side of the (0,1)-form identity, `(i/2) ⋆(∂(ω^{n−1}) ∧ ψ)`.
/// The factor 1/2 comes from `ω = (i/2) g_{k̄j} dz^j∧dz̄^k`.
pub fn torsion_one_form_form_side(g: &HermitianMetricField, psi: &[ScalarField]) -> ScalarField {
    let n = g.complex_dim();
    let mut psi_form = Form::zero(g.grid());
    for (j, p) in psi.iter().enumerate() {
        psi_form.add_term(dzbar(j), p.values(), C64::new(1.0, 0.0));
    }
    let top = g.omega_power(n - 1).del().wedge(&psi_form).top_density();
    top.zip_with(g.vol(), |t, v| 0.5 * I * t / v.re)
}

/// Form side of the second torsion identity, `(i/2) ⋆(∂∂̄ ω^{n−1})`; equals
/// [`gauduchon_torsion_field`] in the same normalization.
pub fn torsion_laplacian_form_side(g: &HermitianMetricField) -> ScalarField {
    let n = g.complex_dim();
    let top = g.omega_power(n - 1).delbar().del().top_density();
    top.zip_with(g.vol(), |t, v| 0.5 * I * t / v.re)
}

fn relative_gap(a: C64, b: C64) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Relative mismatch of `∫ (torsion side) ω^n` against `∫ (form side) ω^n`.
pub fn torsion_one_form_residual(g: &HermitianMetricField, psi: &[ScalarField]) -> f64 {
    relative_gap(g.integrate(&torsion_one_form_torsion_side(g, psi)), g.integrate(&torsion_one_form_form_side(g, psi)))
}

/// Mismatch of the second identity tested against `phi`, relative to the
/// larger of the two sides and of `∫|φ|(|∇^kτ_k| + |τ|²)`. The last term keeps
/// the measure meaningful on Gauduchon metrics, where both sides vanish.
pub fn torsion_laplacian_residual(g: &HermitianMetricField, phi: &ScalarField) -> f64 {
    let (div, quad) = gauduchon_torsion_parts(g);
    let a = g.integrate(&(phi * &(&div + &quad)));
    let b = g.integrate(&(phi * &torsion_laplacian_form_side(g)));
    let size = g.integrate(&phi.zip_with(&div, |p, d| C64::new(p.norm() * d.norm(), 0.0))).re
        + g.integrate(&phi.zip_with(&quad, |p, q| C64::new(p.norm() * q.norm(), 0.0))).re;
    let scale = a.norm().max(b.norm()).max(size);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// `(∫ g^{jk̄} ∂_{k̄} f φ_j ω^n, −∫ f ∂_{k̄} φ_j g^{jk̄} ω^n)`; equal when g is semi-Kähler.
pub fn integration_by_parts_pair(g: &HermitianMetricField, f: &ScalarField, phi: &[ScalarField]) -> (C64, C64) {
    let n = g.complex_dim();
    let sites = g.grid().sites();
    let df: Vec<Vec<C64>> = (0..n).map(|k| g.grid().dzbar(f.values(), k)).collect();
    let dphi: Vec<Vec<Vec<C64>>> = phi.iter().map(|p| (0..n).map(|k| g.grid().dzbar(p.values(), k)).collect()).collect();
    let mut lhs = vec![C64::new(0.0, 0.0); sites];
    let mut rhs = vec![C64::new(0.0, 0.0); sites];
    for s in 0..sites {
        let gi = g.g_inv().at(s);
        for j in 0..n {
            for k in 0..n {
                lhs[s] += gi[(j, k)] * df[k][s] * phi[j].values()[s];
                rhs[s] -= gi[(j, k)] * f.values()[s] * dphi[j][k][s];
            }
        }
    }
    (
        g.integrate(&ScalarField::from_vec(g.grid(), lhs)),
        g.integrate(&ScalarField::from_vec(g.grid(), rhs)),
    )
}

/// Random band-limited complex field: Fourier modes with |m_a| ≤ `band`.
pub fn random_band_limited(grid: &Arc<LatticeGrid>, band: i32, rng: &mut impl rand::Rng) -> ScalarField {
    let d = grid.real_dim();
    let mut modes: Vec<(Vec<i32>, C64)> = Vec::new();
    let width = (2 * band + 1) as usize;
    let count = width.pow(d as u32);
    for idx in 0..count {
        let mut m = Vec::with_capacity(d);
        let mut r = idx;
        for _ in 0..d {
            m.push((r % width) as i32 - band);
            r /= width;
        }
        modes.push((m, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / count as f64));
    }
    let periods = grid.periods().to_vec();
    ScalarField::from_fn(grid, |x| {
        modes
            .iter()
            .map(|(m, c)| {
                let ph: f64 = m.iter().zip(x).zip(&periods).map(|((mi, xi), l)| 2.0 * PI * *mi as f64 * xi / l).sum();
                c * C64::new(ph.cos(), ph.sin())
            })
            .sum()
    })
}

/// Lebesgue density of `∂∂̄(u · ω₀^{n−1})`; linear in `u`.
pub fn gauduchon_operator(g0: &HermitianMetricField, u: &[C64]) -> Vec<C64> {
    let n = g0.complex_dim();
    let uf = ScalarField::from_vec(g0.grid(), u.to_vec());
    g0.omega_power(n - 1).multiply(&uf).delbar().del().top_density().into_values()
}

#[derive(Clone, Debug)]
pub struct GauduchonGauge {
    pub u: ScalarField,
    pub metric: HermitianMetricField,
    pub iterations: usize,
    pub operator_residual: f64,
}

/// Conformal factor `u > 0` (mean one) with `∂∂̄(u ω₀^{n−1}) = 0`, and the
/// resulting Gauduchon metric `u^{1/(n−1)} g₀` renormalized to volume one.
pub fn gauduchon_gauge(g0: &HermitianMetricField) -> Result<GauduchonGauge> {
    let grid = g0.grid().clone();
    let n = g0.complex_dim();
    let sites = grid.sites();
    if n == 1 {
        return Ok(GauduchonGauge {
            u: ScalarField::real_constant(&grid, 1.0),
            metric: g0.clone(),
            iterations: 0,
            operator_residual: 0.0,
        });
    }
    let one = vec![C64::new(1.0, 0.0); sites];
    let rhs: Vec<C64> = gauduchon_operator(g0, &one).iter().map(|v| -v).collect();
    let rhs_norm = rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();

    // scale of the principal part, from the lowest resolved mode
    let probe: Vec<C64> = (0..sites).map(|s| C64::new((2.0 * PI * grid.coords(s)[0] / grid.periods()[0]).cos(), 0.0)).collect();
    let lp = gauduchon_operator(g0, &probe);
    let dp = g0.complex_laplacian(&probe);
    let num: C64 = probe.iter().zip(&lp).map(|(a, b)| a.conj() * b).sum();
    let den: C64 = probe.iter().zip(&dp).map(|(a, b)| a.conj() * b).sum();
    let scale = if den.norm() > 0.0 && num.norm() > 0.0 { num / den } else { C64::new(1.0, 0.0) };

    let (w, iterations, rel) = if rhs_norm == 0.0 {
        (vec![C64::new(0.0, 0.0); sites], 0, 0.0)
    } else {
        let out = gmres(
            |x| gauduchon_operator(g0, x),
            |r| g0.averaged_laplacian_inverse(r, scale),
            &rhs,
            None,
            GmresOptions { restart: 60, max_iters: 500, tol: 1e-12 },
        )
        .map_err(|e| Error::GauduchonGauge(format!("kernel solve failed ({e}); kernel may not be one-dimensional")))?;
        (out.x, out.iterations, out.rel_residual)
    };
    let mut u: Vec<C64> = w.iter().map(|v| C64::new(1.0, 0.0) + v).collect();
    let mean = u.iter().sum::<C64>() / sites as f64;
    u.iter_mut().for_each(|v| *v /= mean);
    let imag = u.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    if imag > 1e-8 {
        return Err(Error::GauduchonGauge(format!("conformal factor not real (imaginary part {imag:e})")));
    }
    let min_u = u.iter().fold(f64::INFINITY, |m, v| m.min(v.re));
    if !(min_u > 0.0) {
        return Err(Error::GauduchonGauge(format!("conformal factor not positive (min {min_u:e})")));
    }
    let u = ScalarField::from_vec(&grid, u.iter().map(|v| C64::new(v.re, 0.0)).collect());
    let power = 1.0 / (n as f64 - 1.0);
    let scaled = MatrixField::from_vec(
        &grid,
        n,
        g0.g().values().iter().zip(u.values()).map(|(m, f)| m * C64::new(f.re.powf(power), 0.0)).collect(),
    );
    let metric = HermitianMetricField::from_matrix_field(scaled)?;
    Ok(GauduchonGauge { u, metric, iterations, operator_residual: rel })
}
