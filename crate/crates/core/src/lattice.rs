//! Periodic lattice over the real 2n-torus underlying a complex n-torus.
//!
//! Coordinates are `x^0 .. x^{2n-1}` with `z^j = x^{2j} + i x^{2j+1}`.
//! Sites are stored row-major with axis 0 slowest. All differentiation is
//! spectral: one forward FFT, multiplication by the symbol, one inverse FFT.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub struct LatticeGrid {
    complex_dim: usize,
    points: usize,
    periods: Vec<f64>,
    dealias: bool,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // per complex axis j: spectral multipliers of ∂_j and ∂_{j̄}
    sym_z: Vec<Vec<C64>>,
    sym_zbar: Vec<Vec<C64>>,
    // complex Laplacian symbol of the flat metric, -Σ_j |κ_j|^2
    sym_flat_laplacian: Vec<f64>,
}

impl fmt::Debug for LatticeGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeGrid")
            .field("complex_dim", &self.complex_dim)
            .field("points", &self.points)
            .field("periods", &self.periods)
            .field("dealias", &self.dealias)
            .finish()
    }
}

impl LatticeGrid {
    pub fn new(complex_dim: usize, points: usize, periods: Vec<f64>) -> Result<Arc<Self>> {
        Self::with_dealias(complex_dim, points, periods, false)
    }

    /// Unit periods on every axis.
    pub fn unit(complex_dim: usize, points: usize) -> Result<Arc<Self>> {
        Self::new(complex_dim, points, vec![1.0; 2 * complex_dim])
    }

    pub fn with_dealias(
        complex_dim: usize,
        points: usize,
        periods: Vec<f64>,
        dealias: bool,
    ) -> Result<Arc<Self>> {
        if !(1..=2).contains(&complex_dim) {
            return Err(Error::InvalidGrid(format!(
                "complex dimension must be 1 or 2, got {complex_dim}"
            )));
        }
        if points < 8 || points % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and >= 8, got {points}"
            )));
        }
        if periods.len() != 2 * complex_dim {
            return Err(Error::InvalidGrid(format!(
                "expected {} periods, got {}",
                2 * complex_dim,
                periods.len()
            )));
        }
        if periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidGrid("periods must be positive".into()));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(points);
        let inverse = planner.plan_fft_inverse(points);

        let real_dim = 2 * complex_dim;
        let sites = points.pow(real_dim as u32);
        let cutoff = if dealias { points / 3 } else { points / 2 };
        // signed integer frequency of an index, Nyquist and truncated modes map to None
        let freq = |m: usize| -> Option<f64> {
            let s = if m <= points / 2 { m as i64 } else { m as i64 - points as i64 };
            if s.unsigned_abs() as usize >= cutoff && (dealias || s.unsigned_abs() as usize == points / 2)
            {
                None
            } else {
                Some(s as f64)
            }
        };
        let mut sym_z = vec![vec![C64::new(0.0, 0.0); sites]; complex_dim];
        let mut sym_zbar = vec![vec![C64::new(0.0, 0.0); sites]; complex_dim];
        let mut sym_flat_laplacian = vec![0.0; sites];
        let mut idx = vec![0usize; real_dim];
        for site in 0..sites {
            let mut rem = site;
            for a in (0..real_dim).rev() {
                idx[a] = rem % points;
                rem /= points;
            }
            let mut k = vec![0.0; real_dim];
            let mut resolved = true;
            for a in 0..real_dim {
                match freq(idx[a]) {
                    Some(m) => k[a] = 2.0 * PI * m / periods[a],
                    None => resolved = false,
                }
            }
            if !resolved {
                continue;
            }
            let mut lap = 0.0;
            for j in 0..complex_dim {
                // ∂_j e^{ik.x} = i·½(k_{2j} - i k_{2j+1}) e^{ik.x}
                let kappa = C64::new(0.5 * k[2 * j], -0.5 * k[2 * j + 1]);
                let kappa_bar = C64::new(0.5 * k[2 * j], 0.5 * k[2 * j + 1]);
                sym_z[j][site] = I * kappa;
                sym_zbar[j][site] = I * kappa_bar;
                lap -= kappa.norm_sqr();
            }
            sym_flat_laplacian[site] = lap;
        }

        Ok(Arc::new(LatticeGrid {
            complex_dim,
            points,
            periods,
            dealias,
            forward,
            inverse,
            sym_z,
            sym_zbar,
            sym_flat_laplacian,
        }))
    }

    pub fn complex_dim(&self) -> usize {
        self.complex_dim
    }

    pub fn real_dim(&self) -> usize {
        2 * self.complex_dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    pub fn sites(&self) -> usize {
        self.points.pow(self.real_dim() as u32)
    }

    pub fn cell_area(&self) -> f64 {
        self.periods.iter().map(|p| p / self.points as f64).product()
    }

    pub fn total_volume(&self) -> f64 {
        self.periods.iter().product()
    }

    /// Real coordinates of a site.
    pub fn coords(&self, site: usize) -> Vec<f64> {
        let d = self.real_dim();
        let mut x = vec![0.0; d];
        let mut rem = site;
        for a in (0..d).rev() {
            x[a] = (rem % self.points) as f64 * self.periods[a] / self.points as f64;
            rem /= self.points;
        }
        x
    }

    /// Site index of integer lattice coordinates, wrapping modulo N on every axis.
    pub fn site_of(&self, idx: &[i64]) -> usize {
        let n = self.points as i64;
        idx.iter().fold(0usize, |acc, &i| acc * self.points + i.rem_euclid(n) as usize)
    }

    fn check_axis(&self, j: usize) -> Result<()> {
        if j >= self.complex_dim {
            Err(Error::AxisOutOfRange { axis: j, dim: self.complex_dim })
        } else {
            Ok(())
        }
    }

    fn transform(&self, data: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.points;
        let d = self.real_dim();
        let total = data.len();
        let mut line = vec![C64::new(0.0, 0.0); n];
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for a in 0..d {
            let stride = n.pow((d - 1 - a) as u32);
            let block = stride * n;
            for start in (0..total).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for (m, v) in line.iter_mut().enumerate() {
                        *v = data[base + m * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (m, v) in line.iter().enumerate() {
                        data[base + m * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn fft_forward(&self, data: &mut [C64]) {
        self.transform(data, &self.forward);
    }

    /// Normalized inverse transform.
    pub fn fft_inverse(&self, data: &mut [C64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn apply_symbol(&self, spectrum: &[C64], symbol: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> = spectrum.iter().zip(symbol).map(|(a, b)| a * b).collect();
        self.fft_inverse(&mut out);
        out
    }

    pub fn spectrum(&self, values: &[C64]) -> Vec<C64> {
        let mut s = values.to_vec();
        self.fft_forward(&mut s);
        s
    }

    /// ∂/∂z^j of raw site values.
    pub fn dz(&self, values: &[C64], j: usize) -> Vec<C64> {
        self.apply_symbol(&self.spectrum(values), &self.sym_z[j])
    }

    /// ∂/∂z̄^k of raw site values.
    pub fn dzbar(&self, values: &[C64], k: usize) -> Vec<C64> {
        self.apply_symbol(&self.spectrum(values), &self.sym_zbar[k])
    }

    /// All holomorphic and antiholomorphic first derivatives from one forward transform.
    pub fn gradients(&self, values: &[C64]) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
        let spec = self.spectrum(values);
        let dz = (0..self.complex_dim).map(|j| self.apply_symbol(&spec, &self.sym_z[j])).collect();
        let dzb = (0..self.complex_dim).map(|k| self.apply_symbol(&spec, &self.sym_zbar[k])).collect();
        (dz, dzb)
    }

    /// Derivative along real axis `a`.
    pub fn dx(&self, values: &[C64], a: usize) -> Vec<C64> {
        let j = a / 2;
        let spec = self.spectrum(values);
        // ∂_{x^{2j}} = ∂_j + ∂_{j̄},  ∂_{x^{2j+1}} = i(∂_j - ∂_{j̄})
        let sym: Vec<C64> = if a % 2 == 0 {
            self.sym_z[j].iter().zip(&self.sym_zbar[j]).map(|(p, q)| p + q).collect()
        } else {
            self.sym_z[j].iter().zip(&self.sym_zbar[j]).map(|(p, q)| I * (p - q)).collect()
        };
        self.apply_symbol(&spec, &sym)
    }

    pub(crate) fn sym_z(&self, j: usize) -> &[C64] {
        &self.sym_z[j]
    }

    pub(crate) fn sym_zbar(&self, k: usize) -> &[C64] {
        &self.sym_zbar[k]
    }

    /// Largest |symbol| of the flat complex Laplacian on this grid.
    pub fn max_flat_laplacian_symbol(&self) -> f64 {
        self.sym_flat_laplacian.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<LatticeGrid>,
    values: Vec<C64>,
}

impl ScalarField {
    pub fn new(grid: Arc<LatticeGrid>, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(Error::ShapeMismatch(format!(
                "scalar field has {} values, grid has {} sites",
                values.len(),
                grid.sites()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub(crate) fn from_vec(grid: &Arc<LatticeGrid>, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.sites());
        ScalarField { grid: grid.clone(), values }
    }

    pub fn constant(grid: &Arc<LatticeGrid>, c: C64) -> Self {
        ScalarField { grid: grid.clone(), values: vec![c; grid.sites()] }
    }

    pub fn real_constant(grid: &Arc<LatticeGrid>, c: f64) -> Self {
        Self::constant(grid, C64::new(c, 0.0))
    }

    pub fn from_fn(grid: &Arc<LatticeGrid>, f: impl Fn(&[f64]) -> C64) -> Self {
        let values = (0..grid.sites()).map(|s| f(&grid.coords(s))).collect();
        ScalarField { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<LatticeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self::from_vec(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(C64, C64) -> C64) -> Self {
        Self::from_vec(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    pub fn max_real(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.re))
    }

    pub fn min_real(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(v.re))
    }

    pub fn mean(&self) -> C64 {
        self.values.iter().sum::<C64>() / self.values.len() as f64
    }

    pub fn partial_z(&self, j: usize) -> Result<Self> {
        self.grid.check_axis(j)?;
        Ok(Self::from_vec(&self.grid, self.grid.dz(&self.values, j)))
    }

    pub fn partial_zbar(&self, k: usize) -> Result<Self> {
        self.grid.check_axis(k)?;
        Ok(Self::from_vec(&self.grid, self.grid.dzbar(&self.values, k)))
    }

    /// Riemann sum `Σ f · vol · cellarea`.
    pub fn integrate(&self, vol: &ScalarField) -> Result<C64> {
        if vol.values.len() != self.values.len() {
            return Err(Error::ShapeMismatch("volume field size".into()));
        }
        if let Some(bad) = vol.values.iter().find(|v| !(v.re > 0.0) || v.im.abs() > 1e-12 * v.re.abs().max(1.0)) {
            return Err(Error::NonPositiveVolume(bad.re));
        }
        Ok(self.integrate_unchecked(vol))
    }

    pub(crate) fn integrate_unchecked(&self, vol: &ScalarField) -> C64 {
        let s: C64 = self.values.iter().zip(&vol.values).map(|(f, w)| f * w.re).sum();
        s * self.grid.cell_area()
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_with(rhs, |a, b| a * b)
    }
}

/// Field of `d×d` complex matrices.
#[derive(Clone, Debug)]
pub struct MatrixField {
    grid: Arc<LatticeGrid>,
    dim: usize,
    values: Vec<Mat>,
}

impl MatrixField {
    pub fn new(grid: Arc<LatticeGrid>, dim: usize, values: Vec<Mat>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(Error::ShapeMismatch(format!(
                "matrix field has {} sites, grid has {}",
                values.len(),
                grid.sites()
            )));
        }
        if values.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::ShapeMismatch(format!("every site must hold a {dim}x{dim} matrix")));
        }
        Ok(MatrixField { grid, dim, values })
    }

    pub(crate) fn from_vec(grid: &Arc<LatticeGrid>, dim: usize, values: Vec<Mat>) -> Self {
        debug_assert_eq!(values.len(), grid.sites());
        MatrixField { grid: grid.clone(), dim, values }
    }

    pub fn constant(grid: &Arc<LatticeGrid>, m: &Mat) -> Self {
        MatrixField { grid: grid.clone(), dim: m.nrows(), values: vec![m.clone(); grid.sites()] }
    }

    pub fn identity(grid: &Arc<LatticeGrid>, dim: usize) -> Self {
        Self::constant(grid, &Mat::identity(dim, dim))
    }

    pub fn zeros(grid: &Arc<LatticeGrid>, dim: usize) -> Self {
        Self::constant(grid, &Mat::zeros(dim, dim))
    }

    pub fn from_fn(grid: &Arc<LatticeGrid>, dim: usize, f: impl Fn(&[f64]) -> Mat) -> Self {
        let values = (0..grid.sites()).map(|s| f(&grid.coords(s))).collect();
        MatrixField { grid: grid.clone(), dim, values }
    }

    /// Diagonal embedding of a scalar field (`f·I`).
    pub fn from_scalar(f: &ScalarField, dim: usize) -> Self {
        let values = f.values.iter().map(|&v| Mat::identity(dim, dim) * v).collect();
        MatrixField { grid: f.grid.clone(), dim, values }
    }

    pub fn grid(&self) -> &Arc<LatticeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn at(&self, site: usize) -> &Mat {
        &self.values[site]
    }

    pub fn into_values(self) -> Vec<Mat> {
        self.values
    }

    pub fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        let values: Vec<Mat> = self.values.iter().map(f).collect();
        let dim = values.first().map_or(self.dim, |m| m.nrows());
        MatrixField { grid: self.grid.clone(), dim, values }
    }

    pub fn zip_with(&self, other: &MatrixField, f: impl Fn(&Mat, &Mat) -> Mat) -> Self {
        let values: Vec<Mat> = self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect();
        let dim = values.first().map_or(self.dim, |m| m.nrows());
        MatrixField { grid: self.grid.clone(), dim, values }
    }

    pub fn map_scalar(&self, f: impl Fn(&Mat) -> C64) -> ScalarField {
        ScalarField::from_vec(&self.grid, self.values.iter().map(f).collect())
    }

    pub fn trace(&self) -> ScalarField {
        self.map_scalar(|m| m.trace())
    }

    pub fn component(&self, a: usize, b: usize) -> Vec<C64> {
        self.values.iter().map(|m| m[(a, b)]).collect()
    }

    fn from_components(grid: &Arc<LatticeGrid>, dim: usize, comps: Vec<Vec<C64>>) -> Self {
        let values = (0..grid.sites())
            .map(|s| Mat::from_fn(dim, dim, |a, b| comps[a * dim + b][s]))
            .collect();
        MatrixField { grid: grid.clone(), dim, values }
    }

    fn componentwise(&self, op: impl Fn(&[C64]) -> Vec<C64>) -> Self {
        let d = self.dim;
        let comps = (0..d * d).map(|c| op(&self.component(c / d, c % d))).collect();
        Self::from_components(&self.grid, d, comps)
    }

    pub fn partial_z(&self, j: usize) -> Result<Self> {
        self.grid.check_axis(j)?;
        Ok(self.componentwise(|v| self.grid.dz(v, j)))
    }

    pub fn partial_zbar(&self, k: usize) -> Result<Self> {
        self.grid.check_axis(k)?;
        Ok(self.componentwise(|v| self.grid.dzbar(v, k)))
    }

    /// All first derivatives `(∂_j M, ∂_{k̄} M)` sharing one forward transform per component.
    pub fn gradients(&self) -> (Vec<MatrixField>, Vec<MatrixField>) {
        let d = self.dim;
        let n = self.grid.complex_dim();
        let mut dz: Vec<Vec<Vec<C64>>> = vec![Vec::with_capacity(d * d); n];
        let mut dzb: Vec<Vec<Vec<C64>>> = vec![Vec::with_capacity(d * d); n];
        for c in 0..d * d {
            let (gz, gzb) = self.grid.gradients(&self.component(c / d, c % d));
            for (j, v) in gz.into_iter().enumerate() {
                dz[j].push(v);
            }
            for (k, v) in gzb.into_iter().enumerate() {
                dzb[k].push(v);
            }
        }
        (
            dz.into_iter().map(|c| Self::from_components(&self.grid, d, c)).collect(),
            dzb.into_iter().map(|c| Self::from_components(&self.grid, d, c)).collect(),
        )
    }

    pub fn adjoint(&self) -> Self {
        self.map(|m| m.adjoint())
    }

    /// Max over sites of the Frobenius norm.
    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.values.iter().all(|m| crate::matfun::max_abs(&(m - m.adjoint())) <= tol)
    }
}

impl Add for &MatrixField {
    type Output = MatrixField;
    fn add(self, rhs: &MatrixField) -> MatrixField {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &MatrixField {
    type Output = MatrixField;
    fn sub(self, rhs: &MatrixField) -> MatrixField {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &MatrixField {
    type Output = MatrixField;
    fn mul(self, rhs: &MatrixField) -> MatrixField {
        self.zip_with(rhs, |a, b| a * b)
    }
}
