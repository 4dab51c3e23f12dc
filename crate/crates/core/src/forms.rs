//! Scalar differential forms on the lattice in the basis `dz^j, dz̄^j`.
//!
//! Generator `2j` is `dz^j`, generator `2j+1` is `dz̄^j`. A monomial is a bit
//! mask over generators taken in ascending order. The top monomial
//! `dz^0∧dz̄^0∧…` equals `(−2i)^n dx^0∧…∧dx^{2n−1}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::lattice::{LatticeGrid, ScalarField, C64};

#[derive(Clone, Debug)]
pub struct Form {
    grid: Arc<LatticeGrid>,
    terms: BTreeMap<u32, Vec<C64>>,
}

pub(crate) fn wedge_sign(a: u32, b: u32) -> Option<f64> {
    if a & b != 0 {
        return None;
    }
    // count pairs (i in a, j in b) with i > j
    let mut swaps = 0u32;
    let mut bits = b;
    while bits != 0 {
        let j = bits.trailing_zeros();
        swaps += (a >> (j + 1)).count_ones();
        bits &= bits - 1;
    }
    Some(if swaps % 2 == 0 { 1.0 } else { -1.0 })
}

pub fn dz(j: usize) -> u32 {
    1 << (2 * j)
}

pub fn dzbar(j: usize) -> u32 {
    1 << (2 * j + 1)
}

impl Form {
    pub fn zero(grid: &Arc<LatticeGrid>) -> Self {
        Form { grid: grid.clone(), terms: BTreeMap::new() }
    }

    pub fn function(f: &ScalarField) -> Self {
        let mut out = Self::zero(f.grid());
        out.terms.insert(0, f.values().to_vec());
        out
    }

    /// `f · dz^{I}` for a single monomial.
    pub fn monomial(f: &ScalarField, mask: u32) -> Self {
        let mut out = Self::zero(f.grid());
        out.terms.insert(mask, f.values().to_vec());
        out
    }

    pub fn grid(&self) -> &Arc<LatticeGrid> {
        &self.grid
    }

    pub fn coefficient(&self, mask: u32) -> Option<&[C64]> {
        self.terms.get(&mask).map(|v| v.as_slice())
    }

    pub fn add_term(&mut self, mask: u32, coeff: &[C64], scale: C64) {
        let sites = self.grid.sites();
        let entry = self.terms.entry(mask).or_insert_with(|| vec![C64::new(0.0, 0.0); sites]);
        entry.iter_mut().zip(coeff).for_each(|(e, c)| *e += scale * c);
    }

    pub fn add(&self, other: &Form) -> Form {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(*m, c, C64::new(1.0, 0.0));
        }
        out
    }

    pub fn scale(&self, s: C64) -> Form {
        let mut out = self.clone();
        out.terms.values_mut().for_each(|v| v.iter_mut().for_each(|x| *x *= s));
        out
    }

    pub fn sub(&self, other: &Form) -> Form {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn multiply(&self, f: &ScalarField) -> Form {
        let mut out = self.clone();
        out.terms.values_mut().for_each(|v| v.iter_mut().zip(f.values()).for_each(|(x, y)| *x *= y));
        out
    }

    pub fn wedge(&self, other: &Form) -> Form {
        let mut out = Form::zero(&self.grid);
        let sites = self.grid.sites();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                if let Some(sign) = wedge_sign(*ma, *mb) {
                    let prod: Vec<C64> = (0..sites).map(|s| ca[s] * cb[s] * sign).collect();
                    out.add_term(ma | mb, &prod, C64::new(1.0, 0.0));
                }
            }
        }
        out
    }

    fn differentiate(&self, holomorphic: bool) -> Form {
        let n = self.grid.complex_dim();
        let mut out = Form::zero(&self.grid);
        for (mask, c) in &self.terms {
            let spec = self.grid.spectrum(c);
            for j in 0..n {
                let gen = if holomorphic { dz(j) } else { dzbar(j) };
                let Some(sign) = wedge_sign(gen, *mask) else { continue };
                let sym = if holomorphic { self.grid.sym_z(j) } else { self.grid.sym_zbar(j) };
                let mut d: Vec<C64> = spec.iter().zip(sym).map(|(a, b)| a * b).collect();
                self.grid.fft_inverse(&mut d);
                out.add_term(gen | mask, &d, C64::new(sign, 0.0));
            }
        }
        out
    }

    /// ∂
    pub fn del(&self) -> Form {
        self.differentiate(true)
    }

    /// ∂̄
    pub fn delbar(&self) -> Form {
        self.differentiate(false)
    }

    pub fn d(&self) -> Form {
        self.del().add(&self.delbar())
    }

    /// Lebesgue density of the top-degree part.
    pub fn top_density(&self) -> ScalarField {
        let n = self.grid.complex_dim();
        let top = (1u32 << (2 * n)) - 1;
        let factor = C64::new(0.0, -2.0).powi(n as i32);
        match self.terms.get(&top) {
            Some(c) => ScalarField::from_vec(&self.grid, c.iter().map(|v| v * factor).collect()),
            None => ScalarField::constant(&self.grid, C64::new(0.0, 0.0)),
        }
    }

    /// `∫ form` over the torus (top-degree part only).
    pub fn integral(&self) -> C64 {
        let dens = self.top_density();
        dens.values().iter().sum::<C64>() * self.grid.cell_area()
    }

    /// Max over components and sites of the coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.terms.values().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.norm()))
    }
}
