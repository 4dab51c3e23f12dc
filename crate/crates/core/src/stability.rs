//! Analysis of divergent runs: normalized endomorphisms `h̃ = h / sup Tr h`,
//! their fractional powers, the weak projection `π = I − h̃^σ` and the slope
//! comparison that decides whether it destabilizes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bundle::{chern_weil_slope, d_double_prime, d_prime, d_prime_norm_sq, degree_slope, BundleMetricState, HiggsBundleData};
use crate::error::{Error, Result};
use crate::geometry::HermitianMetricField;
use crate::lattice::{Mat, MatrixField, ScalarField, C64};
use crate::matfun::{self, KFrame};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct StabilityConfig {
    pub sigmas: Vec<f64>,
    /// Number of trailing samples kept for extraction.
    pub samples: usize,
    /// Steps between samples.
    pub sample_every: usize,
    /// Eigenvalue threshold for snapping `π` to a projection.
    pub snap_threshold: f64,
    pub min_gap: f64,
    /// Gate on pre-snap residuals for a verdict.
    pub residual_gate: f64,
    pub slope_tol: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            sigmas: vec![0.5, 0.2, 0.1, 0.05],
            samples: 4,
            sample_every: 50,
            snap_threshold: 0.5,
            min_gap: 0.2,
            residual_gate: 1e-2,
            slope_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlowupSample {
    pub step: usize,
    pub t: f64,
    /// `sup Tr h`.
    pub trace_sup: f64,
    /// `h / sup Tr h`, self-adjoint for the reference metric.
    pub h_tilde: MatrixField,
    pub sigma_powers: Vec<(f64, MatrixField)>,
}

impl BlowupSample {
    pub fn power(&self, sigma: f64) -> Option<&MatrixField> {
        self.sigma_powers.iter().find(|(s, _)| *s == sigma).map(|(_, m)| m)
    }
}

/// Keeps the trailing states of a run, taken every `every` steps once
/// `sup Tr h` reaches `threshold`.
pub struct SampleCollector {
    every: usize,
    keep: usize,
    threshold: f64,
    buf: VecDeque<(usize, f64, BundleMetricState)>,
}

impl SampleCollector {
    pub fn new(every: usize, keep: usize, threshold: f64) -> Self {
        SampleCollector { every: every.max(1), keep: keep.max(1), threshold, buf: VecDeque::new() }
    }

    pub fn observe(&mut self, step: usize, t: f64, state: &BundleMetricState) {
        if step % self.every != 0 || trace_sup(state) < self.threshold {
            return;
        }
        if self.buf.len() == self.keep {
            self.buf.pop_front();
        }
        self.buf.push_back((step, t, state.clone()));
    }

    pub fn states(&self) -> impl Iterator<Item = &(usize, f64, BundleMetricState)> {
        self.buf.iter()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

fn trace_sup(state: &BundleMetricState) -> f64 {
    state.relative_symmetric().values().iter().map(|m| m.trace().re).fold(f64::NEG_INFINITY, f64::max)
}

/// `f(h)` for `h` self-adjoint with respect to `H0`, via the symmetrized form.
fn relative_fn(h0: &MatrixField, h_sym: &MatrixField, f: impl Fn(f64) -> f64 + Copy) -> MatrixField {
    h0.zip_with(h_sym, |k, hs| KFrame::new(k).unsymmetrize(&matfun::hermitian_fn(hs, f)))
}

/// Builds a sample from a state: normalizes by `sup Tr h` and takes the
/// requested powers.
pub fn blowup_sample(step: usize, t: f64, state: &BundleMetricState, sigmas: &[f64]) -> Result<BlowupSample> {
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(Error::Config(format!("sigma must lie in (0, 1], got {bad}")));
    }
    // h = H0⁻¹H is H0-self-adjoint exactly when H is Hermitian
    let defect = state.metric().map(|h| h - h.adjoint()).max_norm();
    if defect > 1e-10 * state.metric().max_norm() {
        return Err(Error::Precondition(format!("endomorphism not self-adjoint (defect {defect:e})")));
    }
    let sym = state.relative_symmetric();
    let m = sym.values().iter().map(|x| x.trace().re).fold(f64::NEG_INFINITY, f64::max);
    let sym_tilde = sym.map(|x| x / C64::new(m, 0.0));
    let h0 = state.reference();
    let h_tilde = relative_fn(h0, &sym_tilde, |v| v);
    let sigma_powers = sigmas.iter().map(|&s| (s, relative_fn(h0, &sym_tilde, move |v| v.max(0.0).powf(s)))).collect();
    Ok(BlowupSample { step, t, trace_sup: m, h_tilde, sigma_powers })
}

pub fn collect_blowup_samples(collector: &SampleCollector, sigmas: &[f64]) -> Result<Vec<BlowupSample>> {
    collector.states().map(|(step, t, st)| blowup_sample(*step, *t, st, sigmas)).collect()
}

/// Pointwise `|α|² = g^{jk̄}(Tr(α_j α_k^{†H}) + Tr(β_k β_j^{†H}))`.
fn one_form_density(alpha: &[MatrixField], beta: &[MatrixField], h: &MatrixField, g: &HermitianMetricField) -> Vec<f64> {
    let n = g.complex_dim();
    (0..g.grid().sites())
        .map(|s| {
            let gi = g.g_inv().at(s);
            let hm = h.at(s);
            let hi = matfun::inverse(hm);
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..n {
                for k in 0..n {
                    let ak = matfun::adjoint_wrt(alpha[k].at(s), hm, &hi);
                    let bj = matfun::adjoint_wrt(beta[j].at(s), hm, &hi);
                    acc += gi[(j, k)] * ((alpha[j].at(s) * ak).trace() + (beta[k].at(s) * bj).trace());
                }
            }
            acc.re.max(0.0)
        })
        .collect()
}

fn integrate_real(g: &HermitianMetricField, vals: Vec<f64>) -> f64 {
    let f = ScalarField::new(g.grid().clone(), vals.into_iter().map(|v| C64::new(v, 0.0)).collect()).expect("grid-sized field");
    g.integrate(&f).re
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SigmaInequality {
    pub sigma: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl SigmaInequality {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// `∫|h̃^{−σ/2} D̂′h̃^σ|² ≤ C ∫Tr h̃^σ` with `C` supplied by the caller
/// (`sup|ΛF_θ| + sup|ΛF̂_θ|` over the run).
pub fn sigma_inequality_check(
    sample: &BlowupSample,
    sigma: f64,
    state0: &BundleMetricState,
    g: &HermitianMetricField,
    constant: f64,
) -> Result<SigmaInequality> {
    let p = sample
        .power(sigma)
        .ok_or_else(|| Error::Config(format!("sample has no power for sigma = {sigma}")))?;
    let h0 = state0.metric();
    let half_inv = h0.zip_with(&sample.h_tilde, |k, h| {
        let f = KFrame::new(k);
        f.unsymmetrize(&matfun::hermitian_pow(&f.symmetrize(h), -sigma / 2.0))
    });
    let (a, b) = d_prime(p, state0);
    let a: Vec<MatrixField> = a.iter().map(|x| &half_inv * x).collect();
    let b: Vec<MatrixField> = b.iter().map(|x| &half_inv * x).collect();
    let lhs = integrate_real(g, one_form_density(&a, &b, h0, g));
    let rhs = constant * g.integrate(&p.trace()).re;
    Ok(SigmaInequality { sigma, lhs, rhs })
}

/// `sup Tr h̃ / ∫Tr h̃`.
pub fn sup_vs_l1_check(sample: &BlowupSample, g: &HermitianMetricField) -> f64 {
    let tr = sample.h_tilde.trace();
    let sup = tr.values().iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
    sup / g.integrate(&tr).re
}

/// `(1/σ) ∫ Tr h̃^σ`.
pub fn sigma_trace(sample: &BlowupSample, sigma: f64, g: &HermitianMetricField) -> Option<f64> {
    sample.power(sigma).map(|p| g.integrate(&p.trace()).re / sigma)
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ProjectionResiduals {
    /// `max |π² − π|`.
    pub idempotent: f64,
    /// `max |π − π^{†H0}|`.
    pub self_adjoint: f64,
    /// `‖(I − π) D″π‖_{L¹}`.
    pub weak_hol: f64,
    /// `max |(I − π) θ π|`.
    pub theta_invariance: f64,
}

impl ProjectionResiduals {
    pub fn max(&self) -> f64 {
        self.idempotent.max(self.self_adjoint).max(self.weak_hol).max(self.theta_invariance)
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionCandidate {
    pub pi: MatrixField,
    pub residuals: ProjectionResiduals,
    pub rank_estimate: usize,
    pub sigma: f64,
    pub t: f64,
    pub gap: f64,
    /// Rank estimates over the (sample, σ) grid; `None` where no gap was found.
    pub rank_grid: Vec<Vec<Option<usize>>>,
}

/// Snaps `I − h̃^σ` to an `H0`-self-adjoint projection. Returns the projection,
/// the spectral gap between snapped clusters and the rank.
fn snap(raw: &MatrixField, h0: &MatrixField, threshold: f64) -> (MatrixField, f64, usize) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let vals = h0
        .zip_with(raw, |k, p| {
            let f = KFrame::new(k);
            let (ev, vecs) = matfun::hermitian_eigen(&f.symmetrize(p));
            let d: Vec<C64> = ev.iter().map(|&v| C64::new(if v > threshold { 1.0 } else { 0.0 }, 0.0)).collect();
            let sym = &vecs * Mat::from_diagonal(&nalgebra::DVector::from_vec(d)) * vecs.adjoint();
            f.unsymmetrize(&matfun::herm(&sym))
        })
        .into_values();
    for (k, p) in h0.values().iter().zip(raw.values()) {
        let (ev, _) = matfun::hermitian_eigen(&KFrame::new(k).symmetrize(p));
        for v in ev {
            if v > threshold {
                hi = hi.min(v);
            } else {
                lo = lo.max(v);
            }
        }
    }
    let pi = MatrixField::new(raw.grid().clone(), raw.dim(), vals).expect("grid-sized field");
    let rank = pi.trace().mean().re.round().max(0.0) as usize;
    let gap = if hi.is_finite() && lo.is_finite() { hi - lo } else { f64::INFINITY };
    (pi, gap, rank)
}

fn residuals(raw: &MatrixField, state0: &BundleMetricState, bundle: &HiggsBundleData, g: &HermitianMetricField) -> ProjectionResiduals {
    let r = raw.dim();
    let h0 = state0.metric();
    let id = Mat::identity(r, r);
    let idempotent = raw.map(|p| p * p - p).max_norm();
    let self_adjoint = h0.zip_with(raw, |k, p| p - matfun::adjoint_wrt(p, k, &matfun::inverse(k))).max_norm();
    let comp = raw.map(|p| &id - p);
    let (a, b) = d_double_prime(raw, bundle);
    let a: Vec<MatrixField> = a.iter().map(|x| &comp * x).collect();
    let b: Vec<MatrixField> = b.iter().map(|x| &comp * x).collect();
    let weak_hol = integrate_real(g, one_form_density(&a, &b, h0, g).into_iter().map(f64::sqrt).collect());
    let theta_invariance = bundle
        .theta()
        .iter()
        .map(|t| (&(&comp * t) * raw).max_norm())
        .fold(0.0, f64::max);
    ProjectionResiduals { idempotent, self_adjoint, weak_hol, theta_invariance }
}

/// `π = I − h̃^σ` at the latest sample and smallest σ, snapped to a projection.
/// Fails when the spectrum straddles the threshold or the rank is not stable
/// over the (sample, σ) grid.
pub fn extract_projection(
    samples: &[BlowupSample],
    state0: &BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    config: &StabilityConfig,
) -> Result<ProjectionCandidate> {
    if samples.len() < 2 || config.sigmas.len() < 2 {
        return Err(Error::Precondition(format!(
            "projection needs at least 2 samples and 2 sigma values (have {} and {})",
            samples.len(),
            config.sigmas.len()
        )));
    }
    let r = bundle.rank();
    let h0 = state0.metric();
    let id = Mat::identity(r, r);
    let mut rank_grid = Vec::with_capacity(samples.len());
    for s in samples {
        let mut row = Vec::with_capacity(config.sigmas.len());
        for &sigma in &config.sigmas {
            let p = s.power(sigma).ok_or_else(|| Error::Config(format!("sample has no power for sigma = {sigma}")))?;
            let (_, gap, rank) = snap(&p.map(|m| &id - m), h0, config.snap_threshold);
            row.push((gap >= config.min_gap).then_some(rank));
        }
        rank_grid.push(row);
    }
    let last = samples.last().unwrap();
    let sigma = config.sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    let raw = last.power(sigma).unwrap().map(|m| &id - m);
    let (pi, gap, rank_estimate) = snap(&raw, h0, config.snap_threshold);
    if gap < config.min_gap {
        return Err(Error::NoSpectralGap(format!("gap {gap:.3} below {} at sigma = {sigma}", config.min_gap)));
    }
    if let Some(bad) = rank_grid.iter().flatten().find(|v| **v != Some(rank_estimate)) {
        return Err(Error::NoSpectralGap(format!("rank estimate not stable over the sample grid ({bad:?} vs {rank_estimate})")));
    }
    let residuals = residuals(&raw, state0, bundle, g);
    Ok(ProjectionCandidate { pi, residuals, rank_estimate, sigma, t: last.t, gap, rank_grid })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Verdict {
    pub mu_sub: f64,
    pub mu_e: f64,
    pub destabilizing: bool,
    /// `‖D̂′π‖²`.
    pub inequality_lhs: f64,
    /// `∫Tr((ΛF̂_θ − μI)π)`.
    pub inequality_rhs: f64,
}

pub fn destabilization_verdict(
    candidate: &ProjectionCandidate,
    state0: &BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    config: &StabilityConfig,
) -> Result<Verdict> {
    let r = bundle.rank();
    if candidate.rank_estimate == 0 || candidate.rank_estimate >= r {
        return Err(Error::ImproperProjection { rank: candidate.rank_estimate, total: r });
    }
    if candidate.residuals.max() > config.residual_gate {
        return Err(Error::Precondition(format!(
            "projection residuals {:?} exceed gate {}",
            candidate.residuals, config.residual_gate
        )));
    }
    let mu_e = degree_slope(state0, bundle, g)?.mu;
    let mu_sub = chern_weil_slope(&candidate.pi, state0, bundle, g)?;
    let inequality_lhs = d_prime_norm_sq(&candidate.pi, state0, g);
    let shifted = state0.lambda_f_theta().map(|l| l - Mat::identity(r, r) * C64::new(mu_e, 0.0));
    let inequality_rhs = g.integrate(&(&shifted * &candidate.pi).trace()).re;
    Ok(Verdict { mu_sub, mu_e, destabilizing: mu_sub >= mu_e - config.slope_tol, inequality_lhs, inequality_rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_flow_with, FlowConfig, StopReason};
    use crate::geometry::{build_metric, MetricSpec};
    use crate::lattice::LatticeGrid;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn flat(n: usize, pts: usize) -> HermitianMetricField {
        build_metric(&LatticeGrid::unit(n, pts).unwrap(), &MetricSpec::Flat).unwrap()
    }

    fn diag_state(g: &HermitianMetricField, bundle: &HiggsBundleData, d: [f64; 2]) -> BundleMetricState {
        let h = MatrixField::constant(g.grid(), &Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(d[0]), c(d[1])])));
        BundleMetricState::new(MatrixField::identity(g.grid(), 2), h, bundle, g).unwrap()
    }

    #[test]
    fn identity_sample_powers_are_identity() {
        let g = flat(1, 8);
        let b = HiggsBundleData::trivial(g.grid(), 2);
        let s = blowup_sample(0, 0.0, &diag_state(&g, &b, [0.5, 0.5]), &[0.5, 0.1]).unwrap();
        // h̃ = I/2 after normalization by sup Tr h = 1
        assert!((s.trace_sup - 1.0).abs() < 1e-15);
        let p = s.power(0.5).unwrap();
        assert!((p.at(0)[(0, 0)].re - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((sup_vs_l1_check(&s, &g) - 1.0).abs() < 1e-14);
        assert!(blowup_sample(0, 0.0, &diag_state(&g, &b, [1.0, 1.0]), &[1.5]).is_err());
    }

    #[test]
    fn diagonal_power_is_exact() {
        let g = flat(1, 8);
        let b = HiggsBundleData::trivial(g.grid(), 2);
        let eps = 1e-6;
        let s = blowup_sample(0, 0.0, &diag_state(&g, &b, [1.0 / (1.0 + eps), eps / (1.0 + eps)]), &[0.25]).unwrap();
        let p = s.power(0.25).unwrap().at(3).clone();
        assert!((p[(0, 0)].re - (1.0 / (1.0 + eps)).powf(0.25)).abs() < 1e-15);
        assert!((p[(1, 1)].re - (eps / (1.0 + eps)).powf(0.25)).abs() < 1e-15);
        assert_eq!(p[(0, 1)], c(0.0));
    }

    #[test]
    fn sigma_powers_invert_and_bound_spectrum() {
        let g = flat(1, 8);
        let b = HiggsBundleData::trivial(g.grid(), 2);
        let h = MatrixField::from_fn(g.grid(), 2, |x| {
            let a = 0.5 * (2.0 * PI * x[0]).cos();
            Mat::from_row_slice(2, 2, &[c(2.0 + a), C64::new(0.3, 0.2), C64::new(0.3, -0.2), c(1.0)])
        });
        let h0 = MatrixField::from_fn(g.grid(), 2, |x| {
            Mat::from_row_slice(2, 2, &[c(1.0), C64::new(0.1 * (2.0 * PI * x[1]).sin(), 0.0), C64::new(0.1 * (2.0 * PI * x[1]).sin(), 0.0), c(1.5)])
        });
        let st = BundleMetricState::new(h0.clone(), h, &b, &g).unwrap();
        let s = blowup_sample(0, 0.0, &st, &[0.5, 0.25]).unwrap();
        let sup = s.h_tilde.trace().values().iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
        assert!((sup - 1.0).abs() < 1e-10);
        for (sigma, p) in &s.sigma_powers {
            let back = h0.zip_with(p, |k, m| {
                let f = KFrame::new(k);
                f.unsymmetrize(&matfun::hermitian_pow(&f.symmetrize(m), 1.0 / sigma))
            });
            assert!((&back - &s.h_tilde).max_norm() < 1e-8);
        }
        for (k, m) in h0.values().iter().zip(s.h_tilde.values()) {
            let (ev, _) = matfun::hermitian_eigen(&KFrame::new(k).symmetrize(m));
            assert!(ev[0] > 0.0 && ev[1] <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn sigma_inequality_constant_and_line_bundle_oracle() {
        let g = flat(1, 32);
        let b = HiggsBundleData::trivial(g.grid(), 1);
        let st0 = BundleMetricState::at_reference(MatrixField::identity(g.grid(), 1), &b, &g).unwrap();
        let cst = BundleMetricState::new(MatrixField::identity(g.grid(), 1), MatrixField::identity(g.grid(), 1).map(|m| m * c(3.0)), &b, &g).unwrap();
        let s = blowup_sample(0, 0.0, &cst, &[1.0]).unwrap();
        assert_eq!(sigma_inequality_check(&s, 1.0, &st0, &g, 1.0).unwrap().lhs, 0.0);

        // h = e^{f}: lhs = ∫ h̃ |∂_z f|², rhs = C ∫ h̃ with h̃ = e^{f − max f}
        let f = |x: &[f64]| 0.4 * (2.0 * PI * x[0]).sin() + 0.2 * (2.0 * PI * x[1]).cos();
        let fz = |x: &[f64]| C64::new(0.4 * PI * (2.0 * PI * x[0]).cos(), 0.2 * PI * (2.0 * PI * x[1]).sin());
        let h = MatrixField::from_fn(g.grid(), 1, |x| Mat::from_element(1, 1, c(f(x).exp())));
        let st = BundleMetricState::new(MatrixField::identity(g.grid(), 1), h, &b, &g).unwrap();
        let s = blowup_sample(0, 0.0, &st, &[1.0]).unwrap();
        let chk = sigma_inequality_check(&s, 1.0, &st0, &g, 2.0).unwrap();
        let grid = g.grid();
        let m = (0..grid.sites()).map(|i| f(&grid.coords(i))).fold(f64::NEG_INFINITY, f64::max);
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for i in 0..grid.sites() {
            let x = grid.coords(i);
            let ht = (f(&x) - m).exp();
            lhs += ht * fz(&x).norm_sqr() * grid.cell_area();
            rhs += 2.0 * ht * grid.cell_area();
        }
        assert!((chk.lhs - lhs).abs() < 1e-10 * lhs, "{} {lhs}", chk.lhs);
        assert!((chk.rhs - rhs).abs() < 1e-12 * rhs);
    }

    #[test]
    fn sup_ratio_grows_with_concentration() {
        let g = flat(1, 32);
        let b = HiggsBundleData::trivial(g.grid(), 1);
        let ratio = |w: f64| {
            let h = MatrixField::from_fn(g.grid(), 1, |x| {
                let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
                Mat::from_element(1, 1, c(1e-3 + (-r2 / (w * w)).exp()))
            });
            let st = BundleMetricState::new(MatrixField::identity(g.grid(), 1), h, &b, &g).unwrap();
            sup_vs_l1_check(&blowup_sample(0, 0.0, &st, &[1.0]).unwrap(), &g)
        };
        assert!(ratio(0.1) > ratio(0.2));
    }

    #[test]
    fn projection_refuses_without_samples() {
        let g = flat(1, 8);
        let b = HiggsBundleData::trivial(g.grid(), 2);
        let st = diag_state(&g, &b, [1.0, 1.0]);
        let s = blowup_sample(0, 0.0, &st, &[0.5, 0.1]).unwrap();
        assert!(matches!(extract_projection(&[s], &st, &b, &g, &StabilityConfig::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn straddling_spectrum_has_no_gap() {
        let g = flat(1, 8);
        let b = HiggsBundleData::trivial(g.grid(), 2);
        // eigenvalues of I − h̃^σ cluster near 0.5
        let st = diag_state(&g, &b, [0.58, 0.42]);
        let cfg = StabilityConfig { sigmas: vec![1.0, 0.99], ..Default::default() };
        let s: Vec<_> = (0..2).map(|i| blowup_sample(i, i as f64, &st, &cfg.sigmas).unwrap()).collect();
        assert!(matches!(extract_projection(&s, &st, &b, &g, &cfg), Err(Error::NoSpectralGap(_))));
    }

    #[test]
    fn split_bundle_blowup_destabilizes() {
        let g = flat(1, 8);
        let grid = g.grid();
        let b = HiggsBundleData::new(grid, 2, vec![vec![1], vec![-1]], vec![MatrixField::zeros(grid, 2)]).unwrap();
        let k = MatrixField::from_fn(grid, 2, |x| {
            let a = 0.1 * (2.0 * PI * x[0]).cos();
            Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(a.exp()), c((-a).exp())]))
        });
        // uniform reference, perturbed start: the limit of h is uniform too
        let st0 = BundleMetricState::at_reference(MatrixField::identity(grid, 2), &b, &g).unwrap();
        let start = BundleMetricState::new(MatrixField::identity(grid, 2), k, &b, &g).unwrap();
        let mu = degree_slope(&st0, &b, &g).unwrap().mu;
        assert!(mu.abs() < 1e-12);
        let cfg = StabilityConfig::default();
        let flow = FlowConfig {
            dt: Some(2e-3),
            max_steps: 40_000,
            renormalize_det: true,
            record_every: 100,
            track_functional: false,
            stop_trace: Some(1e62),
            ..Default::default()
        };
        let mut col = SampleCollector::new(cfg.sample_every, cfg.samples, 2e3);
        let run = run_flow_with(start, &b, &g, mu, &flow, (0, 0.0), |s, t, st| {
            col.observe(s, t, st);
            Ok(())
        })
        .unwrap();
        assert_eq!(run.stop, StopReason::Blowup);
        assert!(run.blowup);
        let samples = collect_blowup_samples(&col, &cfg.sigmas).unwrap();
        assert_eq!(samples.len(), 4);
        for s in &samples {
            let emin = s.h_tilde.values().iter().map(|m| m[(0, 0)].re.min(m[(1, 1)].re)).fold(f64::INFINITY, f64::min);
            assert!(emin <= 1e-5);
            let c0 = 2.0 * run.diagnostics.rows[0].sup_lf;
            for &sigma in &[1.0, 0.5, 0.1] {
                let sample = blowup_sample(s.step, s.t, &col.states().find(|x| x.0 == s.step).unwrap().2, &[sigma]).unwrap();
                assert!(sigma_inequality_check(&sample, sigma, &st0, &g, c0).unwrap().holds());
            }
        }
        let cand = extract_projection(&samples, &st0, &b, &g, &cfg).unwrap();
        assert_eq!(cand.rank_estimate, 1);
        assert!(cand.residuals.max() <= 1e-6, "{:?}", cand.residuals);
        assert!((cand.pi.at(0)[(0, 0)].re - 1.0).abs() < 1e-15 && cand.pi.at(0)[(1, 1)].re.abs() < 1e-15);
        let v = destabilization_verdict(&cand, &st0, &b, &g, &cfg).unwrap();
        assert!(v.destabilizing);
        let l1 = HiggsBundleData::new(grid, 1, vec![vec![1]], vec![MatrixField::zeros(grid, 1)]).unwrap();
        let l1_state = BundleMetricState::at_reference(MatrixField::identity(grid, 1), &l1, &g).unwrap();
        let deg1 = degree_slope(&l1_state, &l1, &g).unwrap().deg;
        assert!(v.mu_sub >= v.mu_e + 0.5 * deg1, "{v:?}");
        assert!(v.inequality_lhs <= v.inequality_rhs + 1e-9, "{v:?}");
    }

    #[test]
    fn nilpotent_run_projects_onto_invariant_line() {
        // semistable: Tr h grows like sqrt(t), so only moderate thresholds and σ are reachable
        let g = flat(1, 8);
        let grid = g.grid();
        let th = MatrixField::constant(grid, &Mat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]));
        let b = HiggsBundleData::new(grid, 2, Vec::new(), vec![th]).unwrap();
        let st0 = BundleMetricState::at_reference(MatrixField::identity(grid, 2), &b, &g).unwrap();
        let cfg = StabilityConfig { sigmas: vec![1.0, 0.5], sample_every: 100, ..Default::default() };
        let flow = FlowConfig { dt: Some(1e-2), max_steps: 60_000, record_every: 100, track_functional: false, blowup_factor: 5.0, stop_trace: Some(14.0), ..Default::default() };
        let mut col = SampleCollector::new(cfg.sample_every, cfg.samples, 10.0);
        let run = run_flow_with(st0.clone(), &b, &g, 0.0, &flow, (0, 0.0), |s, t, st| {
            col.observe(s, t, st);
            Ok(())
        })
        .unwrap();
        assert!(run.blowup);
        let samples = collect_blowup_samples(&col, &cfg.sigmas).unwrap();
        let cand = extract_projection(&samples, &st0, &b, &g, &cfg).unwrap();
        assert_eq!(cand.rank_estimate, 1);
        assert!(cand.residuals.theta_invariance <= 1e-3, "{:?}", cand.residuals);
        assert!((cand.pi.at(5)[(0, 0)].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_projection_is_refused() {
        let g = flat(1, 8);
        let b = HiggsBundleData::trivial(g.grid(), 2);
        let st = diag_state(&g, &b, [1.0, 1.0]);
        let cand = ProjectionCandidate {
            pi: MatrixField::identity(g.grid(), 2),
            residuals: ProjectionResiduals::default(),
            rank_estimate: 2,
            sigma: 0.05,
            t: 0.0,
            gap: 1.0,
            rank_grid: Vec::new(),
        };
        assert!(matches!(destabilization_verdict(&cand, &st, &b, &g, &StabilityConfig::default()), Err(Error::ImproperProjection { .. })));
    }
}
