//! Donaldson heat flow `h⁻¹ḣ = −(ΛF_θ − μI)`, its diagnostics, the
//! Donaldson functional along `h_u = e^{us}`, and finite-difference checks of
//! the variational identities.

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::bundle::{d_prime, d_prime_norm_sq, laplacian_d, BundleMetricState, HiggsBundleData};
use crate::error::{Error, Result};
use crate::geometry::HermitianMetricField;
use crate::lattice::{Mat, MatrixField, ScalarField, C64};
use crate::matfun::{self, KFrame};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FlowConfig {
    /// Time step; `None` picks [`default_dt`].
    pub dt: Option<f64>,
    pub max_steps: usize,
    /// Stop once `Y ≤ stop_y`; `None` uses 1e−10 for n = 1 and 1e−8 for n = 2.
    pub stop_y: Option<f64>,
    pub renormalize_det: bool,
    pub functional_quadrature_nodes: usize,
    pub record_every: usize,
    /// Blowup when `sup Tr h` exceeds this times the rank.
    pub blowup_factor: f64,
    pub stop_on_blowup: bool,
    /// Keep flowing after blowup until `sup Tr h` reaches this value.
    pub stop_trace: Option<f64>,
    pub max_halvings: usize,
    /// Evaluate the Donaldson functional on recorded rows (costly).
    pub track_functional: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: None,
            max_steps: 10_000,
            stop_y: None,
            renormalize_det: false,
            functional_quadrature_nodes: 8,
            record_every: 1,
            blowup_factor: 1e3,
            stop_on_blowup: true,
            stop_trace: None,
            max_halvings: 5,
            track_functional: true,
        }
    }
}

impl FlowConfig {
    pub fn stop_y_for(&self, complex_dim: usize) -> f64 {
        self.stop_y.unwrap_or(if complex_dim == 1 { 1e-10 } else { 1e-8 })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiagnosticRow {
    pub step: usize,
    pub t: f64,
    pub y: f64,
    /// Donaldson functional; NaN when not tracked.
    pub m: f64,
    pub sup_lf: f64,
    pub logdet_max: f64,
    pub eigmin: f64,
    pub eigmax: f64,
    pub dprime_norm: f64,
    pub trace_h_sup: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct FlowDiagnostics {
    pub rows: Vec<DiagnosticRow>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    Blowup,
    MaxSteps,
}

#[derive(Clone, Debug)]
pub struct FlowRun {
    pub state: BundleMetricState,
    pub diagnostics: FlowDiagnostics,
    pub steps: usize,
    pub t: f64,
    pub dt: f64,
    pub blowup: bool,
    pub stop: StopReason,
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn unit_interval_rule(nodes: usize) -> Result<Vec<(f64, f64)>> {
    let rule = GaussLegendre::new(nodes).map_err(|_| Error::Config(format!("quadrature needs at least 2 nodes, got {nodes}")))?;
    Ok(rule.as_node_weight_pairs().iter().map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect())
}

/// `sqrt(Tr(X X^{†H}))` at each site.
fn h_norm(x: &Mat, h: &Mat) -> f64 {
    let f = KFrame::new(h);
    let sym = &f.sqrt * x * &f.inv_sqrt;
    sym.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn velocity(state: &BundleMetricState, mu: f64) -> MatrixField {
    let r = state.metric().dim();
    state.lambda_f_theta().map(|l| l - Mat::identity(r, r) * C64::new(mu, 0.0))
}

/// Explicit step size heuristic: `1e−3/(1 + sup|ΛF̂_θ|)`, capped by the
/// inverse of the largest symbol of the linearized operator.
pub fn default_dt(state: &BundleMetricState, bundle: &HiggsBundleData, g: &HermitianMetricField) -> f64 {
    let sup = sup_lambda_f(state);
    let theta_sq = bundle
        .theta()
        .iter()
        .flat_map(|t| t.values().iter())
        .map(|m| m.iter().map(|v| v.norm_sqr()).sum::<f64>())
        .fold(0.0, f64::max);
    let ginv_max = g
        .g_inv()
        .values()
        .iter()
        .map(|m| matfun::hermitian_eigen(m).0.last().copied().unwrap_or(0.0))
        .fold(0.0, f64::max);
    let lam = g.max_laplacian_symbol() + 4.0 * theta_sq * ginv_max * g.complex_dim() as f64;
    (1e-3 / (1.0 + sup)).min(1.0 / lam)
}

pub fn sup_lambda_f(state: &BundleMetricState) -> f64 {
    state
        .lambda_f_theta()
        .values()
        .iter()
        .zip(state.metric().values())
        .map(|(l, h)| h_norm(l, h))
        .fold(0.0, f64::max)
}

/// `H ← H exp(−dt (ΛF_θ − μI))`, written as `H^{1/2} exp(−dt W) H^{1/2}` with
/// `W = H^{1/2} V H^{-1/2}` Hermitian.
pub fn flow_step(
    state: &BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    mu: f64,
    dt: f64,
    renormalize_det: bool,
) -> Result<BundleMetricState> {
    let r = bundle.rank();
    let v = velocity(state, mu);
    let mut out = Vec::with_capacity(v.values().len());
    for ((h, vel), h0) in state.metric().values().iter().zip(v.values()).zip(state.reference().values()) {
        let f = KFrame::new(h);
        let w = matfun::herm(&(&f.sqrt * vel * &f.inv_sqrt));
        let mut next = matfun::herm(&(&f.sqrt * matfun::hermitian_exp(&(w * C64::new(-dt, 0.0))) * &f.sqrt));
        if renormalize_det {
            let det_h = next.determinant().re / h0.determinant().re;
            next *= C64::new(det_h.powf(-1.0 / r as f64), 0.0);
        }
        if next.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::StepFailed("non-finite metric after step".into()));
        }
        out.push(next);
    }
    let h = MatrixField::from_vec(state.metric().grid(), r, out);
    BundleMetricState::new(state.reference().clone(), h, bundle, g).map_err(|e| match e {
        Error::BundleMetricNotPositive { min_eig } => Error::StepFailed(format!("positivity lost (min eigenvalue {min_eig:e})")),
        other => other,
    })
}

/// `H_u = H0 e^{us}` for `s = log h`, stored in symmetrized form.
pub struct LogPath {
    sqrt_h0: Vec<Mat>,
    log_sym: Vec<Mat>,
    grid: std::sync::Arc<crate::lattice::LatticeGrid>,
    rank: usize,
}

impl LogPath {
    pub fn new(state: &BundleMetricState) -> Self {
        let mut sqrt_h0 = Vec::new();
        let mut log_sym = Vec::new();
        for (h0, h) in state.reference().values().iter().zip(state.metric().values()) {
            let f = KFrame::new(h0);
            log_sym.push(matfun::hermitian_log(&matfun::herm(&(&f.inv_sqrt * h * &f.inv_sqrt))));
            sqrt_h0.push(f.sqrt);
        }
        LogPath { sqrt_h0, log_sym, grid: state.metric().grid().clone(), rank: state.metric().dim() }
    }

    pub fn metric_at(&self, u: f64) -> MatrixField {
        let vals = self
            .sqrt_h0
            .iter()
            .zip(&self.log_sym)
            .map(|(q, l)| matfun::herm(&(q * matfun::hermitian_exp(&(l * C64::new(u, 0.0))) * q)))
            .collect();
        MatrixField::from_vec(&self.grid, self.rank, vals)
    }

    /// `s = H0^{-1/2} log(H0^{-1/2} H H0^{-1/2}) H0^{1/2}`.
    pub fn log_relative(&self) -> MatrixField {
        let vals = self
            .sqrt_h0
            .iter()
            .zip(&self.log_sym)
            .map(|(q, l)| matfun::inverse(q) * l * q)
            .collect();
        MatrixField::from_vec(&self.grid, self.rank, vals)
    }
}

fn checked_real(v: C64, what: &str) -> Result<f64> {
    let scale = v.re.abs().max(1.0);
    if v.im.abs() > 1e-8 * scale {
        log::warn!("{what} has imaginary part {:e}", v.im);
        return Err(Error::ImaginaryPart(v.im));
    }
    Ok(v.re)
}

/// `M = ∫₀¹ ∫ Tr(ΛF_{θ,u} s) ω^n du − μ ∫ log det h ω^n` along `H_u = H0 e^{us}`.
pub fn donaldson_functional(
    state: &BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    mu: f64,
    nodes: usize,
) -> Result<f64> {
    let rule = unit_interval_rule(nodes)?;
    let path = LogPath::new(state);
    let s = path.log_relative();
    let mut total = C64::new(0.0, 0.0);
    for (u, w) in rule {
        let st = BundleMetricState::new(state.reference().clone(), path.metric_at(u), bundle, g)?;
        let integrand = st.lambda_f_theta().zip_with(&s, |l, sv| l * sv).trace();
        total += g.integrate(&integrand) * w;
    }
    total -= g.integrate(&s.trace()) * mu;
    checked_real(total, "Donaldson functional")
}

/// `Y = ‖ΛF_θ − μI‖²_{L²}`.
pub fn y_functional(state: &BundleMetricState, g: &HermitianMetricField, mu: f64) -> f64 {
    let v = velocity(state, mu);
    g.integrate(&v.map_scalar(|m| (m * m).trace())).re
}

pub fn diagnostics_row(
    state: &BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    mu: f64,
    step: usize,
    t: f64,
    nodes: Option<usize>,
) -> Result<DiagnosticRow> {
    let mut eigmin = f64::INFINITY;
    let mut eigmax = 0.0f64;
    let mut logdet_max = 0.0f64;
    let mut trace_h_sup = 0.0f64;
    for m in state.relative_symmetric().values() {
        let (vals, _) = matfun::hermitian_eigen(m);
        eigmin = eigmin.min(vals[0]);
        eigmax = eigmax.max(*vals.last().unwrap());
        logdet_max = logdet_max.max(vals.iter().map(|v| v.ln()).sum::<f64>().abs());
        trace_h_sup = trace_h_sup.max(vals.iter().sum());
    }
    let m = match nodes {
        Some(k) => donaldson_functional(state, bundle, g, mu, k)?,
        None => f64::NAN,
    };
    Ok(DiagnosticRow {
        step,
        t,
        y: y_functional(state, g, mu),
        m,
        sup_lf: sup_lambda_f(state),
        logdet_max,
        eigmin,
        eigmax,
        dprime_norm: d_prime_norm_sq(state.lambda_f_theta(), state, g),
        trace_h_sup,
    })
}

/// Runs the flow from `state0` until `Y ≤ stop_y`, blowup or `max_steps`.
/// `observer` sees every accepted state (including the initial one) with its step and time.
pub fn run_flow_with(
    state0: BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    mu: f64,
    config: &FlowConfig,
    start: (usize, f64),
    mut observer: impl FnMut(usize, f64, &BundleMetricState) -> Result<()>,
) -> Result<FlowRun> {
    let r = bundle.rank();
    let mut dt = config.dt.unwrap_or_else(|| default_dt(&state0, bundle, g));
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let heuristic = dt * (sup_lambda_f(&state0) + mu.abs());
    if heuristic >= 0.5 {
        return Err(Error::Precondition(format!("dt·(sup|ΛF_θ| + |μ|) = {heuristic:.3} ≥ 0.5; reduce dt")));
    }
    let stop_y = config.stop_y_for(g.complex_dim());
    let threshold = config.blowup_factor * r as f64;
    let nodes = config.track_functional.then_some(config.functional_quadrature_nodes);
    let record_every = config.record_every.max(1);
    let (mut step, mut t) = start;
    let mut state = state0;
    let mut rows = Vec::new();
    let mut blowup = false;
    let stop;
    let stop_trace = config.stop_trace.unwrap_or(threshold);
    let mut last_trace = 0.0;
    let mut last_recorded = None;
    observer(step, t, &state)?;
    loop {
        let due = (step - start.0) % record_every == 0;
        let y = if due {
            let row = diagnostics_row(&state, bundle, g, mu, step, t, nodes)?;
            if ![row.y, row.sup_lf, row.logdet_max, row.eigmin, row.eigmax, row.dprime_norm, row.trace_h_sup].iter().all(|v| v.is_finite()) {
                return Err(Error::StepFailed(format!("non-finite diagnostics at step {step}")));
            }
            rows.push(row);
            last_recorded = Some(step);
            if row.trace_h_sup >= threshold {
                blowup = true;
            }
            last_trace = row.trace_h_sup;
            row.y
        } else {
            f64::INFINITY
        };
        if y <= stop_y {
            stop = StopReason::Converged;
            break;
        }
        if blowup && config.stop_on_blowup && last_trace >= stop_trace {
            stop = StopReason::Blowup;
            break;
        }
        if step - start.0 >= config.max_steps {
            stop = StopReason::MaxSteps;
            break;
        }
        let mut attempt = 0;
        let next = loop {
            match flow_step(&state, bundle, g, mu, dt, config.renormalize_det) {
                Ok(s) => break s,
                Err(Error::StepFailed(msg)) if attempt < config.max_halvings => {
                    log::warn!("step {step} failed ({msg}); halving dt to {:e}", dt / 2.0);
                    dt /= 2.0;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        state = next;
        step += 1;
        t += dt;
        observer(step, t, &state)?;
    }
    if last_recorded != Some(step) {
        rows.push(diagnostics_row(&state, bundle, g, mu, step, t, nodes)?);
    }
    Ok(FlowRun { state, diagnostics: FlowDiagnostics { rows }, steps: step - start.0, t, dt, blowup, stop })
}

pub fn run_flow(
    state0: BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    mu: f64,
    config: &FlowConfig,
) -> Result<FlowRun> {
    run_flow_with(state0, bundle, g, mu, config, (0, 0.0), |_, _, _| Ok(()))
}

fn max_norm_ratio(num: &MatrixField, den: &MatrixField) -> f64 {
    let a = num.max_norm();
    let b = den.max_norm();
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Relative max-norm gap between `(ΛF_θ(t+dt) − ΛF_θ(t))/dt` and `Δ_D ΛF_θ`.
pub fn lambda_f_evolution_check(
    state: &BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    mu: f64,
    dt: f64,
) -> Result<f64> {
    let next = flow_step(state, bundle, g, mu, dt, false)?;
    let fd = (next.lambda_f_theta() - state.lambda_f_theta()).map(|m| m / C64::new(dt, 0.0));
    let lap = laplacian_d(state.lambda_f_theta(), state, bundle, g);
    Ok(max_norm_ratio(&(&fd - &lap), &lap))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct MDerivativeCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub boundary: f64,
    pub discrepancy: f64,
}

/// `∫ Λ(∂̄ Tr(s D′_u w) − ∂ Tr(s D″ w)) ω^n` for one path point.
fn boundary_integrand(
    s: &MatrixField,
    w: &MatrixField,
    state_u: &BundleMetricState,
    g: &HermitianMetricField,
) -> C64 {
    let n = g.complex_dim();
    let grid = g.grid();
    let (holo, _) = d_prime(w, state_u);
    let (_, dbar_w) = w.gradients();
    // a_j = Tr(s ∇_j w), d_k = Tr(s ∂_{k̄} w); (1,1) coefficient −(∂_{k̄} a_j + ∂_j d_k)
    let a: Vec<ScalarField> = holo.iter().map(|x| s.zip_with(x, |p, q| p * q).trace()).collect();
    let d: Vec<ScalarField> = dbar_w.iter().map(|x| s.zip_with(x, |p, q| p * q).trace()).collect();
    let da: Vec<Vec<Vec<C64>>> = a.iter().map(|f| grid.gradients(f.values()).1).collect();
    let dd: Vec<Vec<Vec<C64>>> = d.iter().map(|f| grid.gradients(f.values()).0).collect();
    let vals = (0..grid.sites())
        .map(|site| {
            let gi = g.g_inv().at(site);
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..n {
                for k in 0..n {
                    acc -= gi[(j, k)] * (da[j][k][site] + dd[k][j][site]);
                }
            }
            acc
        })
        .collect();
    g.integrate(&ScalarField::from_vec(grid, vals))
}

/// Finite-difference check of `Ṁ = ∫Tr((ΛF_θ − μI) h⁻¹ḣ) ω^n − ∫₀¹∫ Λ(∂̄Tr(sD′w_u) − ∂Tr(sD″w_u)) ω^n du`
/// along one flow step, where `w_u = h_u⁻¹ ∂_t h_u` is the velocity of the path
/// point `h_u = e^{u s(t)}` (at `u = 1` this is `h⁻¹ḣ`).
pub fn m_derivative_check(
    state: &BundleMetricState,
    bundle: &HiggsBundleData,
    g: &HermitianMetricField,
    mu: f64,
    dt: f64,
    nodes: usize,
) -> Result<MDerivativeCheck> {
    let next = flow_step(state, bundle, g, mu, dt, false)?;
    let m0 = donaldson_functional(state, bundle, g, mu, nodes)?;
    let m1 = donaldson_functional(&next, bundle, g, mu, nodes)?;
    let lhs = (m1 - m0) / dt;
    let first = -y_functional(state, g, mu);
    let path0 = LogPath::new(state);
    let path1 = LogPath::new(&next);
    let s = path0.log_relative();
    let mut boundary = C64::new(0.0, 0.0);
    for (u, wgt) in unit_interval_rule(nodes)? {
        let hu = path0.metric_at(u);
        let hu1 = path1.metric_at(u);
        let w = hu.zip_with(&hu1, |a, b| matfun::inverse(a) * (b - a) / C64::new(dt, 0.0));
        let st_u = BundleMetricState::new(state.reference().clone(), hu, bundle, g)?;
        boundary += boundary_integrand(&s, &w, &st_u, g) * wgt;
    }
    let boundary = boundary.re;
    let rhs = first - boundary;
    let scale = lhs.abs().max(rhs.abs());
    let discrepancy = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(MDerivativeCheck { lhs, rhs, boundary, discrepancy })
}

/// Max over interior rows of `|Ẏ + 2‖D′ΛF_θ‖²| / (|Ẏ| + ε)` with centered differences.
pub fn y_derivative_identity_check(series: &FlowDiagnostics) -> Result<f64> {
    let rows = &series.rows;
    if rows.len() < 3 {
        return Err(Error::SeriesTooShort { need: 3, have: rows.len() });
    }
    let eps = 1e-14;
    let mut worst = 0.0f64;
    for i in 1..rows.len() - 1 {
        let dy = (rows[i + 1].y - rows[i - 1].y) / (rows[i + 1].t - rows[i - 1].t);
        worst = worst.max((dy + 2.0 * rows[i].dprime_norm).abs() / (dy.abs() + eps));
    }
    Ok(worst)
}

/// `sup |D̂′h · h⁻¹|_H` relative to the reference metric.
pub fn connection_difference_sup(state: &BundleMetricState, reference: &BundleMetricState) -> f64 {
    let h = state.relative();
    let h_inv = h.map(matfun::inverse);
    let (a, b) = d_prime(&h, reference);
    let mut worst = 0.0f64;
    for s in 0..h.values().len() {
        let mut acc = 0.0;
        for x in a.iter().chain(&b) {
            let m = x.at(s) * h_inv.at(s);
            acc += h_norm(&m, state.metric().at(s)).powi(2);
        }
        worst = worst.max(acc.sqrt());
    }
    worst
}
