use anyhow::Result;
use higgs_flow::bundle::{curvature_decomposition_residual, curvature_difference_residual, degree_slope};
use higgs_flow::flow::{default_dt, lambda_f_evolution_check, m_derivative_check, run_flow, y_derivative_identity_check, FlowConfig};
use higgs_flow::geometry::{torsion_one_form_residual, torsion_laplacian_residual, random_band_limited, torsion_identity_residuals};
use higgs_flow::{Mat, MatrixField, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::run::{series_invariants, CheckRow, DEGREE_TOL};
use crate::scenario::Scenario;

pub const IDENTITY_TOL: f64 = 1e-8;
pub const Y_IDENTITY_TOL: f64 = 1e-2;
pub const M_DERIVATIVE_TOL: f64 = 0.05;
const SHORT_RUN: usize = 100;
const RANDOM_FORMS: usize = 5;

/// Identity and invariant checks on a scenario without a full run.
pub fn verify(sc: &Scenario) -> Result<Vec<CheckRow>> {
    let g = &sc.g;
    let grid = &sc.grid;
    let n = grid.complex_dim();
    let r = sc.bundle.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.config.seed);
    let mut rows = Vec::new();

    let (mut l1, mut l2) = (0.0f64, 0.0f64);
    for _ in 0..RANDOM_FORMS {
        let psi: Vec<_> = (0..n).map(|_| random_band_limited(grid, 2, &mut rng)).collect();
        l1 = l1.max(torsion_one_form_residual(g, &psi));
        l2 = l2.max(torsion_laplacian_residual(g, &random_band_limited(grid, 2, &mut rng)));
    }
    rows.push(CheckRow::new("torsion_one_form", l1, IDENTITY_TOL));
    rows.push(CheckRow::new("torsion_laplacian", l2, IDENTITY_TOL));
    let tid = torsion_identity_residuals(g);
    rows.push(CheckRow::conditional("semi_kaehler_torsion", tid.semik_id, IDENTITY_TOL, sc.is_semi_kaehler));
    rows.push(CheckRow::conditional("gauduchon_torsion", tid.gaud_id, IDENTITY_TOL, sc.is_gauduchon));

    let dt = sc.config.flow.dt.unwrap_or_else(|| default_dt(&sc.state0, &sc.bundle, g)).min(1e-4);
    let short = FlowConfig {
        dt: Some(dt),
        max_steps: SHORT_RUN,
        stop_y: Some(0.0),
        renormalize_det: false,
        record_every: 1,
        track_functional: false,
        stop_on_blowup: false,
        ..sc.config.flow.clone()
    };
    let run = run_flow(sc.state0.clone(), &sc.bundle, g, sc.mu, &short)?;
    let rows_ = &run.diagnostics.rows;
    for row in series_invariants(rows_, sc.is_gauduchon, sc.is_semi_kaehler, sc.config.bundle.det_gauge, false) {
        if row.name != "m_monotone" {
            rows.push(row);
        }
    }
    let y_id = if run.diagnostics.rows[0].y > 0.0 { y_derivative_identity_check(&run.diagnostics)? } else { 0.0 };
    rows.push(CheckRow::conditional("y_identity", y_id, Y_IDENTITY_TOL, sc.is_gauduchon));
    let deg = degree_slope(&run.state, &sc.bundle, g)?.deg;
    rows.push(CheckRow::conditional("degree_invariance", (deg - sc.deg0).abs(), DEGREE_TOL, sc.is_gauduchon));
    rows.push(CheckRow::new("curvature_difference", curvature_difference_residual(&run.state, &sc.state0, &sc.bundle, g), IDENTITY_TOL));
    if sc.bundle.is_twisted() {
        rows.push(CheckRow::skipped("curvature_decomposition"));
    } else {
        let mut worst = 0.0f64;
        for _ in 0..RANDOM_FORMS {
            let entries: Vec<Vec<C64>> = (0..r * r).map(|_| random_band_limited(grid, 2, &mut rng).values().to_vec()).collect();
            let vals = (0..grid.sites()).map(|i| Mat::from_fn(r, r, |a, b| entries[a * r + b][i])).collect();
            let s = MatrixField::new(grid.clone(), r, vals)?;
            worst = worst.max(curvature_decomposition_residual(&s, &run.state, &sc.bundle, g)?);
        }
        rows.push(CheckRow::new("curvature_decomposition", worst, IDENTITY_TOL));
    }
    let evo = lambda_f_evolution_check(&run.state, &sc.bundle, g, sc.mu, dt)?;
    rows.push(CheckRow::new("lambda_f_evolution", evo, 1e-2));
    let nodes = sc.config.flow.functional_quadrature_nodes;
    let m = m_derivative_check(&run.state, &sc.bundle, g, sc.mu, dt.min(1e-5), nodes)?;
    rows.push(CheckRow::conditional("m_derivative", m.discrepancy, M_DERIVATIVE_TOL, sc.is_gauduchon));
    Ok(rows)
}
