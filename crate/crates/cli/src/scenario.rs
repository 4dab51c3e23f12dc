use anyhow::{bail, Context, Result};
use higgs_flow::bundle::{degree_slope, det_gauge_initial_metric, BundleMetricState, HiggsBundleData};
use higgs_flow::geometry::{build_metric, classification_residuals, gauduchon_gauge, random_band_limited, HermitianMetricField};
use higgs_flow::matfun;
use higgs_flow::{LatticeGrid, Mat, MatrixField, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::config::{PerturbationKind, RunConfig};

/// Gauduchon test on the base metric.
pub const GAUDUCHON_TOL: f64 = 1e-8;

pub struct Scenario {
    pub config: RunConfig,
    pub grid: Arc<LatticeGrid>,
    pub g: HermitianMetricField,
    pub bundle: HiggsBundleData,
    pub state0: BundleMetricState,
    pub mu: f64,
    pub deg0: f64,
    pub is_gauduchon: bool,
    pub is_semi_kaehler: bool,
}

pub fn build_grid(cfg: &RunConfig) -> Result<Arc<LatticeGrid>> {
    let n = cfg.grid.n;
    let periods = cfg.grid.periods.clone().unwrap_or_else(|| vec![1.0; 2 * n]);
    LatticeGrid::new(n, cfg.grid.points, periods).context("invalid config at `grid`")
}

fn matrix_from_formulas(grid: &Arc<LatticeGrid>, entries: &[Vec<higgs_flow::expr::Expr>]) -> MatrixField {
    let r = entries.len();
    MatrixField::from_fn(grid, r, |x| Mat::from_fn(r, r, |a, b| entries[a][b].eval(x)))
}

/// `K^{1/2} exp(P) K^{1/2}` with a seeded band-limited Hermitian `P`.
fn perturb(cfg: &RunConfig, grid: &Arc<LatticeGrid>, k: MatrixField) -> MatrixField {
    let Some(p) = &cfg.bundle.perturbation else { return k };
    if p.amplitude == 0.0 {
        return k;
    }
    let r = k.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries: Vec<Vec<Option<Vec<C64>>>> = vec![vec![None; r]; r];
    for a in 0..r {
        for b in a..r {
            if a != b && p.kind == PerturbationKind::Diagonal {
                continue;
            }
            let f = random_band_limited(grid, p.band, &mut rng);
            let vals = if a == b { f.values().iter().map(|v| C64::new(v.re, 0.0)).collect() } else { f.values().to_vec() };
            entries[a][b] = Some(vals);
        }
    }
    let sites = grid.sites();
    let raw: Vec<Mat> = (0..sites)
        .map(|s| {
            Mat::from_fn(r, r, |a, b| {
                let (lo, hi, conj) = if a <= b { (a, b, false) } else { (b, a, true) };
                match &entries[lo][hi] {
                    Some(v) if conj => v[s].conj(),
                    Some(v) => v[s],
                    None => C64::new(0.0, 0.0),
                }
            })
        })
        .collect();
    let scale = raw.iter().map(matfun::max_abs).fold(0.0, f64::max);
    let factor = if scale > 0.0 { p.amplitude / scale } else { 0.0 };
    let vals = k
        .values()
        .iter()
        .zip(&raw)
        .map(|(km, pm)| {
            let q = matfun::hermitian_sqrt(km);
            matfun::herm(&(&q * matfun::hermitian_exp(&(pm * C64::new(factor, 0.0))) * &q))
        })
        .collect();
    MatrixField::new(grid.clone(), r, vals).expect("grid-sized field")
}

impl Scenario {
    pub fn build(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let grid = build_grid(config)?;
        let g0 = build_metric(&grid, &config.metric).context("invalid config at `metric`")?;
        let g = if config.gauduchon { gauduchon_gauge(&g0).context("Gauduchon gauge")?.metric } else { g0 };
        let class = classification_residuals(&g);
        let n = grid.complex_dim();
        let b = &config.bundle;
        let r = b.rank;
        let theta = match &b.theta {
            Some(t) => t.iter().map(|m| matrix_from_formulas(&grid, m)).collect(),
            None => (0..n).map(|_| MatrixField::zeros(&grid, r)).collect(),
        };
        let bundle = HiggsBundleData::new(&grid, r, b.degrees.clone(), theta).context("invalid config at `bundle`")?;
        let k = match &b.initial_metric {
            Some(e) => matrix_from_formulas(&grid, e),
            None => MatrixField::identity(&grid, r),
        };
        if !k.is_hermitian(1e-12) {
            bail!("invalid config at `bundle.initial_metric`: entries are not Hermitian");
        }
        let k = perturb(config, &grid, k);
        let state0 = if b.det_gauge {
            det_gauge_initial_metric(&k, &bundle, &g).context("determinant gauge")?.state
        } else {
            BundleMetricState::at_reference(k, &bundle, &g).context("invalid config at `bundle.initial_metric`")?
        };
        let ds = degree_slope(&state0, &bundle, &g)?;
        Ok(Scenario {
            config: config.clone(),
            grid,
            g,
            bundle,
            state0,
            mu: ds.mu,
            deg0: ds.deg,
            is_gauduchon: n == 1 || class.gauduchon_res <= GAUDUCHON_TOL,
            is_semi_kaehler: n == 1 || class.semikaehler_res <= GAUDUCHON_TOL,
        })
    }
}
