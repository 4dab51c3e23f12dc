use std::path::Path;

use anyhow::{bail, Context, Result};
use higgs_flow::expr::Expr;
use higgs_flow::flow::FlowConfig;
use higgs_flow::geometry::MetricSpec;
use higgs_flow::stability::StabilityConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Complex dimension, 1 or 2.
    pub n: usize,
    /// Points per real axis.
    pub points: usize,
    /// One period per real axis; all 1 when omitted.
    #[serde(default)]
    pub periods: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    #[default]
    Diagonal,
    Hermitian,
}

/// Seeded random start: `K ← K^{1/2} exp(P) K^{1/2}` with `P` band-limited and
/// `max |P| = amplitude`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub amplitude: f64,
    #[serde(default = "default_band")]
    pub band: i32,
    #[serde(default)]
    pub kind: PerturbationKind,
}

fn default_band() -> i32 {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub rank: usize,
    /// `degrees[α][p]`: twist of summand `α` in plane `p`; omitted for the trivial bundle.
    #[serde(default)]
    pub degrees: Vec<Vec<i64>>,
    /// `theta[j][a][b]`, one matrix of formulas per complex direction; zero when omitted.
    #[serde(default)]
    pub theta: Option<Vec<Vec<Vec<Expr>>>>,
    /// Hermitian entry formulas of the starting metric; identity when omitted.
    #[serde(default)]
    pub initial_metric: Option<Vec<Vec<Expr>>>,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    /// Conformally rescale the start so that `Tr(ΛF_θ − μI) = 0`.
    #[serde(default = "default_true")]
    pub det_gauge: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub id: String,
    pub grid: GridSpec,
    pub metric: MetricSpec,
    /// Replace the base metric by the Gauduchon metric of its conformal class.
    #[serde(default)]
    pub gauduchon: bool,
    pub bundle: BundleSpec,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("invalid config at `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("config {}", path.display()))
    }

    /// Shape checks that serde cannot express; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(1..=2).contains(&g.n) {
            bail!("invalid config at `grid.n`: complex dimension must be 1 or 2, got {}", g.n);
        }
        if let Some(p) = &g.periods {
            if p.len() != 2 * g.n || p.iter().any(|v| !(*v > 0.0)) {
                bail!("invalid config at `grid.periods`: need {} positive periods", 2 * g.n);
            }
        }
        let real_dim = 2 * g.n;
        let check_vars = |e: &Expr, field: String| -> Result<()> {
            if let Some(v) = e.max_var() {
                if v >= real_dim {
                    bail!("invalid config at `{field}`: variable x{v} out of range for {real_dim} real coordinates");
                }
            }
            Ok(())
        };
        let b = &self.bundle;
        let r = b.rank;
        if r == 0 {
            bail!("invalid config at `bundle.rank`: rank must be at least 1");
        }
        if !b.degrees.is_empty() && (b.degrees.len() != r || b.degrees.iter().any(|d| d.len() != g.n)) {
            bail!("invalid config at `bundle.degrees`: need {r} rows of {} integers", g.n);
        }
        if let Some(theta) = &b.theta {
            if theta.len() != g.n {
                bail!("invalid config at `bundle.theta`: need {} components, got {}", g.n, theta.len());
            }
            for (j, m) in theta.iter().enumerate() {
                if m.len() != r || m.iter().any(|row| row.len() != r) {
                    bail!("invalid config at `bundle.theta[{j}]`: need a {r}x{r} matrix");
                }
                for (a, row) in m.iter().enumerate() {
                    for (c, e) in row.iter().enumerate() {
                        check_vars(e, format!("bundle.theta[{j}][{a}][{c}]"))?;
                    }
                }
            }
        }
        if let Some(k) = &b.initial_metric {
            if k.len() != r || k.iter().any(|row| row.len() != r) {
                bail!("invalid config at `bundle.initial_metric`: need a {r}x{r} matrix");
            }
            for (a, row) in k.iter().enumerate() {
                for (c, e) in row.iter().enumerate() {
                    check_vars(e, format!("bundle.initial_metric[{a}][{c}]"))?;
                }
            }
        }
        if let Some(p) = &b.perturbation {
            if !(p.amplitude >= 0.0) || p.band < 1 {
                bail!("invalid config at `bundle.perturbation`: amplitude must be ≥ 0 and band ≥ 1");
            }
            if p.kind == PerturbationKind::Hermitian && !b.degrees.iter().flatten().all(|d| *d == 0) {
                bail!("invalid config at `bundle.perturbation.kind`: twisted bundles only admit diagonal perturbations");
            }
        }
        if let MetricSpec::Entries { entries } = &self.metric {
            for (a, row) in entries.iter().enumerate() {
                for (c, e) in row.iter().enumerate() {
                    check_vars(e, format!("metric.entries[{a}][{c}]"))?;
                }
            }
        }
        let f = &self.flow;
        if let Some(dt) = f.dt {
            if !(dt > 0.0) {
                bail!("invalid config at `flow.dt`: must be positive, got {dt}");
            }
        }
        if f.functional_quadrature_nodes < 8 {
            bail!("invalid config at `flow.functional_quadrature_nodes`: need at least 8, got {}", f.functional_quadrature_nodes);
        }
        if f.record_every == 0 {
            bail!("invalid config at `flow.record_every`: must be at least 1");
        }
        let s = &self.stability;
        if s.sigmas.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            bail!("invalid config at `stability.sigmas`: values must lie in (0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"id":"t","grid":{"n":1,"points":8},"metric":{"kind":"flat"},"bundle":{"rank":1}}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert!(c.bundle.det_gauge);
        assert_eq!(c.flow, FlowConfig::default());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace(r#""points":8"#, r#""points":"eight""#);
        let e = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(e.contains("grid.points"), "{e}");
        let bad = MINIMAL.replace(r#""rank":1"#, r#""rank":1,"theta":[[["sin(x7)"]]]"#);
        let e = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(e.contains("bundle.theta[0][0][0]"), "{e}");
        let bad = MINIMAL.replace(r#""rank":1"#, r#""rank":1,"colour":2"#);
        let e = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(e.contains("colour"), "{e}");
        let bad = MINIMAL.replace(r#"{"kind":"flat"}"#, r#"{"kind":"round"}"#);
        let e = format!("{:#}", RunConfig::from_json(&bad).unwrap_err());
        assert!(e.contains("metric"), "{e}");
    }

    #[test]
    fn roundtrips_through_json() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
