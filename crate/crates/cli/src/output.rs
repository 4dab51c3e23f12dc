use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use higgs_flow::flow::DiagnosticRow;
use higgs_flow::{LatticeGrid, Mat, MatrixField, C64};
use serde::{Deserialize, Serialize};

pub const SERIES_HEADER: [&str; 9] = ["t", "Y", "M", "sup_LF", "logdet_max", "eigmin", "eigmax", "Dprime_norm", "trace_h_sup"];

pub fn write_series(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(SERIES_HEADER)?;
    for r in rows {
        let vals = [r.t, r.y, r.m, r.sup_lf, r.logdet_max, r.eigmin, r.eigmax, r.dprime_norm, r.trace_h_sup];
        w.write_record(vals.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a series file; the step column is not stored, so `step` is the row index.
pub fn read_series(path: &Path) -> Result<Vec<DiagnosticRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SERIES_HEADER {
        bail!("{}: unexpected header {:?}", path.display(), header);
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        if v.len() != SERIES_HEADER.len() {
            bail!("{}: row {} has {} columns", path.display(), i + 1, v.len());
        }
        rows.push(DiagnosticRow {
            step: i,
            t: v[0],
            y: v[1],
            m: v[2],
            sup_lf: v[3],
            logdet_max: v[4],
            eigmin: v[5],
            eigmax: v[6],
            dprime_norm: v[7],
            trace_h_sup: v[8],
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldLayout {
    pub name: String,
    /// Byte offset into the binary file.
    pub offset: usize,
    /// `[sites, rows, cols]`; entries are row-major per site.
    pub shape: [usize; 3],
}

/// JSON sidecar describing a flat binary of little-endian `(re, im)` f64 pairs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SnapshotMeta {
    pub format: String,
    pub scenario: String,
    pub complex_dim: usize,
    pub points: usize,
    pub periods: Vec<f64>,
    pub rank: usize,
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub data_file: String,
    pub fields: Vec<FieldLayout>,
}

pub struct Snapshot {
    pub meta: SnapshotMeta,
    pub metric: MatrixField,
    pub reference: MatrixField,
}

const FORMAT: &str = "complex-f64-le";

fn push_field(buf: &mut Vec<u8>, f: &MatrixField) {
    for m in f.values() {
        for a in 0..m.nrows() {
            for b in 0..m.ncols() {
                buf.extend_from_slice(&m[(a, b)].re.to_le_bytes());
                buf.extend_from_slice(&m[(a, b)].im.to_le_bytes());
            }
        }
    }
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`; returns the sidecar path.
pub fn write_snapshot(
    dir: &Path,
    stem: &str,
    scenario: &str,
    grid: &LatticeGrid,
    step: usize,
    t: f64,
    dt: f64,
    metric: &MatrixField,
    reference: &MatrixField,
) -> Result<std::path::PathBuf> {
    let r = metric.dim();
    let sites = grid.sites();
    let mut buf = Vec::with_capacity(2 * sites * r * r * 16);
    push_field(&mut buf, metric);
    let second = buf.len();
    push_field(&mut buf, reference);
    let data_file = format!("{stem}.bin");
    std::fs::File::create(dir.join(&data_file))
        .and_then(|mut f| f.write_all(&buf))
        .with_context(|| format!("writing {}", dir.join(&data_file).display()))?;
    let meta = SnapshotMeta {
        format: FORMAT.into(),
        scenario: scenario.into(),
        complex_dim: grid.complex_dim(),
        points: grid.points(),
        periods: grid.periods().to_vec(),
        rank: r,
        step,
        t,
        dt,
        data_file,
        fields: vec![
            FieldLayout { name: "metric".into(), offset: 0, shape: [sites, r, r] },
            FieldLayout { name: "reference".into(), offset: second, shape: [sites, r, r] },
        ],
    };
    let side = dir.join(format!("{stem}.json"));
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?).with_context(|| format!("writing {}", side.display()))?;
    Ok(side)
}

fn read_field(bytes: &[u8], layout: &FieldLayout, grid: &Arc<LatticeGrid>) -> Result<MatrixField> {
    let [sites, rows, cols] = layout.shape;
    if sites != grid.sites() || rows != cols {
        bail!("snapshot field `{}` has shape {:?} for a grid of {} sites", layout.name, layout.shape, grid.sites());
    }
    let len = sites * rows * cols * 16;
    let Some(chunk) = bytes.get(layout.offset..layout.offset + len) else {
        bail!("snapshot data too short for field `{}`", layout.name);
    };
    let f = |i: usize| f64::from_le_bytes(chunk[8 * i..8 * i + 8].try_into().unwrap());
    let vals = (0..sites)
        .map(|s| Mat::from_fn(rows, cols, |a, b| {
            let k = 2 * ((s * rows + a) * cols + b);
            C64::new(f(k), f(k + 1))
        }))
        .collect();
    Ok(MatrixField::new(grid.clone(), rows, vals)?)
}

pub fn read_snapshot(sidecar: &Path, grid: &Arc<LatticeGrid>) -> Result<Snapshot> {
    let text = std::fs::read_to_string(sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let meta: SnapshotMeta = serde_json::from_str(&text).with_context(|| format!("parsing {}", sidecar.display()))?;
    if meta.format != FORMAT {
        bail!("unsupported snapshot format `{}`", meta.format);
    }
    if meta.complex_dim != grid.complex_dim() || meta.points != grid.points() || meta.periods != grid.periods() {
        bail!("snapshot grid does not match the config grid");
    }
    let data = sidecar.parent().unwrap_or(Path::new(".")).join(&meta.data_file);
    let mut bytes = Vec::new();
    std::fs::File::open(&data)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .with_context(|| format!("reading {}", data.display()))?;
    let find = |name: &str| meta.fields.iter().find(|f| f.name == name).with_context(|| format!("snapshot lacks field `{name}`"));
    let metric = read_field(&bytes, find("metric")?, grid)?;
    let reference = read_field(&bytes, find("reference")?, grid)?;
    Ok(Snapshot { meta, metric, reference })
}
