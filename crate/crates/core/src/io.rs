//! On-disk formats: binary field dumps with a one-line JSON header, and the
//! CSV tables the studies emit. Dumps are little-endian regardless of host,
//! so identical runs produce identical bytes across platforms.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::json;

use crate::chaos::ChaosScalar;
use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;
use crate::propagator::{norm_rows, ChaosField};
use crate::scaling::{kondratiev_weight_log, CatalanBound};
use crate::spectral::{Grid, GridField};
use crate::stats::{McMoments, MomentReport};

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

/// Writes one field as a single JSON header line (`dim`, `components`, `n`,
/// `time`, `byte_order`) followed by the samples as little-endian 8-byte
/// floats, row-major within each component block.
pub fn write_field(path: &Path, field: &GridField, time: f64) -> Result<()> {
    let header = json!({
        "dim": field.grid().dim(),
        "components": field.components(),
        "n": field.grid().n(),
        "time": time,
        "byte_order": "LE",
    });
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(header.to_string().as_bytes()).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)?;
    for v in field.data() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a field dump back; exact inverse of [`write_field`].
pub fn read_field(path: &Path) -> Result<(GridField, f64)> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err)?;
    let header: serde_json::Value = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Parse(format!("bad field header: {e}")))?;
    let get_u = |k: &str| -> Result<usize> {
        header[k]
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Parse(format!("header field {k} missing or not an integer")))
    };
    let dim = get_u("dim")?;
    let components = get_u("components")?;
    let n = get_u("n")?;
    let time = header["time"]
        .as_f64()
        .ok_or_else(|| Error::Parse("header field time missing".into()))?;
    if header["byte_order"].as_str() != Some("LE") {
        return Err(Error::Parse("unsupported byte order".into()));
    }
    let grid = Grid::new(dim, n)?;
    if components == 0 {
        return Err(Error::Parse("component count must be positive".into()));
    }

    let mut field = GridField::zeros(grid, components);
    let expected = field.data().len() * 8;
    let mut bytes = Vec::with_capacity(expected);
    r.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "field payload holds {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    for (slot, chunk) in field.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
        *slot = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok((field, time))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("csv error: {other:?}")),
    }
}

/// CSV of every recorded per-coefficient norm over a snapshot series:
/// `time,alpha,degree,h22,h2p,sup`, snapshots in order, coefficients in
/// enumeration order.
pub fn write_norms_csv(path: &Path, series: &[ChaosField], p: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["time", "alpha", "degree", "h22", "h2p", "sup"])
        .map_err(csv_err)?;
    for snap in series {
        for row in norm_rows(snap, p) {
            w.write_record([
                format!("{}", snap.t()),
                row.alpha.render(),
                row.degree.to_string(),
                format!("{:.17e}", row.h22),
                format!("{:.17e}", row.h2p),
                format!("{:.17e}", row.sup),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// CSV of the weighted-norm table joined with the growth-bound fit:
/// `alpha,degree,norm,weight_log,weighted_log,bound_log,slack_log` (the last
/// two are empty for coefficients outside the fitted rows).
pub fn write_scaling_csv(
    path: &Path,
    norms: &BTreeMap<MultiIndex, f64>,
    rho: f64,
    q: f64,
    bound: &CatalanBound,
) -> Result<()> {
    let slack: BTreeMap<&MultiIndex, (f64, f64)> = bound
        .rows
        .iter()
        .map(|r| (&r.alpha, (r.bound_log, r.slack_log)))
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "alpha",
        "degree",
        "norm",
        "weight_log",
        "weighted_log",
        "bound_log",
        "slack_log",
    ])
    .map_err(csv_err)?;
    for (alpha, &norm) in norms {
        let wl = kondratiev_weight_log(alpha, rho, q);
        let weighted_log = if norm > 0.0 {
            format!("{:.17e}", wl + 2.0 * norm.ln())
        } else {
            String::new()
        };
        let (bound_log, slack_log) = match slack.get(alpha) {
            Some(&(b, s)) => (format!("{b:.17e}"), format!("{s:.17e}")),
            None => (String::new(), String::new()),
        };
        w.write_record([
            alpha.render(),
            alpha.degree().to_string(),
            format!("{norm:.17e}"),
            format!("{wl:.17e}"),
            weighted_log,
            bound_log,
            slack_log,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// CSV of a scalar chaos expansion: `alpha,value`, one row per coefficient.
pub fn write_chaos_scalar_csv(path: &Path, u: &ChaosScalar) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["alpha", "value"]).map_err(csv_err)?;
    for (a, c) in u.iter() {
        w.write_record([a.render(), format!("{c:.17e}")])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// CSV of pathwise moment estimates:
/// `probe,component,mean,mean_se,variance,variance_se,second,second_se`.
pub fn write_mc_moments_csv(path: &Path, mc: &McMoments) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "probe",
        "component",
        "mean",
        "mean_se",
        "variance",
        "variance_se",
        "second",
        "second_se",
    ])
    .map_err(csv_err)?;
    for (pi, &probe) in mc.probes.iter().enumerate() {
        for c in 0..mc.mean[pi].len() {
            w.write_record([
                probe.to_string(),
                c.to_string(),
                format!("{:.17e}", mc.mean[pi][c].value),
                format!("{:.17e}", mc.mean[pi][c].se),
                format!("{:.17e}", mc.variance[pi][c].value),
                format!("{:.17e}", mc.variance[pi][c].se),
                format!("{:.17e}", mc.second[pi][c].value),
                format!("{:.17e}", mc.second[pi][c].se),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// CSV of the exact expansion moments at probe pairs:
/// `x,y,i,j,raw,centered`.
pub fn write_chaos_moments_csv(path: &Path, report: &MomentReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x", "y", "i", "j", "raw", "centered"])
        .map_err(csv_err)?;
    for s in &report.covariance {
        for i in 0..s.raw.len() {
            for j in 0..s.raw[i].len() {
                w.write_record([
                    s.x.to_string(),
                    s.y.to_string(),
                    i.to_string(),
                    j.to_string(),
                    format!("{:.17e}", s.raw[i][j]),
                    format!("{:.17e}", s.centered[i][j]),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}
