//! Building propagator runs from a config and executing the solve command:
//! sweep, manifest, field dumps, norm tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use polychaos::exec::ExecMode;
use polychaos::io as pio;
use polychaos::multiindex::{MultiIndex, TruncationSpec};
use polychaos::propagator::{
    sweep_standard, sweep_unbiased, ChaosField, PropagatorRun, SweepMode,
};
use polychaos::spectral::GridField;

use crate::config::{Model, RunConfig, ShapeKind, SweepModeCfg, TimeBasisCfg};
use crate::CliError;

/// A fully assembled run plus everything the artifacts need to record.
pub struct BuiltRun {
    pub cfg: RunConfig,
    pub config_sha256: String,
    pub run: PropagatorRun,
    pub exec: ExecMode,
    pub seed: u64,
    pub serial: bool,
    pub out_dir: PathBuf,
}

pub fn build(
    config_path: &Path,
    serial: bool,
    seed_override: Option<u64>,
    out_dir_override: Option<&Path>,
) -> Result<BuiltRun, CliError> {
    let (cfg, text) = RunConfig::load(config_path)?;
    let grid = cfg.build_grid()?;
    let basis = cfg.build_basis()?;
    let coeffs = cfg.build_coeffs(grid)?;
    let truncation = TruncationSpec::new(cfg.truncation.max_degree, cfg.truncation.max_index);
    let initial_field = cfg.initial.build(grid, cfg.model)?;
    let initial = ChaosField::deterministic(truncation, initial_field);
    let mode = match cfg.solver.mode {
        SweepModeCfg::Unbiased => SweepMode::UnbiasedWick,
        SweepModeCfg::Standard => SweepMode::StandardSnse,
    };
    let run = PropagatorRun {
        mode,
        coeffs,
        basis,
        truncation,
        dt: cfg.time.dt,
        t_end: cfg.time.t_end,
        snapshots: cfg.outputs.snapshots,
        initial,
    };
    run.validate()
        .map_err(|e| CliError::config(format!("run: {e}")))?;

    let seed = seed_override.unwrap_or(cfg.seed);
    let out_dir = out_dir_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.outputs.directory));
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let config_sha256 = format!("{:x}", hasher.finalize());
    Ok(BuiltRun {
        cfg,
        config_sha256,
        run,
        exec: if serial {
            ExecMode::Serial
        } else {
            ExecMode::Parallel
        },
        seed,
        serial,
        out_dir,
    })
}

/// Runs the configured sweep; the coupled system also reports the coupling
/// weight lost to the truncation.
pub fn solve_series(
    built: &BuiltRun,
) -> Result<(Vec<ChaosField>, Option<BTreeMap<MultiIndex, f64>>), CliError> {
    match built.run.mode {
        SweepMode::UnbiasedWick => {
            let series = sweep_unbiased(&built.run, built.exec).map_err(CliError::from_core)?;
            Ok((series, None))
        }
        SweepMode::StandardSnse => {
            let out = sweep_standard(&built.run, built.exec).map_err(CliError::from_core)?;
            Ok((out.series, Some(out.dropped_weight)))
        }
    }
}

fn noise_free(cfg: &RunConfig) -> bool {
    cfg.noise.g.is_empty() && cfg.noise.sigma.is_empty()
}

/// Closed-form vortex decay check when the run is the noise-free planar
/// vortex: L2 distance of the final mean mode from the decayed profile.
fn taylor_green_error(built: &BuiltRun, series: &[ChaosField]) -> Option<f64> {
    if built.cfg.model != Model::Ns2d
        || !noise_free(&built.cfg)
        || !matches!(built.cfg.initial.kind, ShapeKind::TaylorGreen)
    {
        return None;
    }
    let f = built.cfg.initial.freq as f64;
    let decay = (-2.0 * built.cfg.pde.nu * f * f * built.cfg.time.t_end).exp();
    let last = series.last()?;
    let grid = last.grid();
    let a = built.cfg.initial.amp * decay;
    let want = GridField::from_fn(grid, built.cfg.model.components(), |c, x| {
        if c == 0 {
            a * (f * x[0]).sin() * (f * x[1]).cos()
        } else {
            -a * (f * x[0]).cos() * (f * x[1]).sin()
        }
    });
    let mut diff = last.expectation().clone();
    diff.axpy(-1.0, &want);
    Some(diff.l2_norm())
}

fn field_rel_path(snapshot: usize, coeff: usize) -> String {
    format!("fields/s{snapshot:03}_c{coeff:04}.field")
}

pub fn manifest_value(
    built: &BuiltRun,
    series: &[ChaosField],
    dropped: Option<&BTreeMap<MultiIndex, f64>>,
) -> Value {
    let cfg = &built.cfg;
    let enumeration: Vec<String> = built
        .run
        .truncation
        .enumerate()
        .iter()
        .map(MultiIndex::render)
        .collect();
    let snapshot_times: Vec<f64> = series.iter().map(ChaosField::t).collect();
    let field_files: Vec<Vec<String>> = (0..series.len())
        .map(|si| {
            (0..enumeration.len())
                .map(|ci| field_rel_path(si, ci))
                .collect()
        })
        .collect();
    let mut diagnostics = serde_json::Map::new();
    if let Some(err) = taylor_green_error(built, series) {
        diagnostics.insert("taylor_green_l2_error".into(), json!(err));
    }
    if let Some(d) = dropped {
        let max = d.values().cloned().fold(0.0f64, f64::max);
        diagnostics.insert("dropped_coupling_weight_max".into(), json!(max));
    }
    json!({
        "config_sha256": built.config_sha256,
        "model": cfg.model.name(),
        "mode": match cfg.solver.mode {
            SweepModeCfg::Unbiased => "unbiased",
            SweepModeCfg::Standard => "standard",
        },
        "seed": built.seed,
        "serial": built.serial,
        "grid": {"dim": cfg.model.dim(), "n": cfg.grid.n},
        "nu": cfg.pde.nu,
        "dt": cfg.time.dt,
        "t_end": cfg.time.t_end,
        "basis": {
            "time_basis": match cfg.basis.time_basis {
                TimeBasisCfg::Trig => "trig",
                TimeBasisCfg::Haar => "haar",
            },
            "n_time": cfg.basis.n_time,
            "m_noise": cfg.basis.m_noise,
            "quad_cells": built.run.basis.quad_cells,
        },
        "truncation": {
            "max_degree": cfg.truncation.max_degree,
            "max_index": cfg.truncation.max_index,
        },
        "snapshot_times": snapshot_times,
        "coefficients": enumeration,
        "files": {
            "norms_csv": "norms.csv",
            "fields": field_files,
        },
        "diagnostics": Value::Object(diagnostics),
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::failure(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::failure(format!("writing {}: {e}", path.display())))
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::failure(format!("creating {}: {e}", dir.display())))
}

pub fn cmd_solve(
    config_path: &Path,
    serial: bool,
    seed: Option<u64>,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let built = build(config_path, serial, seed, out_dir)?;
    let (series, dropped) = solve_series(&built)?;

    ensure_out_dir(&built.out_dir)?;
    ensure_out_dir(&built.out_dir.join("fields"))?;

    // manifest strictly precedes any field payload
    let manifest = manifest_value(&built, &series, dropped.as_ref());
    write_json(&built.out_dir.join("manifest.json"), &manifest)?;

    for (si, snap) in series.iter().enumerate() {
        for (ci, (_, field)) in snap.iter().enumerate() {
            let path = built.out_dir.join(field_rel_path(si, ci));
            pio::write_field(&path, field, snap.t()).map_err(CliError::from_core)?;
        }
    }
    pio::write_norms_csv(
        &built.out_dir.join("norms.csv"),
        &series,
        built.cfg.scaling.p,
    )
    .map_err(CliError::from_core)?;

    println!("{}", built.out_dir.join("manifest.json").display());
    Ok(())
}
