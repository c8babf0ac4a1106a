//! The study battery: each entry solves the configured system, measures one
//! contract (growth bound, contraction convergence, pathwise cross-check,
//! restart consistency, causality), writes its tables plus a JSON verdict,
//! and fails the process when the contract is violated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use polychaos::io as pio;
use polychaos::multiindex::MultiIndex;
use polychaos::propagator::{causality_check, ltilde_map, restart, ChaosField, SweepMode};
use polychaos::scaling::{catalan_bound_check, kondratiev_level_sums, suggested_k};
use polychaos::stats::{
    chaos_moments, euler_maruyama_oracle, rescaling_convergence_study, EmRun, MCSampler, McMoments,
};

use crate::config::TimeBasisCfg;
use crate::runs::{self, BuiltRun};
use crate::{CliError, StudyKind};

const RESTART_TOL: f64 = 1e-10;
const CAUSALITY_BEFORE_TOL: f64 = 1e-12;
const CAUSALITY_AFTER_MIN: f64 = 1e-6;
const RESCALING_RATIO_MAX: f64 = 0.1;
const MC_SIGMA: f64 = 3.0;

pub fn cmd_study(
    kind: StudyKind,
    config_path: &Path,
    serial: bool,
    seed: Option<u64>,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let built = runs::build(config_path, serial, seed, out_dir)?;
    runs::ensure_out_dir(&built.out_dir)?;
    match kind {
        StudyKind::Catalan => catalan(&built),
        StudyKind::Rescaling => rescaling(&built),
        StudyKind::McCompare => mc_compare(&built),
        StudyKind::Restart => restart_study(&built),
        StudyKind::Causality => causality(&built),
    }
}

/// Smallest exponent in `scan` whose weighted level sums decay geometrically
/// (consecutive degrees, strictly shrinking). Falls back to the last entry.
fn pick_q(mags: &BTreeMap<MultiIndex, f64>, rho: f64, scan: &[f64]) -> (f64, bool) {
    for &q in scan {
        let sums: Vec<(u32, f64)> = kondratiev_level_sums(mags, rho, q)
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .collect();
        let ok = sums.len() >= 2
            && sums
                .windows(2)
                .all(|w| w[1].0 == w[0].0 + 1 && w[1].1 < w[0].1);
        if ok {
            return (q, true);
        }
    }
    (*scan.last().expect("validated nonempty"), false)
}

fn catalan(built: &BuiltRun) -> Result<(), CliError> {
    let (series, _) = runs::solve_series(built)?;
    let norms = ltilde_map(&series, built.cfg.scaling.p);
    let k = suggested_k(&norms);
    let bound = catalan_bound_check(&norms, k).map_err(CliError::from_core)?;
    let (q, q_decaying) = pick_q(&norms, -1.0, &built.cfg.scaling.q_scan);
    pio::write_scaling_csv(&built.out_dir.join("scaling.csv"), &norms, -1.0, q, &bound)
        .map_err(CliError::from_core)?;

    let min_slack = bound
        .rows
        .iter()
        .map(|r| r.slack_log)
        .fold(f64::INFINITY, f64::min);
    let pass = bound.b0.is_finite() && !bound.rows.is_empty() && min_slack >= -1e-12;
    let report = json!({
        "b0": bound.b0,
        "k": bound.k,
        "rows": bound.rows.len(),
        "min_slack_log": min_slack,
        "weight_q": q,
        "weight_q_decaying": q_decaying,
        "pass": pass,
    });
    runs::write_json(&built.out_dir.join("study_catalan.json"), &report)?;
    println!("{}", built.out_dir.join("study_catalan.json").display());
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "growth bound violated: b0 = {}, min slack log = {min_slack}",
            bound.b0
        )))
    }
}

fn rescaling(built: &BuiltRun) -> Result<(), CliError> {
    let (series, _) = runs::solve_series(built)?;
    let norms = ltilde_map(&series, built.cfg.scaling.p);
    let (q, q_decaying) = pick_q(&norms, -1.0, &built.cfg.scaling.q_scan);
    let study = rescaling_convergence_study(&series, &built.cfg.scaling.eps_list, q)
        .map_err(CliError::from_core)?;

    let mut csv = String::from("eps,distance\n");
    for row in &study.rows {
        let _ = writeln!(csv, "{:.17e},{:.17e}", row.eps, row.distance);
    }
    fs::write(built.out_dir.join("rescaling.csv"), csv)
        .map_err(|e| CliError::failure(format!("writing rescaling.csv: {e}")))?;

    let pass = study.weakly_decreasing && study.final_over_first < RESCALING_RATIO_MAX;
    let report = json!({
        "q": study.q,
        "q_decaying": q_decaying,
        "rows": study
            .rows
            .iter()
            .map(|r| json!({"eps": r.eps, "distance": r.distance}))
            .collect::<Vec<_>>(),
        "weakly_decreasing": study.weakly_decreasing,
        "final_over_first": study.final_over_first,
        "ratio_max": RESCALING_RATIO_MAX,
        "pass": pass,
    });
    runs::write_json(&built.out_dir.join("study_rescaling.json"), &report)?;
    println!("{}", built.out_dir.join("study_rescaling.json").display());
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "contraction distances not converging fast enough: decreasing = {}, final/first = {}",
            study.weakly_decreasing, study.final_over_first
        )))
    }
}

/// Probe moments read off the expansion coefficients: mean, centered
/// variance, raw second moment, indexed `[probe][component]`.
fn expansion_probe_moments(
    u: &ChaosField,
    probes: &[usize],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let c = u.components();
    let mut mean = vec![vec![0.0; c]; probes.len()];
    let mut var = vec![vec![0.0; c]; probes.len()];
    for (a, f) in u.iter() {
        for (pi, &pt) in probes.iter().enumerate() {
            for ci in 0..c {
                let v = f.component(ci)[pt];
                if a.is_empty() {
                    mean[pi][ci] = v;
                } else {
                    var[pi][ci] += v * v;
                }
            }
        }
    }
    let second = probes
        .iter()
        .enumerate()
        .map(|(pi, _)| {
            (0..c)
                .map(|ci| var[pi][ci] + mean[pi][ci] * mean[pi][ci])
                .collect()
        })
        .collect();
    (mean, var, second)
}

fn max_z(
    chaos: &[Vec<f64>],
    mc: &[Vec<polychaos::stats::Estimate>],
) -> f64 {
    let mut z = 0.0f64;
    for (row_c, row_m) in chaos.iter().zip(mc) {
        for (c, m) in row_c.iter().zip(row_m) {
            let diff = (c - m.value).abs();
            if diff > 0.0 {
                z = z.max(diff / m.se.max(f64::MIN_POSITIVE));
            }
        }
    }
    z
}

fn mc_compare(built: &BuiltRun) -> Result<(), CliError> {
    let cfg = &built.cfg;
    if built.run.mode != SweepMode::UnbiasedWick {
        return Err(CliError::config(
            "pathwise cross-check requires the unbiased solver mode",
        ));
    }
    if cfg.truncation.max_degree != 1 {
        return Err(CliError::config(
            "pathwise cross-check requires truncation.max_degree = 1: the reference \
             integrator drops advection, so the expansion must stay first-order",
        ));
    }
    if cfg.initial.amp != 0.0 {
        return Err(CliError::config(
            "pathwise cross-check requires a zero initial state (initial.amp = 0)",
        ));
    }
    if !cfg.noise.sigma.is_empty() {
        return Err(CliError::config(
            "pathwise cross-check supports additive forcing only (no sigma channels)",
        ));
    }
    if cfg.outputs.probes.is_empty() {
        return Err(CliError::config(
            "pathwise cross-check needs at least one probe point",
        ));
    }

    let (series, _) = runs::solve_series(built)?;
    let last = series.last().expect("at least one snapshot");
    let probes: Vec<usize> = cfg.outputs.probes.iter().map(|p| cfg.probe_flat(p)).collect();
    let (mean, var, second) = expansion_probe_moments(last, &probes);

    let initial = built.run.initial.expectation().clone();
    let em = EmRun {
        coeffs: &built.run.coeffs,
        basis: &built.run.basis,
        initial: &initial,
        dt: cfg.time.dt,
        linear_only: true,
        probes: &probes,
    };
    let sampler = MCSampler::new(built.seed, cfg.study.paths);
    let mc: McMoments =
        euler_maruyama_oracle(&em, &sampler, built.exec).map_err(CliError::from_core)?;

    pio::write_mc_moments_csv(&built.out_dir.join("mc_moments.csv"), &mc)
        .map_err(CliError::from_core)?;
    let pairs: Vec<(usize, usize)> = probes.iter().map(|&p| (p, p)).collect();
    pio::write_chaos_moments_csv(
        &built.out_dir.join("chaos_moments.csv"),
        &chaos_moments(last, &pairs),
    )
    .map_err(CliError::from_core)?;

    let z_mean = max_z(&mean, &mc.mean);
    let z_var = max_z(&var, &mc.variance);
    let z_second = max_z(&second, &mc.second);
    let worst = z_mean.max(z_var).max(z_second);
    let pass = worst <= MC_SIGMA;
    let report = json!({
        "paths": cfg.study.paths,
        "probes": probes,
        "max_z_mean": z_mean,
        "max_z_variance": z_var,
        "max_z_second": z_second,
        "sigma_budget": MC_SIGMA,
        "pass": pass,
    });
    runs::write_json(&built.out_dir.join("study_mc_compare.json"), &report)?;
    println!("{}", built.out_dir.join("study_mc_compare.json").display());
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "expansion moments disagree with the pathwise reference: worst deviation {worst:.2} SE"
        )))
    }
}

fn restart_study(built: &BuiltRun) -> Result<(), CliError> {
    let r_prime = built.cfg.split_time();
    let report = restart(&built.run, r_prime, built.exec).map_err(CliError::from_core)?;

    let mut csv = String::from("alpha,discrepancy\n");
    for (a, d) in &report.per_alpha {
        let _ = writeln!(csv, "\"{}\",{:.17e}", a.render(), d);
    }
    fs::write(built.out_dir.join("restart.csv"), csv)
        .map_err(|e| CliError::failure(format!("writing restart.csv: {e}")))?;

    let pass = report.max <= RESTART_TOL;
    let verdict = json!({
        "r_prime": report.r_prime,
        "max": report.max,
        "tol": RESTART_TOL,
        "pass": pass,
    });
    runs::write_json(&built.out_dir.join("study_restart.json"), &verdict)?;
    println!("{}", built.out_dir.join("study_restart.json").display());
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "restarted solve deviates by {} at the final time (tolerance {RESTART_TOL})",
            report.max
        )))
    }
}

fn causality(built: &BuiltRun) -> Result<(), CliError> {
    if built.cfg.basis.time_basis != TimeBasisCfg::Haar {
        return Err(CliError::config(
            "causality study requires the localized (haar) time basis",
        ));
    }
    let t_star = built.cfg.split_time();
    let report = causality_check(&built.run, t_star, built.exec).map_err(CliError::from_core)?;

    let pass = report.before_max <= CAUSALITY_BEFORE_TOL && report.after_max > CAUSALITY_AFTER_MIN;
    let verdict = json!({
        "t_star": report.t_star,
        "constrained": report
            .constrained
            .iter()
            .map(MultiIndex::render)
            .collect::<Vec<_>>(),
        "before_max": report.before_max,
        "after_max": report.after_max,
        "before_tol": CAUSALITY_BEFORE_TOL,
        "after_min": CAUSALITY_AFTER_MIN,
        "pass": pass,
    });
    runs::write_json(&built.out_dir.join("study_causality.json"), &verdict)?;
    println!("{}", built.out_dir.join("study_causality.json").display());
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "causality violated: before_max = {}, after_max = {}",
            report.before_max, report.after_max
        )))
    }
}
