//! Ordered sweeps over a chaos truncation: the lower-triangular cascade
//! (deterministic mean plus linearized corrections sourced from strictly
//! lower degrees) and the fully coupled nonlinear system, with restart and
//! causality checks over the computed series.
//!
//! Within a degree level of the cascade, coefficients advance independently
//! and may run in parallel; the results are merged in enumeration order, so
//! parallel and serial execution produce bit-identical states.

use std::collections::BTreeMap;

use crate::basis::{BasisSpec, TimeBasis};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::multiindex::{chaos_binomial_sqrt, propagator_coeff, MultiIndex, TruncationSpec};
use crate::spectral::{
    advect, forward, inverse, ns_step, sobolev_norm, stokes_step, Grid, GridField, PdeCoeffs,
    SobolevNormSpec, SpectralField, StokesStages,
};

/// Which system a run advances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    /// Lower-triangular cascade: only the mean equation is nonlinear.
    UnbiasedWick,
    /// Fully coupled coefficient system with upward p-sum coupling.
    StandardSnse,
}

/// A chaos expansion of grid fields: one coefficient per enumerated
/// multi-index, all on the same grid, tagged with the current time.
#[derive(Clone, Debug)]
pub struct ChaosField {
    truncation: TruncationSpec,
    t: f64,
    coeffs: BTreeMap<MultiIndex, GridField>,
}

impl ChaosField {
    /// All-zero expansion over the full enumeration.
    pub fn zeros(truncation: TruncationSpec, grid: Grid, components: usize) -> Self {
        let coeffs = truncation
            .enumerate()
            .into_iter()
            .map(|a| (a, GridField::zeros(grid, components)))
            .collect();
        ChaosField {
            truncation,
            t: 0.0,
            coeffs,
        }
    }

    /// Deterministic initial data: the mean carries `initial`, every higher
    /// coefficient starts at zero.
    pub fn deterministic(truncation: TruncationSpec, initial: GridField) -> Self {
        let mut field = ChaosField::zeros(truncation, initial.grid(), initial.components());
        field
            .coeffs
            .insert(MultiIndex::empty(), initial);
        field
    }

    pub fn truncation(&self) -> TruncationSpec {
        self.truncation
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn set_t(&mut self, t: f64) {
        self.t = t;
    }

    pub fn grid(&self) -> Grid {
        self.expectation().grid()
    }

    pub fn components(&self) -> usize {
        self.expectation().components()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn get(&self, a: &MultiIndex) -> Option<&GridField> {
        self.coeffs.get(a)
    }

    /// The mean-mode field.
    pub fn expectation(&self) -> &GridField {
        self.coeffs
            .get(&MultiIndex::empty())
            .expect("mean mode always present")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &GridField)> {
        self.coeffs.iter()
    }

    /// Replaces one coefficient; it must belong to the truncation and match
    /// the shared field shape.
    pub fn insert(&mut self, a: MultiIndex, field: GridField) -> Result<()> {
        if !self.truncation.contains(&a) {
            return Err(Error::Domain(format!(
                "{} lies outside the truncation",
                a.render()
            )));
        }
        let anchor = self.expectation();
        if field.grid() != anchor.grid() || field.components() != anchor.components() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient {} does not match the field shape",
                a.render()
            )));
        }
        self.coeffs.insert(a, field);
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn remove_coeff(&mut self, a: &MultiIndex) -> Option<GridField> {
        self.coeffs.remove(a)
    }

    /// Largest coefficientwise difference against another expansion.
    pub fn max_abs_diff(&self, other: &ChaosField) -> f64 {
        let mut worst = 0.0f64;
        for (a, f) in &self.coeffs {
            if let Some(g) = other.coeffs.get(a) {
                worst = worst.max(f.max_abs_diff(g));
            }
        }
        worst
    }
}

/// Configuration of one sweep: system flavor, coefficients, noise basis,
/// truncation, time stepping, and initial expansion.
#[derive(Clone, Debug)]
pub struct PropagatorRun {
    pub mode: SweepMode,
    pub coeffs: PdeCoeffs,
    pub basis: BasisSpec,
    pub truncation: TruncationSpec,
    pub dt: f64,
    pub t_end: f64,
    /// Number of snapshots after the initial state; must divide the step count.
    pub snapshots: usize,
    pub initial: ChaosField,
}

impl PropagatorRun {
    pub fn steps(&self) -> usize {
        ((self.t_end - self.initial.t()) / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        let span = self.t_end - self.initial.t();
        if !(span > 0.0) {
            return Err(Error::Domain(format!(
                "t_end {} must exceed the initial time {}",
                self.t_end,
                self.initial.t()
            )));
        }
        let steps = self.steps();
        if steps == 0 || (steps as f64 * self.dt - span).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::Domain(format!(
                "dt {} does not divide the time span {span}",
                self.dt
            )));
        }
        if self.snapshots == 0 || self.snapshots > steps || steps % self.snapshots != 0 {
            return Err(Error::Domain(format!(
                "{} snapshots do not divide {steps} steps",
                self.snapshots
            )));
        }
        if self.initial.truncation() != self.truncation {
            return Err(Error::Domain(
                "initial expansion uses a different truncation".into(),
            ));
        }
        if self.truncation.max_index as usize > self.basis.n_modes() {
            return Err(Error::Domain(format!(
                "truncation reaches index {} but the basis has {} modes",
                self.truncation.max_index,
                self.basis.n_modes()
            )));
        }
        let grid = self.initial.grid();
        let components = self.initial.components();
        self.coeffs.validate(grid, components)?;
        if !self.coeffs.sigma.is_empty() && self.coeffs.sigma.len() != self.basis.m_noise {
            return Err(Error::DimensionMismatch(format!(
                "{} sigma channels for {} noise components",
                self.coeffs.sigma.len(),
                self.basis.m_noise
            )));
        }
        if !self.coeffs.g.is_empty() && self.coeffs.g.len() != self.basis.m_noise {
            return Err(Error::DimensionMismatch(format!(
                "{} g channels for {} noise components",
                self.coeffs.g.len(),
                self.basis.m_noise
            )));
        }
        Ok(())
    }
}

/// Reads a strictly-lower coefficient for a source assembly.
fn fetch<'a>(
    map: &'a BTreeMap<MultiIndex, GridField>,
    gamma: &MultiIndex,
    alpha: &MultiIndex,
) -> Result<&'a GridField> {
    assert!(
        gamma.degree() < alpha.degree(),
        "source for {} tried to read {} (not strictly lower)",
        alpha.render(),
        gamma.render()
    );
    map.get(gamma).ok_or_else(|| {
        Error::DependencyViolation(format!(
            "{} requires coefficient {} which is not in the state",
            alpha.render(),
            gamma.render()
        ))
    })
}

/// Adds the noise source
/// `sum_k sqrt(a_k) m_{i_k}(t) [ sigma_{j_k}^i d_i u_{a-e_k} + g_{j_k} 1_{|a|=1} ]`
/// into `rhs`, with the time factor taken at the supplied stage time.
fn noise_into(
    rhs: &mut GridField,
    map: &BTreeMap<MultiIndex, GridField>,
    alpha: &MultiIndex,
    basis: &BasisSpec,
    coeffs: &PdeCoeffs,
    t: f64,
) -> Result<()> {
    if coeffs.sigma.is_empty() && coeffs.g.is_empty() {
        return Ok(());
    }
    let first_order = alpha.degree() == 1;
    for &(k, mult) in alpha.entries() {
        let (i, j) = basis.pairing(k);
        let m_t = basis.eval_time_mode(i, t);
        if m_t == 0.0 {
            continue;
        }
        let weight = (mult as f64).sqrt() * m_t;
        let channel = (j - 1) as usize;
        if !coeffs.sigma.is_empty() {
            let lower = fetch(map, &alpha.lower(k).expect("entry present"), alpha)?;
            let hat = forward(lower);
            for axis in 0..lower.grid().dim() {
                let d = inverse(&hat.derivative(axis));
                let sig = coeffs.sigma[channel][axis].component(0);
                for l in 0..lower.components() {
                    let out = rhs.component_mut(l);
                    let dl = d.component(l);
                    for (flat, o) in out.iter_mut().enumerate() {
                        *o += weight * sig[flat] * dl[flat];
                    }
                }
            }
        }
        if first_order && !coeffs.g.is_empty() {
            rhs.axpy(weight, &coeffs.g[channel]);
        }
    }
    Ok(())
}

/// Lower-triangular source for one coefficient at one stage time:
/// `-sum_{1<=|g|<=|a|-1} sqrt(binom(a,g)) (u_{a-g} . grad) u_g` plus the
/// noise terms, dealiased.
fn assemble_from_map(
    map: &BTreeMap<MultiIndex, GridField>,
    alpha: &MultiIndex,
    basis: &BasisSpec,
    coeffs: &PdeCoeffs,
    t: f64,
    grid: Grid,
    components: usize,
) -> Result<GridField> {
    let mut rhs = GridField::zeros(grid, components);
    let deg = alpha.degree();
    if deg >= 2 {
        for gamma in alpha.sub_indices() {
            let gdeg = gamma.degree();
            if gdeg == 0 || gdeg == deg {
                continue; // end terms belong to the linearized stepper
            }
            let other = alpha.sub_checked(&gamma).expect("gamma <= alpha");
            let weight = chaos_binomial_sqrt(alpha, &gamma)?;
            let u_adv = fetch(map, &other, alpha)?;
            let u_arg = fetch(map, &gamma, alpha)?;
            rhs.axpy(-weight, &advect(u_adv, u_arg)?);
        }
    }
    noise_into(&mut rhs, map, alpha, basis, coeffs, t)?;
    let mut hat = forward(&rhs);
    hat.dealias();
    Ok(inverse(&hat))
}

/// Public entry for the source assembly; reads only strictly-lower-degree
/// coefficients of `state` (asserted on every access).
pub fn assemble_f_alpha(
    state: &ChaosField,
    alpha: &MultiIndex,
    basis: &BasisSpec,
    coeffs: &PdeCoeffs,
    t: f64,
) -> Result<GridField> {
    assemble_from_map(
        &state.coeffs,
        alpha,
        basis,
        coeffs,
        t,
        state.grid(),
        state.components(),
    )
}

/// Reattributes a stepper blow-up to the coefficient that produced it.
fn tag_alpha(e: Error, alpha: &MultiIndex) -> Error {
    match e {
        Error::Blowup {
            time, sup, limit, ..
        } => Error::Blowup {
            time,
            coeff: alpha.render(),
            sup,
            limit,
        },
        other => other,
    }
}

/// Enumeration grouped by chaos degree, degree 0 first.
fn levels(truncation: TruncationSpec) -> Vec<Vec<MultiIndex>> {
    let mut out: Vec<Vec<MultiIndex>> = vec![Vec::new(); truncation.max_degree as usize + 1];
    for a in truncation.enumerate() {
        out[a.degree() as usize].push(a);
    }
    out
}

/// Advances the lower-triangular system and returns the snapshot series
/// (initial state first).  The mean advances by the nonlinear stepper; each
/// higher level then advances by the linearized stepper with stage-correct
/// sources, whole levels in parallel under `exec_mode`.
pub fn sweep_unbiased(run: &PropagatorRun, exec_mode: ExecMode) -> Result<Vec<ChaosField>> {
    run.validate()?;
    if run.mode != SweepMode::UnbiasedWick {
        return Err(Error::Domain("run.mode must be the lower-triangular system".into()));
    }
    let steps = run.steps();
    let snap_every = steps / run.snapshots;
    let by_level = levels(run.truncation);
    let grid = run.initial.grid();
    let components = run.initial.components();
    let base_t = run.initial.t();
    let empty = MultiIndex::empty();

    let mut state = run.initial.clone();
    let mut series = Vec::with_capacity(run.snapshots + 1);
    series.push(state.clone());

    for i in 0..steps {
        let t = base_t + i as f64 * run.dt;
        let t_next = base_t + (i + 1) as f64 * run.dt;
        let prev = &state.coeffs;

        let u0_next = ns_step(prev.get(&empty).unwrap(), &run.coeffs, t, run.dt)
            .map_err(|e| tag_alpha(e, &empty))?;
        let mut next: BTreeMap<MultiIndex, GridField> = BTreeMap::new();
        next.insert(empty.clone(), u0_next);

        for level in by_level.iter().skip(1) {
            let advanced = exec::map_collect(exec_mode, level, |alpha| {
                let f_now = assemble_from_map(prev, alpha, &run.basis, &run.coeffs, t, grid, components)?;
                let f_next =
                    assemble_from_map(&next, alpha, &run.basis, &run.coeffs, t_next, grid, components)?;
                let stages = StokesStages {
                    background: [prev.get(&empty).unwrap(), next.get(&empty).unwrap()],
                    forcing: [Some(&f_now), Some(&f_next)],
                };
                let out = stokes_step(prev.get(alpha).unwrap(), &run.coeffs, &stages, t, run.dt)
                    .map_err(|e| tag_alpha(e, alpha))?;
                Ok::<_, Error>((alpha.clone(), out))
            });
            for item in advanced {
                let (alpha, field) = item?;
                next.insert(alpha, field);
            }
        }

        state = ChaosField {
            truncation: run.truncation,
            t: t_next,
            coeffs: next,
        };
        if (i + 1) % snap_every == 0 {
            series.push(state.clone());
        }
    }
    Ok(series)
}

/// Result of a coupled sweep: the snapshot series plus, per coefficient, the
/// total coupling weight into the first shell outside the truncation (the
/// mass the truncation drops).
#[derive(Clone, Debug)]
pub struct StandardSweep {
    pub series: Vec<ChaosField>,
    pub dropped_weight: BTreeMap<MultiIndex, f64>,
}

/// Candidate p-indices for the coupled convective sum, one shell past the
/// truncation degree so dropped coupling can be quantified.
fn p_shell(truncation: TruncationSpec) -> Vec<MultiIndex> {
    TruncationSpec::new(truncation.max_degree + 1, truncation.max_index).enumerate()
}

/// Coupled convective source
/// `-sum_p sum_{b<=a} c(a,b,p) (u_{b+p} . grad) u_{a-b+p}`
/// over terms inside the truncation; `dropped`, when supplied, accumulates
/// the weight of terms whose indices leave it (first shell only).
fn coupled_convection(
    map: &BTreeMap<MultiIndex, GridField>,
    alpha: &MultiIndex,
    truncation: TruncationSpec,
    shell: &[MultiIndex],
    grid: Grid,
    components: usize,
    mut dropped: Option<&mut f64>,
) -> Result<GridField> {
    let mut rhs = GridField::zeros(grid, components);
    let max_deg = truncation.max_degree + 1;
    for beta in alpha.sub_indices() {
        let gamma = alpha.sub_checked(&beta).expect("beta <= alpha");
        for p in shell {
            let left = beta.add(p);
            let right = gamma.add(p);
            if truncation.contains(&left) && truncation.contains(&right) {
                let weight = propagator_coeff(alpha, &beta, p)?;
                let u_adv = map.get(&left).ok_or_else(|| {
                    Error::DependencyViolation(format!(
                        "{} requires coefficient {}",
                        alpha.render(),
                        left.render()
                    ))
                })?;
                let u_arg = map.get(&right).ok_or_else(|| {
                    Error::DependencyViolation(format!(
                        "{} requires coefficient {}",
                        alpha.render(),
                        right.render()
                    ))
                })?;
                rhs.axpy(-weight, &advect(u_adv, u_arg)?);
            } else if let Some(acc) = dropped.as_deref_mut() {
                if left.degree() <= max_deg && right.degree() <= max_deg {
                    *acc += propagator_coeff(alpha, &beta, p)?;
                }
            }
        }
    }
    Ok(rhs)
}

/// Full explicit right-hand sides of the coupled system at one stage time,
/// dealiased and projected, in enumeration order.
fn standard_rhs_all(
    map: &BTreeMap<MultiIndex, GridField>,
    run: &PropagatorRun,
    enumeration: &[MultiIndex],
    shell: &[MultiIndex],
    t: f64,
    exec_mode: ExecMode,
) -> Result<Vec<SpectralField>> {
    let grid = run.initial.grid();
    let components = run.initial.components();
    let project = run.coeffs.project && components == grid.dim();
    exec::map_collect(exec_mode, enumeration, |alpha| {
        let mut rhs = coupled_convection(map, alpha, run.truncation, shell, grid, components, None)?;
        noise_into(&mut rhs, map, alpha, &run.basis, &run.coeffs, t)?;
        if run.coeffs.b.iter().any(|&v| v != 0.0) {
            let hat = forward(map.get(alpha).unwrap());
            for axis in 0..grid.dim() {
                if run.coeffs.b[axis] != 0.0 {
                    rhs.axpy(run.coeffs.b[axis], &inverse(&hat.derivative(axis)));
                }
            }
        }
        if alpha.is_empty() {
            if let Some(f) = &run.coeffs.f {
                rhs.axpy(1.0, &f(t));
            }
        }
        let mut hat = forward(&rhs);
        hat.dealias();
        if project {
            hat.leray();
        }
        Ok::<_, Error>(hat)
    })
    .into_iter()
    .collect()
}

fn standard_cfl(state: &ChaosField, coeffs: &PdeCoeffs, t: f64, dt: f64) -> Result<()> {
    let mean = state.expectation();
    let mut speed = 0.0f64;
    for c in 0..mean.components() {
        let sup = mean.component(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        speed = speed.max(sup + coeffs.b.get(c).map_or(0.0, |v| v.abs()));
    }
    if speed > 0.0 {
        let limit = coeffs.cfl * mean.grid().spacing() / speed;
        if dt > limit {
            return Err(Error::CflViolation {
                t,
                dt,
                suggested_dt: limit,
            });
        }
    }
    Ok(())
}

/// Advances the fully coupled system with the same integrating-factor/Heun
/// contract as the cascade, all coefficients as one explicit system.
pub fn sweep_standard(run: &PropagatorRun, exec_mode: ExecMode) -> Result<StandardSweep> {
    run.validate()?;
    if run.mode != SweepMode::StandardSnse {
        return Err(Error::Domain("run.mode must be the coupled system".into()));
    }
    let steps = run.steps();
    let snap_every = steps / run.snapshots;
    let enumeration = run.truncation.enumerate();
    let shell = p_shell(run.truncation);
    let grid = run.initial.grid();
    let base_t = run.initial.t();
    let nu = run.coeffs.nu;
    let project = run.coeffs.project && run.initial.components() == grid.dim();

    // state-independent coupling weights lost to the truncation
    let mut dropped_weight = BTreeMap::new();
    for alpha in &enumeration {
        let mut acc = 0.0;
        coupled_convection(
            &run.initial.coeffs,
            alpha,
            run.truncation,
            &shell,
            grid,
            run.initial.components(),
            Some(&mut acc),
        )?;
        dropped_weight.insert(alpha.clone(), acc);
    }

    let mut state = run.initial.clone();
    let mut series = Vec::with_capacity(run.snapshots + 1);
    series.push(state.clone());

    for i in 0..steps {
        let t = base_t + i as f64 * run.dt;
        let t_next = base_t + (i + 1) as f64 * run.dt;
        standard_cfl(&state, &run.coeffs, t, run.dt)?;

        let spectra: Vec<SpectralField> = exec::map_collect(exec_mode, &enumeration, |alpha| {
            let mut hat = forward(state.coeffs.get(alpha).unwrap());
            hat.dealias();
            if project {
                hat.leray();
            }
            hat
        });

        let n1 = standard_rhs_all(&state.coeffs, run, &enumeration, &shell, t, exec_mode)?;

        // predictor for every coefficient
        let pred_fields: Vec<GridField> = exec::map_range(exec_mode, enumeration.len(), |idx| {
            let mut p = spectra[idx].clone();
            p.axpy(run.dt, &n1[idx]);
            p.integrating_factor(nu, run.dt);
            inverse(&p)
        });
        let pred_map: BTreeMap<MultiIndex, GridField> = enumeration
            .iter()
            .cloned()
            .zip(pred_fields)
            .collect();

        let n2 = standard_rhs_all(&pred_map, run, &enumeration, &shell, t_next, exec_mode)?;

        let stepped: Vec<Result<GridField>> = exec::map_range(exec_mode, enumeration.len(), |idx| {
            let mut out = spectra[idx].clone();
            out.integrating_factor(nu, run.dt);
            let mut n1e = n1[idx].clone();
            n1e.integrating_factor(nu, run.dt);
            out.axpy(0.5 * run.dt, &n1e);
            out.axpy(0.5 * run.dt, &n2[idx]);
            let field = inverse(&out);
            let sup = field.sup_norm();
            if !sup.is_finite() || sup > run.coeffs.blowup_limit {
                return Err(Error::Blowup {
                    time: t_next,
                    coeff: enumeration[idx].render(),
                    sup,
                    limit: run.coeffs.blowup_limit,
                });
            }
            Ok(field)
        });
        let mut next = BTreeMap::new();
        for (alpha, field) in enumeration.iter().zip(stepped) {
            next.insert(alpha.clone(), field?);
        }

        state = ChaosField {
            truncation: run.truncation,
            t: t_next,
            coeffs: next,
        };
        if (i + 1) % snap_every == 0 {
            series.push(state.clone());
        }
    }
    Ok(StandardSweep {
        series,
        dropped_weight,
    })
}

/// Dispatches on `run.mode` and returns the snapshot series.
pub fn sweep(run: &PropagatorRun, exec_mode: ExecMode) -> Result<Vec<ChaosField>> {
    match run.mode {
        SweepMode::UnbiasedWick => sweep_unbiased(run, exec_mode),
        SweepMode::StandardSnse => Ok(sweep_standard(run, exec_mode)?.series),
    }
}

/// Per-coefficient discrepancy between a full solve and a solve restarted
/// from a recorded snapshot.
#[derive(Clone, Debug)]
pub struct RestartReport {
    pub r_prime: f64,
    pub per_alpha: BTreeMap<MultiIndex, f64>,
    pub max: f64,
}

/// Solves on the full horizon, then re-solves from the snapshot at `r_prime`
/// and reports per-coefficient sup-norm discrepancies at the final time.
pub fn restart(run: &PropagatorRun, r_prime: f64, exec_mode: ExecMode) -> Result<RestartReport> {
    if !(run.initial.t()..=run.t_end).contains(&r_prime) {
        return Err(Error::Domain(format!(
            "restart time {r_prime} outside [{}, {}]",
            run.initial.t(),
            run.t_end
        )));
    }
    let series = sweep(run, exec_mode)?;
    let idx = series
        .iter()
        .position(|s| (s.t() - r_prime).abs() <= 1e-12)
        .ok_or_else(|| {
            Error::Domain(format!("restart time {r_prime} is not a snapshot time"))
        })?;
    let final_full = series.last().unwrap();

    let final_restarted = if idx == series.len() - 1 {
        series[idx].clone()
    } else {
        let mut rerun = run.clone();
        rerun.initial = series[idx].clone();
        rerun.snapshots = run.snapshots - idx;
        let tail = sweep(&rerun, exec_mode)?;
        tail.last().unwrap().clone()
    };

    let mut per_alpha = BTreeMap::new();
    let mut max = 0.0f64;
    for (alpha, field) in final_full.iter() {
        let other = final_restarted
            .get(alpha)
            .expect("same truncation on both solves");
        let d = field.max_abs_diff(other);
        max = max.max(d);
        per_alpha.insert(alpha.clone(), d);
    }
    Ok(RestartReport {
        r_prime,
        per_alpha,
        max,
    })
}

/// Coefficients pinned by localized noise: sup over the constrained set,
/// before and after the split time.
#[derive(Clone, Debug)]
pub struct CausalityReport {
    pub t_star: f64,
    /// Multi-indices touching a time mode supported entirely in (t_star, T].
    pub constrained: Vec<MultiIndex>,
    pub before_max: f64,
    pub after_max: f64,
}

/// With a Haar time basis, coefficients on modes supported after `t_star`
/// must vanish for t <= t_star; reports the observed extremes on both sides.
pub fn causality_check(
    run: &PropagatorRun,
    t_star: f64,
    exec_mode: ExecMode,
) -> Result<CausalityReport> {
    if run.basis.time_basis != TimeBasis::Haar {
        return Err(Error::Domain(
            "causality check needs the localized (Haar) time basis".into(),
        ));
    }
    if !(t_star > run.initial.t() && t_star < run.t_end) {
        return Err(Error::Domain(format!(
            "split time {t_star} must lie inside the horizon"
        )));
    }
    let late_modes: Vec<u32> = (1..=run.truncation.max_index)
        .filter(|&k| {
            let (i, _) = run.basis.pairing(k);
            let (lo, _) = run.basis.time_mode_support(i);
            lo >= t_star - 1e-12
        })
        .collect();
    let constrained: Vec<MultiIndex> = run
        .truncation
        .enumerate()
        .into_iter()
        .filter(|a| late_modes.iter().any(|&k| a.get(k) > 0))
        .collect();

    let series = sweep(run, exec_mode)?;
    let mut before_max = 0.0f64;
    let mut after_max = 0.0f64;
    for snap in &series {
        let sup = constrained
            .iter()
            .filter_map(|a| snap.get(a))
            .fold(0.0f64, |m, f| m.max(f.sup_norm()));
        if snap.t() <= t_star + 1e-12 {
            before_max = before_max.max(sup);
        } else {
            after_max = after_max.max(sup);
        }
    }
    Ok(CausalityReport {
        t_star,
        constrained,
        before_max,
        after_max,
    })
}

/// Recorded norms of one coefficient at one snapshot.
#[derive(Clone, Debug)]
pub struct NormRow {
    pub alpha: MultiIndex,
    pub degree: u32,
    pub h22: f64,
    pub h2p: f64,
    pub sup: f64,
}

/// All recorded norms of a snapshot, enumeration order.
pub fn norm_rows(field: &ChaosField, p: f64) -> Vec<NormRow> {
    field
        .iter()
        .map(|(a, f)| NormRow {
            alpha: a.clone(),
            degree: a.degree(),
            h22: sobolev_norm(f, SobolevNormSpec::new(2.0, 2.0)),
            h2p: sobolev_norm(f, SobolevNormSpec::new(2.0, p)),
            sup: f.sup_norm(),
        })
        .collect()
}

/// Per-coefficient `sup_t (|u_a|_{2,2} + |u_a|_{2,p})` over a snapshot series,
/// the growth data the Catalan bound is fitted against.
pub fn ltilde_map(series: &[ChaosField], p: f64) -> BTreeMap<MultiIndex, f64> {
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    for snap in series {
        for (a, f) in snap.iter() {
            let v = sobolev_norm(f, SobolevNormSpec::new(2.0, 2.0))
                + sobolev_norm(f, SobolevNormSpec::new(2.0, p));
            out.entry(a.clone())
                .and_modify(|m| *m = m.max(v))
                .or_insert(v);
        }
    }
    out
}
