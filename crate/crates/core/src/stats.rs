//! Moment extraction from chaos expansions, Monte-Carlo reconstruction of
//! realizations, and an independent pathwise stochastic solver used to
//! cross-validate the expansion in the linear case.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::BasisSpec;
use crate::chaos::xi_eval;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::multiindex::MultiIndex;
use crate::propagator::ChaosField;
use crate::scaling::{kondratiev_norm, quantize_factor_log};
use crate::spectral::{
    advect, forward, inverse, sobolev_norm, GridField, PdeCoeffs, SobolevNormSpec, SpectralField,
};

/// Second-moment evaluation at one point pair (flat grid indices): the raw
/// matrix sums over every coefficient, the centered one drops the mean mode.
#[derive(Clone, Debug)]
pub struct CovSample {
    pub x: usize,
    pub y: usize,
    /// `raw[i][j] = sum_a u_a^i(x) u_a^j(y)`, mean mode included.
    pub raw: Vec<Vec<f64>>,
    /// Same sum over `|a| >= 1` only.
    pub centered: Vec<Vec<f64>>,
}

/// First and second moments of an expansion, read off the coefficients.
#[derive(Clone, Debug)]
pub struct MomentReport {
    pub mean: GridField,
    pub covariance: Vec<CovSample>,
    /// Spatially integrated squared L2 mass per chaos degree.
    pub level_energy: Vec<f64>,
}

/// Spatially integrated squared L2 mass per chaos degree, degree 0 first.
pub fn level_energies(u: &ChaosField) -> Vec<f64> {
    let mut out = vec![0.0; u.truncation().max_degree as usize + 1];
    for (a, f) in u.iter() {
        let n = f.l2_norm();
        out[a.degree() as usize] += n * n;
    }
    out
}

/// Exact moments of the expansion: the mean is the mean mode, second moments
/// are coefficient sums evaluated at the requested point pairs.
pub fn chaos_moments(u: &ChaosField, pairs: &[(usize, usize)]) -> MomentReport {
    let c = u.components();
    let covariance = pairs
        .iter()
        .map(|&(x, y)| {
            let mut raw = vec![vec![0.0; c]; c];
            let mut centered = vec![vec![0.0; c]; c];
            for (a, f) in u.iter() {
                for i in 0..c {
                    for j in 0..c {
                        let term = f.component(i)[x] * f.component(j)[y];
                        raw[i][j] += term;
                        if !a.is_empty() {
                            centered[i][j] += term;
                        }
                    }
                }
            }
            CovSample {
                x,
                y,
                raw,
                centered,
            }
        })
        .collect();
    MomentReport {
        mean: u.expectation().clone(),
        covariance,
        level_energy: level_energies(u),
    }
}

/// Integral of the pointwise chaos variance `sum_{|a|>=1} |u_a(x)|^2` over
/// the torus; equals the squared-L2 coefficient energy by rearrangement.
pub fn integrated_variance(u: &ChaosField) -> f64 {
    let grid = u.grid();
    let mut acc = 0.0;
    for flat in 0..grid.points() {
        let mut var = 0.0;
        for (a, f) in u.iter() {
            if a.is_empty() {
                continue;
            }
            for c in 0..u.components() {
                let v = f.component(c)[flat];
                var += v * v;
            }
        }
        acc += var;
    }
    acc * grid.cell_volume()
}

/// Squared-L2 mass of the non-mean coefficients.
pub fn coefficient_energy(u: &ChaosField) -> f64 {
    u.iter()
        .filter(|(a, _)| !a.is_empty())
        .map(|(_, f)| {
            let n = f.l2_norm();
            n * n
        })
        .sum()
}

/// Seeded Gaussian source: each path owns an independent ChaCha stream, so
/// draws are reproducible and paths can be sampled in any order.
#[derive(Clone, Copy, Debug)]
pub struct MCSampler {
    pub seed: u64,
    pub paths: usize,
}

impl MCSampler {
    pub fn new(seed: u64, paths: usize) -> Self {
        MCSampler { seed, paths }
    }

    /// The RNG owned by one path.
    pub fn rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        rng
    }

    /// First `n` standard normals of one path's stream.
    pub fn gaussians(&self, path: usize, n: usize) -> Vec<f64> {
        let mut rng = self.rng(path);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// One realization `sum_a u_a xi_a(g)` of the expansion at sampled
/// Gaussians `g[k-1] = W(e_k)`.
pub fn sample_realization(u: &ChaosField, draws: &[f64]) -> Result<GridField> {
    let mut out = GridField::zeros(u.grid(), u.components());
    for (a, f) in u.iter() {
        let w = xi_eval(a, draws)?;
        if w != 0.0 {
            out.axpy(w, f);
        }
    }
    Ok(out)
}

/// A batch of sampled realizations together with the degree-level energy
/// profile; `level_energy_decaying = false` flags an expansion whose tail is
/// not converging (sampling it is statistically meaningless).
#[derive(Clone, Debug)]
pub struct Realizations {
    pub samples: Vec<GridField>,
    pub level_energy: Vec<f64>,
    pub level_energy_decaying: bool,
}

fn levels_decay(level_energy: &[f64]) -> bool {
    // the mean mode is not part of the fluctuation cascade
    level_energy
        .iter()
        .skip(1)
        .zip(level_energy.iter().skip(2))
        .all(|(a, b)| *b <= *a * (1.0 + 1e-12) + 1e-300)
}

/// Samples `sampler.paths` independent realizations, paths in parallel under
/// `mode`, output in path order (bit-reproducible for a fixed seed).
pub fn sample_realizations(
    u: &ChaosField,
    sampler: &MCSampler,
    mode: ExecMode,
) -> Result<Realizations> {
    if sampler.paths == 0 {
        return Err(Error::EmptyInput("no paths requested".into()));
    }
    let n_draws = u.truncation().max_index as usize;
    let samples: Vec<Result<GridField>> = exec::map_range(mode, sampler.paths, |p| {
        let g = sampler.gaussians(p, n_draws);
        sample_realization(u, &g)
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let level_energy = level_energies(u);
    let level_energy_decaying = levels_decay(&level_energy);
    Ok(Realizations {
        samples,
        level_energy,
        level_energy_decaying,
    })
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Empirical moments at the probe points: `mean`, centered `variance` and
/// raw `second` moment, indexed `[probe][component]`.
#[derive(Clone, Debug)]
pub struct McMoments {
    pub paths: usize,
    pub probes: Vec<usize>,
    pub mean: Vec<Vec<Estimate>>,
    pub variance: Vec<Vec<Estimate>>,
    pub second: Vec<Vec<Estimate>>,
}

/// Pathwise solver configuration: the stochastic system, the probe set, and
/// `linear_only` to drop self-advection (the regime where the pathwise law
/// and the expansion describe the same object).
#[derive(Clone)]
pub struct EmRun<'a> {
    pub coeffs: &'a PdeCoeffs,
    pub basis: &'a BasisSpec,
    pub initial: &'a GridField,
    pub dt: f64,
    pub linear_only: bool,
    pub probes: &'a [usize],
}

impl EmRun<'_> {
    fn steps(&self) -> usize {
        (self.basis.horizon / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let grid = self.initial.grid();
        self.coeffs.validate(grid, self.initial.components())?;
        if !(self.dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        let steps = self.steps();
        if steps == 0 || (steps as f64 * self.dt - self.basis.horizon).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "dt {} does not divide the horizon {}",
                self.dt, self.basis.horizon
            )));
        }
        let m = self.basis.m_noise;
        if !self.coeffs.sigma.is_empty() && self.coeffs.sigma.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} sigma channels for {} noise components",
                self.coeffs.sigma.len(),
                m
            )));
        }
        if !self.coeffs.g.is_empty() && self.coeffs.g.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} g channels for {} noise components",
                self.coeffs.g.len(),
                m
            )));
        }
        if self.probes.is_empty() {
            return Err(Error::EmptyInput("no probe points".into()));
        }
        if let Some(&p) = self.probes.iter().find(|&&p| p >= grid.points()) {
            return Err(Error::Domain(format!(
                "probe {p} outside a grid of {} points",
                grid.points()
            )));
        }
        if !self.linear_only {
            // pathwise convection needs a CFL guard on the initial data at least
            let speed = self.initial.sup_norm();
            if speed > 0.0 && self.dt > self.coeffs.cfl * grid.spacing() / speed {
                return Err(Error::CflViolation {
                    t: 0.0,
                    dt: self.dt,
                    suggested_dt: self.coeffs.cfl * grid.spacing() / speed,
                });
            }
        }
        Ok(())
    }

    /// Every term in the step is diagonal in Fourier space: no convection,
    /// no drift, no deterministic forcing, additive noise only.
    fn diagonal(&self) -> bool {
        self.linear_only
            && self.coeffs.sigma.is_empty()
            && self.coeffs.f.is_none()
            && self.coeffs.b.iter().all(|&v| v == 0.0)
    }
}

fn prepared_spectrum(u: &GridField, coeffs: &PdeCoeffs) -> SpectralField {
    let mut hat = forward(u);
    hat.dealias();
    if coeffs.project && u.components() == u.grid().dim() {
        hat.leray();
    }
    hat
}

/// One explicit Euler-Maruyama path on the spectral diagonal: the state
/// spectrum plus scaled additive-noise spectra, integrating factor per step.
fn em_path_diagonal(
    run: &EmRun,
    u0_hat: &SpectralField,
    g_hat: &[SpectralField],
    rng: &mut ChaCha8Rng,
) -> GridField {
    let steps = run.steps();
    let sqrt_dt = run.dt.sqrt();
    let mut u_hat = u0_hat.clone();
    for _ in 0..steps {
        for gh in g_hat {
            let z: f64 = rng.sample(StandardNormal);
            u_hat.axpy(sqrt_dt * z, gh);
        }
        u_hat.integrating_factor(run.coeffs.nu, run.dt);
    }
    inverse(&u_hat)
}

/// One explicit Euler-Maruyama path in physical space: drift and noise
/// assembled on the grid, spectrum advanced with the integrating factor.
fn em_path_general(run: &EmRun, rng: &mut ChaCha8Rng) -> Result<GridField> {
    let grid = run.initial.grid();
    let components = run.initial.components();
    let coeffs = run.coeffs;
    let m = run.basis.m_noise;
    let steps = run.steps();
    let sqrt_dt = run.dt.sqrt();
    let velocity_like = components == grid.dim();

    let mut u = run.initial.clone();
    for step in 0..steps {
        let t = step as f64 * run.dt;
        let mut acc = GridField::zeros(grid, components);

        // drift, scaled by dt
        if !run.linear_only {
            if velocity_like {
                acc.axpy(-run.dt, &advect(&u, &u)?);
            } else {
                let du = inverse(&forward(&u).derivative(0));
                for (o, (a, b)) in acc
                    .component_mut(0)
                    .iter_mut()
                    .zip(u.component(0).iter().zip(du.component(0)))
                {
                    *o -= run.dt * a * b;
                }
            }
        }
        if coeffs.b.iter().any(|&v| v != 0.0) {
            let hat = forward(&u);
            for axis in 0..grid.dim() {
                if coeffs.b[axis] != 0.0 {
                    acc.axpy(run.dt * coeffs.b[axis], &inverse(&hat.derivative(axis)));
                }
            }
        }
        if let Some(f) = &coeffs.f {
            acc.axpy(run.dt, &f(t));
        }

        // noise increments, one Brownian per channel
        for j in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            let dw = sqrt_dt * z;
            if !coeffs.sigma.is_empty() {
                let hat = forward(&u);
                for axis in 0..grid.dim() {
                    let d = inverse(&hat.derivative(axis));
                    let sig = coeffs.sigma[j][axis].component(0);
                    for l in 0..components {
                        let out = acc.component_mut(l);
                        let dl = d.component(l);
                        for (flat, o) in out.iter_mut().enumerate() {
                            *o += dw * sig[flat] * dl[flat];
                        }
                    }
                }
            }
            if !coeffs.g.is_empty() {
                acc.axpy(dw, &coeffs.g[j]);
            }
        }

        let mut u_hat = prepared_spectrum(&u, coeffs);
        u_hat.axpy(1.0, &prepared_spectrum(&acc, coeffs));
        u_hat.integrating_factor(coeffs.nu, run.dt);
        u = inverse(&u_hat);

        let sup = u.sup_norm();
        if !sup.is_finite() || sup > coeffs.blowup_limit {
            return Err(Error::Blowup {
                time: t + run.dt,
                coeff: "path state".into(),
                sup,
                limit: coeffs.blowup_limit,
            });
        }
    }
    Ok(u)
}

/// Pathwise Euler-Maruyama moments at the probes: explicit drift and noise,
/// exact viscous integrating factor, independent Brownian increment per
/// noise channel per step. Paths run in parallel under `mode`; moment
/// reductions are a fixed-order pass over the path table.
pub fn euler_maruyama_oracle(
    run: &EmRun,
    sampler: &MCSampler,
    mode: ExecMode,
) -> Result<McMoments> {
    run.validate()?;
    if sampler.paths < 2 {
        return Err(Error::EmptyInput(
            "need at least two paths for standard errors".into(),
        ));
    }
    let components = run.initial.components();
    let width = run.probes.len() * components;

    let table: Vec<Result<Vec<f64>>> = if run.diagonal() {
        let u0_hat = prepared_spectrum(run.initial, run.coeffs);
        let g_hat: Vec<SpectralField> = run
            .coeffs
            .g
            .iter()
            .map(|g| prepared_spectrum(g, run.coeffs))
            .collect();
        exec::map_range(mode, sampler.paths, |p| {
            let mut rng = sampler.rng(p);
            let u = em_path_diagonal(run, &u0_hat, &g_hat, &mut rng);
            Ok(probe_values(&u, run.probes))
        })
    } else {
        exec::map_range(mode, sampler.paths, |p| {
            let mut rng = sampler.rng(p);
            let u = em_path_general(run, &mut rng)?;
            Ok(probe_values(&u, run.probes))
        })
    };
    let table = table.into_iter().collect::<Result<Vec<_>>>()?;

    let n = sampler.paths as f64;
    let mut mean_flat = vec![0.0; width];
    for row in &table {
        for (m, v) in mean_flat.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean_flat {
        *m /= n;
    }
    // central moments in a second fixed-order pass
    let mut m2 = vec![0.0; width];
    let mut m4 = vec![0.0; width];
    let mut s2 = vec![0.0; width]; // spread of the squared values, for SE(second)
    let mut second_flat = vec![0.0; width];
    for row in &table {
        for k in 0..width {
            let d = row[k] - mean_flat[k];
            m2[k] += d * d;
            m4[k] += d * d * d * d;
            second_flat[k] += row[k] * row[k];
        }
    }
    for k in 0..width {
        m2[k] /= n;
        m4[k] /= n;
        second_flat[k] /= n;
    }
    for row in &table {
        for k in 0..width {
            let d = row[k] * row[k] - second_flat[k];
            s2[k] += d * d;
        }
    }

    let unpack = |flat: &dyn Fn(usize) -> Estimate| -> Vec<Vec<Estimate>> {
        run.probes
            .iter()
            .enumerate()
            .map(|(pi, _)| (0..components).map(|c| flat(pi * components + c)).collect())
            .collect()
    };
    let mean = unpack(&|k| Estimate {
        value: mean_flat[k],
        se: (m2[k] / (n - 1.0)).sqrt(),
    });
    let variance = unpack(&|k| Estimate {
        value: m2[k] * n / (n - 1.0),
        se: ((m4[k] - m2[k] * m2[k]).max(0.0) / n).sqrt(),
    });
    let second = unpack(&|k| Estimate {
        value: second_flat[k],
        se: (s2[k] / (n * (n - 1.0))).sqrt(),
    });
    Ok(McMoments {
        paths: sampler.paths,
        probes: run.probes.to_vec(),
        mean,
        variance,
        second,
    })
}

fn probe_values(u: &GridField, probes: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(probes.len() * u.components());
    for &p in probes {
        for c in 0..u.components() {
            out.push(u.component(c)[p]);
        }
    }
    out
}

/// One row of the contraction-convergence table.
#[derive(Clone, Copy, Debug)]
pub struct RescalingRow {
    pub eps: f64,
    /// sup over snapshots of the weighted (-1, -q) distance between the
    /// contracted and the original expansion.
    pub distance: f64,
}

/// Distances for a decreasing contraction-strength list, plus the contract
/// verdicts the study is judged by.
#[derive(Clone, Debug)]
pub struct RescalingStudy {
    pub q: f64,
    pub rows: Vec<RescalingRow>,
    pub weakly_decreasing: bool,
    /// last distance / first distance (NaN when the first is zero).
    pub final_over_first: f64,
}

/// Weighted (-1, -q) distance sup over a snapshot series between each
/// contracted expansion and the original, for strictly decreasing `eps_list`.
pub fn rescaling_convergence_study(
    series: &[ChaosField],
    eps_list: &[f64],
    q: f64,
) -> Result<RescalingStudy> {
    if series.is_empty() {
        return Err(Error::EmptyInput("no snapshots".into()));
    }
    if eps_list.is_empty() {
        return Err(Error::EmptyInput("no contraction strengths".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain(
            "contraction strengths must be strictly decreasing".into(),
        ));
    }
    if eps_list.iter().any(|&e| e < 0.0 || !e.is_finite()) {
        return Err(Error::Domain(
            "contraction strengths must be finite and nonnegative".into(),
        ));
    }

    // spatial magnitude of every coefficient, per snapshot, computed once
    let snapshot_mags: Vec<BTreeMap<MultiIndex, f64>> = series
        .iter()
        .map(|snap| {
            snap.iter()
                .map(|(a, f)| (a.clone(), sobolev_norm(f, SobolevNormSpec::new(2.0, 2.0))))
                .collect()
        })
        .collect();

    let rows: Vec<RescalingRow> = eps_list
        .iter()
        .map(|&eps| {
            let mut sup = 0.0f64;
            for mags in &snapshot_mags {
                let diff: BTreeMap<MultiIndex, f64> = mags
                    .iter()
                    .map(|(a, &m)| {
                        let factor = quantize_factor_log(a, eps).exp();
                        (a.clone(), (factor - 1.0).abs() * m)
                    })
                    .collect();
                sup = sup.max(kondratiev_norm(&diff, -1.0, q));
            }
            RescalingRow { eps, distance: sup }
        })
        .collect();

    let first = rows.first().unwrap().distance;
    let weakly_decreasing = rows
        .windows(2)
        .all(|w| w[1].distance <= w[0].distance * (1.0 + 1e-12) + 1e-300);
    let final_over_first = if first > 0.0 {
        rows.last().unwrap().distance / first
    } else if rows.last().unwrap().distance == 0.0 {
        0.0
    } else {
        f64::NAN
    };
    Ok(RescalingStudy {
        q,
        rows,
        weakly_decreasing,
        final_over_first,
    })
}
