//! Periodic pseudo-spectral spatial discretization on [0, 2pi)^d for d = 1, 2:
//! grid fields, Fourier transforms, solenoidal (Leray) projection, Sobolev
//! norms via Bessel-potential multipliers, and semi-implicit IMEX steppers
//! for Navier-Stokes and linearized Stokes systems.
//!
//! Steppers keep the state two-thirds band-limited: every quadratic term is
//! dealiased, diffusion is integrated exactly in Fourier space, and the
//! explicit part uses a second-order Runge-Kutta (Heun) update under the
//! viscous integrating factor.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform periodic grid: `n` points per axis on [0, 2pi)^dim.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Domain(format!("grid dim must be 1 or 2, got {dim}")));
        }
        if !n.is_power_of_two() || n < 4 {
            return Err(Error::Domain(format!(
                "grid resolution must be a power of two >= 4, got {n}"
            )));
        }
        Ok(Grid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Signed integer wavenumber for a storage index along one axis.
    fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Axis indices (i1[, i2]) of a flattened point or mode index.
    fn unflatten(&self, flat: usize) -> [usize; 2] {
        match self.dim {
            1 => [flat, 0],
            _ => [flat / self.n, flat % self.n],
        }
    }

    /// Physical coordinates of a flattened point index.
    pub fn point(&self, flat: usize) -> [f64; 2] {
        let idx = self.unflatten(flat);
        let h = self.spacing();
        [idx[0] as f64 * h, idx[1] as f64 * h]
    }
}

/// Real field sampled on a `Grid`; `components` blocks stored
/// component-major, each block row-major over the grid points.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: Grid,
    components: usize,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid, components: usize) -> Self {
        GridField {
            grid,
            components,
            data: vec![0.0; components * grid.points()],
        }
    }

    /// Samples `f(component, x)` at every grid point.
    pub fn from_fn(grid: Grid, components: usize, f: impl Fn(usize, [f64; 2]) -> f64) -> Self {
        let mut out = GridField::zeros(grid, components);
        for c in 0..components {
            for flat in 0..grid.points() {
                out.component_mut(c)[flat] = f(c, grid.point(flat));
            }
        }
        out
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let p = self.grid.points();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.grid.points();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L2 norm with cell-volume weighting, all components pooled.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.data.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &GridField) {
        assert_eq!(self.data.len(), other.data.len());
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Discrete L2 inner product (cell-volume weighted, components pooled).
pub fn l2_inner(u: &GridField, v: &GridField) -> f64 {
    assert_eq!(u.data.len(), v.data.len());
    u.grid.cell_volume()
        * u.data
            .iter()
            .zip(&v.data)
            .map(|(a, b)| a * b)
            .sum::<f64>()
}

/// Fourier coefficients of a `GridField`, same layout, unit-amplitude
/// normalization (`u_x = sum_k uhat_k e^{ik.x}`).
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Grid,
    components: usize,
    data: Vec<Complex<f64>>,
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place transform of one component block (length points of `grid`).
fn transform_block(grid: Grid, block: &mut [Complex<f64>], inverse: bool) {
    let n = grid.n;
    let fft = plan(n, inverse);
    match grid.dim {
        1 => fft.process(block),
        _ => {
            // rows (second axis contiguous), then columns via transpose
            for row in block.chunks_exact_mut(n) {
                fft.process(row);
            }
            let mut t = vec![Complex::default(); n * n];
            for i in 0..n {
                for j in 0..n {
                    t[j * n + i] = block[i * n + j];
                }
            }
            for row in t.chunks_exact_mut(n) {
                fft.process(row);
            }
            for i in 0..n {
                for j in 0..n {
                    block[i * n + j] = t[j * n + i];
                }
            }
        }
    }
}

/// Forward transform to Fourier coefficients.
pub fn forward(field: &GridField) -> SpectralField {
    let grid = field.grid;
    let p = grid.points();
    let mut data: Vec<Complex<f64>> = field.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let scale = 1.0 / p as f64;
    for block in data.chunks_exact_mut(p) {
        transform_block(grid, block, false);
        for v in block.iter_mut() {
            *v *= scale;
        }
    }
    SpectralField {
        grid,
        components: field.components,
        data,
    }
}

/// Inverse transform back to point values (imaginary parts dropped).
pub fn inverse(spec: &SpectralField) -> GridField {
    let grid = spec.grid;
    let p = grid.points();
    let mut data = spec.data.clone();
    for block in data.chunks_exact_mut(p) {
        transform_block(grid, block, true);
    }
    GridField {
        grid,
        components: spec.components,
        data: data.iter().map(|v| v.re).collect(),
    }
}

impl SpectralField {
    pub fn zeros(grid: Grid, components: usize) -> Self {
        SpectralField {
            grid,
            components,
            data: vec![Complex::default(); components * grid.points()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn component(&self, c: usize) -> &[Complex<f64>] {
        let p = self.grid.points();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex<f64>] {
        let p = self.grid.points();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Integer wavenumber vector of a flattened mode index.
    fn mode(&self, flat: usize) -> [i64; 2] {
        let idx = self.grid.unflatten(flat);
        match self.grid.dim {
            1 => [self.grid.wavenumber(idx[0]), 0],
            _ => [
                self.grid.wavenumber(idx[0]),
                self.grid.wavenumber(idx[1]),
            ],
        }
    }

    /// Two-thirds rule: zeroes every mode with any axis wavenumber above n/3.
    pub fn dealias(&mut self) {
        let p = self.grid.points();
        let n = self.grid.n as i64;
        for flat in 0..p {
            let k = self.mode(flat);
            if 3 * k[0].abs() > n || 3 * k[1].abs() > n {
                for c in 0..self.components {
                    self.data[c * p + flat] = Complex::default();
                }
            }
        }
    }

    /// Spectral partial derivative along `axis` (Nyquist row zeroed).
    pub fn derivative(&self, axis: usize) -> SpectralField {
        assert!(axis < self.grid.dim);
        let p = self.grid.points();
        let nyq = (self.grid.n / 2) as i64;
        let mut out = self.clone();
        for flat in 0..p {
            let k = self.mode(flat)[axis];
            let mult = if k.abs() == nyq {
                Complex::default()
            } else {
                Complex::new(0.0, k as f64)
            };
            for c in 0..self.components {
                out.data[c * p + flat] = self.data[c * p + flat] * mult;
            }
        }
        out
    }

    /// Bessel-potential multiplier (1+|k|^2)^{s/2}.
    pub fn bessel(&mut self, s: f64) {
        let p = self.grid.points();
        for flat in 0..p {
            let k = self.mode(flat);
            let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            let mult = (1.0 + k2).powf(0.5 * s);
            for c in 0..self.components {
                self.data[c * p + flat] *= mult;
            }
        }
    }

    /// In-place solenoidal projection uhat_k <- (I - k k*/|k|^2) uhat_k;
    /// the zero mode is untouched.
    pub fn leray(&mut self) {
        assert_eq!(
            self.components, self.grid.dim,
            "projection needs a full velocity field"
        );
        let p = self.grid.points();
        for flat in 0..p {
            let k = self.mode(flat);
            let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            if k2 == 0.0 {
                continue;
            }
            let mut dot = Complex::default();
            for c in 0..self.components {
                dot += self.data[c * p + flat] * k[c] as f64;
            }
            for c in 0..self.components {
                self.data[c * p + flat] -= dot * (k[c] as f64 / k2);
            }
        }
    }

    /// Multiplies every mode by exp(-nu |k|^2 dt).
    pub fn integrating_factor(&mut self, nu: f64, dt: f64) {
        let p = self.grid.points();
        for flat in 0..p {
            let k = self.mode(flat);
            let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            let e = (-nu * k2 * dt).exp();
            for c in 0..self.components {
                self.data[c * p + flat] *= e;
            }
        }
    }

    /// Spectral divergence sum_i ik_i uhat^i (derivative convention, so the
    /// Nyquist row does not contribute).
    pub fn divergence(&self) -> SpectralField {
        assert_eq!(self.components, self.grid.dim);
        let mut out = SpectralField::zeros(self.grid, 1);
        for axis in 0..self.grid.dim {
            let d = self.derivative(axis);
            for (o, v) in out
                .component_mut(0)
                .iter_mut()
                .zip(d.component(axis))
            {
                *o += v;
            }
        }
        out
    }

    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        assert_eq!(self.data.len(), other.data.len());
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += o * a;
        }
    }
}

/// Solenoidal projection of a velocity field.
pub fn leray_project(v: &GridField) -> Result<GridField> {
    if v.components != v.grid.dim {
        return Err(Error::DimensionMismatch(format!(
            "projection needs {} components, field has {}",
            v.grid.dim, v.components
        )));
    }
    let mut spec = forward(v);
    spec.leray();
    Ok(inverse(&spec))
}

/// Sup-modulus of the spectral divergence of a velocity field.
pub fn divergence_sup(v: &GridField) -> Result<f64> {
    if v.components != v.grid.dim {
        return Err(Error::DimensionMismatch(format!(
            "divergence needs {} components, field has {}",
            v.grid.dim, v.components
        )));
    }
    let div = forward(v).divergence();
    Ok(div.data.iter().fold(0.0, |m, z| m.max(z.norm())))
}

/// Order/exponent pair selecting the norm `|Lambda^s u|_p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolevNormSpec {
    pub s: f64,
    pub p: f64,
}

impl SobolevNormSpec {
    pub fn new(s: f64, p: f64) -> Self {
        SobolevNormSpec { s, p }
    }
}

/// Discrete L_p norm with cell-volume weighting; vector fields use the
/// pointwise Euclidean magnitude.
pub fn lp_norm(u: &GridField, p: f64) -> f64 {
    assert!(p >= 1.0);
    let points = u.grid.points();
    let mut acc = 0.0;
    for flat in 0..points {
        let mut mag2 = 0.0;
        for c in 0..u.components {
            let v = u.component(c)[flat];
            mag2 += v * v;
        }
        acc += mag2.sqrt().powf(p);
    }
    (u.grid.cell_volume() * acc).powf(1.0 / p)
}

/// `|Lambda^s u|_p`: Bessel multiplier in Fourier space, then discrete L_p.
pub fn sobolev_norm(u: &GridField, spec: SobolevNormSpec) -> f64 {
    let mut hat = forward(u);
    hat.bessel(spec.s);
    lp_norm(&inverse(&hat), spec.p)
}

/// Time-dependent deterministic forcing.
pub type ForcingFn = Arc<dyn Fn(f64) -> GridField + Send + Sync>;

/// Coefficients of the driven (Navier-)Stokes system: viscosity, constant
/// drift, noise fields, deterministic forcing, and stepper guards.
#[derive(Clone)]
pub struct PdeCoeffs {
    /// Viscosity (diffusion is nu * identity).
    pub nu: f64,
    /// Constant drift vector, one entry per spatial dimension.
    pub b: Vec<f64>,
    /// Scalar noise coefficient fields: `sigma[j][i]` multiplies the i-th
    /// derivative in the j-th noise channel.
    pub sigma: Vec<Vec<GridField>>,
    /// Additive noise fields, one per channel, shaped like the state.
    pub g: Vec<GridField>,
    /// Deterministic forcing at time t, shaped like the state.
    pub f: Option<ForcingFn>,
    /// Apply the solenoidal projection (velocity systems; off for scalar
    /// Burgers).
    pub project: bool,
    /// Advective CFL fraction.
    pub cfl: f64,
    /// Abort threshold on the state sup-norm; infinite disables the guard.
    pub blowup_limit: f64,
}

impl std::fmt::Debug for PdeCoeffs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeCoeffs")
            .field("nu", &self.nu)
            .field("b", &self.b)
            .field("sigma_channels", &self.sigma.len())
            .field("g_channels", &self.g.len())
            .field("has_f", &self.f.is_some())
            .field("project", &self.project)
            .field("cfl", &self.cfl)
            .field("blowup_limit", &self.blowup_limit)
            .finish()
    }
}

impl PdeCoeffs {
    pub fn new(nu: f64, dim: usize) -> Self {
        PdeCoeffs {
            nu,
            b: vec![0.0; dim],
            sigma: Vec::new(),
            g: Vec::new(),
            f: None,
            project: dim > 1,
            cfl: 0.5,
            blowup_limit: f64::INFINITY,
        }
    }

    pub fn noise_channels(&self) -> usize {
        self.g.len().max(self.sigma.len())
    }

    /// Structural and boundedness checks: positive viscosity, drift length,
    /// and finite noise fields with finite first derivatives.
    pub fn validate(&self, grid: Grid, components: usize) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::Domain(format!(
                "viscosity must be positive, got {}",
                self.nu
            )));
        }
        if self.b.len() != grid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "drift has {} entries for a {}-d grid",
                self.b.len(),
                grid.dim()
            )));
        }
        if !self.b.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("drift entries must be finite".into()));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Domain(format!(
                "CFL fraction must lie in (0, 1], got {}",
                self.cfl
            )));
        }
        for (j, channel) in self.sigma.iter().enumerate() {
            if channel.len() != grid.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "sigma channel {j} has {} direction fields, grid needs {}",
                    channel.len(),
                    grid.dim()
                )));
            }
            for (i, field) in channel.iter().enumerate() {
                check_coefficient_field(field, grid, 1, &format!("sigma[{j}][{i}]"))?;
            }
        }
        for (j, field) in self.g.iter().enumerate() {
            check_coefficient_field(field, grid, components, &format!("g[{j}]"))?;
        }
        Ok(())
    }
}

fn check_coefficient_field(
    field: &GridField,
    grid: Grid,
    components: usize,
    name: &str,
) -> Result<()> {
    if field.grid != grid || field.components != components {
        return Err(Error::DimensionMismatch(format!(
            "{name}: expected {components} components on the solver grid"
        )));
    }
    if !field.is_finite() {
        return Err(Error::Domain(format!("{name}: values must be finite")));
    }
    let hat = forward(field);
    for axis in 0..grid.dim() {
        if !inverse(&hat.derivative(axis)).is_finite() {
            return Err(Error::Domain(format!(
                "{name}: first derivatives must be finite"
            )));
        }
    }
    Ok(())
}

/// Pseudo-spectral advection (v . grad) w; v must be a full velocity field.
pub fn advect(v: &GridField, w: &GridField) -> Result<GridField> {
    if v.components != v.grid.dim {
        return Err(Error::DimensionMismatch(format!(
            "advecting velocity needs {} components, got {}",
            v.grid.dim, v.components
        )));
    }
    if v.grid != w.grid {
        return Err(Error::DimensionMismatch(
            "advection fields live on different grids".into(),
        ));
    }
    let w_hat = forward(w);
    let mut out = GridField::zeros(w.grid, w.components);
    for axis in 0..v.grid.dim {
        let dw = inverse(&w_hat.derivative(axis));
        for l in 0..w.components {
            let vout = out.component_mut(l);
            // product in physical space; truncated again when the caller
            // transforms the assembled right-hand side
            for (flat, o) in vout.iter_mut().enumerate() {
                *o += v.component(axis)[flat] * dw.component(l)[flat];
            }
        }
    }
    Ok(out)
}

fn advective_speed(u: &GridField, b: &[f64]) -> f64 {
    let mut speed = 0.0f64;
    for c in 0..u.components.min(u.grid.dim) {
        let sup = u.component(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        speed = speed.max(sup + b.get(c).map_or(0.0, |v| v.abs()));
    }
    // scalar transport (Burgers) advects with the state itself
    if u.components < u.grid.dim {
        speed = speed.max(u.sup_norm());
    }
    speed
}

fn cfl_check(u: &GridField, b: &[f64], cfl: f64, t: f64, dt: f64) -> Result<()> {
    let speed = advective_speed(u, b);
    if speed > 0.0 {
        let limit = cfl * u.grid.spacing() / speed;
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

fn blowup_check(u: &GridField, limit: f64, t: f64) -> Result<()> {
    let sup = u.sup_norm();
    if !sup.is_finite() || sup > limit {
        return Err(Error::Blowup {
            time: t,
            coeff: "state".into(),
            sup,
            limit,
        });
    }
    Ok(())
}

/// Dealiased, optionally projected spectrum of an assembled right-hand side.
fn prepare_rhs(mut rhs: SpectralField, project: bool) -> SpectralField {
    rhs.dealias();
    if project && rhs.components == rhs.grid.dim {
        rhs.leray();
    }
    rhs
}

/// Explicit part of the Navier-Stokes right-hand side,
/// P[b . grad u - (u . grad) u + f(t)], as a dealiased spectrum.
fn ns_rhs(u: &GridField, coeffs: &PdeCoeffs, t: f64) -> Result<SpectralField> {
    let velocity_like = u.components == u.grid.dim;
    let mut rhs = GridField::zeros(u.grid, u.components);
    if velocity_like {
        rhs.axpy(-1.0, &advect(u, u)?);
    } else {
        // scalar Burgers: u u_x written as self-transport
        let du = inverse(&forward(u).derivative(0));
        for (o, (a, b)) in rhs
            .component_mut(0)
            .iter_mut()
            .zip(u.component(0).iter().zip(du.component(0)))
        {
            *o -= a * b;
        }
    }
    if coeffs.b.iter().any(|&v| v != 0.0) {
        let hat = forward(u);
        for axis in 0..u.grid.dim {
            if coeffs.b[axis] != 0.0 {
                rhs.axpy(coeffs.b[axis], &inverse(&hat.derivative(axis)));
            }
        }
    }
    if let Some(f) = &coeffs.f {
        let ft = f(t);
        if ft.grid != u.grid || ft.components != u.components {
            return Err(Error::DimensionMismatch(
                "forcing shape does not match the state".into(),
            ));
        }
        rhs.axpy(1.0, &ft);
    }
    Ok(prepare_rhs(forward(&rhs), coeffs.project))
}

/// One IMEX step of `d_t u = P[nu lap u + b . grad u - (u . grad) u + f]`:
/// exact viscous integrating factor, Heun on the explicit part, two-thirds
/// dealiasing, re-projection.
pub fn ns_step(u: &GridField, coeffs: &PdeCoeffs, t: f64, dt: f64) -> Result<GridField> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    cfl_check(u, &coeffs.b, coeffs.cfl, t, dt)?;

    let mut u_hat = forward(u);
    u_hat.dealias();
    if coeffs.project && u.components == u.grid.dim {
        u_hat.leray();
    }

    let n1 = ns_rhs(u, coeffs, t)?;

    // predictor: u1 = E(dt) (u + dt N1)
    let mut pred = u_hat.clone();
    pred.axpy(dt, &n1);
    pred.integrating_factor(coeffs.nu, dt);
    let u1 = inverse(&pred);

    let n2 = ns_rhs(&u1, coeffs, t + dt)?;

    // corrector: E(dt) u + dt/2 (E(dt) N1 + N2)
    let mut out = u_hat;
    out.integrating_factor(coeffs.nu, dt);
    let mut n1e = n1;
    n1e.integrating_factor(coeffs.nu, dt);
    out.axpy(0.5 * dt, &n1e);
    out.axpy(0.5 * dt, &n2);

    let stepped = inverse(&out);
    blowup_check(&stepped, coeffs.blowup_limit, t + dt)?;
    Ok(stepped)
}

/// Begin/end-of-step data for the linearized step: the deterministic
/// background at t and t+dt, and (optionally) the assembled source at the
/// same two times.
#[derive(Clone, Copy)]
pub struct StokesStages<'a> {
    pub background: [&'a GridField; 2],
    pub forcing: [Option<&'a GridField>; 2],
}

/// Explicit part of the linearized right-hand side,
/// P[(b - u0) . grad u - (u . grad) u0 + F], as a dealiased spectrum.
fn stokes_rhs(
    u: &GridField,
    coeffs: &PdeCoeffs,
    background: &GridField,
    forcing: Option<&GridField>,
) -> Result<SpectralField> {
    if background.grid != u.grid || background.components != u.components {
        return Err(Error::DimensionMismatch(
            "background shape does not match the state".into(),
        ));
    }
    let mut rhs = GridField::zeros(u.grid, u.components);
    let velocity_like = u.components == u.grid.dim;
    if velocity_like {
        rhs.axpy(-1.0, &advect(background, u)?);
        rhs.axpy(-1.0, &advect(u, background)?);
    } else {
        // scalar linearization: -(u0 u_x + u u0_x)
        let du = inverse(&forward(u).derivative(0));
        let db = inverse(&forward(background).derivative(0));
        for flat in 0..u.grid.points() {
            rhs.component_mut(0)[flat] -= background.component(0)[flat] * du.component(0)[flat]
                + u.component(0)[flat] * db.component(0)[flat];
        }
    }
    if coeffs.b.iter().any(|&v| v != 0.0) {
        let hat = forward(u);
        for axis in 0..u.grid.dim {
            if coeffs.b[axis] != 0.0 {
                rhs.axpy(coeffs.b[axis], &inverse(&hat.derivative(axis)));
            }
        }
    }
    if let Some(ft) = forcing {
        if ft.grid != u.grid || ft.components != u.components {
            return Err(Error::DimensionMismatch(
                "stage forcing shape does not match the state".into(),
            ));
        }
        rhs.axpy(1.0, ft);
    }
    Ok(prepare_rhs(forward(&rhs), coeffs.project))
}

/// One IMEX step of the linearized system
/// `d_t u = P[nu lap u + (b - u0) . grad u - (u . grad) u0 + F]`
/// with stage-correct background and source; same integrating-factor/Heun,
/// dealiasing, and guard contract as `ns_step`.
pub fn stokes_step(
    u: &GridField,
    coeffs: &PdeCoeffs,
    stages: &StokesStages,
    t: f64,
    dt: f64,
) -> Result<GridField> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    // the advecting velocity here is the background (minus drift)
    cfl_check(stages.background[0], &coeffs.b, coeffs.cfl, t, dt)?;

    let mut u_hat = forward(u);
    u_hat.dealias();
    if coeffs.project && u.components == u.grid.dim {
        u_hat.leray();
    }

    let n1 = stokes_rhs(u, coeffs, stages.background[0], stages.forcing[0])?;

    let mut pred = u_hat.clone();
    pred.axpy(dt, &n1);
    pred.integrating_factor(coeffs.nu, dt);
    let u1 = inverse(&pred);

    let n2 = stokes_rhs(&u1, coeffs, stages.background[1], stages.forcing[1])?;

    let mut out = u_hat;
    out.integrating_factor(coeffs.nu, dt);
    let mut n1e = n1;
    n1e.integrating_factor(coeffs.nu, dt);
    out.axpy(0.5 * dt, &n1e);
    out.axpy(0.5 * dt, &n2);

    let stepped = inverse(&out);
    blowup_check(&stepped, coeffs.blowup_limit, t + dt)?;
    Ok(stepped)
}

/// Ratio of the observed solution size to the data bracket
/// `|w|_{2,2} + |w|_{2,p} + (int |f|_{1,p}^p)^{1/p} + (int |f|_{1,2}^2)^{1/2}`.
#[derive(Clone, Copy, Debug)]
pub struct AprioriReport {
    pub lhs: f64,
    pub rhs: f64,
    /// None when both sides vanish (nothing to compare).
    pub ratio: Option<f64>,
}

/// A-priori energy diagnostic over a completed solve: `solution_history`
/// holds `|u(t_i)|_{2,2} + |u(t_i)|_{2,p}` per snapshot, the forcing
/// histories hold `|f(t_i)|_{1,p}` and `|f(t_i)|_{1,2}`, integrated with
/// step weight `dt`.
pub fn apriori_diagnostic(
    solution_history: &[f64],
    initial_22: f64,
    initial_2p: f64,
    forcing_1p_history: &[f64],
    forcing_12_history: &[f64],
    dt: f64,
    p: f64,
) -> AprioriReport {
    let lhs = solution_history.iter().fold(0.0f64, |m, v| m.max(*v));
    let int_p: f64 = dt * forcing_1p_history.iter().map(|v| v.powf(p)).sum::<f64>();
    let int_2: f64 = dt * forcing_12_history.iter().map(|v| v * v).sum::<f64>();
    let rhs = initial_22 + initial_2p + int_p.powf(1.0 / p) + int_2.sqrt();
    let ratio = if lhs == 0.0 && rhs == 0.0 {
        None
    } else {
        Some(lhs / rhs)
    };
    AprioriReport { lhs, rhs, ratio }
}
