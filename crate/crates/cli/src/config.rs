//! Run configuration: a TOML file with nested blocks, rejected on unknown
//! keys, validated before anything runs.

use std::path::Path;

use serde::Deserialize;

use polychaos::basis::{BasisSpec, TimeBasis};
use polychaos::spectral::{Grid, GridField, PdeCoeffs};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Burgers1d,
    Ns2d,
}

impl Model {
    pub fn dim(self) -> usize {
        match self {
            Model::Burgers1d => 1,
            Model::Ns2d => 2,
        }
    }

    pub fn components(self) -> usize {
        self.dim()
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::Burgers1d => "burgers1d",
            Model::Ns2d => "ns2d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBasisCfg {
    Trig,
    Haar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepModeCfg {
    Unbiased,
    Standard,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sine,
    Cosine,
    TaylorGreen,
    Constant,
}

/// A parameterized field shape: trigonometric profiles for the scalar model,
/// the Taylor-Green vortex or a constant vector for the planar one.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeCfg {
    pub kind: ShapeKind,
    #[serde(default = "one")]
    pub amp: f64,
    #[serde(default = "one_u32")]
    pub freq: u32,
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

impl ShapeCfg {
    pub fn build(&self, grid: Grid, model: Model) -> Result<GridField, CliError> {
        if !self.amp.is_finite() {
            return Err(CliError::config("shape amplitude must be finite"));
        }
        if self.freq == 0 {
            return Err(CliError::config("shape frequency must be at least 1"));
        }
        let f = self.freq as f64;
        let a = self.amp;
        match (self.kind, model) {
            (ShapeKind::Sine, Model::Burgers1d) => {
                Ok(GridField::from_fn(grid, 1, |_, x| a * (f * x[0]).sin()))
            }
            (ShapeKind::Cosine, Model::Burgers1d) => {
                Ok(GridField::from_fn(grid, 1, |_, x| a * (f * x[0]).cos()))
            }
            (ShapeKind::Constant, Model::Burgers1d) => {
                Ok(GridField::from_fn(grid, 1, |_, _| a))
            }
            (ShapeKind::TaylorGreen, Model::Ns2d) => {
                Ok(GridField::from_fn(grid, 2, |c, x| {
                    if c == 0 {
                        a * (f * x[0]).sin() * (f * x[1]).cos()
                    } else {
                        -a * (f * x[0]).cos() * (f * x[1]).sin()
                    }
                }))
            }
            (ShapeKind::Constant, Model::Ns2d) => {
                Ok(GridField::from_fn(grid, 2, |_, _| a))
            }
            (kind, model) => Err(CliError::config(format!(
                "shape {kind:?} is not available for model {}",
                model.name()
            ))),
        }
    }
}

/// One gradient-noise channel: a constant multiplier per spatial axis.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaCfg {
    pub amps: Vec<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCfg {
    #[serde(default)]
    pub g: Vec<ShapeCfg>,
    #[serde(default)]
    pub sigma: Vec<SigmaCfg>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub n: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeCfg {
    pub nu: f64,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeCfg {
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisCfg {
    pub time_basis: TimeBasisCfg,
    pub n_time: usize,
    pub m_noise: usize,
    /// Quadrature cells per mode support; the basis picks a default when
    /// omitted.
    #[serde(default)]
    pub quadrature: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationCfg {
    pub max_degree: u32,
    pub max_index: u32,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingCfg {
    pub q_scan: Vec<f64>,
    pub eps_list: Vec<f64>,
    /// Integrability exponent of the secondary field norm.
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_p() -> f64 {
    4.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCfg {
    pub mode: SweepModeCfg,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsCfg {
    pub directory: String,
    pub snapshots: usize,
    /// Grid-index probe points, one array of `dim` indices each.
    pub probes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyCfg {
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Split/restart time; defaults to half the horizon.
    #[serde(default)]
    pub t_star: Option<f64>,
}

fn default_paths() -> usize {
    20_000
}

impl Default for StudyCfg {
    fn default() -> Self {
        StudyCfg {
            paths: default_paths(),
            t_star: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub seed: u64,
    pub grid: GridCfg,
    pub pde: PdeCfg,
    pub time: TimeCfg,
    pub basis: BasisCfg,
    pub truncation: TruncationCfg,
    pub scaling: ScalingCfg,
    #[serde(default)]
    pub noise: NoiseCfg,
    pub initial: ShapeCfg,
    pub solver: SolverCfg,
    pub outputs: OutputsCfg,
    #[serde(default)]
    pub study: StudyCfg,
}

impl RunConfig {
    /// Loads and validates; any problem is a config error (exit 2).
    pub fn load(path: &Path) -> Result<(RunConfig, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let dim = self.model.dim();
        if !(self.pde.nu > 0.0) || !self.pde.nu.is_finite() {
            return Err(CliError::config("pde.nu must be positive"));
        }
        if let Some(drift) = &self.pde.drift {
            if drift.len() != dim {
                return Err(CliError::config(format!(
                    "pde.drift needs {dim} entries for {}",
                    self.model.name()
                )));
            }
        }
        if !(self.time.dt > 0.0) || !(self.time.t_end > 0.0) {
            return Err(CliError::config("time.dt and time.t_end must be positive"));
        }
        let steps = (self.time.t_end / self.time.dt).round();
        if steps < 1.0 || (steps * self.time.dt - self.time.t_end).abs() > 1e-9 * self.time.t_end {
            return Err(CliError::config("time.dt must divide time.t_end"));
        }
        if self.truncation.max_index < 1 {
            return Err(CliError::config("truncation.max_index must be at least 1"));
        }
        if self.basis.n_time < 1 || self.basis.m_noise < 1 {
            return Err(CliError::config(
                "basis.n_time and basis.m_noise must be at least 1",
            ));
        }
        if self.truncation.max_index as usize > self.basis.n_time * self.basis.m_noise {
            return Err(CliError::config(format!(
                "truncation.max_index {} exceeds the {} basis modes",
                self.truncation.max_index,
                self.basis.n_time * self.basis.m_noise
            )));
        }
        if self.scaling.q_scan.is_empty() {
            return Err(CliError::config("scaling.q_scan must not be empty"));
        }
        if self
            .scaling
            .q_scan
            .iter()
            .any(|&q| !(q > 0.0) || !q.is_finite())
        {
            return Err(CliError::config("scaling.q_scan entries must be positive"));
        }
        if self.scaling.eps_list.is_empty()
            || self
                .scaling
                .eps_list
                .windows(2)
                .any(|w| w[1] >= w[0])
            || self.scaling.eps_list.iter().any(|&e| e < 0.0)
        {
            return Err(CliError::config(
                "scaling.eps_list must be strictly decreasing and nonnegative",
            ));
        }
        if !(self.scaling.p > dim as f64) {
            return Err(CliError::config(format!(
                "scaling.p must exceed the dimension {dim}"
            )));
        }
        if self.outputs.snapshots < 1 {
            return Err(CliError::config("outputs.snapshots must be at least 1"));
        }
        let steps = steps as usize;
        if self.outputs.snapshots > steps || steps % self.outputs.snapshots != 0 {
            return Err(CliError::config(format!(
                "outputs.snapshots must divide the {steps} steps"
            )));
        }
        if self.outputs.directory.is_empty() {
            return Err(CliError::config("outputs.directory must not be empty"));
        }
        for p in &self.outputs.probes {
            if p.len() != dim {
                return Err(CliError::config(format!(
                    "each probe needs {dim} indices for {}",
                    self.model.name()
                )));
            }
            if p.iter().any(|&i| i >= self.grid.n) {
                return Err(CliError::config(format!(
                    "probe {p:?} outside a grid of side {}",
                    self.grid.n
                )));
            }
        }
        if !self.noise.g.is_empty() && self.noise.g.len() != self.basis.m_noise {
            return Err(CliError::config(format!(
                "noise.g has {} channels but basis.m_noise is {}",
                self.noise.g.len(),
                self.basis.m_noise
            )));
        }
        if !self.noise.sigma.is_empty() && self.noise.sigma.len() != self.basis.m_noise {
            return Err(CliError::config(format!(
                "noise.sigma has {} channels but basis.m_noise is {}",
                self.noise.sigma.len(),
                self.basis.m_noise
            )));
        }
        for s in &self.noise.sigma {
            if s.amps.len() != dim {
                return Err(CliError::config(format!(
                    "each noise.sigma channel needs {dim} axis amplitudes"
                )));
            }
        }
        if self.study.paths < 2 {
            return Err(CliError::config("study.paths must be at least 2"));
        }
        if let Some(ts) = self.study.t_star {
            if !(ts > 0.0 && ts < self.time.t_end) {
                return Err(CliError::config(
                    "study.t_star must lie strictly inside the horizon",
                ));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, CliError> {
        Grid::new(self.model.dim(), self.grid.n)
            .map_err(|e| CliError::config(format!("grid: {e}")))
    }

    pub fn build_basis(&self) -> Result<BasisSpec, CliError> {
        let tb = match self.basis.time_basis {
            TimeBasisCfg::Trig => TimeBasis::Trig,
            TimeBasisCfg::Haar => TimeBasis::Haar,
        };
        let r = match self.basis.quadrature {
            Some(cells) => BasisSpec::with_quad_cells(
                tb,
                self.time.t_end,
                self.basis.n_time,
                self.basis.m_noise,
                cells,
            ),
            None => BasisSpec::new(tb, self.time.t_end, self.basis.n_time, self.basis.m_noise),
        };
        r.map_err(|e| CliError::config(format!("basis: {e}")))
    }

    pub fn build_coeffs(&self, grid: Grid) -> Result<PdeCoeffs, CliError> {
        let dim = self.model.dim();
        let mut coeffs = PdeCoeffs::new(self.pde.nu, dim);
        if let Some(drift) = &self.pde.drift {
            coeffs.b = drift.clone();
        }
        for shape in &self.noise.g {
            coeffs.g.push(shape.build(grid, self.model)?);
        }
        for s in &self.noise.sigma {
            let channel: Vec<GridField> = s
                .amps
                .iter()
                .map(|&a| GridField::from_fn(grid, 1, |_, _| a))
                .collect();
            coeffs.sigma.push(channel);
        }
        Ok(coeffs)
    }

    /// Flattened grid index of a probe (row-major).
    pub fn probe_flat(&self, probe: &[usize]) -> usize {
        match self.model.dim() {
            1 => probe[0],
            _ => probe[0] * self.grid.n + probe[1],
        }
    }

    pub fn split_time(&self) -> f64 {
        self.study.t_star.unwrap_or(self.time.t_end / 2.0)
    }
}
