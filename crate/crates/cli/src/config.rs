//! Flat TOML run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use entropic_jko::{
    CostSpec, DiscreteMeasure, ForceField, FreeEnergySpec, GreenParams, Grid, GridConvention, InnerOptions,
    InternalEnergy, KernelMode, KernelOptions, Matrix, Measure, SchemeConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Heat,
    NonlinearDiffusion,
    Kramers,
    Kolmogorov,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    CellCenter,
    Endpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Force {
    Zero,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Internal {
    Boltzmann,
    Power,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    Zero,
    Quadratic,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    Gaussian,
    Green,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dense,
    MatrixFree,
}

/// Every key of a run file. Optional keys get their defaults filled in by
/// [`RunConfig::resolve`], so the echo written next to the output is complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,

    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub grid_convention: Option<Convention>,

    /// Row-major `A` for the weighted cost.
    pub diffusion_matrix: Option<Vec<f64>>,
    pub force: Option<Force>,
    pub force_coefficient: Option<f64>,
    pub chain_length: Option<usize>,
    pub block_dim: Option<usize>,

    pub internal_energy: Option<Internal>,
    pub power_exponent: Option<u32>,
    pub potential: Option<Potential>,
    pub potential_coefficient: Option<f64>,
    pub potential_axes: Option<Vec<usize>>,
    pub potential_table: Option<PathBuf>,

    pub initial: Option<Initial>,
    pub initial_mean: Option<Vec<f64>>,
    pub initial_variance: Option<f64>,
    pub initial_file: Option<PathBuf>,

    pub h: f64,
    pub epsilon: f64,
    pub horizon: f64,

    pub inner_tol: Option<f64>,
    pub inner_max_iter: Option<usize>,
    pub anderson_depth: Option<usize>,
    pub kernel: Option<Mode>,
    pub tile_rows: Option<usize>,
    pub memory_budget_mb: Option<usize>,
    pub log_domain: Option<bool>,
    pub save_every: Option<usize>,

    pub x0: Option<f64>,
    pub v0: Option<f64>,
    pub t0: Option<f64>,
}

fn key_error(key: &str, reason: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("invalid `{key}`: {reason}")
}

fn positive(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(key_error(key, format!("must be positive, got {v}")));
    }
    Ok(())
}

/// Which exact solution, if any, the run can be compared against.
#[derive(Clone, Debug)]
pub enum Oracle {
    /// Gaussian with variance `variance + 2 a t` for `A = a I`.
    Heat { mean: Vec<f64>, variance: f64, diffusivity: f64 },
    Kramers(GreenParams<f64>),
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("malformed run configuration")?;
        cfg.resolve()
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [&mut cfg.potential_table, &mut cfg.initial_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok((cfg, base))
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Fills defaults and checks every key, naming the offending one.
    pub fn resolve(mut self) -> Result<Self> {
        let d = self.counts.len();
        if d == 0 {
            return Err(key_error("counts", "at least one axis is required"));
        }
        if self.lower.len() != d {
            return Err(key_error("lower", format!("expected {d} entries, got {}", self.lower.len())));
        }
        if self.upper.len() != d {
            return Err(key_error("upper", format!("expected {d} entries, got {}", self.upper.len())));
        }
        for (k, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(key_error("upper", format!("axis {k}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        if let Some(k) = self.counts.iter().position(|&n| n < 2) {
            return Err(key_error("counts", format!("axis {k} needs at least 2 points")));
        }
        self.grid_convention.get_or_insert(Convention::CellCenter);

        positive("h", self.h)?;
        positive("epsilon", self.epsilon)?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(key_error("horizon", format!("must be nonnegative, got {}", self.horizon)));
        }
        let n = (self.horizon / self.h).round();
        if (n * self.h - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(key_error("horizon", format!("{} is not a multiple of h = {}", self.horizon, self.h)));
        }

        match self.problem {
            Problem::Heat | Problem::NonlinearDiffusion => {
                let a = self.diffusion_matrix.get_or_insert_with(|| Matrix::identity(d).as_slice().to_vec());
                if a.len() != d * d {
                    return Err(key_error("diffusion_matrix", format!("expected {} entries, got {}", d * d, a.len())));
                }
                let spec = Matrix::from_row_major(a).and_then(|a| CostSpec::weighted(a, self.h));
                spec.map_err(|e| key_error("diffusion_matrix", e))?;
            }
            Problem::Kramers => {
                if d % 2 != 0 {
                    return Err(key_error("counts", "the Kramers problem needs position and velocity axes"));
                }
                self.force.get_or_insert(Force::Zero);
                if self.force == Some(Force::Quadratic) {
                    let k = *self.force_coefficient.get_or_insert(1.0);
                    if !k.is_finite() {
                        return Err(key_error("force_coefficient", "must be finite"));
                    }
                }
            }
            Problem::Kolmogorov => {
                let n = self.chain_length.ok_or_else(|| key_error("chain_length", "required for kolmogorov"))?;
                let b = *self.block_dim.get_or_insert(1);
                if n == 0 || b == 0 || n * b != d {
                    return Err(key_error("chain_length", format!("chain_length × block_dim must equal {d}")));
                }
            }
        }
        if self.problem != Problem::Heat && self.problem != Problem::NonlinearDiffusion && self.diffusion_matrix.is_some() {
            return Err(key_error("diffusion_matrix", "only used by heat and nonlinear_diffusion"));
        }

        let internal = *self.internal_energy.get_or_insert(Internal::Boltzmann);
        if internal == Internal::Power {
            let m = self.power_exponent.ok_or_else(|| key_error("power_exponent", "required for power internal energy"))?;
            if m < 2 {
                return Err(key_error("power_exponent", format!("must be ≥ 2, got {m}")));
            }
        }
        if self.problem == Problem::Heat && internal != Internal::Boltzmann {
            return Err(key_error("internal_energy", "heat uses boltzmann"));
        }

        let default_potential = if self.problem == Problem::Kramers { Potential::Quadratic } else { Potential::Zero };
        match *self.potential.get_or_insert(default_potential) {
            Potential::Zero => {}
            Potential::Quadratic => {
                let c = *self.potential_coefficient.get_or_insert(1.0);
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(key_error("potential_coefficient", format!("must be nonnegative, got {c}")));
                }
                let axes = self.potential_axes.get_or_insert_with(|| {
                    if self.problem == Problem::Kramers {
                        (d / 2..d).collect()
                    } else {
                        (0..d).collect()
                    }
                });
                if axes.iter().any(|&a| a >= d) {
                    return Err(key_error("potential_axes", format!("axes must be below {d}")));
                }
            }
            Potential::Table => {
                if self.potential_table.is_none() {
                    return Err(key_error("potential_table", "required for a tabulated potential"));
                }
            }
        }

        if self.problem == Problem::Kramers {
            if let Some(t0) = self.t0 {
                positive("t0", t0)?;
                self.x0.get_or_insert(0.0);
                self.v0.get_or_insert(0.0);
            }
        }
        let default_initial = if self.problem == Problem::Kramers && self.t0.is_some() { Initial::Green } else { Initial::Gaussian };
        match *self.initial.get_or_insert(default_initial) {
            Initial::Gaussian => {
                let mean = self.initial_mean.get_or_insert_with(|| vec![0.0; d]);
                if mean.len() != d {
                    return Err(key_error("initial_mean", format!("expected {d} entries")));
                }
                positive("initial_variance", *self.initial_variance.get_or_insert(0.25))?;
            }
            Initial::Green => {
                if self.problem != Problem::Kramers || d != 2 {
                    return Err(key_error("initial", "green needs the 1D Kramers problem"));
                }
                if self.t0.is_none() {
                    return Err(key_error("t0", "required for a green initial datum"));
                }
            }
            Initial::File => {
                if self.initial_file.is_none() {
                    return Err(key_error("initial_file", "required for a file initial datum"));
                }
            }
        }

        if let Some(t) = self.inner_tol {
            positive("inner_tol", t)?;
        }
        let inner = InnerOptions::<f64>::default();
        self.inner_tol.get_or_insert(inner.tol);
        if *self.inner_max_iter.get_or_insert(inner.max_iter) == 0 {
            return Err(key_error("inner_max_iter", "must be positive"));
        }
        self.anderson_depth.get_or_insert(inner.anderson_depth);
        self.kernel.get_or_insert(Mode::Dense);
        let kopt = KernelOptions::default();
        if *self.tile_rows.get_or_insert(kopt.tile_rows) == 0 {
            return Err(key_error("tile_rows", "must be positive"));
        }
        self.memory_budget_mb.get_or_insert(kopt.memory_budget >> 20);
        self.log_domain.get_or_insert(true);
        if *self.save_every.get_or_insert(1) == 0 {
            return Err(key_error("save_every", "must be positive"));
        }
        Ok(self)
    }

    pub fn echo(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        let bounds: Vec<(f64, f64)> = self.lower.iter().copied().zip(self.upper.iter().copied()).collect();
        let convention = match self.grid_convention.unwrap_or(Convention::CellCenter) {
            Convention::CellCenter => GridConvention::CellCenter,
            Convention::Endpoint => GridConvention::Endpoint,
        };
        Ok(Arc::new(Grid::with_convention(&bounds, &self.counts, convention)?))
    }

    pub fn cost(&self) -> Result<CostSpec<f64>> {
        let d = self.dim();
        Ok(match self.problem {
            Problem::Heat | Problem::NonlinearDiffusion => {
                let a = match &self.diffusion_matrix {
                    Some(a) => Matrix::from_row_major(a)?,
                    None => Matrix::identity(d),
                };
                CostSpec::weighted(a, self.h)?
            }
            Problem::Kramers => {
                let force = match self.force.unwrap_or(Force::Zero) {
                    Force::Zero => ForceField::Zero,
                    Force::Quadratic => ForceField::Quadratic(self.force_coefficient.unwrap_or(1.0)),
                };
                CostSpec::kramers(force, d / 2, self.h)?
            }
            Problem::Kolmogorov => {
                let n = self.chain_length.ok_or_else(|| key_error("chain_length", "missing"))?;
                CostSpec::kolmogorov(n, self.block_dim.unwrap_or(1), self.h)?
            }
        })
    }

    pub fn internal(&self) -> InternalEnergy {
        match self.internal_energy.unwrap_or(Internal::Boltzmann) {
            Internal::Boltzmann => InternalEnergy::Boltzmann,
            Internal::Power => InternalEnergy::PowerLaw(self.power_exponent.unwrap_or(2)),
        }
    }

    pub fn energy(&self, grid: &Arc<Grid>) -> Result<FreeEnergySpec<f64>> {
        let internal = self.internal();
        Ok(match self.potential.unwrap_or(Potential::Zero) {
            Potential::Zero => FreeEnergySpec::free(grid.clone(), internal)?,
            Potential::Quadratic => {
                let axes: Vec<usize> = self.potential_axes.clone().unwrap_or_else(|| (0..grid.dim()).collect());
                FreeEnergySpec::quadratic(grid.clone(), self.potential_coefficient.unwrap_or(1.0), &axes, internal)?
            }
            Potential::Table => {
                let path = self.potential_table.as_ref().ok_or_else(|| key_error("potential_table", "missing"))?;
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                let table = read_last_column(&text, grid.len()).map_err(|e| key_error("potential_table", e))?;
                FreeEnergySpec::new(grid.clone(), table, internal)?
            }
        })
    }

    pub fn initial(&self, grid: &Arc<Grid>) -> Result<Measure> {
        match self.initial.unwrap_or(Initial::Gaussian) {
            Initial::Gaussian => {
                let mean = self.initial_mean.clone().unwrap_or_else(|| vec![0.0; grid.dim()]);
                Ok(DiscreteMeasure::gaussian(grid.clone(), &mean, self.initial_variance.unwrap_or(0.25))?)
            }
            Initial::Green => {
                let params = self.green()?.ok_or_else(|| key_error("t0", "missing"))?;
                Ok(entropic_jko::sample_on_grid(&params, params.t0, grid)?)
            }
            Initial::File => {
                let path = self.initial_file.as_ref().ok_or_else(|| key_error("initial_file", "missing"))?;
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                Measure::from_csv(grid.clone(), &text).map_err(|e| key_error("initial_file", e))
            }
        }
    }

    pub fn green(&self) -> Result<Option<GreenParams<f64>>> {
        match (self.problem, self.t0) {
            (Problem::Kramers, Some(t0)) if self.dim() == 2 => {
                Ok(Some(GreenParams::new(self.x0.unwrap_or(0.0), self.v0.unwrap_or(0.0), t0)?))
            }
            _ => Ok(None),
        }
    }

    pub fn oracle(&self) -> Result<Option<Oracle>> {
        if let Some(g) = self.green()? {
            return Ok(Some(Oracle::Kramers(g)));
        }
        if self.problem != Problem::Heat || self.initial != Some(Initial::Gaussian) || self.potential != Some(Potential::Zero) {
            return Ok(None);
        }
        let d = self.dim();
        let a = self.diffusion_matrix.clone().unwrap_or_else(|| Matrix::identity(d).as_slice().to_vec());
        let diffusivity = a[0];
        let isotropic = (0..d).all(|i| (0..d).all(|j| a[i * d + j] == if i == j { diffusivity } else { 0.0 }));
        if !isotropic {
            return Ok(None);
        }
        Ok(Some(Oracle::Heat {
            mean: self.initial_mean.clone().unwrap_or_else(|| vec![0.0; d]),
            variance: self.initial_variance.unwrap_or(0.25),
            diffusivity,
        }))
    }

    pub fn scheme(&self) -> Result<SchemeConfig<f64>> {
        let inner = InnerOptions {
            tol: self.inner_tol.unwrap_or(1e-8),
            max_iter: self.inner_max_iter.unwrap_or(20_000),
            anderson_depth: self.anderson_depth.unwrap_or(5),
            log_domain: self.log_domain.unwrap_or(true),
            ..InnerOptions::default()
        };
        let kernel = KernelOptions {
            mode: match self.kernel.unwrap_or(Mode::Dense) {
                Mode::Dense => KernelMode::Dense,
                Mode::MatrixFree => KernelMode::MatrixFree,
            },
            tile_rows: self.tile_rows.unwrap_or(1024),
            memory_budget: self.memory_budget_mb.unwrap_or(1024) << 20,
        };
        Ok(SchemeConfig::new(self.h, self.epsilon, self.horizon)?.with_inner(inner).with_kernel(kernel))
    }
}

/// Values of a tabulated potential: the last column of a CSV with a header,
/// one row per grid point in index order.
fn read_last_column(text: &str, len: usize) -> std::result::Result<Vec<f64>, String> {
    let mut rows = text.lines().filter(|l| !l.trim().is_empty());
    rows.next().ok_or("empty table")?;
    let values = rows
        .enumerate()
        .map(|(r, line)| {
            let field = line.rsplit(',').next().unwrap_or("").trim();
            field.parse::<f64>().map_err(|_| format!("row {r}: bad number `{field}`"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != len {
        return Err(format!("expected {len} rows, found {}", values.len()));
    }
    Ok(values)
}

/// Rejects output sizes that would be impractical to write densely.
pub fn ensure_small(m: usize, what: &str) -> Result<()> {
    if m > 2000 {
        bail!("{what} needs at most 2000 grid points, the grid has {m}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const KRAMERS: &str = r#"
problem = "kramers"
lower = [-0.5, -2.4]
upper = [0.5, 2.4]
counts = [200, 130]
h = 0.02
epsilon = 0.09
horizon = 0.16
t0 = 0.14
"#;

    #[test]
    fn kinetic_setup_resolves_defaults() {
        let cfg = RunConfig::parse(KRAMERS).unwrap();
        assert_eq!(cfg.counts, vec![200, 130]);
        assert_eq!(cfg.force, Some(Force::Zero));
        assert_eq!(cfg.potential, Some(Potential::Quadratic));
        assert_eq!(cfg.potential_axes, Some(vec![1]));
        assert_eq!(cfg.initial, Some(Initial::Green));
        assert_eq!((cfg.x0, cfg.v0), (Some(0.0), Some(0.0)));
        assert_eq!(cfg.scheme().unwrap().steps, 8);
        assert_eq!(cfg.grid().unwrap().len(), 26_000);
        assert!(matches!(cfg.oracle().unwrap(), Some(Oracle::Kramers(_))));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse(KRAMERS).unwrap();
        let again = RunConfig::parse(&cfg.echo().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    fn message(text: &str) -> String {
        format!("{:#}", RunConfig::parse(text).unwrap_err())
    }

    #[test]
    fn missing_key_is_named() {
        let text = KRAMERS.replace("h = 0.02\n", "");
        assert!(message(&text).contains("`h`"), "{}", message(&text));
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let text = KRAMERS.replace("epsilon = 0.09", "epsilon = 0.0");
        assert!(message(&text).contains("`epsilon`"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{KRAMERS}\nstep_size = 0.1\n");
        assert!(message(&text).contains("step_size"));
    }

    #[test]
    fn wrong_type_is_reported() {
        let text = KRAMERS.replace("h = 0.02", "h = \"small\"");
        let msg = message(&text);
        assert!(msg.contains("h = \"small\""), "{msg}");
    }

    #[test]
    fn horizon_must_be_a_multiple_of_h() {
        let text = KRAMERS.replace("horizon = 0.16", "horizon = 0.165");
        assert!(message(&text).contains("`horizon`"));
    }

    #[test]
    fn kolmogorov_needs_a_consistent_chain() {
        let text = r#"
problem = "kolmogorov"
lower = [-1.0, -1.0, -1.0]
upper = [1.0, 1.0, 1.0]
counts = [4, 4, 4]
chain_length = 2
h = 0.1
epsilon = 0.1
horizon = 0.1
"#;
        assert!(message(text).contains("`chain_length`"));
        let ok = text.replace("chain_length = 2", "chain_length = 3");
        assert!(RunConfig::parse(&ok).is_ok());
    }

    #[test]
    fn heat_oracle_needs_isotropic_diffusion() {
        let text = r#"
problem = "heat"
lower = [-1.0, -1.0]
upper = [1.0, 1.0]
counts = [4, 4]
diffusion_matrix = [1.0, 0.0, 0.0, 2.0]
h = 0.1
epsilon = 0.1
horizon = 0.1
"#;
        assert!(RunConfig::parse(text).unwrap().oracle().unwrap().is_none());
        let iso = text.replace("0.0, 2.0", "0.0, 1.0");
        assert!(RunConfig::parse(&iso).unwrap().oracle().unwrap().is_some());
    }
}
