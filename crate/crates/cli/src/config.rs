//! Run configuration: a TOML (or JSON) tree describing one experiment.
//!
//! Unknown keys are rejected everywhere. Parse errors carry the key path of
//! the offending entry and, for TOML, its line and column.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use snls_core::action::{OptimizerOptions, TargetSpec};
use snls_core::dynamics::{Control, SdeParams, SdeSystem, TimeGrid};
use snls_core::noise::{CovarianceSpec, DiffusionFamily, DiffusionSpec, H0Vector};
use snls_core::spectral::{dealias_factor, Grid, NormKind, SpectralField};

use crate::error::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SNLS_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    /// Defaults to `$SNLS_OUTPUT_ROOT/<name>`, else `runs/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` uses all cores. Results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Random fields sampled when measuring the noise constants.
    #[serde(default = "default_constant_trials")]
    pub constant_trials: usize,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub noise: NoiseConfig,
    pub experiment: Experiment,
}

fn default_constant_trials() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: f64,
    pub sigma: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_r: Option<u32>,
    pub u0: InitialState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Zero,
    /// `value * e_k`.
    Mode {
        k: usize,
        value: [f64; 2],
    },
    /// Coefficients for modes `1..=len`, zero above.
    Coeffs {
        coeffs: Vec<[f64; 2]>,
    },
    /// `amplitude * k^{-decay}` on every mode.
    Smooth {
        amplitude: f64,
        decay: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_modes: usize,
    /// Defaults to the smallest alias-free size for `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_phys: Option<usize>,
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub gamma: f64,
    pub trace: f64,
    pub family: DiffusionFamily,
    pub amplitude: f64,
    /// Declared growth constant; defaults to the family's analytic value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    /// Declared Lipschitz constant; defaults to the family's analytic value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    Zero,
    /// The same `H_0` coordinates on every step.
    Constant {
        coords: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    BallExterior {
        r: f64,
    },
    BallInterior {
        r: f64,
    },
    /// Reach the endpoint of the skeleton driven by `witness`.
    EndpointOf {
        witness: ControlConfig,
        tol: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Simulate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        control: Option<ControlConfig>,
    },
    Skeleton {
        control: ControlConfig,
    },
    MinimizeAction {
        target: TargetConfig,
        penalty_weight: f64,
        control_dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<f64>,
        #[serde(default)]
        restarts: usize,
        #[serde(default = "default_restart_scale")]
        restart_scale: f64,
        #[serde(default)]
        optimizer: OptimizerOptions,
    },
    ExitStudy(ExitStudyConfig),
    Verify {
        n_trials: usize,
        #[serde(default = "default_envelope")]
        envelope: f64,
        /// Moment orders for the Monte Carlo energy estimates; empty skips them.
        #[serde(default)]
        moment_orders: Vec<u32>,
        #[serde(default = "default_moment_paths")]
        moment_paths: usize,
    },
    PathNorms {
        n_paths: usize,
        alpha_list: Vec<f64>,
        p: f64,
        #[serde(default = "default_norm_kind")]
        norm: NormKind,
    },
}

fn default_restart_scale() -> f64 {
    0.1
}

fn default_envelope() -> f64 {
    snls_core::diagnostics::DEFAULT_ENVELOPE
}

fn default_moment_paths() -> usize {
    200
}

fn default_norm_kind() -> NormKind {
    NormKind::H
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitStudyConfig {
    pub r: f64,
    pub t0: f64,
    pub n_steps: usize,
    pub epsilon_list: Vec<f64>,
    pub n_paths: usize,
    pub delta: f64,
    /// Paths per noise level for the `C(T0, u0)` estimate.
    #[serde(default = "default_c_paths")]
    pub c_paths: usize,
    /// Control modes and time steps of the rate-function problems.
    #[serde(default = "default_action_dim")]
    pub action_control_dim: usize,
    #[serde(default = "default_action_steps")]
    pub action_n_steps: usize,
    #[serde(default = "default_action_penalty")]
    pub action_penalty: f64,
    /// Replace the measured growth constant in the bound formulas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1_override: Option<f64>,
    /// Replace the Monte Carlo `C(T0, u0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_override: Option<f64>,
}

fn default_c_paths() -> usize {
    400
}

fn default_action_dim() -> usize {
    2
}

fn default_action_steps() -> usize {
    20
}

fn default_action_penalty() -> f64 {
    100.0
}

fn pairs_to_complex(pairs: &[[f64; 2]]) -> Vec<Complex64> {
    pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

impl RunConfig {
    /// Parse a TOML or JSON file (chosen by extension; `.json` is JSON).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner().to_string().trim_end()))
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    /// Fill every defaulted value so the config can be echoed verbatim.
    pub fn resolve(&self, output_override: Option<&Path>) -> Result<RunConfig, CliError> {
        let mut cfg = self.clone();
        cfg.output_dir = Some(match (output_override, &self.output_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.clone(),
            (None, None) => match std::env::var_os(OUTPUT_ROOT_ENV) {
                Some(root) => PathBuf::from(root).join(&self.name),
                None => PathBuf::from("runs").join(&self.name),
            },
        });
        if cfg.grid.n_phys.is_none() {
            let min = (dealias_factor(cfg.model.sigma) * cfg.grid.n_modes).max(2 * cfg.grid.n_modes);
            cfg.grid.n_phys = Some(min);
        }
        let cov = cfg.covariance()?;
        let default = match cfg.noise.family {
            DiffusionFamily::Additive => DiffusionSpec::additive(cfg.noise.amplitude, &cov),
            DiffusionFamily::DiagonalMultiplicative => DiffusionSpec::multiplicative(cfg.noise.amplitude, &cov),
        };
        cfg.noise.k1.get_or_insert(default.k1);
        cfg.noise.k2.get_or_insert(default.k2);
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let n_phys = self
            .grid
            .n_phys
            .unwrap_or((dealias_factor(self.model.sigma) * self.grid.n_modes).max(2 * self.grid.n_modes));
        Grid::for_sigma(self.grid.n_modes, n_phys, self.model.sigma).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn covariance(&self) -> Result<Arc<CovarianceSpec>, CliError> {
        CovarianceSpec::power_law(self.grid.n_modes, self.noise.gamma, self.noise.trace)
            .map(Arc::new)
            .map_err(|e| CliError::Config(format!("noise: {e}")))
    }

    pub fn diffusion(&self, cov: &CovarianceSpec) -> Result<DiffusionSpec, CliError> {
        let default = match self.noise.family {
            DiffusionFamily::Additive => DiffusionSpec::additive(self.noise.amplitude, cov),
            DiffusionFamily::DiagonalMultiplicative => DiffusionSpec::multiplicative(self.noise.amplitude, cov),
        };
        DiffusionSpec::new(
            self.noise.family,
            self.noise.amplitude,
            self.noise.k1.unwrap_or(default.k1),
            self.noise.k2.unwrap_or(default.k2),
        )
        .map_err(|e| CliError::Config(format!("noise: {e}")))
    }

    pub fn initial_state(&self, grid: &Grid) -> Result<SpectralField, CliError> {
        let err = |e: snls_core::Error| CliError::Config(format!("model.u0: {e}"));
        match &self.model.u0 {
            InitialState::Zero => Ok(SpectralField::zeros(grid)),
            InitialState::Mode { k, value } => {
                SpectralField::mode(grid, *k, Complex64::new(value[0], value[1])).map_err(err)
            }
            InitialState::Coeffs { coeffs } => {
                if coeffs.len() > grid.n_modes() {
                    return Err(CliError::Config(format!(
                        "model.u0: {} coefficients for {} modes",
                        coeffs.len(),
                        grid.n_modes()
                    )));
                }
                let mut c = pairs_to_complex(coeffs);
                c.resize(grid.n_modes(), Complex64::new(0.0, 0.0));
                SpectralField::from_coeffs(grid, c).map_err(err)
            }
            InitialState::Smooth { amplitude, decay } => {
                let c = (1..=grid.n_modes())
                    .map(|k| Complex64::new(amplitude * (k as f64).powf(-decay), 0.0))
                    .collect();
                SpectralField::from_coeffs(grid, c).map_err(err)
            }
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.grid.t_end, self.grid.n_steps).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn system(&self) -> Result<SdeSystem, CliError> {
        let grid = self.grid()?;
        let cov = self.covariance()?;
        let diffusion = self.diffusion(&cov)?;
        let u0 = self.initial_state(&grid)?;
        let params = SdeParams::new(
            self.model.lambda,
            self.model.sigma,
            self.model.epsilon,
            self.model.truncation_r,
            u0,
        )
        .map_err(|e| CliError::Config(format!("model: {e}")))?;
        SdeSystem::new(params, diffusion, cov).map_err(|e| CliError::Config(format!("model: {e}")))
    }

    /// Semantic checks beyond the schema, as human-readable findings.
    /// The growth-constant hypothesis is checked with the declared `k1`.
    pub fn findings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.system() {
            out.push(e.to_string());
            return out;
        }
        if let Err(e) = self.time_grid() {
            out.push(e.to_string());
        }
        let cov = self.covariance().expect("checked by system()");
        let k1 = self.diffusion(&cov).map(|d| d.k1).unwrap_or(f64::NAN);
        match &self.experiment {
            Experiment::ExitStudy(ex) => {
                let k1 = ex.k1_override.unwrap_or(k1);
                for &eps in &ex.epsilon_list {
                    if eps * k1 * ex.t0 >= 1.0 {
                        out.push(format!(
                            "experiment.epsilon_list: epsilon = {eps} violates epsilon < 1/(K1 T0) = {} with declared K1 = {k1}",
                            1.0 / (k1 * ex.t0)
                        ));
                    }
                }
                let cfg = exit_config(ex, self.seed);
                if let Err(e) = cfg.validate(0.0) {
                    out.push(format!("experiment: {e}"));
                }
                if ex.action_control_dim == 0 || ex.action_control_dim > self.grid.n_modes {
                    out.push("experiment.action_control_dim: must lie in 1..=n_modes".into());
                }
            }
            Experiment::MinimizeAction {
                penalty_weight,
                control_dim,
                ..
            } => {
                if !(*penalty_weight > 0.0) {
                    out.push("experiment.penalty_weight: must be positive".into());
                }
                if *control_dim == 0 || *control_dim > self.grid.n_modes {
                    out.push("experiment.control_dim: must lie in 1..=n_modes".into());
                }
            }
            Experiment::PathNorms {
                alpha_list, p, n_paths, ..
            } => {
                if alpha_list.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    out.push("experiment.alpha_list: entries must lie in (0, 1)".into());
                }
                if !(*p > 1.0) {
                    out.push("experiment.p: must exceed 1".into());
                }
                if *n_paths == 0 {
                    out.push("experiment.n_paths: must be positive".into());
                }
                if self.grid.n_steps < 2 {
                    out.push("grid.n_steps: path norms need at least 3 time points".into());
                }
            }
            Experiment::Verify { moment_orders, .. } => {
                if moment_orders.iter().any(|&p| p == 0 || p % 2 == 1 || p > 8) {
                    out.push("experiment.moment_orders: entries must be even integers in 2..=8".into());
                }
            }
            Experiment::Simulate { control } => {
                if let Some(c) = control {
                    self.check_control(c, "experiment.control", &mut out);
                }
            }
            Experiment::Skeleton { control } => self.check_control(control, "experiment.control", &mut out),
        }
        out
    }

    fn check_control(&self, c: &ControlConfig, at: &str, out: &mut Vec<String>) {
        if let ControlConfig::Constant { coords } = c {
            if coords.len() > self.grid.n_modes {
                out.push(format!(
                    "{at}.coords: {} entries for {} modes",
                    coords.len(),
                    self.grid.n_modes
                ));
            }
        }
    }

    pub fn control(&self, c: &ControlConfig, cov: &Arc<CovarianceSpec>, n_steps: usize) -> Result<Control, CliError> {
        match c {
            ControlConfig::Zero => Ok(Control::zero(cov, n_steps)),
            ControlConfig::Constant { coords } => {
                let mut z = pairs_to_complex(coords);
                if z.len() > cov.n_modes() {
                    return Err(CliError::Config("control.coords: more entries than modes".into()));
                }
                z.resize(cov.n_modes(), Complex64::new(0.0, 0.0));
                let h = H0Vector::new(cov, z).map_err(|e| CliError::Config(format!("control: {e}")))?;
                Ok(Control::constant(h, n_steps))
            }
        }
    }

    pub fn target(&self, t: &TargetConfig, system: &SdeSystem, time: &TimeGrid) -> Result<TargetSpec, CliError> {
        Ok(match t {
            TargetConfig::BallExterior { r } => TargetSpec::BallExterior { r: *r },
            TargetConfig::BallInterior { r } => TargetSpec::BallInterior { r: *r },
            TargetConfig::EndpointOf { witness, tol } => {
                let h = self.control(witness, &system.cov, time.n_steps())?;
                let sk = system
                    .with_epsilon(0.0)
                    .and_then(|s| s.solve_skeleton(&h, time))
                    .map_err(|e| CliError::Computation(format!("witness skeleton: {e}")))?;
                TargetSpec::EndpointMatch {
                    target: sk.final_field().clone(),
                    tol: *tol,
                }
            }
        })
    }
}

pub fn exit_config(ex: &ExitStudyConfig, seed: u64) -> snls_core::ExitConfig {
    snls_core::ExitConfig {
        r: ex.r,
        t0: ex.t0,
        n_steps: ex.n_steps,
        epsilon_list: ex.epsilon_list.clone(),
        n_paths: ex.n_paths,
        delta: ex.delta,
        seed,
    }
}
