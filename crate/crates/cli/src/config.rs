//! Experiment configuration: one JSON document, unknown fields rejected.

use std::path::{Path, PathBuf};

use bilevel_core::certify::CertifyOptions;
use bilevel_core::solver::{step_sizes, NoiseSpec, SolverConfig};
use bilevel_core::{ModelSpec, Oracle, OracleConfig, ParametrizedModel, ProxOperator, ProxSpec};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::read_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub prox_p: ProxSpec,
    pub prox_u: ProxSpec,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub certify: CertifyOptions,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default)]
    pub check: CheckOptions,
    /// Initial parameter; defaults to the upper corner of the parameter set.
    #[serde(default)]
    pub p0: Option<Vec<f64>>,
    /// Initial input sequence; defaults to zero.
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
    /// Grid size for the step size estimate when `mu` or `nu` is omitted.
    #[serde(default = "default_step_grid")]
    pub step_grid: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_step_grid() -> usize {
    32
}

/// Solver settings. Omitted step sizes are estimated from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub kappa: usize,
    pub max_outer: usize,
    pub stop_tol: f64,
    pub noise: Option<NoiseSpec>,
    pub warm_start: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = SolverConfig::new(1.0, 1.0, 1);
        Self {
            mu: None,
            nu: None,
            kappa: base.kappa,
            max_outer: base.max_outer,
            stop_tol: base.stop_tol,
            noise: None,
            warm_start: base.warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub kappa_from: usize,
    pub kappa_to: usize,
    pub noise_amplitudes: Vec<f64>,
    /// Distance to the optimal set counted as reached.
    pub tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            kappa_from: 1,
            kappa_to: 10,
            noise_amplitudes: vec![1e-1, 1e-2, 1e-3],
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckOptions {
    pub prox_pairs: usize,
    pub condensation_samples: usize,
    pub contraction_starts: usize,
    pub contraction_steps: usize,
    pub gradient_points: usize,
    pub gradient_rel_tol: f64,
    pub gradient_min_fraction: f64,
    pub gradient_error_samples: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            prox_pairs: 10_000,
            condensation_samples: 1_000,
            contraction_starts: 20,
            contraction_steps: 50,
            gradient_points: 200,
            gradient_rel_tol: 1e-5,
            gradient_min_fraction: 0.95,
            gradient_error_samples: 1_000,
        }
    }
}

/// Global flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub with_oracle: bool,
}

impl Globals {
    /// `--out`, else `out/` in the working directory.
    pub fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// A loaded config with its model and penalties built.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub model: ParametrizedModel,
    pub prox_p: ProxOperator,
    pub prox_u: ProxOperator,
    pub out: PathBuf,
    /// `--seed`, else the config's `seed`. When set it replaces every
    /// sub-seed (oracle, certify, noise, check).
    pub seed: Option<u64>,
    pub with_oracle: bool,
}

/// Step sizes with their provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Steps {
    pub mu: f64,
    pub nu: f64,
    pub estimated: bool,
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    read_json(path)
}

impl Experiment {
    pub fn load(globals: &Globals) -> CliResult<Self> {
        let path = globals
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --config <path>".into()))?;
        let mut cfg = load_config(path)?;
        let seed = globals.seed.or(cfg.seed);
        if let Some(s) = seed {
            cfg.oracle.seed = s;
            cfg.certify.seed = s;
            if let Some(noise) = cfg.solver.noise.as_mut() {
                noise.seed = s;
            }
        }
        let model = cfg.model.build()?;
        let prox_p = ProxOperator::try_from(cfg.prox_p.clone())?;
        let prox_u = ProxOperator::try_from(cfg.prox_u.clone())?;
        let out = globals.out_dir(Some(&cfg));
        Ok(Self {
            model,
            prox_p,
            prox_u,
            out,
            seed,
            with_oracle: globals.with_oracle,
            cfg,
        })
    }

    pub fn oracle(&self) -> CliResult<Oracle<'_>> {
        Ok(Oracle::new(&self.model, &self.prox_u, self.cfg.oracle.clone())?)
    }

    pub fn steps(&self) -> CliResult<Steps> {
        let s = &self.cfg.solver;
        if let (Some(mu), Some(nu)) = (s.mu, s.nu) {
            return Ok(Steps { mu, nu, estimated: false });
        }
        let est = step_sizes(&self.model, &self.prox_p, &self.prox_u, self.cfg.step_grid, &self.cfg.oracle)?;
        Ok(Steps {
            mu: s.mu.unwrap_or(est.mu),
            nu: s.nu.unwrap_or(est.nu),
            estimated: true,
        })
    }

    /// Solver config at the given step sizes. Inactive noise is dropped so
    /// that a zero amplitude is indistinguishable from no noise.
    pub fn solver_config(&self, steps: Steps) -> CliResult<SolverConfig> {
        let s = &self.cfg.solver;
        let cfg = SolverConfig {
            mu: steps.mu,
            nu: steps.nu,
            kappa: s.kappa,
            max_outer: s.max_outer,
            stop_tol: s.stop_tol,
            noise: s.noise.clone().filter(NoiseSpec::is_active),
            warm_start: s.warm_start,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn p0(&self) -> DVector<f64> {
        match &self.cfg.p0 {
            Some(p) => DVector::from_column_slice(p),
            None => self.prox_p.map_unit_cube(&vec![1.0; self.prox_p.dim()]),
        }
    }

    pub fn u0(&self) -> DVector<f64> {
        match &self.cfg.u0 {
            Some(u) => DVector::from_column_slice(u),
            None => DVector::zeros(self.model.n_decision()),
        }
    }

    /// Seed for the sampled suites.
    pub fn check_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
