//! Experiment configuration: schema-validated JSON, unknown keys rejected.

use serde::{Deserialize, Serialize};

use mginf_core::ensemble::{ExperimentPlan, Functional};
use mginf_core::fluid::{FluidModel, InitialProfile};
use mginf_core::law::{ScalingScheme, ServiceLaw};
use mginf_core::measure::PointMeasure;
use mginf_core::testfn::{Closure, TestFunction};
use mginf_core::{CoreError, Result};

/// Top-level experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Limiting arrival intensity λ.
    pub lambda: f64,
    /// The normalized service law ᾱ.
    pub service_law: ServiceLaw,
    /// Initial profile atoms as (position, weight) pairs, normalized
    /// coordinates; empty by default.
    #[serde(default)]
    pub initial_atoms: Vec<(f64, f64)>,
    /// Scaling indices to simulate.
    pub n_values: Vec<u32>,
    /// Replications per scaling index.
    pub replications: u32,
    /// Snapshot times, strictly increasing, in normalized seconds.
    pub t_grid: Vec<f64>,
    /// Functionals evaluated on every snapshot.
    pub functionals: Vec<FunctionalSpec>,
    /// Master seed; the `--seed` flag overrides it.
    pub master_seed: u64,
    /// Gaussian-limit sampling options.
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    /// Dense output grid for the `fluid` command; falls back to `t_grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluid_grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn times(&self) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Series truncation order.
    pub k_max: usize,
    /// Brownian grid steps over the last requested time.
    pub grid_steps: usize,
    /// Replications of the limit sampler.
    pub replications: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        // default truncation 32, grid step t_max/2048
        Self {
            k_max: 32,
            grid_steps: 2048,
            replications: 10_000,
        }
    }
}

/// A functional of the profile, by name and parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    Congestion,
    Service,
    Workload,
    Range {
        x: f64,
        y: f64,
        #[serde(default)]
        include_left: bool,
        #[serde(default)]
        include_right: bool,
    },
    GaussianBump {
        center: f64,
        width: f64,
    },
    Logistic {
        center: f64,
        scale: f64,
    },
    HermiteWeighted {
        degree: usize,
    },
}

impl FunctionalSpec {
    pub fn build(&self) -> Result<Functional> {
        Ok(match self {
            FunctionalSpec::Congestion => Functional::Congestion,
            FunctionalSpec::Service => Functional::Service,
            FunctionalSpec::Workload => Functional::Workload,
            FunctionalSpec::Range {
                x,
                y,
                include_left,
                include_right,
            } => {
                if !(x < y) {
                    return Err(CoreError::InvalidParameter(format!(
                        "range functional requires x < y, got ({x}, {y})"
                    )));
                }
                Functional::Range {
                    x: *x,
                    y: *y,
                    closure: Closure {
                        include_left: *include_left,
                        include_right: *include_right,
                    },
                }
            }
            FunctionalSpec::GaussianBump { center, width } => {
                if !(*width > 0.0) {
                    return Err(CoreError::InvalidParameter(
                        "bump width must be positive".into(),
                    ));
                }
                Functional::Smooth(TestFunction::gaussian_bump(*center, *width))
            }
            FunctionalSpec::Logistic { center, scale } => {
                if !(*scale > 0.0) {
                    return Err(CoreError::InvalidParameter(
                        "logistic scale must be positive".into(),
                    ));
                }
                Functional::Smooth(TestFunction::logistic(*center, *scale))
            }
            FunctionalSpec::HermiteWeighted { degree } => {
                Functional::Smooth(TestFunction::hermite_weighted(*degree))
            }
        })
    }
}

impl ExperimentConfig {
    /// Full validation before any computation runs.
    pub fn validate(&self) -> Result<()> {
        self.service_law.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        self.initial_measure()?;
        let plan = self.plan(self.master_seed)?;
        plan.validate()?;
        if self.diffusion.k_max == 0 || self.diffusion.grid_steps < 2 {
            return Err(CoreError::InvalidParameter(
                "diffusion options require k_max >= 1 and grid_steps >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_measure(&self) -> Result<PointMeasure> {
        PointMeasure::from_atoms(self.initial_atoms.clone())
    }

    pub fn scheme(&self) -> Result<ScalingScheme> {
        ScalingScheme::new(self.lambda, self.service_law.clone(), self.initial_measure()?)
    }

    pub fn fluid_model(&self) -> Result<FluidModel> {
        let initial = if self.initial_atoms.is_empty() {
            InitialProfile::Empty
        } else {
            InitialProfile::Atoms(self.initial_measure()?)
        };
        FluidModel::new(self.lambda, self.service_law.clone(), initial)
    }

    pub fn functionals(&self) -> Result<Vec<Functional>> {
        self.functionals.iter().map(|f| f.build()).collect()
    }

    pub fn plan(&self, seed: u64) -> Result<ExperimentPlan> {
        Ok(ExperimentPlan {
            scheme: self.scheme()?,
            n_values: self.n_values.clone(),
            replications: self.replications,
            t_grid: self.t_grid.clone(),
            functionals: self.functionals()?,
            master_seed: seed,
        })
    }

    /// Canonical single-line serialization; hashed into every output header.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// FNV-1a over the canonical serialization.
pub fn config_hash(config: &ExperimentConfig) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in config.canonical_json().as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
