//! Experiment configuration: JSON on disk, CLI overrides, validation.

use std::fs;
use std::path::{Path, PathBuf};

use msfilter_core::integrator::HmmParams;
use msfilter_core::kernel::{KernelChoice, KernelSpec};
use msfilter_core::model::{benchmark_by_name, ModelError, ModelParams, MODEL_NAMES};
use msfilter_core::{BenchmarkModel, DegeneratePolicy};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub sigma1: f64,
    #[serde(default = "one")]
    pub obs_noise_sd: f64,
}

fn default_epsilon() -> f64 {
    ModelParams::default().epsilon
}

fn one() -> f64 {
    1.0
}

/// Optional overrides of the `1/√N` HMM tuning; unset fields keep the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmOverrides {
    pub macro_step: Option<f64>,
    pub micro_step: Option<f64>,
    pub burst_horizon: Option<f64>,
    pub replicas: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    #[default]
    Fail,
    FallbackUniform,
}

impl From<PolicyName> for DegeneratePolicy {
    fn from(p: PolicyName) -> Self {
        match p {
            PolicyName::Fail => DegeneratePolicy::Fail,
            PolicyName::FallbackUniform => DegeneratePolicy::FallbackUniform,
        }
    }
}

/// What the filter estimates are scored against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    /// `joint_kalman` for the linear benchmark, `reference` otherwise.
    #[default]
    Auto,
    /// Kalman filter of the averaged OU (linear benchmark only).
    Kalman,
    /// Exact filter of the full two-scale linear system (linear benchmark only).
    JointKalman,
    /// Large particle filter with the averaged kernel.
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default = "default_reference_particles")]
    pub n_particles: usize,
    #[serde(default = "default_reference_replicates")]
    pub replicates: usize,
    #[serde(default = "default_reference_step")]
    pub step: f64,
}

fn default_reference_particles() -> usize {
    100_000
}

fn default_reference_replicates() -> usize {
    10
}

fn default_reference_step() -> f64 {
    0.01
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            n_particles: default_reference_particles(),
            replicates: default_reference_replicates(),
            step: default_reference_step(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Used as `experiment_id`; derived from the config hash when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSection,
    pub kernels: Vec<String>,
    pub n_particles: Vec<usize>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub hmm: HmmOverrides,
    /// Euler step of the full kernel instead of `1/√N`.
    #[serde(default)]
    pub full_step: Option<f64>,
    /// Euler step of the averaged kernel instead of `1/√N`.
    #[serde(default)]
    pub averaged_step: Option<f64>,
    #[serde(default)]
    pub degenerate_weights: PolicyName,
    #[serde(default)]
    pub oracle: OracleChoice,
    #[serde(default)]
    pub reference: ReferenceSection,
    /// Step of the truth simulation; defaults to `ε/20`.
    #[serde(default)]
    pub fine_step: Option<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Write measured wall time into the CSV instead of zeros.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Per-step rv budget for equal-cost comparisons.
    #[serde(default)]
    pub budget_per_step: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("msfilter-out")
}

/// Command-line values that replace config fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub kernel: Option<Vec<String>>,
    pub n_particles: Option<Vec<usize>>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(k) = &o.kernel {
            self.kernels = k.clone();
        }
        if let Some(n) = &o.n_particles {
            self.n_particles = n.clone();
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            epsilon: self.model.epsilon,
            sigma1: self.model.sigma1,
            obs_noise_sd: self.model.obs_noise_sd,
        }
    }

    pub fn fine_step(&self) -> f64 {
        self.fine_step.unwrap_or(self.model.epsilon / 20.0)
    }

    pub fn kernel_choices(&self) -> Result<Vec<KernelChoice>, HarnessError> {
        self.kernels
            .iter()
            .map(|k| k.parse().map_err(|e: msfilter_core::kernel::KernelError| HarnessError::config("kernels", e.to_string())))
            .collect()
    }

    /// Kernel parameters for `n` particles after overrides.
    pub fn kernel_spec(&self, choice: KernelChoice, n: usize) -> Result<KernelSpec, HarnessError> {
        let spec = match KernelSpec::for_particles(choice, n) {
            KernelSpec::Full { step } => KernelSpec::Full {
                step: self.full_step.unwrap_or(step),
            },
            KernelSpec::Averaged { step } => KernelSpec::Averaged {
                step: self.averaged_step.unwrap_or(step),
            },
            KernelSpec::Hmm(d) => {
                let h = &self.hmm;
                let p = HmmParams::new(
                    h.macro_step.unwrap_or(d.macro_step),
                    h.micro_step.unwrap_or(d.micro_step),
                    h.burst_horizon.unwrap_or(d.burst_horizon),
                    h.replicas.unwrap_or(d.replicas),
                )
                .map_err(|e| HarnessError::config("hmm", e.to_string()))?;
                KernelSpec::Hmm(p)
            }
        };
        Ok(spec)
    }

    pub fn resolved_oracle(&self, bundle: &BenchmarkModel) -> OracleChoice {
        match self.oracle {
            OracleChoice::Auto if bundle.linear.is_some() => OracleChoice::JointKalman,
            OracleChoice::Auto => OracleChoice::Reference,
            other => other,
        }
    }

    /// Checks every invariant and builds the model bundle.
    pub fn validate(&self) -> Result<BenchmarkModel, HarnessError> {
        let bundle = benchmark_by_name(&self.model.name, &self.model_params()).map_err(|e| match e {
            ModelError::UnknownModel(name) => HarnessError::config(
                "model.name",
                format!("unknown model '{name}' (known: {})", MODEL_NAMES.join(", ")),
            ),
            other => HarnessError::config("model", other.to_string()),
        })?;
        if self.kernels.is_empty() {
            return Err(HarnessError::config("kernels", "at least one kernel is required"));
        }
        for choice in self.kernel_choices()? {
            if choice == KernelChoice::AveragedExact && bundle.averaged_exact.is_none() {
                return Err(HarnessError::config(
                    "kernels",
                    format!("model '{}' has no closed-form averaged equation", bundle.name),
                ));
            }
            for &n in &self.n_particles {
                let spec = self.kernel_spec(choice, n.max(1))?;
                spec.build(&bundle).map_err(|e| HarnessError::config("kernels", e.to_string()))?;
            }
        }
        if self.n_particles.is_empty() || self.n_particles.contains(&0) {
            return Err(HarnessError::config("n_particles", "need a nonempty list of positive counts"));
        }
        if self.horizon == 0 {
            return Err(HarnessError::config("T", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds", "need at least one seed"));
        }
        let fine = self.fine_step();
        if !(fine > 0.0 && fine <= self.model.epsilon / 10.0) {
            return Err(HarnessError::config(
                "fine_step",
                format!("{fine} must lie in (0, epsilon/10 = {}]", self.model.epsilon / 10.0),
            ));
        }
        for (key, step) in [("full_step", self.full_step), ("averaged_step", self.averaged_step)] {
            if let Some(step) = step {
                if !(step > 0.0 && step <= 1.0) {
                    return Err(HarnessError::config(key, format!("{step} must lie in (0, 1]")));
                }
            }
        }
        match self.resolved_oracle(&bundle) {
            OracleChoice::Kalman | OracleChoice::JointKalman if bundle.linear.is_none() => {
                return Err(HarnessError::config(
                    "oracle",
                    format!("Kalman oracles need the linear benchmark, not '{}'", bundle.name),
                ));
            }
            OracleChoice::Reference => {
                let r = &self.reference;
                if r.replicates < 2 || r.n_particles < r.replicates {
                    return Err(HarnessError::config(
                        "reference",
                        "need at least two replicates and one particle per replicate",
                    ));
                }
                if bundle.averaged_exact.is_none() {
                    return Err(HarnessError::config("oracle", "reference filter needs an averaged model"));
                }
                if !(r.step > 0.0 && r.step <= 1.0) {
                    return Err(HarnessError::config("reference.step", "must lie in (0, 1]"));
                }
            }
            _ => {}
        }
        if self.threads == Some(0) {
            return Err(HarnessError::config("threads", "must be positive"));
        }
        Ok(bundle)
    }
}
