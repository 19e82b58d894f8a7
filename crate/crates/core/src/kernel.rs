//! Transition kernels driving the particle filter between observations.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::integrator::{
    averaged_kernel_sample, full_kernel_sample, hmm_kernel_sample, step_count, HmmParams,
    IntegrationError, KernelSample,
};
use crate::model::{AveragedModel, BenchmarkModel, MultiscaleModel};
use crate::rng::RngStream;

/// A sampler of one unit-interval slow-state transition.
///
/// Kernels that integrate the full system carry a fast companion state per
/// particle; the filter threads it through resampling untouched.
pub trait TransitionKernel: Send + Sync {
    fn label(&self) -> &str;

    fn slow_dim(&self) -> usize;

    fn fast_dim(&self) -> usize {
        0
    }

    /// Initial fast companion for one particle.
    fn init_fast(&self, _rng: &mut RngStream) -> Vec<f64> {
        Vec::new()
    }

    fn transition(
        &self,
        x1: &[f64],
        fast: &[f64],
        rng: &mut RngStream,
    ) -> Result<KernelSample, IntegrationError>;

    /// Closed-form number of Gaussian variates used by one transition.
    fn rv_per_transition(&self) -> u64;

    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Forward Euler on the full stiff system.
#[derive(Clone, Debug)]
pub struct FullKernel {
    pub model: MultiscaleModel,
    pub step: f64,
}

impl TransitionKernel for FullKernel {
    fn label(&self) -> &str {
        "full"
    }

    fn slow_dim(&self) -> usize {
        self.model.p
    }

    fn fast_dim(&self) -> usize {
        self.model.q
    }

    fn init_fast(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut z = vec![0.0; self.model.q];
        (self.model.mu2)(rng, &mut z);
        z
    }

    fn transition(
        &self,
        x1: &[f64],
        fast: &[f64],
        rng: &mut RngStream,
    ) -> Result<KernelSample, IntegrationError> {
        full_kernel_sample(&self.model, x1, fast, self.step, rng)
    }

    fn rv_per_transition(&self) -> u64 {
        (step_count(1.0, self.step) * (self.model.p + self.model.q)) as u64
    }

    fn warnings(&self) -> Vec<String> {
        if self.step > self.model.epsilon {
            vec![format!(
                "full-system step {} exceeds epsilon {}; stiff Euler is unreliable",
                self.step, self.model.epsilon
            )]
        } else {
            Vec::new()
        }
    }
}

/// Forward Euler on a closed-form averaged model.
#[derive(Clone, Debug)]
pub struct AveragedKernel {
    pub model: AveragedModel,
    pub step: f64,
}

impl TransitionKernel for AveragedKernel {
    fn label(&self) -> &str {
        "averaged_exact"
    }

    fn slow_dim(&self) -> usize {
        self.model.p
    }

    fn transition(
        &self,
        x1: &[f64],
        _fast: &[f64],
        rng: &mut RngStream,
    ) -> Result<KernelSample, IntegrationError> {
        averaged_kernel_sample(&self.model, x1, self.step, rng)
    }

    fn rv_per_transition(&self) -> u64 {
        (step_count(1.0, self.step) * self.model.p) as u64
    }
}

/// Averaged transition with drift and variance estimated from fast bursts.
#[derive(Clone, Debug)]
pub struct HmmKernel {
    pub model: MultiscaleModel,
    pub params: HmmParams,
}

impl TransitionKernel for HmmKernel {
    fn label(&self) -> &str {
        "hmm"
    }

    fn slow_dim(&self) -> usize {
        self.model.p
    }

    fn transition(
        &self,
        x1: &[f64],
        _fast: &[f64],
        rng: &mut RngStream,
    ) -> Result<KernelSample, IntegrationError> {
        hmm_kernel_sample(&self.model, x1, &self.params, rng)
    }

    fn rv_per_transition(&self) -> u64 {
        let phases = self.params.phase_lengths().len();
        let micro = self.params.micro_steps_per_burst();
        (phases * self.model.p + self.params.replicas * phases * micro * self.model.q) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelChoice {
    Full,
    AveragedExact,
    Hmm,
}

impl KernelChoice {
    pub const ALL: [KernelChoice; 3] = [Self::Full, Self::AveragedExact, Self::Hmm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::AveragedExact => "averaged_exact",
            Self::Hmm => "hmm",
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("unknown kernel '{0}' (known: full, averaged_exact, hmm)")]
    Unknown(String),
    #[error("model '{0}' has no closed-form averaged equation")]
    NoAveragedModel(String),
    #[error(transparent)]
    Parameter(#[from] IntegrationError),
}

impl FromStr for KernelChoice {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "averaged_exact" | "averaged" => Ok(Self::AveragedExact),
            "hmm" => Ok(Self::Hmm),
            other => Err(KernelError::Unknown(other.to_string())),
        }
    }
}

/// A kernel choice with its numerical parameters bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Full { step: f64 },
    Averaged { step: f64 },
    Hmm(HmmParams),
}

impl KernelSpec {
    /// Default tuning for `n_particles`: Euler step `1/√N` for the full and
    /// averaged kernels, `Δt = δt = 1/√N` and `n = M = 1` for the HMM kernel.
    pub fn for_particles(choice: KernelChoice, n_particles: usize) -> Self {
        let h = 1.0 / (n_particles.max(1) as f64).sqrt();
        match choice {
            KernelChoice::Full => Self::Full { step: h },
            KernelChoice::AveragedExact => Self::Averaged { step: h },
            KernelChoice::Hmm => Self::Hmm(HmmParams::for_particles(n_particles)),
        }
    }

    pub fn choice(&self) -> KernelChoice {
        match self {
            Self::Full { .. } => KernelChoice::Full,
            Self::Averaged { .. } => KernelChoice::AveragedExact,
            Self::Hmm(_) => KernelChoice::Hmm,
        }
    }

    pub fn build(&self, bundle: &BenchmarkModel) -> Result<Box<dyn TransitionKernel>, KernelError> {
        Ok(match *self {
            Self::Full { step } => {
                check_step(step)?;
                Box::new(FullKernel {
                    model: bundle.multiscale.clone(),
                    step,
                })
            }
            Self::Averaged { step } => {
                check_step(step)?;
                let model = bundle
                    .averaged_exact
                    .clone()
                    .ok_or_else(|| KernelError::NoAveragedModel(bundle.name.clone()))?;
                Box::new(AveragedKernel { model, step })
            }
            Self::Hmm(params) => {
                let params = HmmParams::new(
                    params.macro_step,
                    params.micro_step,
                    params.burst_horizon,
                    params.replicas,
                )?;
                Box::new(HmmKernel {
                    model: bundle.multiscale.clone(),
                    params,
                })
            }
        })
    }
}

fn check_step(step: f64) -> Result<(), KernelError> {
    if step > 0.0 && step <= 1.0 {
        Ok(())
    } else {
        Err(IntegrationError::InvalidParameter {
            name: "step",
            value: step,
            reason: "must lie in (0, 1]",
        }
        .into())
    }
}
