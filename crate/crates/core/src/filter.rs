//! Bootstrap particle filter over slow-scale particles.
//!
//! Each observation step evolves every particle through one kernel
//! transition, weights it by the observation likelihood, normalizes and
//! resamples multinomially. Evolution and weighting run in parallel with one
//! random stream per `(step, particle)`; resampling draws from a dedicated
//! stream, so results do not depend on the number of worker threads.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::integrator::{IntegrationError, KernelSample};
use crate::kernel::TransitionKernel;
use crate::model::{ObservationModel, Sampler};
use crate::rng::{RngStream, StreamTag};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Fast companion states; empty vectors when the kernel carries none.
    pub fast_states: Vec<Vec<f64>>,
}

impl ParticleEnsemble {
    /// Equally weighted ensemble with no fast companions.
    pub fn uniform(positions: Vec<Vec<f64>>) -> Self {
        let n = positions.len();
        assert!(n >= 1, "ensemble needs at least one particle");
        Self {
            weights: vec![1.0 / n as f64; n],
            fast_states: vec![Vec::new(); n],
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DegeneratePolicy {
    #[default]
    Fail,
    FallbackUniform,
}

/// All-zero, negative or nonfinite weights.
#[derive(Clone, Debug, Error, PartialEq)]
#[error(
    "degenerate weights at k = {k:?}: {n_zero} zero and {n_invalid} invalid of {n}, sum {sum}, max {max}"
)]
pub struct DegenerateWeights {
    pub k: Option<usize>,
    pub n: usize,
    pub n_zero: usize,
    pub n_invalid: usize,
    pub sum: f64,
    pub max: f64,
}

impl DegenerateWeights {
    fn summarize(weights: &[f64]) -> Self {
        let valid = |w: &&f64| w.is_finite() && **w >= 0.0;
        Self {
            k: None,
            n: weights.len(),
            n_zero: weights.iter().filter(|w| **w == 0.0).count(),
            n_invalid: weights.iter().filter(|w| !valid(w)).count(),
            sum: weights.iter().sum(),
            max: weights.iter().filter(valid).copied().fold(0.0, f64::max),
        }
    }

    fn at(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("kernel failed at k = {k}, particle {particle}: {source}")]
    Integration {
        k: usize,
        particle: usize,
        #[source]
        source: IntegrationError,
    },
    #[error(transparent)]
    Degenerate(#[from] DegenerateWeights),
    #[error("test function is not finite at particle {particle}")]
    NonfiniteEstimate { particle: usize },
    #[error("invalid filter input: {0}")]
    InvalidInput(String),
}

/// `n` i.i.d. draws from `sampler` with uniform weights.
pub fn init_particles(sampler: &Sampler, dim: usize, n: usize, seed: u64) -> ParticleEnsemble {
    assert!(n >= 1, "need at least one particle");
    let positions = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = RngStream::tagged(seed, StreamTag::Init, 0, j as u64);
            let mut x = vec![0.0; dim];
            sampler(&mut rng, &mut x);
            x
        })
        .collect();
    ParticleEnsemble::uniform(positions)
}

/// Replaces the weights with the raw likelihoods `g(position, y)`.
pub fn weight_particles(
    ensemble: &mut ParticleEnsemble,
    obs: &ObservationModel,
    y: &[f64],
) -> Result<(), DegenerateWeights> {
    ensemble.weights = ensemble
        .positions
        .par_iter()
        .map(|x| obs.density(x, y))
        .collect();
    let w = &ensemble.weights;
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
        return Err(DegenerateWeights::summarize(w));
    }
    Ok(())
}

pub fn normalize_weights(ensemble: &mut ParticleEnsemble) -> Result<(), DegenerateWeights> {
    let sum = ensemble.weight_sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(DegenerateWeights::summarize(&ensemble.weights));
    }
    ensemble.weights.iter_mut().for_each(|w| *w /= sum);
    Ok(())
}

/// `N` i.i.d. categorical draws from the weighted empirical measure.
/// Output weights are uniform.
pub fn multinomial_resample(ensemble: &ParticleEnsemble, rng: &mut RngStream) -> ParticleEnsemble {
    let n = ensemble.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in &ensemble.weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc;
    let mut positions = Vec::with_capacity(n);
    let mut fast_states = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.uniform() * total;
        // first index whose cumulative weight exceeds u; zero-weight particles are never chosen
        let idx = cumulative.partition_point(|c| *c <= u).min(n - 1);
        positions.push(ensemble.positions[idx].clone());
        fast_states.push(ensemble.fast_states[idx].clone());
    }
    ParticleEnsemble {
        positions,
        weights: vec![1.0 / n as f64; n],
        fast_states,
    }
}

/// Weighted mean `Σ wᵢ f(xᵢ) / Σ wᵢ`.
pub fn estimate(ensemble: &ParticleEnsemble, f: impl Fn(&[f64]) -> f64) -> Result<f64, FilterError> {
    let mut num = 0.0;
    for (j, (x, w)) in ensemble.positions.iter().zip(&ensemble.weights).enumerate() {
        let v = f(x);
        if !v.is_finite() {
            return Err(FilterError::NonfiniteEstimate { particle: j });
        }
        num += w * v;
    }
    Ok(num / ensemble.weight_sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Evolved particles carrying normalized likelihood weights.
    pub weighted: ParticleEnsemble,
    pub resampled: ParticleEnsemble,
    pub rv_count: u64,
    pub fallback_used: bool,
}

/// Evolution, weighting and resampling for observation index `k`.
pub fn filter_step(
    ensemble: &ParticleEnsemble,
    kernel: &dyn TransitionKernel,
    obs: &ObservationModel,
    y: &[f64],
    k: usize,
    seed: u64,
    policy: DegeneratePolicy,
) -> Result<StepOutcome, FilterError> {
    let samples: Vec<Result<KernelSample, IntegrationError>> = ensemble
        .positions
        .par_iter()
        .zip(ensemble.fast_states.par_iter())
        .enumerate()
        .map(|(j, (x, fast))| {
            let mut rng = RngStream::tagged(seed, StreamTag::Evolve, k as u64, j as u64);
            kernel.transition(x, fast, &mut rng)
        })
        .collect();
    let n = ensemble.len();
    let mut positions = Vec::with_capacity(n);
    let mut fast_states = Vec::with_capacity(n);
    let mut rv_count = 0;
    for (j, s) in samples.into_iter().enumerate() {
        let s = s.map_err(|source| FilterError::Integration {
            k,
            particle: j,
            source,
        })?;
        rv_count += s.rv_count;
        positions.push(s.x_next);
        fast_states.push(s.fast_next);
    }
    let mut weighted = ParticleEnsemble {
        positions,
        weights: vec![0.0; n],
        fast_states,
    };
    let mut fallback_used = false;
    let normalized = weight_particles(&mut weighted, obs, y).and_then(|_| normalize_weights(&mut weighted));
    if let Err(e) = normalized {
        match policy {
            DegeneratePolicy::Fail => return Err(e.at(k).into()),
            DegeneratePolicy::FallbackUniform => {
                weighted.weights = vec![1.0 / n as f64; n];
                fallback_used = true;
            }
        }
    }
    let mut rng = RngStream::tagged(seed, StreamTag::Resample, k as u64, 0);
    let resampled = multinomial_resample(&weighted, &mut rng);
    Ok(StepOutcome {
        weighted,
        resampled,
        rv_count,
        fallback_used,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterStep {
    pub k: usize,
    pub weighted: ParticleEnsemble,
    pub resampled: ParticleEnsemble,
    pub rv_count: u64,
    pub rv_cumulative: u64,
    pub fallback_used: bool,
    pub wall: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrajectory {
    pub label: String,
    pub n_particles: usize,
    /// Unconditioned ensemble at `k = 0`.
    pub initial: ParticleEnsemble,
    /// One entry per observation, `k = 1..=T`.
    pub steps: Vec<FilterStep>,
}

impl FilterTrajectory {
    /// Filter estimates of `f` at `k = 0..=T` from the resampled ensembles.
    pub fn estimates(&self, f: impl Fn(&[f64]) -> f64 + Copy) -> Result<Vec<f64>, FilterError> {
        std::iter::once(&self.initial)
            .chain(self.steps.iter().map(|s| &s.resampled))
            .map(|e| estimate(e, f))
            .collect()
    }

    pub fn total_wall(&self) -> Duration {
        self.steps.iter().map(|s| s.wall).sum()
    }
}

/// Runs the filter over `observations` (`Y_1..Y_T`) with `n` particles drawn
/// from `initial`.
pub fn run_filter(
    kernel: &dyn TransitionKernel,
    initial: &Sampler,
    obs: &ObservationModel,
    observations: &[Vec<f64>],
    n: usize,
    seed: u64,
    policy: DegeneratePolicy,
) -> Result<FilterTrajectory, FilterError> {
    if observations.is_empty() {
        return Err(FilterError::InvalidInput("no observations".into()));
    }
    if n == 0 {
        return Err(FilterError::InvalidInput("need at least one particle".into()));
    }
    let mut ensemble = init_particles(initial, kernel.slow_dim(), n, seed);
    if kernel.fast_dim() > 0 {
        ensemble.fast_states = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut rng = RngStream::tagged(seed, StreamTag::Init, 1, j as u64);
                kernel.init_fast(&mut rng)
            })
            .collect();
    }
    let initial_ensemble = ensemble.clone();
    let mut steps = Vec::with_capacity(observations.len());
    let mut rv_cumulative = 0;
    for (i, y) in observations.iter().enumerate() {
        let k = i + 1;
        let started = Instant::now();
        let out = filter_step(&ensemble, kernel, obs, y, k, seed, policy)?;
        rv_cumulative += out.rv_count;
        ensemble = out.resampled.clone();
        steps.push(FilterStep {
            k,
            weighted: out.weighted,
            resampled: out.resampled,
            rv_count: out.rv_count,
            rv_cumulative,
            fallback_used: out.fallback_used,
            wall: started.elapsed(),
        });
    }
    Ok(FilterTrajectory {
        label: kernel.label().to_string(),
        n_particles: n,
        initial: initial_ensemble,
        steps,
    })
}
