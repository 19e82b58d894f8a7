//! Synthetic truth runs of the full system and their observations.

use std::fs;
use std::path::{Path, PathBuf};

use msfilter_core::integrator::{full_kernel_sample, IntegrationError};
use msfilter_core::rng::{RngStream, StreamTag};
use msfilter_core::BenchmarkModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;
use crate::output::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub model: String,
    pub epsilon: f64,
    pub fine_step: f64,
    pub seed: u64,
    /// Slow state at `k = 0..=T`.
    pub truth: Vec<Vec<f64>>,
    /// `Y_1..Y_T`.
    pub observations: Vec<Vec<f64>>,
}

impl SyntheticData {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    /// First coordinate of every observation.
    pub fn scalar_observations(&self) -> Vec<f64> {
        self.observations.iter().map(|y| y[0]).collect()
    }
}

/// Simulates the full system with Euler step `fine_step` over `[0, T]` and
/// observes the slow state at each integer time.
pub fn generate_synthetic_data(
    bundle: &BenchmarkModel,
    horizon: usize,
    fine_step: f64,
    seed: u64,
) -> Result<SyntheticData, HarnessError> {
    let m = &bundle.multiscale;
    if !(fine_step > 0.0 && fine_step <= m.epsilon / 10.0) {
        return Err(HarnessError::config(
            "fine_step",
            format!("{fine_step} must lie in (0, epsilon/10 = {}]", m.epsilon / 10.0),
        ));
    }
    if horizon == 0 {
        return Err(HarnessError::config("T", "must be at least 1"));
    }
    let mut rng = RngStream::tagged(seed, StreamTag::Data, 0, 0);
    let mut x1 = vec![0.0; m.p];
    let mut x2 = vec![0.0; m.q];
    (m.mu1)(&mut rng, &mut x1);
    (m.mu2)(&mut rng, &mut x2);
    let mut truth = vec![x1.clone()];
    let mut observations = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let mut rng = RngStream::tagged(seed, StreamTag::Data, k as u64, 0);
        let s = full_kernel_sample(m, &x1, &x2, fine_step, &mut rng).map_err(|e| match e {
            IntegrationError::BlowUp { time, state } => HarnessError::BlowUp(format!(
                "truth run of '{}' (seed {seed}, fine_step {fine_step}) diverged at t = {}: state {state:?}",
                bundle.name,
                (k - 1) as f64 + time
            )),
            other => other.into(),
        })?;
        x1 = s.x_next;
        x2 = s.fast_next;
        let mut obs_rng = RngStream::tagged(seed, StreamTag::Observation, k as u64, 0);
        observations.push(bundle.observation.observe(&x1, &mut obs_rng));
        truth.push(x1.clone());
    }
    Ok(SyntheticData {
        model: bundle.name.clone(),
        epsilon: m.epsilon,
        fine_step,
        seed,
        truth,
        observations,
    })
}

/// On-disk store of truth runs keyed by model, parameters, `T`, fine step and seed.
#[derive(Clone, Debug)]
pub struct DataCache {
    dir: PathBuf,
}

/// Scalar parameters that identify one truth run.
#[derive(Clone, Copy, Debug)]
pub struct DataKey<'a> {
    pub model: &'a str,
    pub epsilon: f64,
    pub sigma1: f64,
    pub obs_noise_sd: f64,
    pub horizon: usize,
    pub fine_step: f64,
    pub seed: u64,
}

impl DataKey<'_> {
    pub fn digest(&self) -> String {
        let text = format!(
            "{}|{:016x}|{:016x}|{:016x}|{}|{:016x}|{}",
            self.model,
            self.epsilon.to_bits(),
            self.sigma1.to_bits(),
            self.obs_noise_sd.to_bits(),
            self.horizon,
            self.fine_step.to_bits(),
            self.seed
        );
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl DataCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, key: &DataKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    /// Loads the run for `key`, simulating and storing it on a miss.
    pub fn get_or_generate(&self, bundle: &BenchmarkModel, key: &DataKey) -> Result<SyntheticData, HarnessError> {
        let path = self.path_for(key);
        if let Some(data) = read_cached(&path) {
            return Ok(data);
        }
        let data = generate_synthetic_data(bundle, key.horizon, key.fine_step, key.seed)?;
        fs::create_dir_all(&self.dir).map_err(|e| HarnessError::io(self.dir.display(), e))?;
        let text = serde_json::to_string(&data).map_err(|e| HarnessError::Numerical(e.to_string()))?;
        write_atomic(&path, text.as_bytes())?;
        Ok(data)
    }
}

// unreadable or stale entries are regenerated
fn read_cached(path: &Path) -> Option<SyntheticData> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}
