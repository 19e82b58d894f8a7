//! Euler–Maruyama stepping and the unit-interval transition samplers.
//!
//! All samplers cover one observation interval `[0, 1]` and report the number
//! of scalar Gaussian variates they consumed, measured on the stream.

use thiserror::Error;

use crate::linalg;
use crate::model::{AveragedModel, MultiscaleModel};
use crate::rng::RngStream;

/// States with Euclidean norm above this are treated as a blow-up.
pub const BLOWUP_NORM: f64 = 1e12;

/// Slack used when turning `horizon / step` into an integer step count.
const COUNT_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("integration blow-up at t = {time}: state {state:?}")]
    BlowUp { time: f64, state: Vec<f64> },
    #[error("invalid integrator parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> IntegrationError {
    IntegrationError::InvalidParameter {
        name,
        value,
        reason,
    }
}

#[inline]
fn check_state(time: f64, parts: &[&[f64]]) -> Result<(), IntegrationError> {
    let ss: f64 = parts.iter().flat_map(|p| p.iter()).map(|v| v * v).sum();
    // NaN fails the comparison too
    if ss <= BLOWUP_NORM * BLOWUP_NORM {
        Ok(())
    } else {
        Err(IntegrationError::BlowUp {
            time,
            state: parts.iter().flat_map(|p| p.iter().copied()).collect(),
        })
    }
}

/// Number of Euler steps of size at most `step` covering `[0, horizon]`.
pub fn step_count(horizon: f64, step: f64) -> usize {
    ((horizon / step - COUNT_SLACK).ceil() as usize).max(1)
}

/// Step lengths covering `[0, horizon]`: full steps, then a final partial one.
fn step_lengths(horizon: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = step_count(horizon, step);
    (0..n).map(move |i| {
        if i + 1 == n {
            horizon - (n - 1) as f64 * step
        } else {
            step
        }
    })
}

/// In-place `x += drift·dt + sigma·√dt·z`.
#[inline]
fn euler_update(x: &mut [f64], drift: &[f64], sigma: &[f64], dt: f64, z: &[f64]) {
    for (xi, d) in x.iter_mut().zip(drift) {
        *xi += d * dt;
    }
    linalg::mat_vec_acc(sigma, z, dt.sqrt(), x);
}

/// One Euler–Maruyama step: `x + drift·dt + sigma·√dt·z`.
pub fn euler_step(
    x: &[f64],
    drift: &[f64],
    sigma: &[f64],
    dt: f64,
    z: &[f64],
) -> Result<Vec<f64>, IntegrationError> {
    if !(dt > 0.0) {
        return Err(invalid("dt", dt, "must be positive"));
    }
    let d = x.len();
    assert!(
        drift.len() == d && z.len() == d && sigma.len() == d * d,
        "euler_step shape mismatch"
    );
    let mut out = x.to_vec();
    euler_update(&mut out, drift, sigma, dt, z);
    check_state(dt, &[&out])?;
    Ok(out)
}

/// Result of one unit-interval transition.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSample {
    pub x_next: Vec<f64>,
    /// Final fast state; empty for kernels that do not carry one.
    pub fast_next: Vec<f64>,
    pub rv_count: u64,
}

fn check_unit_step(name: &'static str, h: f64) -> Result<(), IntegrationError> {
    if h > 0.0 && h <= 1.0 {
        Ok(())
    } else {
        Err(invalid(name, h, "must lie in (0, 1]"))
    }
}

/// Forward Euler over `[0, 1]` of the full stiff system, both scales with the
/// same step `h_step`.
pub fn full_kernel_sample(
    m: &MultiscaleModel,
    x1: &[f64],
    x2: &[f64],
    h_step: f64,
    rng: &mut RngStream,
) -> Result<KernelSample, IntegrationError> {
    check_unit_step("h_step", h_step)?;
    let (p, q) = (m.p, m.q);
    let inv_eps = 1.0 / m.epsilon;
    let inv_sqrt_eps = inv_eps.sqrt();
    let mut slow = x1.to_vec();
    let mut fast = x2.to_vec();
    let mut a = vec![0.0; p];
    let mut s1 = vec![0.0; p * p];
    let mut b = vec![0.0; q];
    let mut s2 = vec![0.0; q * q];
    let mut z1 = vec![0.0; p];
    let mut z2 = vec![0.0; q];
    let start = rng.gaussians_drawn();
    let mut t = 0.0;
    for dt in step_lengths(1.0, h_step) {
        (m.slow_drift)(&slow, &fast, &mut a);
        (m.slow_diffusion)(&slow, &fast, &mut s1);
        (m.fast_drift)(&slow, &fast, &mut b);
        (m.fast_diffusion)(&slow, &fast, &mut s2);
        rng.fill_gaussian(&mut z1);
        rng.fill_gaussian(&mut z2);
        euler_update(&mut slow, &a, &s1, dt, &z1);
        b.iter_mut().for_each(|v| *v *= inv_eps);
        s2.iter_mut().for_each(|v| *v *= inv_sqrt_eps);
        euler_update(&mut fast, &b, &s2, dt, &z2);
        t += dt;
        check_state(t, &[&slow, &fast])?;
    }
    Ok(KernelSample {
        x_next: slow,
        fast_next: fast,
        rv_count: rng.gaussians_drawn() - start,
    })
}

/// Forward Euler over `[0, 1]` of the averaged diffusion.
pub fn averaged_kernel_sample(
    am: &AveragedModel,
    x: &[f64],
    h_step: f64,
    rng: &mut RngStream,
) -> Result<KernelSample, IntegrationError> {
    check_unit_step("h_step", h_step)?;
    let p = am.p;
    let mut state = x.to_vec();
    let mut drift = vec![0.0; p];
    let mut sigma = vec![0.0; p * p];
    let mut z = vec![0.0; p];
    let start = rng.gaussians_drawn();
    let mut t = 0.0;
    for dt in step_lengths(1.0, h_step) {
        (am.drift)(&state, &mut drift);
        (am.diffusion)(&state, &mut sigma);
        rng.fill_gaussian(&mut z);
        euler_update(&mut state, &drift, &sigma, dt, &z);
        t += dt;
        check_state(t, &[&state])?;
    }
    Ok(KernelSample {
        x_next: state,
        fast_next: Vec::new(),
        rv_count: rng.gaussians_drawn() - start,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BurstOutcome {
    pub z_end: Vec<f64>,
    pub rv_count: u64,
}

struct BurstScratch {
    b: Vec<f64>,
    s2: Vec<f64>,
    z: Vec<f64>,
}

impl BurstScratch {
    fn new(q: usize) -> Self {
        Self {
            b: vec![0.0; q],
            s2: vec![0.0; q * q],
            z: vec![0.0; q],
        }
    }
}

fn run_burst(
    m: &MultiscaleModel,
    x1: &[f64],
    state: &mut [f64],
    horizon: f64,
    micro_step: f64,
    rng: &mut RngStream,
    scratch: &mut BurstScratch,
) -> Result<(), IntegrationError> {
    let mut t = 0.0;
    for dt in step_lengths(horizon, micro_step) {
        (m.fast_drift)(x1, state, &mut scratch.b);
        (m.fast_diffusion)(x1, state, &mut scratch.s2);
        rng.fill_gaussian(&mut scratch.z);
        euler_update(state, &scratch.b, &scratch.s2, dt, &scratch.z);
        t += dt;
        check_state(t, &[state])?;
    }
    Ok(())
}

/// Euler path of the frozen fast process `dZ = b(x1, Z) dt + σ2(x1, Z) dV`
/// over `[0, horizon]`. No ε scaling: this runs in fast time units.
pub fn frozen_fast_burst(
    m: &MultiscaleModel,
    x1_frozen: &[f64],
    z0: &[f64],
    horizon: f64,
    micro_step: f64,
    rng: &mut RngStream,
) -> Result<BurstOutcome, IntegrationError> {
    if !(horizon > 0.0) {
        return Err(invalid("horizon", horizon, "must be positive"));
    }
    if !(micro_step > 0.0) {
        return Err(invalid("micro_step", micro_step, "must be positive"));
    }
    let mut z = z0.to_vec();
    let start = rng.gaussians_drawn();
    run_burst(m, x1_frozen, &mut z, horizon, micro_step, rng, &mut BurstScratch::new(m.q))?;
    Ok(BurstOutcome {
        z_end: z,
        rv_count: rng.gaussians_drawn() - start,
    })
}

/// Monte Carlo estimates of the averaged drift and of the averaged σ1σ1ᵀ from
/// burst endpoints. The variance estimate is projected onto the PSD cone.
pub fn hmm_drift_var_estimate(
    m: &MultiscaleModel,
    x1: &[f64],
    burst_endpoints: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let (a_hat, var) = raw_drift_var(m, x1, burst_endpoints);
    let p = m.p;
    if p == 1 {
        return (a_hat, vec![var[0].max(0.0)]);
    }
    let root = linalg::psd_sqrt(&var, p);
    let mut projected = vec![0.0; p * p];
    linalg::outer_acc(&root, p, 1.0, &mut projected);
    (a_hat, projected)
}

fn raw_drift_var(
    m: &MultiscaleModel,
    x1: &[f64],
    burst_endpoints: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    assert!(!burst_endpoints.is_empty(), "need at least one burst endpoint");
    let p = m.p;
    let w = 1.0 / burst_endpoints.len() as f64;
    let mut a_hat = vec![0.0; p];
    let mut var = vec![0.0; p * p];
    let mut a = vec![0.0; p];
    let mut s = vec![0.0; p * p];
    for zeta in burst_endpoints {
        (m.slow_drift)(x1, zeta, &mut a);
        (m.slow_diffusion)(x1, zeta, &mut s);
        for (acc, v) in a_hat.iter_mut().zip(&a) {
            *acc += w * v;
        }
        linalg::outer_acc(&s, p, w, &mut var);
    }
    (a_hat, var)
}

/// Tuning of the HMM transition sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HmmParams {
    /// Macro step Δt of the slow Gaussian updates.
    pub macro_step: f64,
    /// Micro step δt of the fast bursts.
    pub micro_step: f64,
    /// Burst length n, in fast time units.
    pub burst_horizon: f64,
    /// Number of independent burst replicas M.
    pub replicas: usize,
}

impl HmmParams {
    pub fn new(
        macro_step: f64,
        micro_step: f64,
        burst_horizon: f64,
        replicas: usize,
    ) -> Result<Self, IntegrationError> {
        if !(macro_step > 0.0 && macro_step <= 1.0) {
            return Err(invalid("macro_step", macro_step, "must lie in (0, 1]"));
        }
        if !(micro_step > 0.0 && micro_step <= macro_step) {
            return Err(invalid("micro_step", micro_step, "must lie in (0, macro_step]"));
        }
        if !(burst_horizon > 0.0 && burst_horizon.is_finite()) {
            return Err(invalid("burst_horizon", burst_horizon, "must be positive"));
        }
        if replicas == 0 {
            return Err(invalid("replicas", 0.0, "must be at least 1"));
        }
        Ok(Self {
            macro_step,
            micro_step,
            burst_horizon,
            replicas,
        })
    }

    /// `Δt = δt = 1/√N`, `n = M = 1`.
    pub fn for_particles(n_particles: usize) -> Self {
        let h = 1.0 / (n_particles.max(1) as f64).sqrt();
        Self {
            macro_step: h,
            micro_step: h,
            burst_horizon: 1.0,
            replicas: 1,
        }
    }

    /// Lengths of the macro phases: `⌊1/Δt⌋` full steps, then the remainder
    /// `1 − ⌊1/Δt⌋Δt` when it is nonzero.
    pub fn phase_lengths(&self) -> Vec<f64> {
        let full = ((1.0 / self.macro_step + COUNT_SLACK).floor() as usize).max(1);
        let mut phases = vec![self.macro_step; full];
        let rem = 1.0 - full as f64 * self.macro_step;
        if rem > COUNT_SLACK {
            phases.push(rem);
        }
        phases
    }

    pub fn micro_steps_per_burst(&self) -> usize {
        step_count(self.burst_horizon, self.micro_step)
    }
}

/// One draw of the HMM approximation `X̃_1` of the averaged transition from `x1`.
///
/// Each phase runs `M` frozen fast bursts at the current slow iterate (from
/// `μ2` in the first phase, warm-started from the previous endpoints after
/// that), estimates the local drift and variance, and takes the Gaussian step
/// `ξ ← ξ + Δ·â + √Δ·√V̂·z`. The last phase uses the remaining time.
pub fn hmm_kernel_sample(
    m: &MultiscaleModel,
    x1: &[f64],
    params: &HmmParams,
    rng: &mut RngStream,
) -> Result<KernelSample, IntegrationError> {
    let (p, q) = (m.p, m.q);
    let mut xi = x1.to_vec();
    let mut replicas: Vec<Vec<f64>> = vec![vec![0.0; q]; params.replicas];
    let start = rng.gaussians_drawn();
    for z in replicas.iter_mut() {
        (m.mu2)(rng, z);
    }
    let init_draws = rng.gaussians_drawn() - start;
    let mut scratch = BurstScratch::new(q);
    let mut z = vec![0.0; p];
    let mut t = 0.0;
    for phase in params.phase_lengths() {
        for zeta in replicas.iter_mut() {
            run_burst(
                m,
                &xi,
                zeta,
                params.burst_horizon,
                params.micro_step,
                rng,
                &mut scratch,
            )?;
        }
        let (a_hat, var_hat) = raw_drift_var(m, &xi, &replicas);
        let root = linalg::psd_sqrt(&var_hat, p);
        rng.fill_gaussian(&mut z);
        euler_update(&mut xi, &a_hat, &root, phase, &z);
        t += phase;
        check_state(t, &[&xi])?;
    }
    Ok(KernelSample {
        x_next: xi,
        fast_next: Vec::new(),
        rv_count: rng.gaussians_drawn() - start - init_draws,
    })
}

/// Time averages of `a(x1, Z)` and `σ1σ1ᵀ(x1, Z)` along one frozen fast path.
#[derive(Clone, Debug, PartialEq)]
pub struct BurstAverage {
    pub drift_mean: Vec<f64>,
    pub drift_se: Vec<f64>,
    pub diffusion_sq_mean: Vec<f64>,
    pub diffusion_sq_se: Vec<f64>,
}

/// Long-path estimator of the averaged coefficients at `x1`: one frozen fast
/// path from `μ2`, a burn-in of `10/λ`, then `horizon` time units split into
/// `batches` batches. Standard errors come from the batch means.
pub fn burst_time_average(
    m: &MultiscaleModel,
    x1: &[f64],
    horizon: f64,
    micro_step: f64,
    batches: usize,
    rng: &mut RngStream,
) -> Result<BurstAverage, IntegrationError> {
    assert!(batches >= 2, "need at least two batches");
    let (p, q) = (m.p, m.q);
    let mut zeta = vec![0.0; q];
    (m.mu2)(rng, &mut zeta);
    let mut scratch = BurstScratch::new(q);
    run_burst(m, x1, &mut zeta, 10.0 / m.lambda_mix, micro_step, rng, &mut scratch)?;
    let steps_per_batch = step_count(horizon / batches as f64, micro_step);
    let mut a = vec![0.0; p];
    let mut s = vec![0.0; p * p];
    let mut drift_batches = vec![vec![0.0; p]; batches];
    let mut sq_batches = vec![vec![0.0; p * p]; batches];
    let w = 1.0 / steps_per_batch as f64;
    for bi in 0..batches {
        for _ in 0..steps_per_batch {
            run_burst(m, x1, &mut zeta, micro_step, micro_step, rng, &mut scratch)?;
            (m.slow_drift)(x1, &zeta, &mut a);
            (m.slow_diffusion)(x1, &zeta, &mut s);
            for (acc, v) in drift_batches[bi].iter_mut().zip(&a) {
                *acc += w * v;
            }
            linalg::outer_acc(&s, p, w, &mut sq_batches[bi]);
        }
    }
    let (drift_mean, drift_se) = batch_stats(&drift_batches);
    let (diffusion_sq_mean, diffusion_sq_se) = batch_stats(&sq_batches);
    Ok(BurstAverage {
        drift_mean,
        drift_se,
        diffusion_sq_mean,
        diffusion_sq_se,
    })
}

fn batch_stats(batches: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let nb = batches.len() as f64;
    let d = batches[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| batches.iter().map(|b| b[j]).sum::<f64>() / nb)
        .collect();
    let se = (0..d)
        .map(|j| {
            let var = batches.iter().map(|b| (b[j] - mean[j]).powi(2)).sum::<f64>() / (nb - 1.0);
            (var / nb).sqrt()
        })
        .collect();
    (mean, se)
}
