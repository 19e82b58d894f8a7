//! Reference filters for measuring particle-filter error.
//!
//! The linear benchmark admits exact filters: a scalar Kalman filter on the
//! averaged OU process, and a two-dimensional Kalman filter on the full
//! slow–fast linear system whose slow marginal is the exact multiscale
//! filter. Models without closed forms use a large-N particle filter with
//! replicate-based standard errors.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::filter::{run_filter, DegeneratePolicy, FilterError};
use crate::kernel::TransitionKernel;
use crate::model::{LinearGaussianParams, ObservationModel, Sampler};
use crate::rng::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid oracle parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(transparent)]
    Filter(#[from] FilterError),
}

fn positive(name: &'static str, value: f64) -> Result<(), OracleError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(OracleError::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance at time `t` of `dX = −θX dt + σ dW` started from `x0`.
pub fn ou_transition_law(theta: f64, sigma: f64, x0: f64, t: f64) -> Result<(f64, f64), OracleError> {
    positive("theta", theta)?;
    positive("sigma", sigma)?;
    positive("t", t)?;
    let mean = x0 * (-theta * t).exp();
    let variance = sigma * sigma * -(-2.0 * theta * t).exp_m1() / (2.0 * theta);
    Ok((mean, variance))
}

/// Conjugate update of a Gaussian prior with `y = x + N(0, noise_var)`.
pub fn kalman_update(prior: GaussianBelief, y: f64, noise_var: f64) -> Result<GaussianBelief, OracleError> {
    positive("noise_var", noise_var)?;
    let gain = prior.variance / (prior.variance + noise_var);
    Ok(GaussianBelief {
        mean: prior.mean + gain * (y - prior.mean),
        variance: (1.0 - gain) * prior.variance,
    })
}

/// Kalman filter for the OU process observed at unit intervals through
/// `y = x + N(0, obs_noise_sd²)`. Returns `T + 1` beliefs; index 0 is the prior.
pub fn kalman_filter(
    theta: f64,
    sigma: f64,
    prior: GaussianBelief,
    obs_noise_sd: f64,
    observations: &[f64],
) -> Result<Vec<GaussianBelief>, OracleError> {
    positive("obs_noise_sd", obs_noise_sd)?;
    let (decay, added_var) = ou_transition_law(theta, sigma, 1.0, 1.0)?;
    let mut out = Vec::with_capacity(observations.len() + 1);
    out.push(prior);
    let mut belief = prior;
    for &y in observations {
        let predicted = GaussianBelief {
            mean: belief.mean * decay,
            variance: belief.variance * decay * decay + added_var,
        };
        belief = kalman_update(predicted, y, obs_noise_sd * obs_noise_sd)?;
        out.push(belief);
    }
    Ok(out)
}

/// Exact transition of the linear SDE `dX = A X dt + B dW` over time `t`:
/// returns `(exp(A t), ∫₀ᵗ e^{As} BBᵀ e^{Aᵀs} ds)`.
///
/// Van Loan's block exponential is evaluated on `t / 2^s` with `‖A‖ t / 2^s`
/// below one, since the block contains `exp(−A t)`, which overflows for
/// stiff `A`. The result is doubled back up with
/// `Φ(2τ) = Φ(τ)²` and `Q(2τ) = Q(τ) + Φ(τ) Q(τ) Φ(τ)ᵀ`.
pub fn linear_sde_transition(a: &DMatrix<f64>, bbt: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.nrows();
    let scale = a.abs().max() * t;
    let halvings = if scale > 0.5 { (scale / 0.5).log2().ceil() as i32 } else { 0 };
    let tau = t / 2f64.powi(halvings);
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&(-a * tau));
    block.view_mut((0, d), (d, d)).copy_from(&(bbt * tau));
    block.view_mut((d, d), (d, d)).copy_from(&(a.transpose() * tau));
    let e = block.exp();
    let mut phi: DMatrix<f64> = e.view((d, d), (d, d)).transpose();
    let mut q = &phi * e.view((0, d), (d, d));
    for _ in 0..halvings {
        q = &q + &phi * &q * phi.transpose();
        phi = &phi * &phi;
    }
    let q = 0.5 * (&q + q.transpose());
    (phi, q)
}

/// Mean and covariance at time `t` of `dX = A X dt + B dW` from `N(m0, P0)`.
pub fn linear_sde_moments(
    a: &DMatrix<f64>,
    bbt: &DMatrix<f64>,
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    t: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (phi, q) = linear_sde_transition(a, bbt, t);
    (&phi * m0, &phi * p0 * phi.transpose() + q)
}

/// Drift matrix and noise covariance of the full linear benchmark in
/// `(x1, x2)` coordinates.
pub fn linear_benchmark_system(params: &LinearGaussianParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let eps = params.epsilon;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0 / eps, -1.0 / eps]);
    let bbt = DMatrix::from_row_slice(2, 2, &[params.sigma1 * params.sigma1, 0.0, 0.0, 2.0 / eps]);
    (a, bbt)
}

/// Exact filter of the full linear benchmark; returns the slow marginals
/// (`T + 1` entries, index 0 is the prior).
pub fn joint_kalman_filter(
    params: &LinearGaussianParams,
    observations: &[f64],
) -> Result<Vec<GaussianBelief>, OracleError> {
    positive("epsilon", params.epsilon)?;
    positive("obs_noise_sd", params.obs_noise_sd)?;
    let (a, bbt) = linear_benchmark_system(params);
    let (phi, q) = linear_sde_transition(&a, &bbt, 1.0);
    let r = params.obs_noise_sd * params.obs_noise_sd;
    let mut mean = DVector::from_vec(vec![params.slow_prior_mean, params.fast_prior_mean]);
    let mut cov = DMatrix::from_row_slice(2, 2, &[params.slow_prior_var, 0.0, 0.0, params.fast_prior_var]);
    let slow = |m: &DVector<f64>, c: &DMatrix<f64>| GaussianBelief {
        mean: m[0],
        variance: c[(0, 0)],
    };
    let mut out = vec![slow(&mean, &cov)];
    for &y in observations {
        mean = &phi * &mean;
        cov = &phi * &cov * phi.transpose() + &q;
        // observe the first coordinate
        let s = cov[(0, 0)] + r;
        let gain = cov.column(0) / s;
        mean += &gain * (y - mean[0]);
        cov -= &gain * cov.row(0);
        cov = 0.5 * (&cov + cov.transpose());
        out.push(slow(&mean, &cov));
    }
    Ok(out)
}

/// Large-N particle-filter surrogate for the exact filter.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFilter {
    /// Estimates of `f` at `k = 0..=T`, averaged over replicates.
    pub mean: Vec<f64>,
    /// Standard error of `mean` from the spread across replicates.
    pub se: Vec<f64>,
    pub n_big: usize,
    pub replicates: usize,
}

/// Runs `replicates` independent filters of `n_big / replicates` particles
/// each and pools their estimates of `f`.
#[allow(clippy::too_many_arguments)]
pub fn reference_filter_bruteforce(
    kernel: &dyn TransitionKernel,
    initial: &Sampler,
    obs: &ObservationModel,
    observations: &[Vec<f64>],
    n_big: usize,
    replicates: usize,
    seed: u64,
    f: impl Fn(&[f64]) -> f64 + Copy,
) -> Result<ReferenceFilter, OracleError> {
    assert!(replicates >= 2, "need at least two replicates for a standard error");
    let per = (n_big / replicates).max(1);
    let mut runs = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let traj = run_filter(
            kernel,
            initial,
            obs,
            observations,
            per,
            derive_seed(seed, &[r as u64]),
            DegeneratePolicy::Fail,
        )?;
        runs.push(traj.estimates(f)?);
    }
    let t = observations.len() + 1;
    let nr = replicates as f64;
    let mean: Vec<f64> = (0..t).map(|k| runs.iter().map(|e| e[k]).sum::<f64>() / nr).collect();
    let se = (0..t)
        .map(|k| {
            let var = runs.iter().map(|e| (e[k] - mean[k]).powi(2)).sum::<f64>() / (nr - 1.0);
            (var / nr).sqrt()
        })
        .collect();
    Ok(ReferenceFilter {
        mean,
        se,
        n_big: per * replicates,
        replicates,
    })
}
