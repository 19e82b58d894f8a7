//! Multiscale SDE models, observation models and the built-in benchmarks.
//!
//! A [`MultiscaleModel`] describes the slow–fast system
//!
//! ```text
//! dX1 = a(X1, X2) dt + σ1(X1, X2) dW1
//! dX2 = (1/ε) b(X1, X2) dt + (1/√ε) σ2(X1, X2) dW2
//! ```
//!
//! The fast coefficients `b` and `σ2` are stored unscaled. Integrators apply
//! the `1/ε` and `1/√ε` factors, so the same model also drives the frozen fast
//! process `dZ = b(x, Z) dt + σ2(x, Z) dV`, which carries no ε.
//!
//! Diffusion coefficients are square matrices in row-major order and are the
//! factor σ, not σσᵀ.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg;
use crate::rng::{RngStream, StreamTag};

/// Coefficient of the full system: `(x1, x2, out)`.
pub type Coefficient = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Coefficient of a slow-only diffusion: `(x, out)`.
pub type SlowCoefficient = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Draws one sample into `out`.
pub type Sampler = Arc<dyn Fn(&mut RngStream, &mut [f64]) + Send + Sync>;
/// Observation map `(x1, v, out)`.
pub type ObservationMap = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Likelihood density `g(x1, y)`.
pub type Likelihood = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Tolerance for the mixing-condition pass decision.
pub const MIXING_TOLERANCE: f64 = 1e-9;

/// Names accepted by [`benchmark_by_name`].
pub const MODEL_NAMES: &[&str] = &["linear_ou", "nonlinear_sin"];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown model '{0}' (known: linear_ou, nonlinear_sin)")]
    UnknownModel(String),
    #[error("invalid model parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("coefficient {coefficient} is not finite at x1={x1:?}, x2={x2:?}")]
    NonFinite {
        coefficient: &'static str,
        x1: Vec<f64>,
        x2: Vec<f64>,
    },
    #[error("diffusion {coefficient} is degenerate (min eigenvalue {min_eigenvalue}) at x1={x1:?}, x2={x2:?}")]
    Degenerate {
        coefficient: &'static str,
        min_eigenvalue: f64,
        x1: Vec<f64>,
        x2: Vec<f64>,
    },
}

fn require_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

fn zero_coefficient() -> Coefficient {
    Arc::new(|_, _, out: &mut [f64]| out.fill(0.0))
}

fn point_mass(at: f64) -> Sampler {
    Arc::new(move |_, out: &mut [f64]| out.fill(at))
}

/// Sampler of independent `N(mean, sd²)` coordinates.
pub fn gaussian_sampler(mean: f64, sd: f64) -> Sampler {
    Arc::new(move |rng: &mut RngStream, out: &mut [f64]| {
        for v in out.iter_mut() {
            *v = mean + sd * rng.gaussian();
        }
    })
}

/// Sampler returning a fixed point.
pub fn point_sampler(at: Vec<f64>) -> Sampler {
    Arc::new(move |_, out: &mut [f64]| out.copy_from_slice(&at))
}

#[derive(Clone)]
pub struct MultiscaleModel {
    pub p: usize,
    pub q: usize,
    pub epsilon: f64,
    pub slow_drift: Coefficient,
    pub slow_diffusion: Coefficient,
    pub fast_drift: Coefficient,
    pub fast_diffusion: Coefficient,
    pub mu1: Sampler,
    pub mu2: Sampler,
    pub lambda_mix: f64,
}

impl fmt::Debug for MultiscaleModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiscaleModel")
            .field("p", &self.p)
            .field("q", &self.q)
            .field("epsilon", &self.epsilon)
            .field("lambda_mix", &self.lambda_mix)
            .finish_non_exhaustive()
    }
}

impl MultiscaleModel {
    /// A model with every coefficient zero and both initial laws a point mass at 0.
    pub fn new(p: usize, q: usize, epsilon: f64) -> Self {
        assert!(p >= 1 && q >= 1, "dimensions must be positive");
        Self {
            p,
            q,
            epsilon,
            slow_drift: zero_coefficient(),
            slow_diffusion: zero_coefficient(),
            fast_drift: zero_coefficient(),
            fast_diffusion: zero_coefficient(),
            mu1: point_mass(0.0),
            mu2: point_mass(0.0),
            lambda_mix: 1.0,
        }
    }

    pub fn with_slow_drift(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.slow_drift = Arc::new(f);
        self
    }

    pub fn with_slow_diffusion(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.slow_diffusion = Arc::new(f);
        self
    }

    pub fn with_fast_drift(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.fast_drift = Arc::new(f);
        self
    }

    pub fn with_fast_diffusion(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.fast_diffusion = Arc::new(f);
        self
    }

    pub fn with_initial_laws(mut self, mu1: Sampler, mu2: Sampler) -> Self {
        self.mu1 = mu1;
        self.mu2 = mu2;
        self
    }

    pub fn with_lambda_mix(mut self, lambda: f64) -> Self {
        self.lambda_mix = lambda;
        self
    }

    /// Checks finiteness of all coefficients and non-degeneracy of σ1σ1ᵀ and
    /// σ2σ2ᵀ at `n_points` states drawn from the initial laws.
    pub fn validate(&self, n_points: usize, seed: u64) -> Result<(), ModelError> {
        require_positive("epsilon", self.epsilon)?;
        require_positive("lambda_mix", self.lambda_mix)?;
        let (p, q) = (self.p, self.q);
        let mut x1 = vec![0.0; p];
        let mut x2 = vec![0.0; q];
        let mut buf = vec![0.0; p.max(q) * p.max(q)];
        let mut cov = vec![0.0; p.max(q) * p.max(q)];
        for i in 0..n_points {
            let mut rng = RngStream::tagged(seed, StreamTag::Validation, 0, i as u64);
            (self.mu1)(&mut rng, &mut x1);
            (self.mu2)(&mut rng, &mut x2);
            let checks: [(&'static str, &Coefficient, usize, bool); 4] = [
                ("slow_drift", &self.slow_drift, p, false),
                ("slow_diffusion", &self.slow_diffusion, p, true),
                ("fast_drift", &self.fast_drift, q, false),
                ("fast_diffusion", &self.fast_diffusion, q, true),
            ];
            for (name, coef, d, is_matrix) in checks {
                let len = if is_matrix { d * d } else { d };
                let out = &mut buf[..len];
                coef(&x1, &x2, out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite {
                        coefficient: name,
                        x1: x1.clone(),
                        x2: x2.clone(),
                    });
                }
                if is_matrix {
                    let c = &mut cov[..len];
                    c.fill(0.0);
                    linalg::outer_acc(out, d, 1.0, c);
                    let min_eig = linalg::min_eigenvalue(c, d);
                    if min_eig <= 0.0 {
                        return Err(ModelError::Degenerate {
                            coefficient: name,
                            min_eigenvalue: min_eig,
                            x1: x1.clone(),
                            x2: x2.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// The averaged slow diffusion `dX = ā(X) dt + σ̄(X) dW`.
#[derive(Clone)]
pub struct AveragedModel {
    pub p: usize,
    pub drift: SlowCoefficient,
    pub diffusion: SlowCoefficient,
    pub mu1: Sampler,
}

impl fmt::Debug for AveragedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AveragedModel")
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl AveragedModel {
    pub fn new(
        p: usize,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        mu1: Sampler,
    ) -> Self {
        Self {
            p,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            mu1,
        }
    }

    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        (self.drift)(x, &mut out);
        out
    }

    pub fn diffusion_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p * self.p];
        (self.diffusion)(x, &mut out);
        out
    }
}

/// `Y_k = h(X1_k, v_k)` with known density `g(x, y)`.
#[derive(Clone)]
pub struct ObservationModel {
    pub obs_dim: usize,
    pub noise_dim: usize,
    pub h: ObservationMap,
    pub noise_sampler: Sampler,
    pub likelihood: Likelihood,
    /// `K` with `1/K ≤ g ≤ K`, when such a bound holds.
    pub bound_k: Option<f64>,
}

impl fmt::Debug for ObservationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservationModel")
            .field("obs_dim", &self.obs_dim)
            .field("bound_k", &self.bound_k)
            .finish_non_exhaustive()
    }
}

impl ObservationModel {
    /// `y = x1[0] + sd·v`, `v ~ N(0, 1)`.
    pub fn gaussian(sd: f64) -> Result<Self, ModelError> {
        require_positive("obs_noise_sd", sd)?;
        let norm = 1.0 / (sd * (2.0 * PI).sqrt());
        Ok(Self {
            obs_dim: 1,
            noise_dim: 1,
            h: Arc::new(move |x, v, out| out[0] = x[0] + sd * v[0]),
            noise_sampler: gaussian_sampler(0.0, 1.0),
            likelihood: Arc::new(move |x, y| {
                let r = (y[0] - x[0]) / sd;
                norm * (-0.5 * r * r).exp()
            }),
            bound_k: None,
        })
    }

    /// Draws one observation of the slow state `x1`.
    pub fn observe(&self, x1: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut v = vec![0.0; self.noise_dim];
        (self.noise_sampler)(rng, &mut v);
        let mut y = vec![0.0; self.obs_dim];
        (self.h)(x1, &v, &mut y);
        y
    }

    pub fn density(&self, x1: &[f64], y: &[f64]) -> f64 {
        (self.likelihood)(x1, y)
    }
}

/// Parameters of the linear-Gaussian benchmark, kept for exact oracles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussianParams {
    pub epsilon: f64,
    pub sigma1: f64,
    pub obs_noise_sd: f64,
    pub slow_prior_mean: f64,
    pub slow_prior_var: f64,
    pub fast_prior_mean: f64,
    pub fast_prior_var: f64,
}

#[derive(Clone, Debug)]
pub struct BenchmarkModel {
    pub name: String,
    pub multiscale: MultiscaleModel,
    pub averaged_exact: Option<AveragedModel>,
    pub observation: ObservationModel,
    pub linear: Option<LinearGaussianParams>,
}

/// Linear slow–fast benchmark with `p = q = 1`:
/// `a = −x2`, `σ1` constant, `b = x1 − x2`, `σ2 = √2`.
///
/// The frozen fast law is `ν_x = N(x, 1)`, so the averaged model is the OU
/// process `dX = −X dt + σ1 dW`. Initial laws are `N(0, 1)` for both scales.
pub fn make_linear_benchmark(
    epsilon: f64,
    sigma1: f64,
    obs_noise_sd: f64,
) -> Result<BenchmarkModel, ModelError> {
    require_positive("epsilon", epsilon)?;
    require_positive("sigma1", sigma1)?;
    require_positive("obs_noise_sd", obs_noise_sd)?;
    let mu1 = gaussian_sampler(0.0, 1.0);
    let mu2 = gaussian_sampler(0.0, 1.0);
    let sqrt2 = std::f64::consts::SQRT_2;
    let multiscale = MultiscaleModel::new(1, 1, epsilon)
        .with_slow_drift(|_, x2, out| out[0] = -x2[0])
        .with_slow_diffusion(move |_, _, out| out[0] = sigma1)
        .with_fast_drift(|x1, x2, out| out[0] = x1[0] - x2[0])
        .with_fast_diffusion(move |_, _, out| out[0] = sqrt2)
        .with_initial_laws(mu1.clone(), mu2)
        .with_lambda_mix(1.0);
    let averaged = AveragedModel::new(
        1,
        |x, out| out[0] = -x[0],
        move |_, out| out[0] = sigma1,
        mu1,
    );
    Ok(BenchmarkModel {
        name: "linear_ou".into(),
        multiscale,
        averaged_exact: Some(averaged),
        observation: ObservationModel::gaussian(obs_noise_sd)?,
        linear: Some(LinearGaussianParams {
            epsilon,
            sigma1,
            obs_noise_sd,
            slow_prior_mean: 0.0,
            slow_prior_var: 1.0,
            fast_prior_mean: 0.0,
            fast_prior_var: 1.0,
        }),
    })
}

/// Stationary mean and variance of the fast OU in [`make_nonlinear_benchmark`].
pub const NONLINEAR_FAST_MEAN: f64 = 0.0;
pub const NONLINEAR_FAST_VAR: f64 = 1.0;

pub fn make_nonlinear_benchmark(epsilon: f64) -> Result<BenchmarkModel, ModelError> {
    make_nonlinear_benchmark_with(epsilon, 1.0)
}

/// Nonlinear benchmark with `p = q = 1`:
/// `a = −x1 + sin(x2)`, `σ1 = √(1 + x2²/2)`, `b = −x2`, `σ2 = √2`.
///
/// The fast law is `N(0, 1)` for every `x1`, so with `Z ~ N(m, v)`
/// `ā(x) = −x + e^{−v/2} sin(m)` and `σ̄² = 1 + (v + m²)/2`.
pub fn make_nonlinear_benchmark_with(
    epsilon: f64,
    obs_noise_sd: f64,
) -> Result<BenchmarkModel, ModelError> {
    require_positive("epsilon", epsilon)?;
    let mu1 = gaussian_sampler(0.0, 1.0);
    let mu2 = gaussian_sampler(0.0, 1.0);
    let sqrt2 = std::f64::consts::SQRT_2;
    let multiscale = MultiscaleModel::new(1, 1, epsilon)
        .with_slow_drift(|x1, x2, out| out[0] = -x1[0] + x2[0].sin())
        .with_slow_diffusion(|_, x2, out| out[0] = (1.0 + 0.5 * x2[0] * x2[0]).sqrt())
        .with_fast_drift(|_, x2, out| out[0] = -x2[0])
        .with_fast_diffusion(move |_, _, out| out[0] = sqrt2)
        .with_initial_laws(mu1.clone(), mu2)
        .with_lambda_mix(1.0);
    let (m, v) = (NONLINEAR_FAST_MEAN, NONLINEAR_FAST_VAR);
    let mean_sin = (-0.5 * v).exp() * m.sin();
    let sigma_bar = (1.0 + 0.5 * (v + m * m)).sqrt();
    let averaged = AveragedModel::new(
        1,
        move |x, out| out[0] = -x[0] + mean_sin,
        move |_, out| out[0] = sigma_bar,
        mu1,
    );
    Ok(BenchmarkModel {
        name: "nonlinear_sin".into(),
        multiscale,
        averaged_exact: Some(averaged),
        observation: ObservationModel::gaussian(obs_noise_sd)?,
        linear: None,
    })
}

/// Scalar parameters selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub epsilon: f64,
    pub sigma1: f64,
    pub obs_noise_sd: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            sigma1: 1.0,
            obs_noise_sd: 1.0,
        }
    }
}

pub fn benchmark_by_name(name: &str, params: &ModelParams) -> Result<BenchmarkModel, ModelError> {
    match name {
        "linear_ou" => make_linear_benchmark(params.epsilon, params.sigma1, params.obs_noise_sd),
        "nonlinear_sin" => make_nonlinear_benchmark_with(params.epsilon, params.obs_noise_sd),
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingReport {
    pub max_ratio: f64,
    pub pass: bool,
}

/// Evaluates
/// `(⟨x2 − x2′, b(x1,x2) − b(x1,x2′)⟩ + ‖σ2(x1,x2) − σ2(x1,x2′)‖²_F) / |x2 − x2′|²`
/// on `n_pairs` sampled triples and reports the maximum. Passes when the
/// maximum is at most `−λ` (plus [`MIXING_TOLERANCE`]).
pub fn check_mixing_condition(m: &MultiscaleModel, n_pairs: usize, seed: u64) -> MixingReport {
    assert!(n_pairs >= 1, "n_pairs must be at least 1");
    let (p, q) = (m.p, m.q);
    let mut x1 = vec![0.0; p];
    let mut x2 = vec![0.0; q];
    let mut x2b = vec![0.0; q];
    let mut b = vec![0.0; q];
    let mut bb = vec![0.0; q];
    let mut s = vec![0.0; q * q];
    let mut sb = vec![0.0; q * q];
    let mut max_ratio = f64::NEG_INFINITY;
    for i in 0..n_pairs {
        let mut rng = RngStream::tagged(seed, StreamTag::Mixing, 0, i as u64);
        (m.mu1)(&mut rng, &mut x1);
        let dist_sq = loop {
            (m.mu2)(&mut rng, &mut x2);
            (m.mu2)(&mut rng, &mut x2b);
            for (a, c) in x2.iter_mut().zip(x2b.iter_mut()) {
                *a += rng.gaussian();
                *c += rng.gaussian();
            }
            let d: f64 = x2.iter().zip(&x2b).map(|(a, c)| (a - c) * (a - c)).sum();
            if d > 1e-24 {
                break d;
            }
        };
        (m.fast_drift)(&x1, &x2, &mut b);
        (m.fast_drift)(&x1, &x2b, &mut bb);
        (m.fast_diffusion)(&x1, &x2, &mut s);
        (m.fast_diffusion)(&x1, &x2b, &mut sb);
        let inner: f64 = (0..q).map(|j| (x2[j] - x2b[j]) * (b[j] - bb[j])).sum();
        let frob: f64 = s.iter().zip(&sb).map(|(a, c)| (a - c) * (a - c)).sum();
        max_ratio = max_ratio.max((inner + frob) / dist_sq);
    }
    MixingReport {
        max_ratio,
        pass: max_ratio <= -m.lambda_mix + MIXING_TOLERANCE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_averaged_drift_values() {
        let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
        let avg = bm.averaged_exact.unwrap();
        assert_eq!(avg.drift_at(&[2.0]), vec![-2.0]);
        assert_eq!(avg.drift_at(&[0.0])[0], 0.0);
        assert_eq!(avg.diffusion_at(&[5.0]), vec![1.0]);
    }

    #[test]
    fn linear_mixing_statistic_is_minus_one() {
        let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
        for seed in 0..5 {
            let r = check_mixing_condition(&bm.multiscale, 100, seed);
            assert!((r.max_ratio + 1.0).abs() < 1e-12, "{r:?}");
            assert!(r.pass);
        }
    }

    #[test]
    fn zero_fast_drift_fails_mixing() {
        let m = MultiscaleModel::new(1, 1, 0.1)
            .with_fast_diffusion(|_, _, out| out[0] = 1.0)
            .with_initial_laws(gaussian_sampler(0.0, 1.0), gaussian_sampler(0.0, 1.0));
        let r = check_mixing_condition(&m, 50, 3);
        assert_eq!(r.max_ratio, 0.0);
        assert!(!r.pass);
    }

    #[test]
    fn state_dependent_noise_cancels_dissipation() {
        let m = MultiscaleModel::new(1, 1, 0.1)
            .with_fast_drift(|_, x2, out| out[0] = -x2[0])
            .with_fast_diffusion(|_, x2, out| out[0] = x2[0]);
        let r = check_mixing_condition(&m, 50, 3);
        assert!(r.max_ratio.abs() < 1e-12, "{r:?}");
        assert!(!r.pass);
    }

    #[test]
    fn degenerate_point_mass_pairs_are_resampled() {
        // point-mass μ2 still yields distinct pairs via the perturbation
        let m = MultiscaleModel::new(1, 1, 0.1).with_fast_drift(|_, x2, out| out[0] = -2.0 * x2[0]);
        let r = check_mixing_condition(&m, 10, 0);
        assert!((r.max_ratio + 2.0).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_closed_forms() {
        let bm = make_nonlinear_benchmark(0.1).unwrap();
        let avg = bm.averaged_exact.unwrap();
        assert_eq!(avg.drift_at(&[1.0])[0] - avg.drift_at(&[0.0])[0], -1.0);
        let s = avg.diffusion_at(&[3.0])[0];
        assert!((s * s - (1.0 + 0.5 * NONLINEAR_FAST_VAR)).abs() < 1e-15);
        assert_eq!(avg.drift_at(&[0.0])[0], 0.0);
    }

    #[test]
    fn benchmarks_validate() {
        make_linear_benchmark(0.1, 1.0, 1.0).unwrap().multiscale.validate(50, 1).unwrap();
        make_nonlinear_benchmark(0.1).unwrap().multiscale.validate(50, 1).unwrap();
    }

    #[test]
    fn zero_model_is_degenerate() {
        let err = MultiscaleModel::new(1, 1, 0.1).validate(1, 0).unwrap_err();
        assert!(matches!(err, ModelError::Degenerate { coefficient: "slow_diffusion", .. }));
    }

    #[test]
    fn registry_lookup() {
        let p = ModelParams::default();
        assert_eq!(benchmark_by_name("linear_ou", &p).unwrap().name, "linear_ou");
        assert_eq!(benchmark_by_name("nonlinear_sin", &p).unwrap().name, "nonlinear_sin");
        assert_eq!(
            benchmark_by_name("lorenz", &p).unwrap_err(),
            ModelError::UnknownModel("lorenz".into())
        );
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(make_linear_benchmark(0.0, 1.0, 1.0).is_err());
        assert!(make_linear_benchmark(0.1, -1.0, 1.0).is_err());
        assert!(make_linear_benchmark(0.1, 1.0, f64::NAN).is_err());
        assert!(make_nonlinear_benchmark(-0.1).is_err());
    }

    #[test]
    fn gaussian_likelihood_is_density() {
        let obs = ObservationModel::gaussian(0.5).unwrap();
        // trapezoid over y
        let dy = 1e-3;
        let total: f64 = (-8000..=8000)
            .map(|i| obs.density(&[0.3], &[0.3 + i as f64 * dy]) * dy)
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn observation_samples_match_likelihood() {
        // histogram of h(x, v) against g(x, ·) on a few bins
        let obs = ObservationModel::gaussian(1.0).unwrap();
        let x = [0.7];
        let n = 100_000;
        let mut inside = 0usize;
        for i in 0..n {
            let mut rng = RngStream::tagged(5, StreamTag::Observation, 0, i);
            let y = obs.observe(&x, &mut rng)[0];
            if (0.2..1.2).contains(&y) {
                inside += 1;
            }
        }
        let dy = 1e-4;
        let expected: f64 = (0..10_000)
            .map(|i| obs.density(&x, &[0.2 + (i as f64 + 0.5) * dy]) * dy)
            .sum();
        let freq = inside as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((freq - expected).abs() < 4.0 * se, "{freq} vs {expected}");
    }
}
