//! Error metrics, rate fits, theoretical bound calculators and cost accounting.

use rayon::prelude::*;
use thiserror::Error;

use crate::filter::FilterTrajectory;
use crate::integrator::IntegrationError;
use crate::kernel::KernelChoice;
use crate::rng::{RngStream, StreamTag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid argument {name} = {value}: {reason}")]
    InvalidArgument {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("sampler failed at sample {index}: {source}")]
    Sampler {
        index: usize,
        #[source]
        source: IntegrationError,
    },
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> AnalysisError {
    AnalysisError::InvalidArgument {
        name,
        value,
        reason,
    }
}

/// Constant of the `C_k/√N` particle-filter bound for a likelihood bounded
/// in `[1/K, K]`:
/// `(2 + 2α)·((8K^{2T})^{k+1} − 8K^{2T}) / (8K^{2T} − 1)`.
///
/// Returns `+∞` when the value overflows.
pub fn ck_bound(bound_k: f64, horizon: usize, k: usize, alpha: f64) -> Result<f64, AnalysisError> {
    if !(bound_k >= 1.0) {
        return Err(invalid("K", bound_k, "must be at least 1"));
    }
    if horizon == 0 {
        return Err(invalid("T", 0.0, "must be positive"));
    }
    if k > horizon {
        return Err(invalid("k", k as f64, "must not exceed T"));
    }
    if !(alpha >= 0.0) {
        return Err(invalid("alpha", alpha, "must be nonnegative"));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let ratio = 8.0 * bound_k.powf(2.0 * horizon as f64);
    let top = ratio.powf((k + 1) as f64);
    if !top.is_finite() || !ratio.is_finite() {
        return Ok(f64::INFINITY);
    }
    let value = (2.0 + 2.0 * alpha) * (top - ratio) / (ratio - 1.0);
    Ok(if value.is_finite() { value } else { f64::INFINITY })
}

/// Bracket of the HMM weak-error bound (the factor multiplying `C_f`):
/// `Δt + δt + e^{−λn/2}/(1 − e^{−λn/2})·(Δt + Δt²) + Δt/M`.
pub fn hmm_error_bound(
    macro_step: f64,
    micro_step: f64,
    lambda_mix: f64,
    burst_horizon: f64,
    replicas: f64,
) -> Result<f64, AnalysisError> {
    let rate = lambda_mix * burst_horizon;
    if !(rate > 0.0) {
        return Err(invalid("lambda*n", rate, "must be positive"));
    }
    if !(replicas >= 1.0) {
        return Err(invalid("M", replicas, "must be at least 1"));
    }
    let decay = (-0.5 * rate).exp();
    let geometric = decay / (1.0 - decay);
    Ok(macro_step + micro_step + geometric * (macro_step + macro_step * macro_step) + macro_step / replicas)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakError {
    /// `mean_a − mean_b`.
    pub diff: f64,
    /// Pooled standard error `√(s_a²/n + s_b²/n)`.
    pub se: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Draws one terminal state from a stream.
pub type StateSampler<'a> = dyn Fn(&mut RngStream) -> Result<Vec<f64>, IntegrationError> + Sync + 'a;
pub type TestFunction<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

/// Difference of Monte Carlo means of `f` under two samplers. Sample `i` of
/// both samplers is drawn from the same stream, so identical samplers give
/// an exact zero.
pub fn weak_error_estimate(
    sampler_a: &StateSampler,
    sampler_b: &StateSampler,
    f: &TestFunction,
    n_samples: usize,
    seed: u64,
) -> Result<WeakError, AnalysisError> {
    Ok(weak_error_estimates(sampler_a, sampler_b, &[f], n_samples, seed)?[0])
}

/// [`weak_error_estimate`] for several test functions on one set of samples.
pub fn weak_error_estimates(
    sampler_a: &StateSampler,
    sampler_b: &StateSampler,
    fs: &[&TestFunction],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<WeakError>, AnalysisError> {
    if n_samples < 2 {
        return Err(AnalysisError::TooFewPoints {
            needed: 2,
            got: n_samples,
        });
    }
    let draw = |sampler: &StateSampler| -> Result<Vec<Vec<f64>>, AnalysisError> {
        let values: Vec<Result<Vec<f64>, AnalysisError>> = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::tagged(seed, StreamTag::Sample, 0, i as u64);
                let x = sampler(&mut rng).map_err(|source| AnalysisError::Sampler { index: i, source })?;
                Ok(fs.iter().map(|f| f(&x)).collect())
            })
            .collect();
        values.into_iter().collect()
    };
    let a = draw(sampler_a)?;
    let b = draw(sampler_b)?;
    let n = n_samples as f64;
    Ok((0..fs.len())
        .map(|j| {
            let (ma, va) = mean_var(a.iter().map(|v| v[j]));
            let (mb, vb) = mean_var(b.iter().map(|v| v[j]));
            WeakError {
                diff: ma - mb,
                se: (va / n + vb / n).sqrt(),
                mean_a: ma,
                mean_b: mb,
            }
        })
        .collect())
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares on `(ln scale, ln error)`.
pub fn convergence_slope(points: &[(f64, f64)]) -> Result<SlopeFit, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    for &(s, e) in points {
        if !(s > 0.0) {
            return Err(invalid("scale", s, "must be positive"));
        }
        if !(e > 0.0) {
            return Err(invalid("error", e, "must be positive"));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Least-squares constant `C` in `error ≈ C · scale`, fitted through the origin.
pub fn fit_constant_through_origin(points: &[(f64, f64)]) -> f64 {
    let num: f64 = points.iter().map(|(s, e)| s * e).sum();
    let den: f64 = points.iter().map(|(s, _)| s * s).sum();
    num / den
}

/// Median, quartiles, mean and standard error of replicate errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> ErrorSummary {
    assert!(!values.is_empty(), "nothing to summarize");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let se = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    ErrorSummary {
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        mean,
        se,
        count: sorted.len(),
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One row per observation index: mean absolute error over seeds and its SE.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub k: usize,
    pub abs_error: f64,
    pub se: f64,
    pub median: f64,
    pub n_particles: usize,
    pub epsilon: f64,
    pub kernel: String,
    pub rv_cost: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorSeries {
    pub rows: Vec<ErrorRow>,
}

impl ErrorSeries {
    /// `errors[s][k − 1]` is the absolute error of seed `s` at observation `k`.
    pub fn from_replicates(
        kernel: &str,
        n_particles: usize,
        epsilon: f64,
        errors: &[Vec<f64>],
        rv_cost_per_step: u64,
    ) -> Self {
        let t = errors.first().map_or(0, Vec::len);
        let rows = (0..t)
            .map(|i| {
                let col: Vec<f64> = errors.iter().map(|e| e[i]).collect();
                let s = summarize(&col);
                ErrorRow {
                    k: i + 1,
                    abs_error: s.mean,
                    se: s.se,
                    median: s.median,
                    n_particles,
                    epsilon,
                    kernel: kernel.to_string(),
                    rv_cost: rv_cost_per_step,
                }
            })
            .collect();
        Self { rows }
    }
}

fn ceil_sqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r
}

/// Per-step random-variate counts under the default `1/√N` tuning:
/// full `N·√N·(p+q)`, averaged `N·√N·p`, HMM `N·(√N·p + N·q)`, with `√N`
/// rounded up when `N` is not a perfect square.
pub fn paper_cost_formula(choice: KernelChoice, n: usize, p: usize, q: usize) -> u64 {
    let (n, p, q) = (n as u64, p as u64, q as u64);
    let steps = ceil_sqrt(n);
    match choice {
        KernelChoice::Full => n * steps * (p + q),
        KernelChoice::AveragedExact => n * steps * p,
        KernelChoice::Hmm => n * (steps * p + steps * steps * q),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub measured: u64,
    pub formula: u64,
    pub matches: bool,
}

/// Compares the measured per-step count of every filter step with
/// [`paper_cost_formula`]. `measured` is the first disagreeing step when
/// there is one.
pub fn cost_report(
    trajectory: &FilterTrajectory,
    p: usize,
    q: usize,
    n: usize,
    choice: KernelChoice,
) -> CostReport {
    let formula = paper_cost_formula(choice, n, p, q);
    let measured = trajectory
        .steps
        .iter()
        .map(|s| s.rv_count)
        .find(|c| *c != formula)
        .unwrap_or_else(|| trajectory.steps.first().map_or(0, |s| s.rv_count));
    CostReport {
        measured,
        formula,
        matches: !trajectory.steps.is_empty() && measured == formula,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ck_exact_value() {
        assert_eq!(ck_bound(1.0, 1, 1, 0.0).unwrap(), 16.0);
    }

    #[test]
    fn ck_zero_at_start() {
        for t in 1..6 {
            for alpha in [0.0, 0.5, 10.0] {
                assert_eq!(ck_bound(1.0, t, 0, alpha).unwrap(), 0.0);
                assert_eq!(ck_bound(1.7, t, 0, alpha).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn ck_monotone_in_k() {
        for kb in [1.0, 1.1, 2.0] {
            for t in 1..5 {
                for alpha in [0.0, 1.0] {
                    let vals: Vec<f64> = (0..=t).map(|k| ck_bound(kb, t, k, alpha).unwrap()).collect();
                    assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
                }
            }
        }
    }

    #[test]
    fn ck_overflow_and_errors() {
        assert_eq!(ck_bound(1e10, 50, 50, 0.0).unwrap(), f64::INFINITY);
        assert!(ck_bound(0.5, 1, 1, 0.0).is_err());
        assert!(ck_bound(1.0, 1, 2, 0.0).is_err());
        assert!(ck_bound(1.0, 1, 1, -1.0).is_err());
    }

    #[test]
    fn hmm_bracket_value() {
        let v = hmm_error_bound(0.1, 0.1, 1.0, 1.0, 1.0).unwrap();
        let g = (-0.5f64).exp() / (1.0 - (-0.5f64).exp());
        assert!((v - (0.3 + g * 0.11)).abs() < 1e-15);
        assert!((v - 0.46956).abs() < 1e-4);
    }

    #[test]
    fn hmm_bracket_limits() {
        let g = (-0.5f64).exp() / (1.0 - (-0.5f64).exp());
        let big_m = hmm_error_bound(0.1, 0.05, 1.0, 1.0, 1e15).unwrap();
        assert!((big_m - (0.15 + g * 0.11)).abs() < 1e-12);
        let big_n = hmm_error_bound(0.1, 0.05, 1.0, 1e3, 4.0).unwrap();
        assert!((big_n - (0.15 + 0.025)).abs() < 1e-12);
        assert!(hmm_error_bound(0.1, 0.1, 0.0, 1.0, 1.0).is_err());
        assert!(hmm_error_bound(0.1, 0.1, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn hmm_bracket_monotonicity() {
        let grid = [0.05, 0.1, 0.2, 0.5];
        for &dt_macro in &grid {
            for &dt_micro in &grid {
                let base = hmm_error_bound(dt_macro, dt_micro, 1.0, 1.0, 2.0).unwrap();
                assert!(hmm_error_bound(dt_macro, dt_micro, 1.0, 2.0, 2.0).unwrap() < base);
                assert!(hmm_error_bound(dt_macro, dt_micro, 1.0, 1.0, 3.0).unwrap() < base);
                assert!(hmm_error_bound(dt_macro * 1.1, dt_micro, 1.0, 1.0, 2.0).unwrap() > base);
                assert!(hmm_error_bound(dt_macro, dt_micro * 1.1, 1.0, 1.0, 2.0).unwrap() > base);
            }
        }
    }

    #[test]
    fn slope_of_exact_lines() {
        let fit = convergence_slope(&[(1.0, 1.0), (10.0, 10.0), (100.0, 100.0)]).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [1e2, 1e3, 1e4].iter().map(|&n: &f64| (n, 3.0 / n.sqrt())).collect();
        assert!((convergence_slope(&pts).unwrap().slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn slope_preconditions() {
        assert!(matches!(
            convergence_slope(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(AnalysisError::TooFewPoints { .. })
        ));
        assert!(convergence_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(convergence_slope(&[(-1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn identical_samplers_have_zero_difference() {
        let s = |rng: &mut RngStream| -> Result<Vec<f64>, IntegrationError> { Ok(vec![rng.gaussian()]) };
        let w = weak_error_estimate(&s, &s, &|x: &[f64]| x[0], 1000, 3).unwrap();
        assert_eq!(w.diff, 0.0);
        assert!(w.se > 0.0);
    }

    #[test]
    fn bounded_test_function_bounds_difference() {
        let a = |rng: &mut RngStream| -> Result<Vec<f64>, IntegrationError> { Ok(vec![rng.gaussian() + 5.0]) };
        let b = |rng: &mut RngStream| -> Result<Vec<f64>, IntegrationError> { Ok(vec![rng.gaussian() - 5.0]) };
        let w = weak_error_estimate(&a, &b, &|x: &[f64]| x[0].tanh(), 500, 1).unwrap();
        assert!(w.diff.abs() <= 2.0);
        assert!(weak_error_estimate(&a, &b, &|x: &[f64]| x[0], 1, 1).is_err());
    }

    #[test]
    fn summary_quantiles() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.mean, 3.0);
        assert_eq!(summarize(&[1.0, 2.0]).median, 1.5);
    }

    #[test]
    fn paper_formulas() {
        assert_eq!(paper_cost_formula(KernelChoice::Full, 100, 1, 1), 2000);
        assert_eq!(paper_cost_formula(KernelChoice::Hmm, 100, 1, 1), 11000);
        assert_eq!(paper_cost_formula(KernelChoice::Full, 1, 1, 1), 2);
        assert_eq!(paper_cost_formula(KernelChoice::Hmm, 1, 1, 1), 2);
        // √150 rounds up to 13
        assert_eq!(paper_cost_formula(KernelChoice::AveragedExact, 150, 1, 1), 150 * 13);
        assert_eq!(ceil_sqrt(0), 0);
        assert_eq!(ceil_sqrt(17), 5);
        assert_eq!(ceil_sqrt(16), 4);
    }

    #[test]
    fn error_series_rows() {
        let s = ErrorSeries::from_replicates("hmm", 10, 0.1, &[vec![1.0, 2.0], vec![3.0, 4.0]], 7);
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[0].abs_error, 2.0);
        assert_eq!(s.rows[1].k, 2);
        assert_eq!(s.rows[1].rv_cost, 7);
    }
}
