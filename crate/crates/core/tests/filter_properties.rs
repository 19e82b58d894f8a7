//! Particle-filter behaviour against exact filters and structural invariants.

use std::sync::Arc;

use msfilter_core::analysis::{convergence_slope, summarize};
use msfilter_core::filter::{
    estimate, filter_step, init_particles, multinomial_resample, normalize_weights,
};
use msfilter_core::integrator::{IntegrationError, KernelSample};
use msfilter_core::kernel::{KernelChoice, KernelSpec};
use msfilter_core::model::{gaussian_sampler, make_linear_benchmark, point_sampler};
use msfilter_core::oracle::{kalman_filter, ou_transition_law, GaussianBelief};
use msfilter_core::rng::{RngStream, StreamTag};
use msfilter_core::{
    run_filter, DegeneratePolicy, FilterError, ObservationModel, ParticleEnsemble, TransitionKernel,
};
use proptest::prelude::*;

/// Truth path of the averaged OU and its noisy observations `Y_1..Y_T`.
fn ou_observations(t: usize, seed: u64) -> Vec<Vec<f64>> {
    let (decay, var) = ou_transition_law(1.0, 1.0, 1.0, 1.0).unwrap();
    let mut rng = RngStream::tagged(seed, StreamTag::Data, 0, 0);
    let mut x = rng.gaussian();
    (0..t)
        .map(|_| {
            x = decay * x + var.sqrt() * rng.gaussian();
            vec![x + rng.gaussian()]
        })
        .collect()
}

fn kalman_means(ys: &[Vec<f64>]) -> Vec<f64> {
    let flat: Vec<f64> = ys.iter().map(|y| y[0]).collect();
    kalman_filter(1.0, 1.0, GaussianBelief { mean: 0.0, variance: 1.0 }, 1.0, &flat)
        .unwrap()
        .iter()
        .map(|b| b.mean)
        .collect()
}

struct Identity;

impl TransitionKernel for Identity {
    fn label(&self) -> &str {
        "identity"
    }

    fn slow_dim(&self) -> usize {
        1
    }

    fn transition(&self, x1: &[f64], _: &[f64], _: &mut RngStream) -> Result<KernelSample, IntegrationError> {
        Ok(KernelSample {
            x_next: x1.to_vec(),
            fast_next: Vec::new(),
            rv_count: 0,
        })
    }

    fn rv_per_transition(&self) -> u64 {
        0
    }
}

fn scaled(obs: &ObservationModel, c: f64) -> ObservationModel {
    let g = obs.likelihood.clone();
    ObservationModel {
        likelihood: Arc::new(move |x, y| c * g(x, y)),
        ..obs.clone()
    }
}

fn constant_likelihood() -> ObservationModel {
    ObservationModel {
        likelihood: Arc::new(|_, _| 0.37),
        ..ObservationModel::gaussian(1.0).unwrap()
    }
}

#[test]
fn averaged_filter_tracks_kalman() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let n = 10_000;
    let kernel = KernelSpec::for_particles(KernelChoice::AveragedExact, n).build(&bm).unwrap();
    let mu1 = bm.averaged_exact.as_ref().unwrap().mu1.clone();
    let errors: Vec<f64> = (0..20)
        .map(|seed| {
            let ys = ou_observations(5, 100 + seed);
            let exact = kalman_means(&ys);
            let traj = run_filter(kernel.as_ref(), &mu1, &bm.observation, &ys, n, seed, DegeneratePolicy::Fail)
                .unwrap();
            let est = traj.estimates(|x| x[0]).unwrap();
            (est[5] - exact[5]).abs()
        })
        .collect();
    let med = summarize(&errors).median;
    assert!(med <= 5.0 / (n as f64).sqrt(), "median error {med}");
}

#[test]
fn averaged_filter_error_decays_like_inverse_sqrt_n() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let mu1 = bm.averaged_exact.as_ref().unwrap().mu1.clone();
    let mut points = Vec::new();
    for n in [100usize, 1000, 10_000] {
        let kernel = KernelSpec::for_particles(KernelChoice::AveragedExact, n).build(&bm).unwrap();
        let errors: Vec<f64> = (0..20)
            .map(|seed| {
                let ys = ou_observations(5, 100 + seed);
                let exact = kalman_means(&ys);
                let traj = run_filter(kernel.as_ref(), &mu1, &bm.observation, &ys, n, seed, DegeneratePolicy::Fail)
                    .unwrap();
                (traj.estimates(|x| x[0]).unwrap()[5] - exact[5]).abs()
            })
            .collect();
        points.push((n as f64, summarize(&errors).median));
    }
    let fit = convergence_slope(&points).unwrap();
    assert!((fit.slope + 0.5).abs() <= 0.15, "slope {}", fit.slope);
}

#[test]
fn step_costs_for_one_hundred_particles() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let ensemble = init_particles(&bm.multiscale.mu1, 1, 100, 0);
    for (choice, expected) in [(KernelChoice::Full, 2000), (KernelChoice::Hmm, 11_000)] {
        let kernel = KernelSpec::for_particles(choice, 100).build(&bm).unwrap();
        let mut start = ensemble.clone();
        start.fast_states = (0..100)
            .map(|j| kernel.init_fast(&mut RngStream::tagged(0, StreamTag::Init, 1, j)))
            .collect();
        let out = filter_step(&start, kernel.as_ref(), &bm.observation, &[0.3], 1, 0, DegeneratePolicy::Fail)
            .unwrap();
        assert_eq!(out.rv_count, expected, "{choice}");
    }
}

#[test]
fn identity_kernel_with_constant_likelihood_keeps_the_ensemble() {
    let positions: Vec<Vec<f64>> = (0..2000).map(|j| vec![j as f64 * 0.01 - 3.0]).collect();
    let start = ParticleEnsemble::uniform(positions.clone());
    let out = filter_step(&start, &Identity, &constant_likelihood(), &[1.0], 1, 5, DegeneratePolicy::Fail)
        .unwrap();
    assert_eq!(out.weighted.positions, positions);
    for w in &out.weighted.weights {
        assert!((w - 1.0 / 2000.0).abs() < 1e-15);
    }
    assert_eq!(out.rv_count, 0);
    for x in &out.resampled.positions {
        assert!(positions.contains(x));
    }
}

#[test]
fn constant_likelihood_gives_unconditioned_propagation() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let n = 100_000;
    let kernel = KernelSpec::Averaged { step: 1e-3 }.build(&bm).unwrap();
    let start = point_sampler(vec![1.0]);
    let traj = run_filter(kernel.as_ref(), &start, &constant_likelihood(), &[vec![0.0]], n, 3, DegeneratePolicy::Fail)
        .unwrap();
    let (m, v) = ou_transition_law(1.0, 1.0, 1.0, 1.0).unwrap();
    let est = traj.estimates(|x| x[0]).unwrap()[1];
    // the resampled mean carries the propagation and the resampling variance
    let se = (2.0 * v / n as f64).sqrt();
    assert!((est - m).abs() < 3.0 * se + 1e-3, "estimate {est} vs {m}");
}

#[test]
fn scaled_likelihood_leaves_filter_unchanged() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let kernel = KernelSpec::for_particles(KernelChoice::AveragedExact, 500).build(&bm).unwrap();
    let ys = ou_observations(4, 7);
    let run = |obs: &ObservationModel| {
        run_filter(kernel.as_ref(), &bm.multiscale.mu1, obs, &ys, 500, 9, DegeneratePolicy::Fail).unwrap()
    };
    let base = run(&bm.observation);
    let pow2 = run(&scaled(&bm.observation, 8.0));
    assert_eq!(base.steps.last().unwrap().resampled, pow2.steps.last().unwrap().resampled);
    let odd = run(&scaled(&bm.observation, 3.7));
    assert_eq!(
        base.steps.last().unwrap().resampled.positions,
        odd.steps.last().unwrap().resampled.positions
    );
    for (a, b) in base.estimates(|x| x[0]).unwrap().iter().zip(odd.estimates(|x| x[0]).unwrap()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let ys = ou_observations(3, 2);
    for choice in KernelChoice::ALL {
        let kernel = KernelSpec::for_particles(choice, 64).build(&bm).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    run_filter(kernel.as_ref(), &bm.multiscale.mu1, &bm.observation, &ys, 64, 4, DegeneratePolicy::Fail)
                        .unwrap()
                })
        };
        let (one, four) = (run(1), run(4));
        assert_eq!(one.initial, four.initial);
        for (a, b) in one.steps.iter().zip(&four.steps) {
            assert_eq!(a.resampled, b.resampled, "{choice}");
            assert_eq!(a.rv_cumulative, b.rv_cumulative);
        }
    }
}

#[test]
fn single_particle_and_point_mass_runs() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let ys = ou_observations(3, 1);
    for choice in KernelChoice::ALL {
        let kernel = KernelSpec::for_particles(choice, 1).build(&bm).unwrap();
        // a unit Euler step on the stiff system can push the lone particle out of reach
        let traj = run_filter(
            kernel.as_ref(),
            &bm.multiscale.mu1,
            &bm.observation,
            &ys,
            1,
            0,
            DegeneratePolicy::FallbackUniform,
        )
        .unwrap();
        assert_eq!(traj.steps.len(), 3);
        assert_eq!(traj.estimates(|_| 1.0).unwrap(), vec![1.0; 4]);
    }
    let ens = init_particles(&point_sampler(vec![2.5]), 1, 50, 0);
    assert!((estimate(&ens, |x| x[0]).unwrap() - 2.5).abs() <= 1e-14);
}

#[test]
fn distant_observation_fails_or_falls_back() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let kernel = KernelSpec::for_particles(KernelChoice::AveragedExact, 100).build(&bm).unwrap();
    let ys = vec![vec![1e4]];
    let err = run_filter(kernel.as_ref(), &bm.multiscale.mu1, &bm.observation, &ys, 100, 0, DegeneratePolicy::Fail)
        .unwrap_err();
    assert!(matches!(err, FilterError::Degenerate(ref d) if d.k == Some(1)), "{err}");
    let traj = run_filter(
        kernel.as_ref(),
        &bm.multiscale.mu1,
        &bm.observation,
        &ys,
        100,
        0,
        DegeneratePolicy::FallbackUniform,
    )
    .unwrap();
    assert!(traj.steps[0].fallback_used);
}

#[test]
fn initial_draws_follow_the_prior() {
    let n = 100_000;
    let ens = init_particles(&gaussian_sampler(1.5, 2.0), 1, n, 8);
    let mean = estimate(&ens, |x| x[0]).unwrap();
    let var = estimate(&ens, |x| (x[0] - mean).powi(2)).unwrap();
    assert!((mean - 1.5).abs() < 3.0 * 2.0 / (n as f64).sqrt());
    assert!((var - 4.0).abs() < 3.0 * 4.0 * (2.0 / n as f64).sqrt());
}

#[test]
fn multinomial_resampling_is_unbiased() {
    let weights = [0.05, 0.4, 0.0, 0.25, 0.3];
    let positions: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
    let ens = ParticleEnsemble {
        positions,
        weights: weights.to_vec(),
        fast_states: vec![Vec::new(); 5],
    };
    let reps = 10_000;
    let mut counts = [0usize; 5];
    for r in 0..reps {
        let mut rng = RngStream::tagged(1, StreamTag::Resample, 0, r);
        for x in multinomial_resample(&ens, &mut rng).positions {
            counts[x[0] as usize] += 1;
        }
    }
    let total = (reps * 5) as f64;
    for (c, w) in counts.iter().zip(weights) {
        let freq = *c as f64 / total;
        assert!((freq - w).abs() <= 3.0 * (w * (1.0 - w) / total).sqrt() + 1e-15, "{freq} vs {w}");
    }
    assert_eq!(counts[2], 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_weights_sum_to_one(ws in prop::collection::vec(1e-300f64..1e3, 1..200)) {
        let n = ws.len();
        let mut ens = ParticleEnsemble {
            positions: vec![vec![0.0]; n],
            weights: ws,
            fast_states: vec![Vec::new(); n],
        };
        normalize_weights(&mut ens).unwrap();
        prop_assert!((ens.weight_sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn resampling_only_picks_supported_particles(
        ws in prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..5.0], 2..60),
        seed in any::<u64>(),
    ) {
        prop_assume!(ws.iter().any(|w| *w > 0.0));
        let n = ws.len();
        let ens = ParticleEnsemble {
            positions: (0..n).map(|i| vec![i as f64]).collect(),
            weights: ws.clone(),
            fast_states: vec![Vec::new(); n],
        };
        let out = multinomial_resample(&ens, &mut RngStream::new(seed, 0));
        prop_assert_eq!(out.len(), n);
        for x in &out.positions {
            prop_assert!(ws[x[0] as usize] > 0.0);
        }
        prop_assert!(out.weights.iter().all(|w| *w == 1.0 / n as f64));
    }

    #[test]
    fn estimate_of_constant_is_exact(ws in prop::collection::vec(1e-6f64..10.0, 1..100), c in -1e3f64..1e3) {
        let n = ws.len();
        let ens = ParticleEnsemble {
            positions: vec![vec![0.0]; n],
            weights: ws,
            fast_states: vec![Vec::new(); n],
        };
        prop_assert!((estimate(&ens, |_| c).unwrap() - c).abs() <= 1e-12 * c.abs().max(1.0));
        prop_assert_eq!(estimate(&ens, |_| 1.0).unwrap(), 1.0);
    }
}
