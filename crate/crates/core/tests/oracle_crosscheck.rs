//! The exact filters against each other and against large particle filters.

use msfilter_core::kernel::KernelSpec;
use msfilter_core::model::make_linear_benchmark;
use msfilter_core::oracle::{
    joint_kalman_filter, kalman_filter, reference_filter_bruteforce, GaussianBelief,
};
use msfilter_core::rng::{RngStream, StreamTag};

fn observations(t: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::tagged(seed, StreamTag::Data, 0, 0);
    (0..t).map(|k| 0.5 * (k as f64).sin() + rng.gaussian()).collect()
}

fn averaged_kalman(ys: &[f64]) -> Vec<GaussianBelief> {
    kalman_filter(1.0, 1.0, GaussianBelief { mean: 0.0, variance: 1.0 }, 1.0, ys).unwrap()
}

#[test]
fn kalman_matches_brute_force_particle_filter() {
    let bm = make_linear_benchmark(0.1, 1.0, 1.0).unwrap();
    let ys = observations(5, 1);
    let exact = averaged_kalman(&ys);
    let step = 1e-3;
    let kernel = KernelSpec::Averaged { step }.build(&bm).unwrap();
    let wrapped: Vec<Vec<f64>> = ys.iter().map(|y| vec![*y]).collect();
    let reference =
        reference_filter_bruteforce(kernel.as_ref(), &bm.multiscale.mu1, &bm.observation, &wrapped, 100_000, 20, 5, |x| x[0])
            .unwrap();
    for (k, belief) in exact.iter().enumerate().take(6) {
        let diff = (reference.mean[k] - belief.mean).abs();
        // Euler on the OU adds an O(h) bias with constant below one
        assert!(diff <= 3.0 * reference.se[k] + step, "k={k}: {diff} vs se {}", reference.se[k]);
    }
}

#[test]
fn joint_kalman_approaches_averaged_kalman_as_epsilon_shrinks() {
    let ys = observations(8, 2);
    let averaged = averaged_kalman(&ys);
    let gap = |eps: f64| {
        let params = make_linear_benchmark(eps, 1.0, 1.0).unwrap().linear.unwrap();
        let joint = joint_kalman_filter(&params, &ys).unwrap();
        joint
            .iter()
            .zip(&averaged)
            .map(|(a, b)| (a.mean - b.mean).abs().max((a.variance - b.variance).abs()))
            .fold(0.0, f64::max)
    };
    let (coarse, fine, finer) = (gap(0.1), gap(0.01), gap(0.001));
    assert!(finer < fine && fine < coarse, "{coarse} {fine} {finer}");
    assert!(finer < 0.01, "{finer}");
}

#[test]
fn joint_kalman_matches_full_system_particle_filter() {
    let bm = make_linear_benchmark(0.5, 1.0, 1.0).unwrap();
    let ys = observations(3, 3);
    let exact = joint_kalman_filter(bm.linear.as_ref().unwrap(), &ys).unwrap();
    let step = 0.005;
    let kernel = KernelSpec::Full { step }.build(&bm).unwrap();
    let wrapped: Vec<Vec<f64>> = ys.iter().map(|y| vec![*y]).collect();
    let reference =
        reference_filter_bruteforce(kernel.as_ref(), &bm.multiscale.mu1, &bm.observation, &wrapped, 100_000, 20, 6, |x| x[0])
            .unwrap();
    for (k, belief) in exact.iter().enumerate().take(4) {
        let diff = (reference.mean[k] - belief.mean).abs();
        // stiff Euler bias is O(h/ε)
        assert!(
            diff <= 3.0 * reference.se[k] + step / bm.multiscale.epsilon,
            "k={k}: {diff} vs se {}",
            reference.se[k]
        );
    }
}

#[test]
fn prior_is_returned_at_index_zero() {
    let ys = observations(2, 4);
    let beliefs = averaged_kalman(&ys);
    assert_eq!(beliefs.len(), 3);
    assert_eq!(beliefs[0], GaussianBelief { mean: 0.0, variance: 1.0 });
    let joint = joint_kalman_filter(&make_linear_benchmark(0.1, 1.0, 1.0).unwrap().linear.unwrap(), &ys).unwrap();
    assert_eq!(joint[0], GaussianBelief { mean: 0.0, variance: 1.0 });
}
