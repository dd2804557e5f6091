//! End-to-end estimator behavior on simulated data: identifiability
//! asymmetry under a nested design, and thread-count invariance of a fit.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slfa::estimator::{fit, FitConfig};
use slfa::metrics::factor_sine_error;
use slfa::model::{ModelFamily, ResponseData};
use slfa::simulation::{
    apply_design, generate_design, sample_ball, BallDistribution, DesignKind,
};

fn simulate_bernoulli_nested(
    n: usize,
    j: usize,
    radius: f64,
    seed: u64,
) -> (ResponseData, slfa::DesignMatrix, Array2<f64>) {
    let family = ModelFamily::bernoulli();
    let q = generate_design(&DesignKind::Nested, j, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_star = sample_ball(n, 2, radius, BallDistribution::UniformBall, &mut rng);
    let raw = sample_ball(j, 2, radius, BallDistribution::UniformBall, &mut rng);
    let a_star = apply_design(&raw, &q).unwrap();
    let mut values = Array2::zeros((n, j));
    for i in 0..n {
        for jj in 0..j {
            let m: f64 = (0..2).map(|k| theta_star[[i, k]] * a_star[[jj, k]]).sum();
            values[[i, jj]] = family.sample(m, &mut rng).unwrap();
        }
    }
    (
        ResponseData::new(values, None, family).unwrap(),
        q,
        theta_star,
    )
}

/// Under the nested design the anchored factor recovers better than the
/// factor that is only ever measured jointly.
#[test]
fn nested_design_orders_factor_errors() {
    let (data, q, theta_star) = simulate_bernoulli_nested(500, 100, 3.0, 0xB100);
    let mut config = FitConfig::new(2, 3.6);
    config.seed = 0xB101;
    config.max_outer_iters = 300;
    config.tol_rel_obj = 1e-6;
    let result = fit(&data, &q, ModelFamily::bernoulli(), &config).unwrap();
    let anchored = factor_sine_error(&theta_star, &result.scores, 0).unwrap();
    let confounded = factor_sine_error(&theta_star, &result.scores, 1).unwrap();
    assert!(
        anchored < confounded,
        "anchored factor error {anchored:.3} should beat confounded {confounded:.3}"
    );
}

/// Fits are bit-identical whatever the rayon pool size.
#[test]
fn fit_is_thread_count_invariant() {
    let (data, q, _) = simulate_bernoulli_nested(60, 30, 2.0, 0xB200);
    let mut config = FitConfig::new(2, 2.4);
    config.seed = 0xB201;
    config.max_outer_iters = 60;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| fit(&data, &q, ModelFamily::bernoulli(), &config).unwrap())
    };
    let single = run(1);
    let multi = run(4);
    assert_eq!(single.scores, multi.scores);
    assert_eq!(single.loadings, multi.loadings);
    assert_eq!(single.objective_trace, multi.objective_trace);
}

/// Poisson counts fit end to end and feasibility holds at exit.
#[test]
fn poisson_fit_end_to_end() {
    let family = ModelFamily::poisson();
    let q = generate_design(&DesignKind::Simple, 12, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB300);
    let theta_star = sample_ball(80, 3, 1.5, BallDistribution::UniformBall, &mut rng);
    let raw = sample_ball(12, 3, 1.5, BallDistribution::UniformBall, &mut rng);
    let a_star = apply_design(&raw, &q).unwrap();
    let mut values = Array2::zeros((80, 12));
    for i in 0..80 {
        for jj in 0..12 {
            let m: f64 = (0..3).map(|k| theta_star[[i, k]] * a_star[[jj, k]]).sum();
            values[[i, jj]] = family.sample(m, &mut rng).unwrap();
        }
    }
    let data = ResponseData::new(values, None, family).unwrap();
    let mut config = FitConfig::new(3, 1.8);
    config.seed = 0xB301;
    let result = fit(&data, &q, family, &config).unwrap();
    assert!(result.converged);
    for i in 0..result.scores.nrows() {
        let norm: f64 = result.scores.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1.8 + 1e-9);
    }
    for jj in 0..12 {
        for k in 0..3 {
            if !q.loads(jj, k) {
                assert_eq!(result.loadings[[jj, k]], 0.0);
            }
        }
    }
}
