use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use pse_core::likelihood::{user_log_likelihood, ModelSpec, UserLikelihoodInput};
use pse_core::model::{erlang_log_density, Design, ErlangSpec, MarkovParams, ThetaTriple, TruncationPolicy};
use pse_core::samplers::{residual_scatter, sample_inverse_wishart, CoefficientPosterior};

fn integrate(f: impl Fn(f64) -> f64, edges: &[f64]) -> f64 {
    edges.windows(2).map(|w| quadrature::double_exponential::integrate(&f, w[0], w[1], 1e-14).integral).sum()
}

fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

#[test]
fn erlang_density_integrates_to_one() {
    for shape in [1u32, 2] {
        for rate in [0.2, 1.0, 5.0] {
            let spec = ErlangSpec::new(shape, rate).unwrap();
            let f = |t: f64| if t > 0.0 { erlang_log_density(t, spec).unwrap().exp() } else { 0.0 };
            let mass = integrate(f, &[0.0, 0.1, 1.0, 10.0, 100.0, 1000.0]);
            assert!((mass - 1.0).abs() < 1e-8, "shape {shape} rate {rate}: mass {mass}");
        }
    }
}

#[test]
fn sum_of_erlang_draws_is_erlang() {
    let n = 100_000;
    let critical = 1.628 / (n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (shape, rate, k) in [(1u32, 0.5, 3usize), (2, 1.3, 4), (2, 0.2, 1)] {
        let draw = Gamma::new(shape as f64, 1.0 / rate).unwrap();
        let sums: Vec<f64> = (0..n).map(|_| (0..k).map(|_| draw.sample(&mut rng)).sum()).collect();
        let target = GammaDist::new((k as u32 * shape) as f64, rate).unwrap();
        let d = ks_statistic(sums, |x| target.cdf(x));
        assert!(d < critical, "shape {shape} rate {rate} k {k}: D = {d} >= {critical}");
    }
}

#[test]
fn tail_bound_tightening_barely_moves_likelihood() {
    let design = Design::shared(vec![1.0, 0.3, -0.2, 1.1]);
    let input = UserLikelihoodInput::new("u", vec![1.0, 3.0, 7.0, 20.0, 44.0], design).unwrap();
    for shape in [1, 2] {
        for theta in [[-1.0, 0.0, 0.0], [0.5, 2.0, -2.0], [-2.5, -1.0, -2.4], [1.0, 4.0, 1.0]] {
            let theta = ThetaTriple::from_array(theta);
            let loose = ModelSpec { truncation: TruncationPolicy::with_tail_bound(1e-9), ..ModelSpec::new(shape) };
            let tight = ModelSpec { truncation: TruncationPolicy::with_tail_bound(1e-12), ..ModelSpec::new(shape) };
            let a = user_log_likelihood(&input, theta, &loose).unwrap();
            let b = user_log_likelihood(&input, theta, &tight).unwrap();
            assert!((a - b).abs() < 1e-6, "{theta:?}: {a} vs {b}");
        }
    }
}

#[test]
fn coefficient_posterior_draws_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let designs: Vec<Design> = (0..40)
        .map(|i| {
            let x = i as f64 / 10.0 - 2.0;
            Design::shared(vec![1.0, x, (x * 1.7).sin()])
        })
        .collect();
    let thetas: Vec<[f64; 3]> = designs.iter().map(|d| [0.5 * d.blocks[0][1], -1.0 + d.blocks[0][2], 0.2]).collect();
    let omega = Matrix3::new(0.5, 0.1, 0.0, 0.1, 0.4, 0.05, 0.0, 0.05, 0.3);
    let refs: Vec<&Design> = designs.iter().collect();
    let post = CoefficientPosterior::new(&refs, &thetas, &omega.try_inverse().unwrap(), 100.0).unwrap();
    let cov = post.covariance();
    let draws = 20_000;
    let dim = post.mean.len();
    let mut mean = vec![0.0; dim];
    let mut second = DMatrix::<f64>::zeros(dim, dim);
    for _ in 0..draws {
        let s = post.sample(&mut rng);
        for a in 0..dim {
            mean[a] += s[a] / draws as f64;
            for b in 0..dim {
                second[(a, b)] += (s[a] - post.mean[a]) * (s[b] - post.mean[b]) / draws as f64;
            }
        }
    }
    for a in 0..dim {
        let se = (cov[(a, a)] / draws as f64).sqrt();
        assert!((mean[a] - post.mean[a]).abs() < 4.0 * se, "mean {a}");
        let se = cov[(a, a)] * (2.0 / draws as f64).sqrt();
        assert!((second[(a, a)] - cov[(a, a)]).abs() < 4.0 * se, "variance {a}");
    }
}

#[test]
fn inverse_wishart_posterior_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let residuals = [[0.3, -0.1, 0.2], [-0.5, 0.4, 0.0], [0.1, 0.1, -0.6], [0.9, -0.2, 0.3]];
    let scale = residual_scatter(residuals.iter().copied(), &Matrix3::identity());
    let dof = 5.0 + residuals.len() as f64;
    let draws = 40_000;
    let mut mean = Matrix3::<f64>::zeros();
    for _ in 0..draws {
        mean += sample_inverse_wishart(&scale, dof, &mut rng).unwrap() / draws as f64;
    }
    let expected = scale / (dof - 4.0);
    for a in 0..3 {
        for b in 0..3 {
            assert!((mean[(a, b)] - expected[(a, b)]).abs() < 0.03 * expected[(a, a)].max(expected[(b, b)]), "{a},{b}");
        }
    }
}

#[test]
fn unobserved_weights_sum_to_one() {
    let policy = TruncationPolicy::default();
    for phi in [0.05, 0.5, 0.95] {
        for lam in [0.05, 0.5, 0.95] {
            let p = MarkovParams::new(phi, lam).unwrap();
            let k = policy.last_term(p).unwrap();
            let partial: f64 = (0..=k as u32).map(|j| pse_core::model::unobserved_count_prob(j, p)).sum();
            assert!(partial >= 1.0 - policy.tail_bound - 1e-12, "phi {phi} lam {lam}: {partial}");
        }
    }
}
