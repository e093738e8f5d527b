//! Metropolis-Hastings within Gibbs.
//!
//! Each sweep proposes a Gaussian random-walk move for every user's `Θ_i`
//! against `N(Θ_i; A_i B, Ω) · L_i(Θ_i)`, then redraws `B` and `Ω` from their
//! conjugate full conditionals.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::gibbs::{residual_scatter, sample_inverse_wishart, CoefficientPosterior};
use super::summary::summarize;
use super::{with_threads, Diagnostics, FitResult, HierarchyPrior, McmcConfig, RetainedDraw, SamplerKind, TraceRow};
use crate::error::{Error, Result};
use crate::likelihood::{user_log_likelihood, ModelSpec, UserLikelihoodInput};
use crate::model::{hierarchy_mean, ThetaTriple};
use crate::rng::{substream, Phase};

const ACCEPTANCE_BAND: (f64, f64) = (0.05, 0.8);

struct UserState {
    theta: [f64; 3],
    mean: [f64; 3],
    log_lik: f64,
}

fn log_prior(theta: &[f64; 3], mean: &[f64; 3], omega_inv: &Matrix3<f64>) -> f64 {
    let d = Vector3::new(theta[0] - mean[0], theta[1] - mean[1], theta[2] - mean[2]);
    -0.5 * (d.transpose() * omega_inv * d)[(0, 0)]
}

pub(crate) fn check_inputs(data: &[UserLikelihoodInput]) -> Result<usize> {
    let first = data.first().ok_or_else(|| Error::EmptyInput("no users supplied to the sampler".into()))?;
    let dim = first.design.coefficient_len();
    if let Some(bad) = data.iter().find(|u| u.design.coefficient_len() != dim) {
        return Err(Error::Config(format!("user {} has a different design width", bad.user_id)));
    }
    Ok(dim)
}

pub fn mcmc_fit(
    data: &[UserLikelihoodInput],
    prior: &HierarchyPrior,
    model: &ModelSpec,
    config: &McmcConfig,
) -> Result<FitResult> {
    config.validate()?;
    prior.validate()?;
    model.validate()?;
    let dim = check_inputs(data)?;
    with_threads(config.threads, || run(data, prior, model, config, dim))?
}

fn run(
    data: &[UserLikelihoodInput],
    prior: &HierarchyPrior,
    model: &ModelSpec,
    config: &McmcConfig,
    dim: usize,
) -> Result<FitResult> {
    let n = data.len();
    let psi = prior.psi();
    let designs: Vec<_> = data.iter().map(|u| &u.design).collect();

    let mut coefficients = vec![0.0; dim];
    let mut omega = Matrix3::<f64>::identity();
    let mut omega_inv = omega;
    let mut states: Vec<UserState> = data
        .par_iter()
        .map(|u| {
            let mean = hierarchy_mean(&u.design, &coefficients)?.to_array();
            let log_lik = user_log_likelihood(u, ThetaTriple::from_array(mean), model)?;
            Ok(UserState { theta: mean, mean, log_lik })
        })
        .collect::<Result<_>>()?;

    let mut trace = Vec::with_capacity(config.iterations);
    let mut draws = Vec::new();
    let mut accepted_post = 0u64;
    let mut proposed_post = 0u64;
    let mut truncation_rejections = 0u64;
    let mut max_norm = 0.0f64;

    for it in 0..config.iterations {
        let iteration = it + 1;
        let scale = config.proposal_scale;
        let outcomes: Vec<(bool, bool)> = states
            .par_iter_mut()
            .zip(data.par_iter())
            .enumerate()
            .map(|(i, (state, input))| {
                let mut rng = substream(config.seed, Phase::Proposal, it as u64, i as u64);
                let mut proposal = state.theta;
                for p in &mut proposal {
                    let z: f64 = rng.sample(StandardNormal);
                    *p += scale * z;
                }
                let u: f64 = rng.random();
                let prop_ll = match user_log_likelihood(input, ThetaTriple::from_array(proposal), model) {
                    Ok(v) => v,
                    Err(Error::TruncationOverflow { .. }) => return (false, true),
                    Err(_) => return (false, false),
                };
                let current = state.log_lik + log_prior(&state.theta, &state.mean, &omega_inv);
                let candidate = prop_ll + log_prior(&proposal, &state.mean, &omega_inv);
                if u.ln() < candidate - current {
                    state.theta = proposal;
                    state.log_lik = prop_ll;
                    (true, false)
                } else {
                    (false, false)
                }
            })
            .collect();
        if iteration > config.burn_in {
            proposed_post += n as u64;
            accepted_post += outcomes.iter().filter(|o| o.0).count() as u64;
        }
        truncation_rejections += outcomes.iter().filter(|o| o.1).count() as u64;

        let thetas: Vec<[f64; 3]> = states.iter().map(|s| s.theta).collect();
        let posterior = CoefficientPosterior::new(&designs, &thetas, &omega_inv, prior.prior_variance)
            .map_err(|_| Error::Numerical { iteration, message: "coefficient precision not positive definite".into() })?;
        coefficients = posterior.sample(&mut substream(config.seed, Phase::Coefficients, it as u64, 0));

        for (state, input) in states.iter_mut().zip(data) {
            state.mean = hierarchy_mean(&input.design, &coefficients)?.to_array();
        }
        let scatter = residual_scatter(
            states.iter().map(|s| [s.theta[0] - s.mean[0], s.theta[1] - s.mean[1], s.theta[2] - s.mean[2]]),
            &psi,
        );
        let mut rng = substream(config.seed, Phase::Covariance, it as u64, 0);
        omega = sample_inverse_wishart(&scatter, n as f64 + prior.wishart_dof, &mut rng)
            .ok_or_else(|| Error::Numerical { iteration, message: "Cholesky factorization of the covariance draw failed".into() })?;
        omega_inv = omega
            .try_inverse()
            .ok_or_else(|| Error::Numerical { iteration, message: "covariance draw is singular".into() })?;

        let neg_log_lik = -states.iter().map(|s| s.log_lik).sum::<f64>();
        if !neg_log_lik.is_finite() {
            return Err(Error::Numerical { iteration, message: "non-finite log-likelihood".into() });
        }
        max_norm = max_norm.max(coefficients.iter().map(|b| b * b).sum::<f64>().sqrt());
        trace.push(TraceRow { iteration, neg_log_lik, coefficients: coefficients.clone() });

        if iteration > config.burn_in && (iteration - config.burn_in - 1) % config.thin == 0 {
            draws.push(RetainedDraw {
                iteration,
                thetas: states.iter().map(|s| ThetaTriple::from_array(s.theta)).collect(),
                coefficients: coefficients.clone(),
                covariance: omega,
            });
        }
    }

    let acceptance_rate = accepted_post as f64 / proposed_post.max(1) as f64;
    let mut warnings = Vec::new();
    if !(ACCEPTANCE_BAND.0..=ACCEPTANCE_BAND.1).contains(&acceptance_rate) {
        let w = format!(
            "post-burn-in acceptance rate {acceptance_rate:.3} outside [{}, {}]; consider changing proposal_scale",
            ACCEPTANCE_BAND.0, ACCEPTANCE_BAND.1
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    if truncation_rejections > 0 {
        warnings.push(format!("{truncation_rejections} proposals rejected by the truncation cap"));
    }

    let user_ids: Vec<String> = data.iter().map(|u| u.user_id.clone()).collect();
    let summary = summarize(&draws, &user_ids, model.shape, config.burn_in)?;
    Ok(FitResult {
        sampler: SamplerKind::Mcmc,
        shape: model.shape,
        burn_in: config.burn_in,
        user_ids,
        trace,
        draws,
        summary,
        diagnostics: Diagnostics {
            acceptance_rate: Some(acceptance_rate),
            truncation_rejections,
            max_iterate_norm: max_norm,
            warnings,
        },
    })
}
