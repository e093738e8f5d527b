//! Per-user and total log-likelihoods over observed focal IETs, with analytic
//! gradients for the Langevin sampler.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    hierarchy_mean, theta_to_natural, AnchorSpec, Design, ErlangSpec, FocalMixture, MarkovParams, ThetaTriple,
    TruncationPolicy,
};

/// Fixed model choices shared by every likelihood evaluation in a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub shape: u32,
    pub anchor: AnchorSpec,
    pub truncation: TruncationPolicy,
}

impl ModelSpec {
    pub fn new(shape: u32) -> Self {
        Self { shape, anchor: AnchorSpec::default(), truncation: TruncationPolicy::default() }
    }

    pub fn with_anchor(mut self, anchor: AnchorSpec) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape == 0 {
            return Err(Error::Config("shape must be at least 1".into()));
        }
        self.anchor.validate()?;
        self.truncation.validate()
    }
}

/// Observed IETs and covariates for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLikelihoodInput {
    pub user_id: String,
    pub iets: Vec<f64>,
    pub design: Design,
    /// Distinct IET values with multiplicities, ascending.
    #[serde(skip)]
    distinct: Vec<(f64, f64)>,
}

impl UserLikelihoodInput {
    pub fn new(user_id: impl Into<String>, iets: Vec<f64>, design: Design) -> Result<Self> {
        let user_id = user_id.into();
        if iets.is_empty() {
            return Err(Error::Domain(format!("user {user_id} has no IETs")));
        }
        if let Some(bad) = iets.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::Domain(format!("user {user_id} has non-positive IET {bad}")));
        }
        let mut sorted = iets.clone();
        sorted.sort_by(f64::total_cmp);
        let mut distinct: Vec<(f64, f64)> = Vec::new();
        for t in sorted {
            match distinct.last_mut() {
                Some((v, c)) if *v == t => *c += 1.0,
                _ => distinct.push((t, 1.0)),
            }
        }
        Ok(Self { user_id, iets, design, distinct })
    }

    pub fn count(&self) -> usize {
        self.iets.len()
    }

    pub fn mean_iet(&self) -> f64 {
        self.iets.iter().sum::<f64>() / self.iets.len() as f64
    }

    fn distinct(&self) -> &[(f64, f64)] {
        &self.distinct
    }
}

/// Gradient of a user's log-likelihood with respect to the stacked
/// coefficients `(η, γ, δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn mixture_for(theta: ThetaTriple, model: &ModelSpec) -> Result<(FocalMixture, MarkovParams)> {
    let (rate, params) = theta_to_natural(theta);
    let spec = ErlangSpec::new(model.shape, rate)?;
    Ok((FocalMixture::new(spec, params, &model.truncation)?, params))
}

fn anchor_term(params: MarkovParams, anchor: &AnchorSpec) -> f64 {
    anchor.log_density_at_odds(params.lam / (1.0 - params.phi))
}

pub fn user_log_likelihood(input: &UserLikelihoodInput, theta: ThetaTriple, model: &ModelSpec) -> Result<f64> {
    let (mixture, params) = mixture_for(theta, model)?;
    let mut ll = 0.0;
    for &(t, c) in input.distinct() {
        ll += c * mixture.log_density(t)?;
    }
    if model.anchor.enabled {
        ll += anchor_term(params, &model.anchor);
    }
    Ok(ll)
}

/// Log-likelihood and its gradient with respect to `Θ_i`.
pub fn user_log_likelihood_and_grad(
    input: &UserLikelihoodInput,
    theta: ThetaTriple,
    model: &ModelSpec,
) -> Result<(f64, [f64; 3])> {
    let (mixture, params) = mixture_for(theta, model)?;
    let mut ll = 0.0;
    let mut grad = [0.0; 3];
    for &(t, c) in input.distinct() {
        let (v, g) = mixture.log_density_and_grad(t)?;
        ll += c * v;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += c * gi;
        }
    }
    if model.anchor.enabled {
        let anchor = &model.anchor;
        let (phi, lam) = (params.phi, params.lam);
        let odds = lam / (1.0 - phi);
        ll += anchor.log_density_at_odds(odds);
        let d_odds = -(odds - anchor.odds_mean()) / anchor.sigma2;
        grad[1] += d_odds * lam * phi / (1.0 - phi);
        grad[2] += d_odds * lam * (1.0 - lam) / (1.0 - phi);
    }
    Ok((ll, grad))
}

pub fn total_log_likelihood(inputs: &[UserLikelihoodInput], thetas: &[ThetaTriple], model: &ModelSpec) -> Result<f64> {
    if inputs.len() != thetas.len() {
        return Err(Error::Config(format!("{} users but {} parameter triples", inputs.len(), thetas.len())));
    }
    let terms: Vec<f64> = inputs
        .par_iter()
        .zip(thetas.par_iter())
        .map(|(input, theta)| user_log_likelihood(input, *theta, model))
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Gradient of `ℓ_i(A_i B)` with respect to `B`, plus the log-likelihood value.
pub fn hyper_gradient_with_value(
    input: &UserLikelihoodInput,
    coefficients: &[f64],
    model: &ModelSpec,
) -> Result<(f64, GradientVector)> {
    let theta = hierarchy_mean(&input.design, coefficients)?;
    let (ll, g) = user_log_likelihood_and_grad(input, theta, model)?;
    let values = input.design.transpose_apply(g);
    if !ll.is_finite() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient for user {}", input.user_id)));
    }
    Ok((ll, GradientVector { values }))
}

pub fn hyper_gradient(input: &UserLikelihoodInput, coefficients: &[f64], model: &ModelSpec) -> Result<GradientVector> {
    hyper_gradient_with_value(input, coefficients, model).map(|(_, g)| g)
}
