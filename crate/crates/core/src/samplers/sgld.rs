//! Stochastic gradient Langevin dynamics over the stacked coefficients
//! `ζ = (η, γ, δ)`. Per-user parameters are the deterministic image
//! `Θ_i = A_i ζ`; there is no accept-reject step.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::gibbs::sample_inverse_wishart;
use super::mcmc::check_inputs;
use super::summary::summarize;
use super::{with_threads, Diagnostics, FitResult, HierarchyPrior, RetainedDraw, SamplerKind, SgldConfig, TraceRow};
use crate::error::{Error, Result};
use crate::likelihood::{hyper_gradient_with_value, ModelSpec, UserLikelihoodInput};
use crate::model::hierarchy_mean;
use crate::rng::{substream, Phase};

const DIVERGENCE_NORM: f64 = 1e6;

/// `ζ ← ζ + ρ + (τ/2) · drift` with `ρ ~ N(0, noise_variance · I)`.
pub fn langevin_update<R: Rng + ?Sized>(
    zeta: &mut [f64],
    drift: &[f64],
    step_size: f64,
    noise_variance: f64,
    rng: &mut R,
) {
    let sd = noise_variance.sqrt();
    for (z, d) in zeta.iter_mut().zip(drift) {
        let noise = if sd > 0.0 { sd * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        *z += noise + 0.5 * step_size * d;
    }
}

/// Contiguous mini-batches over a user order reshuffled every epoch.
struct BatchSchedule {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    batch: usize,
    seed: u64,
}

impl BatchSchedule {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self { order: (0..n).collect(), pos: 0, epoch: 0, batch, seed };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut substream(self.seed, Phase::Shuffle, self.epoch, 0));
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let start = self.pos;
        self.pos = (start + self.batch).min(self.order.len());
        &self.order[start..self.pos]
    }
}

pub fn sgld_fit(
    data: &[UserLikelihoodInput],
    prior: &HierarchyPrior,
    model: &ModelSpec,
    config: &SgldConfig,
) -> Result<FitResult> {
    prior.validate()?;
    model.validate()?;
    let dim = check_inputs(data)?;
    config.validate(data.len())?;
    with_threads(config.threads, || run(data, prior, model, config, dim))?
}

fn run(
    data: &[UserLikelihoodInput],
    prior: &HierarchyPrior,
    model: &ModelSpec,
    config: &SgldConfig,
    dim: usize,
) -> Result<FitResult> {
    let n = data.len();
    let tau = config.step_size;
    let noise_variance = config.noise_variance();
    // Ω does not enter the Langevin likelihood; it is drawn once from its prior.
    let omega = sample_inverse_wishart(&prior.psi(), prior.wishart_dof, &mut substream(config.seed, Phase::Init, 0, 0))
        .ok_or_else(|| Error::Numerical { iteration: 0, message: "covariance prior draw failed".into() })?;

    let mut zeta = vec![0.0; dim];
    let mut schedule = BatchSchedule::new(n, config.batch_size, config.seed);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut draws = Vec::new();
    let mut max_norm = 0.0f64;

    for it in 0..config.iterations {
        let iteration = it + 1;
        let batch = schedule.next_batch().to_vec();
        let terms: Vec<_> = batch
            .par_iter()
            .map(|&i| hyper_gradient_with_value(&data[i], &zeta, model))
            .collect::<Result<_>>()?;
        let scale = n as f64 / batch.len() as f64;
        let mut drift: Vec<f64> = zeta.iter().map(|z| -z / prior.prior_variance).collect();
        let mut batch_ll = 0.0;
        for (ll, g) in &terms {
            batch_ll += ll;
            for (d, v) in drift.iter_mut().zip(&g.values) {
                *d += scale * v;
            }
        }
        trace.push(TraceRow { iteration, neg_log_lik: -scale * batch_ll, coefficients: zeta.clone() });

        let mut rng = substream(config.seed, Phase::Langevin, it as u64, 0);
        langevin_update(&mut zeta, &drift, tau, noise_variance, &mut rng);
        let norm = zeta.iter().map(|z| z * z).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence(format!(
                "iterate norm {norm:.3e} at iteration {iteration}; reduce step_size (currently {tau})"
            )));
        }
        max_norm = max_norm.max(norm);

        if iteration > config.burn_in && (iteration - config.burn_in - 1) % config.thin == 0 {
            let thetas = data.iter().map(|u| hierarchy_mean(&u.design, &zeta)).collect::<Result<_>>()?;
            draws.push(RetainedDraw { iteration, thetas, coefficients: zeta.clone(), covariance: omega });
        }
    }

    let user_ids: Vec<String> = data.iter().map(|u| u.user_id.clone()).collect();
    let summary = summarize(&draws, &user_ids, model.shape, config.burn_in)?;
    Ok(FitResult {
        sampler: SamplerKind::Sgld,
        shape: model.shape,
        burn_in: config.burn_in,
        user_ids,
        trace,
        draws,
        summary,
        diagnostics: Diagnostics { acceptance_rate: None, truncation_rejections: 0, max_iterate_norm: max_norm, warnings: vec![] },
    })
}
