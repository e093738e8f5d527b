//! Estimation algorithms: Metropolis-Hastings-within-Gibbs ([`mcmc_fit`]) and
//! stochastic gradient Langevin dynamics ([`sgld_fit`]).

mod gibbs;
mod mcmc;
mod persist;
mod sgld;
mod summary;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ThetaTriple;

pub use gibbs::{residual_scatter, sample_inverse_wishart, CoefficientPosterior};
pub use mcmc::mcmc_fit;
pub use persist::{read_draw_trace, read_summary, read_user_summaries, write_fit, FitFiles};
pub use sgld::{langevin_update, sgld_fit};
pub use summary::{quantile, summarize, PosteriorSummary, UserSummary};

/// Prior hyperparameters of the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyPrior {
    /// Variance of the isotropic normal prior on the stacked coefficients.
    pub prior_variance: f64,
    /// Inverse-Wishart scale `Ψ` (row-major).
    pub wishart_scale: [[f64; 3]; 3],
    /// Inverse-Wishart degrees of freedom `ν`.
    pub wishart_dof: f64,
}

impl Default for HierarchyPrior {
    fn default() -> Self {
        Self {
            prior_variance: 100.0,
            wishart_scale: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            wishart_dof: 5.0,
        }
    }
}

impl HierarchyPrior {
    pub fn psi(&self) -> Matrix3<f64> {
        matrix_from_rows(&self.wishart_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(Error::Config("prior_variance must be positive".into()));
        }
        if !(self.wishart_dof > 4.0) {
            return Err(Error::Config(format!("wishart_dof must exceed 4, got {}", self.wishart_dof)));
        }
        let psi = self.psi();
        if (psi - psi.transpose()).abs().max() > 1e-12 || psi.cholesky().is_none() {
            return Err(Error::Config("wishart_scale must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

pub(crate) fn matrix_from_rows(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

pub(crate) fn matrix_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Standard deviation of each coordinate of the random-walk proposal.
    pub proposal_scale: f64,
    pub seed: u64,
    /// Keep every `thin`-th post-burn-in draw of the per-user parameters.
    pub thin: usize,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { iterations: 30_000, burn_in: 10_000, proposal_scale: 0.1, seed: 0, thin: 10, threads: 0 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "need 0 <= burn_in < iterations, got burn_in={} iterations={}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.proposal_scale >= 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::Config("proposal_scale must be non-negative".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgldConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub batch_size: usize,
    /// Constant step size `τ`.
    pub step_size: f64,
    /// Variance of the injected noise per iteration; `None` couples it to `τ`.
    pub noise_variance: Option<f64>,
    pub seed: u64,
    pub thin: usize,
    pub threads: usize,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            burn_in: 20_000,
            batch_size: 200,
            step_size: 1e-4,
            noise_variance: None,
            seed: 0,
            thin: 10,
            threads: 0,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self, n_users: usize) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "need 0 <= burn_in < iterations, got burn_in={} iterations={}",
                self.burn_in, self.iterations
            )));
        }
        if self.batch_size == 0 || self.batch_size > n_users {
            return Err(Error::Config(format!(
                "batch_size must lie in 1..={n_users}, got {}",
                self.batch_size
            )));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step_size must be non-negative".into()));
        }
        if matches!(self.noise_variance, Some(v) if !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("noise_variance must be non-negative".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance.unwrap_or(self.step_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Mcmc,
    Sgld,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Mcmc => "mcmc",
            SamplerKind::Sgld => "sgld",
        })
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based iteration index.
    pub iteration: usize,
    pub neg_log_lik: f64,
    pub coefficients: Vec<f64>,
}

/// Per-user parameters kept at one post-burn-in iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedDraw {
    pub iteration: usize,
    pub thetas: Vec<ThetaTriple>,
    pub coefficients: Vec<f64>,
    pub covariance: Matrix3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Post-burn-in Metropolis-Hastings acceptance rate (MCMC only).
    pub acceptance_rate: Option<f64>,
    /// Proposals rejected because the mixture could not be truncated.
    pub truncation_rejections: u64,
    pub max_iterate_norm: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub sampler: SamplerKind,
    pub shape: u32,
    pub burn_in: usize,
    pub user_ids: Vec<String>,
    pub trace: Vec<TraceRow>,
    pub draws: Vec<RetainedDraw>,
    pub summary: PosteriorSummary,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn neg_log_lik_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.neg_log_lik).collect()
    }

    /// Mean of the negative log-likelihood over post-burn-in iterations.
    pub fn post_burn_in_neg_log_lik(&self) -> f64 {
        let tail: Vec<f64> = self.trace.iter().filter(|r| r.iteration > self.burn_in).map(|r| r.neg_log_lik).collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
