//! Closed-form model mathematics.
//!
//! All-sites inter-engagement times (IETs) are Erlang with integer shape `s`
//! and per-day rate `β`. A two-state Markov chain (focal site / other sites)
//! allocates each engagement to a site. Intervals between consecutive focal
//! engagements therefore follow a mixture over the number `k` of unobserved
//! engagements in between:
//!
//! ```text
//! g1(t) = Σ_k Erlang(t; s(k+1), β) · Q(k)
//! Q(0)  = φ
//! Q(k)  = (1 - φ)(1 - λ)^(k-1) λ          k > 0
//! PSE   = λ / (1 + λ - φ)
//! ```
//!
//! Everything is evaluated in log space. The mixture is truncated at an
//! adaptive number of terms chosen by [`TruncationPolicy`].

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Logistic outputs are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;

const LN_GAMMA_TABLE_LEN: usize = 4096;

/// `ln Γ(n)` for `n = 0..LN_GAMMA_TABLE_LEN` (entry 0 is unused).
fn ln_gamma_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![f64::INFINITY; LN_GAMMA_TABLE_LEN];
        for (n, v) in t.iter_mut().enumerate().skip(1) {
            *v = ln_gamma(n as f64);
        }
        t
    })
}

/// `ln((n-1)!)` for integer `n ≥ 1`.
#[inline]
pub fn ln_gamma_int(n: u32) -> f64 {
    ln_gamma_table()
        .get(n as usize)
        .copied()
        .unwrap_or_else(|| ln_gamma(n as f64))
}

/// Erlang distribution with integer shape and per-day rate `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErlangSpec {
    pub shape: u32,
    pub rate: f64,
}

impl ErlangSpec {
    pub fn new(shape: u32, rate: f64) -> Result<Self> {
        if shape == 0 {
            return Err(Error::Domain("Erlang shape must be at least 1".into()));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::Domain(format!("Erlang rate must be positive and finite, got {rate}")));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape as f64 / self.rate
    }
}

pub fn erlang_log_density(t: f64, spec: ErlangSpec) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("IET must be positive and finite, got {t}")));
    }
    let spec = ErlangSpec::new(spec.shape, spec.rate)?;
    let s = spec.shape as f64;
    Ok(s * spec.rate.ln() + (s - 1.0) * t.ln() - spec.rate * t - ln_gamma_int(spec.shape))
}

/// Transition probabilities of the two-state site chain.
///
/// `phi` is focal → focal, `lam` is other → focal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovParams {
    pub phi: f64,
    pub lam: f64,
}

impl MarkovParams {
    pub fn new(phi: f64, lam: f64) -> Result<Self> {
        let open = |p: f64| p.is_finite() && p > 0.0 && p < 1.0;
        if !open(phi) || !open(lam) {
            return Err(Error::Domain(format!(
                "transition probabilities must lie in (0,1), got phi={phi}, lam={lam}"
            )));
        }
        Ok(Self { phi, lam })
    }
}

/// Probability of exactly `k` unobserved engagements between two observed ones.
pub fn unobserved_count_prob(k: u32, params: MarkovParams) -> f64 {
    if k == 0 {
        params.phi
    } else {
        (1.0 - params.phi) * (1.0 - params.lam).powi(k as i32 - 1) * params.lam
    }
}

/// Stationary probability of the focal state.
pub fn pse_from_markov(params: MarkovParams) -> f64 {
    params.lam / (1.0 + params.lam - params.phi)
}

/// Mean all-sites IET, `s/β`.
pub fn mean_all_sites_iet(spec: ErlangSpec) -> f64 {
    spec.mean()
}

/// Mean interval between observed focal engagements, `(s/β) / PSE`.
pub fn mean_focal_iet(spec: ErlangSpec, params: MarkovParams) -> f64 {
    spec.mean() * (1.0 + params.lam - params.phi) / params.lam
}

/// Chooses how many mixture terms to keep.
///
/// The mixing weights alone fix a minimum `K`: the smallest `k` whose
/// geometric tail `(1-φ)(1-λ)^k` drops below `tail_bound`. Evaluation at a
/// given `t` keeps adding terms past that point while the remaining terms
/// could still carry more than `tail_bound` of the density at `t`; the terms
/// are log-concave in `k` beyond `k = 1`, so the remainder is bounded by a
/// geometric series once they start to decrease. Needing more than
/// `max_terms` is an error. `fixed_last_term` switches adaptivity off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruncationPolicy {
    pub tail_bound: f64,
    pub max_terms: usize,
    pub fixed_last_term: Option<usize>,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { tail_bound: 1e-9, max_terms: 512, fixed_last_term: None }
    }
}

impl TruncationPolicy {
    pub fn with_tail_bound(tail_bound: f64) -> Self {
        Self { tail_bound, ..Self::default() }
    }

    /// Sum exactly the terms `k = 0..=last`.
    pub fn fixed(last: usize) -> Self {
        Self { fixed_last_term: Some(last), max_terms: last, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tail_bound > 0.0 && self.tail_bound < 1.0) {
            return Err(Error::Config(format!("tail_bound must lie in (0,1), got {}", self.tail_bound)));
        }
        Ok(())
    }

    /// Minimum index of the last retained term, from the mixing weights alone.
    pub fn last_term(&self, params: MarkovParams) -> Result<usize> {
        if let Some(k) = self.fixed_last_term {
            return Ok(k);
        }
        let decay = 1.0 - params.lam;
        let mut tail = 1.0 - params.phi;
        let mut k = 0usize;
        while tail >= self.tail_bound {
            if k == self.max_terms {
                return Err(Error::TruncationOverflow { residual: tail, max_terms: self.max_terms });
            }
            tail *= decay;
            k += 1;
        }
        Ok(k)
    }

    /// Mixture mass left out at the minimum `K`.
    pub fn residual_mass(&self, params: MarkovParams) -> Result<f64> {
        let k = self.last_term(params)?;
        Ok((1.0 - params.phi) * (1.0 - params.lam).powi(k as i32))
    }
}

/// The truncated focal-IET mixture for one parameter setting.
#[derive(Debug, Clone)]
pub struct FocalMixture {
    shape: u32,
    rate: f64,
    ln_rate: f64,
    phi: f64,
    lam: f64,
    ln_phi: f64,
    ln_not_phi: f64,
    ln_lam: f64,
    ln_stay: f64,
    min_last: usize,
    max_last: usize,
    adaptive: bool,
    tail_bound: f64,
}

impl FocalMixture {
    pub fn new(spec: ErlangSpec, params: MarkovParams, policy: &TruncationPolicy) -> Result<Self> {
        let min_last = policy.last_term(params)?;
        Ok(Self {
            shape: spec.shape,
            rate: spec.rate,
            ln_rate: spec.rate.ln(),
            phi: params.phi,
            lam: params.lam,
            ln_phi: params.phi.ln(),
            ln_not_phi: (1.0 - params.phi).ln(),
            ln_lam: params.lam.ln(),
            ln_stay: (1.0 - params.lam).ln(),
            min_last,
            max_last: policy.max_terms.max(min_last + 1),
            adaptive: policy.fixed_last_term.is_none(),
            tail_bound: policy.tail_bound,
        })
    }

    /// Index of the last term guaranteed to be summed at every `t`.
    pub fn min_last_term(&self) -> usize {
        self.min_last
    }

    /// Log density at `t > 0`. The caller guarantees `t` is positive and finite.
    pub fn log_density(&self, t: f64) -> Result<f64> {
        self.accumulate::<false>(t).map(|(v, _)| v)
    }

    /// Log density and its gradient with respect to `(θ_β, θ_φ, θ_λ)`.
    pub fn log_density_and_grad(&self, t: f64) -> Result<(f64, [f64; 3])> {
        self.accumulate::<true>(t)
    }

    #[inline]
    fn log_term(&self, k: usize, c: f64, base: f64) -> f64 {
        let shape_k = self.shape * (k as u32 + 1);
        let log_w = if k == 0 { self.ln_phi } else { self.ln_not_phi + (k - 1) as f64 * self.ln_stay + self.ln_lam };
        shape_k as f64 * c - ln_gamma_int(shape_k) + log_w + base
    }

    /// Approximate `argmax_k` of the log terms at `βt`.
    fn mode_index(&self, bt: f64) -> usize {
        let s = self.shape as f64;
        let k = bt * (1.0 - self.lam).powf(1.0 / s) / s - 1.0;
        if k.is_finite() && k > 0.0 {
            k.min(u32::MAX as f64 / (2.0 * s)) as usize
        } else {
            0
        }
    }

    fn accumulate<const GRAD: bool>(&self, t: f64) -> Result<(f64, [f64; 3])> {
        let ln_t = t.ln();
        let c = self.ln_rate + ln_t;
        let base = -ln_t - self.rate * t;
        let bt = self.rate * t;
        let mut sum = LogSum::<GRAD>::new(self, bt);
        let overflow = |sum: &LogSum<GRAD>| Error::TruncationOverflow { residual: sum.residual, max_terms: self.max_last };

        if !self.adaptive {
            for k in 0..=self.min_last {
                sum.add(k, self.log_term(k, c, base));
            }
            return Ok(sum.finish());
        }

        let mode = self.mode_index(bt);
        if mode <= self.min_last + 1 {
            // One run from k = 0 until the decreasing tail is negligible.
            let mut prev = f64::NEG_INFINITY;
            let mut k = 0usize;
            loop {
                let x = self.log_term(k, c, base);
                let scaled = sum.add(k, x);
                if k >= self.min_last && k >= 2 && sum.tail_negligible(x, prev, scaled, self.tail_bound) {
                    break;
                }
                if sum.terms > self.max_last {
                    return Err(overflow(&sum));
                }
                prev = x;
                k += 1;
            }
        } else {
            // Mass-based minimum, then a window grown outward from the mode.
            for k in 0..=self.min_last {
                sum.add(k, self.log_term(k, c, base));
            }
            let mut prev = f64::NEG_INFINITY;
            let mut k = mode;
            loop {
                let x = self.log_term(k, c, base);
                let scaled = sum.add(k, x);
                if k == mode + 1 && x > prev {
                    // Estimate fell left of the peak; keep climbing.
                } else if k > mode + 1 && sum.tail_negligible(x, prev, scaled, self.tail_bound) {
                    break;
                }
                if sum.terms > self.max_last {
                    return Err(overflow(&sum));
                }
                prev = x;
                k += 1;
            }
            let mut prev = self.log_term(mode, c, base);
            let mut k = mode;
            while k > self.min_last + 1 {
                k -= 1;
                let x = self.log_term(k, c, base);
                let scaled = sum.add(k, x);
                if k >= 2 && sum.tail_negligible(x, prev, scaled, self.tail_bound) {
                    break;
                }
                if sum.terms > self.max_last {
                    return Err(overflow(&sum));
                }
                prev = x;
            }
        }
        Ok(sum.finish())
    }
}

/// Running log-sum-exp of mixture terms, `Σ = exp(max) · acc`, with the
/// matching weighted sums of term derivatives when `GRAD` is set.
struct LogSum<'a, const GRAD: bool> {
    mix: &'a FocalMixture,
    bt: f64,
    max: f64,
    acc: f64,
    g: [f64; 3],
    terms: usize,
    residual: f64,
}

impl<'a, const GRAD: bool> LogSum<'a, GRAD> {
    fn new(mix: &'a FocalMixture, bt: f64) -> Self {
        Self { mix, bt, max: f64::NEG_INFINITY, acc: 0.0, g: [0.0; 3], terms: 0, residual: f64::INFINITY }
    }

    #[inline]
    fn add(&mut self, k: usize, x: f64) -> f64 {
        self.terms += 1;
        let scaled = if x > self.max {
            let r = (self.max - x).exp();
            self.acc *= r;
            if GRAD {
                for v in &mut self.g {
                    *v *= r;
                }
            }
            self.max = x;
            1.0
        } else {
            (x - self.max).exp()
        };
        self.acc += scaled;
        if GRAD {
            let m = self.mix;
            self.g[0] += scaled * ((m.shape * (k as u32 + 1)) as f64 - self.bt);
            if k == 0 {
                self.g[1] += scaled * (1.0 - m.phi);
            } else {
                self.g[1] -= scaled * m.phi;
                self.g[2] += scaled * (1.0 - k as f64 * m.lam);
            }
        }
        scaled
    }

    /// Whether the terms beyond the one just added (moving away from the
    /// peak) are bounded below `tail_bound` of the running sum.
    #[inline]
    fn tail_negligible(&mut self, x: f64, prev: f64, scaled: f64, tail_bound: f64) -> bool {
        if x >= prev {
            self.residual = f64::INFINITY;
            return false;
        }
        let r = (x - prev).exp();
        let rest = scaled * r / (1.0 - r);
        self.residual = rest / self.acc;
        rest < tail_bound * self.acc
    }

    fn finish(mut self) -> (f64, [f64; 3]) {
        if GRAD {
            for v in &mut self.g {
                *v /= self.acc;
            }
        }
        (self.max + self.acc.ln(), self.g)
    }
}

pub fn focal_iet_log_density(
    t: f64,
    spec: ErlangSpec,
    params: MarkovParams,
    truncation: &TruncationPolicy,
) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("IET must be positive and finite, got {t}")));
    }
    let spec = ErlangSpec::new(spec.shape, spec.rate)?;
    let params = MarkovParams::new(params.phi, params.lam)?;
    FocalMixture::new(spec, params, truncation)?.log_density(t)
}

/// Per-user unconstrained parameters `(θ_β, θ_φ, θ_λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThetaTriple {
    pub theta_beta: f64,
    pub theta_phi: f64,
    pub theta_lam: f64,
}

impl ThetaTriple {
    pub fn new(theta_beta: f64, theta_phi: f64, theta_lam: f64) -> Self {
        Self { theta_beta, theta_phi, theta_lam }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.theta_beta, self.theta_phi, self.theta_lam]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Numerically stable logistic, clamped away from 0 and 1.
pub fn logistic(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps `Θ` to `(β, (φ, λ))`.
pub fn theta_to_natural(theta: ThetaTriple) -> (f64, MarkovParams) {
    let rate = theta.theta_beta.exp().clamp(f64::MIN_POSITIVE, f64::MAX);
    let params = MarkovParams { phi: logistic(theta.theta_phi), lam: logistic(theta.theta_lam) };
    (rate, params)
}

pub fn natural_to_theta(rate: f64, params: MarkovParams) -> ThetaTriple {
    ThetaTriple::new(rate.ln(), logit(params.phi), logit(params.lam))
}

/// Row blocks of the block-diagonal design `A_i` for one user.
///
/// `blocks[0]`, `blocks[1]`, `blocks[2]` are the covariate vectors for the
/// `θ_β`, `θ_φ` and `θ_λ` equations; coefficients stack as `(η, γ, δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub blocks: [Vec<f64>; 3],
}

impl Design {
    /// Same covariates in all three equations.
    pub fn shared(x: Vec<f64>) -> Self {
        Self { blocks: [x.clone(), x.clone(), x] }
    }

    pub fn coefficient_len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// `A_iᵀ g` for a per-equation vector `g`.
    pub fn transpose_apply(&self, g: [f64; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coefficient_len());
        for (block, gb) in self.blocks.iter().zip(g) {
            out.extend(block.iter().map(|x| x * gb));
        }
        out
    }
}

/// `A_i B` as a [`ThetaTriple`].
pub fn hierarchy_mean(design: &Design, coefficients: &[f64]) -> Result<ThetaTriple> {
    if design.coefficient_len() != coefficients.len() {
        return Err(Error::Config(format!(
            "design has {} columns but coefficient vector has length {}",
            design.coefficient_len(),
            coefficients.len()
        )));
    }
    let mut out = [0.0; 3];
    let mut offset = 0;
    for (o, block) in out.iter_mut().zip(&design.blocks) {
        *o = block.iter().zip(&coefficients[offset..offset + block.len()]).map(|(x, b)| x * b).sum();
        offset += block.len();
    }
    Ok(ThetaTriple::from_array(out))
}

/// Optional term tying individual PSE odds to an aggregate market share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorSpec {
    pub enabled: bool,
    pub pse_agg: f64,
    /// Variance of the odds-scale normal.
    pub sigma2: f64,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self { enabled: false, pse_agg: 0.5, sigma2: 1.0 }
    }
}

impl AnchorSpec {
    pub fn enabled(pse_agg: f64, sigma2: f64) -> Self {
        Self { enabled: true, pse_agg, sigma2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled {
            if !(self.pse_agg > 0.0 && self.pse_agg < 1.0) {
                return Err(Error::Config(format!("pse_agg must lie in (0,1), got {}", self.pse_agg)));
            }
            if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
                return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
            }
        }
        Ok(())
    }

    /// Mean of the odds-scale normal, `PSE_agg / (1 - PSE_agg)`.
    pub fn odds_mean(&self) -> f64 {
        self.pse_agg / (1.0 - self.pse_agg)
    }

    /// Log density at a given odds value.
    pub fn log_density_at_odds(&self, odds: f64) -> f64 {
        let d = odds - self.odds_mean();
        -0.5 * (2.0 * std::f64::consts::PI * self.sigma2).ln() - d * d / (2.0 * self.sigma2)
    }
}

pub fn anchor_log_density(pse: f64, anchor: &AnchorSpec) -> Result<f64> {
    if !anchor.enabled {
        return Err(Error::Config("anchor density requested but anchor is disabled".into()));
    }
    anchor.validate()?;
    if !(pse > 0.0 && pse < 1.0) {
        return Err(Error::Domain(format!("PSE must lie in (0,1), got {pse}")));
    }
    Ok(anchor.log_density_at_odds(pse / (1.0 - pse)))
}
