use serde::{Deserialize, Serialize};

use super::{matrix_to_rows, RetainedDraw};
use crate::error::{Error, Result};
use crate::model::{pse_from_markov, theta_to_natural};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user_id: String,
    pub pse_mean: f64,
    /// 5% posterior quantile of PSE.
    pub pse_lower: f64,
    /// 95% posterior quantile of PSE.
    pub pse_upper: f64,
    /// Posterior mean of `s/β`.
    pub mean_iet: f64,
    /// Posterior mean of `(s/β)/PSE`.
    pub mean_focal_iet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub users: Vec<UserSummary>,
    pub coefficients_mean: Vec<f64>,
    pub covariance_mean: [[f64; 3]; 3],
    pub retained_draws: usize,
}

impl PosteriorSummary {
    pub fn user(&self, user_id: &str) -> Option<&UserSummary> {
        self.users.iter().find(|u| u.user_id == user_id)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Reduces the draws taken after `burn_in` to per-user and global summaries.
pub fn summarize(draws: &[RetainedDraw], user_ids: &[String], shape: u32, burn_in: usize) -> Result<PosteriorSummary> {
    let kept: Vec<&RetainedDraw> = draws.iter().filter(|d| d.iteration > burn_in).collect();
    if kept.is_empty() {
        return Err(Error::Config(format!("no draws retained after burn-in {burn_in}")));
    }
    if let Some(d) = kept.iter().find(|d| d.thetas.len() != user_ids.len()) {
        return Err(Error::Config(format!("draw at iteration {} has the wrong number of users", d.iteration)));
    }
    let s = shape as f64;
    let users = user_ids
        .iter()
        .enumerate()
        .map(|(i, user_id)| {
            let mut pse = Vec::with_capacity(kept.len());
            let mut iet = Vec::with_capacity(kept.len());
            let mut focal = Vec::with_capacity(kept.len());
            for d in &kept {
                let (rate, params) = theta_to_natural(d.thetas[i]);
                let p = pse_from_markov(params);
                pse.push(p);
                iet.push(s / rate);
                focal.push(s / rate / p);
            }
            let pse_mean = mean(&pse);
            pse.sort_by(f64::total_cmp);
            UserSummary {
                user_id: user_id.clone(),
                pse_mean,
                pse_lower: quantile(&pse, 0.05),
                pse_upper: quantile(&pse, 0.95),
                mean_iet: mean(&iet),
                mean_focal_iet: mean(&focal),
            }
        })
        .collect();
    let dim = kept[0].coefficients.len();
    let coefficients_mean = (0..dim).map(|j| kept.iter().map(|d| d.coefficients[j]).sum::<f64>() / kept.len() as f64).collect();
    let cov = kept.iter().fold(nalgebra::Matrix3::zeros(), |acc, d| acc + d.covariance) / kept.len() as f64;
    Ok(PosteriorSummary { users, coefficients_mean, covariance_mean: matrix_to_rows(&cov), retained_draws: kept.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{natural_to_theta, MarkovParams, ThetaTriple};
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn draw(iteration: usize, thetas: Vec<ThetaTriple>) -> RetainedDraw {
        RetainedDraw { iteration, thetas, coefficients: vec![0.0; 3], covariance: Matrix3::identity() }
    }

    #[test]
    fn constant_chain() {
        let theta = natural_to_theta(0.5, MarkovParams::new(0.6, 0.4).unwrap());
        let draws: Vec<_> = (1..=50).map(|i| draw(i, vec![theta])).collect();
        let s = summarize(&draws, &["a".into()], 2, 10).unwrap();
        let u = &s.users[0];
        assert_eq!(s.retained_draws, 40);
        assert!((u.pse_mean - 0.5).abs() < 1e-12);
        assert_eq!(u.pse_lower, u.pse_upper);
        assert!((u.mean_iet - 4.0).abs() < 1e-12);
        assert!((u.mean_focal_iet - 8.0).abs() < 1e-12);
    }

    #[test]
    fn two_symmetric_values() {
        let a = ThetaTriple::new(0.0, 0.3, 0.3);
        let b = ThetaTriple::new(0.0, -0.8, -0.8);
        let draws = vec![draw(1, vec![a]), draw(2, vec![b])];
        let s = summarize(&draws, &["u".into()], 1, 0).unwrap();
        let pa = pse_from_markov(theta_to_natural(a).1);
        let pb = pse_from_markov(theta_to_natural(b).1);
        assert!((s.users[0].pse_mean - (pa + pb) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_matches_sorted_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        v.sort_by(f64::total_cmp);
        // 999 gaps: position q*999 lands on an order statistic for these q.
        assert_eq!(quantile(&v, 0.0), v[0]);
        assert_eq!(quantile(&v, 1.0), v[999]);
        assert_eq!(quantile(&v, 333.0 / 999.0), v[333]);
        let q05 = quantile(&v, 0.05);
        let brute = v[49] + (v[50] - v[49]) * (0.05 * 999.0 - 49.0);
        assert!((q05 - brute).abs() < 1e-15);
    }

    #[test]
    fn interval_contains_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<_> = (1..=500)
            .map(|i| draw(i, vec![ThetaTriple::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))]))
            .collect();
        let s = summarize(&draws, &["u".into()], 2, 0).unwrap();
        let u = &s.users[0];
        assert!(u.pse_lower <= u.pse_mean && u.pse_mean <= u.pse_upper);
        assert!(u.pse_lower > 0.0 && u.pse_upper < 1.0);
    }

    #[test]
    fn empty_after_burn_in_is_error() {
        let draws = vec![draw(1, vec![ThetaTriple::default()])];
        assert!(summarize(&draws, &["u".into()], 2, 5).is_err());
    }
}
