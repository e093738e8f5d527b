//! Synthetic multi-site engagement data and suppression-based simulated
//! truth.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, EngagementLog, UserFeatures, UserRecord};
use crate::model::{hierarchy_mean, pse_from_markov, theta_to_natural, Design, MarkovParams, ThetaTriple};
use crate::rng::{substream, Phase};
use crate::samplers::matrix_from_rows;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureDistribution {
    pub loyalty_p: f64,
    pub offers_mean: f64,
    pub purchases_mean: f64,
}

impl Default for FeatureDistribution {
    fn default() -> Self {
        Self { loyalty_p: 0.5, offers_mean: 3.0, purchases_mean: 5.0 }
    }
}

impl FeatureDistribution {
    fn validate(&self) -> Result<()> {
        if !(self.loyalty_p > 0.0 && self.loyalty_p < 1.0) {
            return Err(Error::Config(format!("loyalty_p must lie in (0, 1), got {}", self.loyalty_p)));
        }
        if !(self.offers_mean > 0.0 && self.purchases_mean > 0.0) {
            return Err(Error::Config("Poisson feature means must be positive".into()));
        }
        Ok(())
    }

    /// Standardizes with the distribution's own moments.
    pub fn standardize(&self, f: &UserFeatures) -> Vec<f64> {
        let p = self.loyalty_p;
        vec![
            1.0,
            (f.loyalty - p) / (p * (1.0 - p)).sqrt(),
            (f.offers - self.offers_mean) / self.offers_mean.sqrt(),
            (f.purchases - self.purchases_mean) / self.purchases_mean.sqrt(),
        ]
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> UserFeatures {
        let loyalty = Bernoulli::new(self.loyalty_p).expect("validated").sample(rng);
        let offers: f64 = Poisson::new(self.offers_mean).expect("validated").sample(rng);
        let purchases: f64 = Poisson::new(self.purchases_mean).expect("validated").sample(rng);
        UserFeatures { loyalty: loyalty as u8 as f64, offers, purchases }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n_users: usize,
    pub horizon_days: u32,
    /// Stacked `(η, γ, δ)`, each over `[1, loyalty, offers, purchases]`.
    pub coefficients: Vec<f64>,
    pub covariance: [[f64; 3]; 3],
    pub shape: u32,
    pub features: FeatureDistribution,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_users: 200,
            horizon_days: 121,
            coefficients: vec![
                -0.4, 0.15, 0.1, -0.1, // θβ
                -0.4, 0.2, 0.1, 0.0, // θφ
                -0.6, 0.1, 0.0, 0.15, // θλ
            ],
            covariance: [[0.15, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]],
            shape: 2,
            features: FeatureDistribution::default(),
            seed: 1,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.horizon_days == 0 {
            return Err(Error::Config("generator needs at least one user and one day".into()));
        }
        if self.shape == 0 {
            return Err(Error::Config("Erlang shape must be a positive integer".into()));
        }
        if self.coefficients.len() != 12 || !self.coefficients.iter().all(|c| c.is_finite()) {
            return Err(Error::Config(format!("expected 12 finite coefficients, got {}", self.coefficients.len())));
        }
        let omega = matrix_from_rows(&self.covariance);
        if omega.transpose() != omega || omega.cholesky().is_none() {
            return Err(Error::Config("generator covariance must be symmetric positive definite".into()));
        }
        self.features.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteLabel {
    Focal,
    Other,
}

/// All engagements of one user, each labelled with where it landed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullUser {
    pub user_id: String,
    pub days: Vec<u32>,
    pub labels: Vec<SiteLabel>,
}

impl FullUser {
    pub fn total(&self) -> usize {
        self.days.len()
    }

    pub fn observed(&self) -> usize {
        self.labels.iter().filter(|l| **l == SiteLabel::Focal).count()
    }

    pub fn mean_iet(&self) -> Option<f64> {
        match (self.days.first(), self.days.last()) {
            (Some(a), Some(b)) if self.days.len() > 1 => Some((b - a) as f64 / (self.days.len() - 1) as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub user_id: String,
    pub actual_pse: f64,
    pub actual_mean_iet: Option<f64>,
    pub true_beta: Option<f64>,
    pub true_phi: Option<f64>,
    pub true_lam: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthBundle {
    pub full: Vec<FullUser>,
    /// Focal-only (or unsuppressed) engagements with user features.
    pub observed: EngagementLog,
    pub truth: Vec<TruthRow>,
    pub features: BTreeMap<String, UserFeatures>,
    /// Users with too few observed engagements to be estimated.
    pub flagged: Vec<String>,
}

impl TruthBundle {
    fn assemble(window: u32, full: Vec<FullUser>, features: BTreeMap<String, UserFeatures>, truth: Vec<TruthRow>, min_observed: usize) -> Self {
        let flagged = full.iter().filter(|u| u.observed() < min_observed).map(|u| u.user_id.clone()).collect();
        let observed = EngagementLog {
            window,
            users: full
                .iter()
                .filter(|u| u.observed() > 0)
                .map(|u| UserRecord {
                    user_id: u.user_id.clone(),
                    days: u.days.iter().zip(&u.labels).filter(|(_, l)| **l == SiteLabel::Focal).map(|(d, _)| *d).collect(),
                    features: features.get(&u.user_id).copied(),
                })
                .collect(),
        };
        Self { full, observed, truth, features, flagged }
    }

    pub fn truth_row(&self, user_id: &str) -> Option<&TruthRow> {
        self.truth.binary_search_by(|r| r.user_id.as_str().cmp(user_id)).ok().map(|i| &self.truth[i])
    }

    pub fn full_user(&self, user_id: &str) -> Option<&FullUser> {
        self.full.binary_search_by(|r| r.user_id.as_str().cmp(user_id)).ok().map(|i| &self.full[i])
    }

    /// Every engagement as one unlabelled log, with the observed log's
    /// features.
    pub fn full_log(&self) -> EngagementLog {
        EngagementLog {
            window: self.observed.window,
            users: self
                .full
                .iter()
                .map(|u| UserRecord {
                    user_id: u.user_id.clone(),
                    days: u.days.clone(),
                    features: self.features.get(&u.user_id).copied(),
                })
                .collect(),
        }
    }
}

/// Gaps between successive engagements and the site each one lands on,
/// starting from the stationary site distribution.
pub struct Engagements<'r, R: Rng + ?Sized> {
    erlang: Gamma<f64>,
    params: MarkovParams,
    focal: bool,
    rng: &'r mut R,
}

impl<'r, R: Rng + ?Sized> Engagements<'r, R> {
    pub fn new(shape: u32, rate: f64, params: MarkovParams, rng: &'r mut R) -> Self {
        let erlang = Gamma::new(shape as f64, 1.0 / rate).expect("positive rate");
        let focal = rng.random::<f64>() < pse_from_markov(params);
        Self { erlang, params, focal, rng }
    }
}

impl<R: Rng + ?Sized> Iterator for Engagements<'_, R> {
    type Item = (f64, bool);

    fn next(&mut self) -> Option<(f64, bool)> {
        let gap = self.erlang.sample(self.rng);
        let here = self.focal;
        let to_focal = if here { self.params.phi } else { self.params.lam };
        self.focal = self.rng.random::<f64>() < to_focal;
        Some((gap, here))
    }
}

/// One user's engagement stream in continuous days on `[0, horizon)`:
/// arrival times and whether each landed on the focal site.
pub fn simulate_engagements<R: Rng + ?Sized>(
    shape: u32,
    rate: f64,
    params: MarkovParams,
    horizon: f64,
    rng: &mut R,
) -> Vec<(f64, bool)> {
    let mut clock = 0.0;
    Engagements::new(shape, rate, params, rng)
        .map(|(gap, focal)| {
            clock += gap;
            (clock, focal)
        })
        .take_while(|(t, _)| *t < horizon)
        .collect()
}

fn user_id(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("u{i:0width$}")
}

/// Draws a synthetic population from the hierarchy and runs each user's
/// engagement process forward in continuous time over the horizon.
pub fn generate(spec: &GeneratorSpec) -> Result<TruthBundle> {
    spec.validate()?;
    let chol = matrix_from_rows(&spec.covariance).cholesky().expect("validated").l();
    let per_user: Vec<(FullUser, UserFeatures, TruthRow)> = (0..spec.n_users)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(spec.seed, Phase::Generate, i as u64, 0);
            let features = spec.features.sample(&mut rng);
            let design = Design::shared(spec.features.standardize(&features));
            let mean = hierarchy_mean(&design, &spec.coefficients)?.to_array();
            let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let theta = Vector3::from(mean) + chol * z;
            let (beta, params) = theta_to_natural(ThetaTriple::new(theta[0], theta[1], theta[2]));

            let mut days: Vec<u32> = Vec::new();
            let mut labels = Vec::new();
            // An arrival at continuous time c lands on day ceil(c) - 1; a day
            // with several arrivals is one engagement, focal if any was.
            let mut clock = 0.0;
            for (gap, focal) in Engagements::new(spec.shape, beta, params, &mut rng) {
                clock += gap;
                if clock >= spec.horizon_days as f64 {
                    break;
                }
                let day = (clock.ceil() as u32).saturating_sub(1);
                let label = if focal { SiteLabel::Focal } else { SiteLabel::Other };
                if days.last() == Some(&day) {
                    if focal {
                        *labels.last_mut().expect("paired with days") = label;
                    }
                } else {
                    days.push(day);
                    labels.push(label);
                }
            }
            let user = FullUser { user_id: user_id(i, spec.n_users), days, labels };
            let actual_pse = if user.total() > 0 { user.observed() as f64 / user.total() as f64 } else { 0.0 };
            let row = TruthRow {
                user_id: user.user_id.clone(),
                actual_pse,
                actual_mean_iet: user.mean_iet(),
                true_beta: Some(beta),
                true_phi: Some(params.phi),
                true_lam: Some(params.lam),
            };
            Ok((user, features, row))
        })
        .collect::<Result<_>>()?;

    let mut full = Vec::with_capacity(per_user.len());
    let mut features = BTreeMap::new();
    let mut truth = Vec::with_capacity(per_user.len());
    for (u, f, r) in per_user {
        features.insert(u.user_id.clone(), f);
        full.push(u);
        truth.push(r);
    }
    Ok(TruthBundle::assemble(spec.horizon_days, full, features, truth, 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SuppressionMode {
    Fixed { rate: f64 },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuppressionSpec {
    #[serde(flatten)]
    pub mode: SuppressionMode,
    #[serde(default)]
    pub seed: u64,
}

impl SuppressionSpec {
    pub fn fixed(rate: f64, seed: u64) -> Self {
        Self { mode: SuppressionMode::Fixed { rate }, seed }
    }

    pub fn uniform(low: f64, high: f64, seed: u64) -> Self {
        Self { mode: SuppressionMode::Uniform { low, high }, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SuppressionMode::Fixed { rate } if !(rate > 0.0 && rate < 1.0) => {
                Err(Error::Config(format!("suppression rate must lie in (0, 1), got {rate}")))
            }
            SuppressionMode::Uniform { low, high } if !(0.0 < low && low < high && high < 1.0) => {
                Err(Error::Config(format!("suppression range must satisfy 0 < low < high < 1, got ({low}, {high})")))
            }
            _ => Ok(()),
        }
    }
}

/// Hides a random share of each user's engagements. The hidden count is the
/// drawn rate times the total, rounded to nearest, leaving at least one
/// engagement observed.
pub fn suppress(log: &EngagementLog, spec: &SuppressionSpec) -> Result<TruthBundle> {
    spec.validate()?;
    if log.users.is_empty() {
        return Err(Error::EmptyInput("cannot suppress an empty log".into()));
    }
    let (full, truth): (Vec<FullUser>, Vec<TruthRow>) = log
        .users
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = substream(spec.seed, Phase::Suppress, i as u64, 0);
            let rate = match spec.mode {
                SuppressionMode::Fixed { rate } => rate,
                SuppressionMode::Uniform { low, high } => rng.random_range(low..high),
            };
            let n = u.days.len();
            let hidden = ((rate * n as f64).round() as usize).min(n.saturating_sub(1));
            let mut labels = vec![SiteLabel::Focal; n];
            for j in rand::seq::index::sample(&mut rng, n, hidden) {
                labels[j] = SiteLabel::Other;
            }
            let user = FullUser { user_id: u.user_id.clone(), days: u.days.clone(), labels };
            let row = TruthRow {
                user_id: u.user_id.clone(),
                actual_pse: user.observed() as f64 / n as f64,
                actual_mean_iet: user.mean_iet(),
                true_beta: None,
                true_phi: None,
                true_lam: None,
            };
            (user, row)
        })
        .unzip();
    let features = log.users.iter().filter_map(|u| u.features.map(|f| (u.user_id.clone(), f))).collect();
    Ok(TruthBundle::assemble(log.window, full, features, truth, 2))
}

#[derive(Serialize, Deserialize)]
struct FullEventRow {
    user_id: String,
    day: u32,
    site_label: SiteLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BundleMeta {
    window: u32,
    min_observed: usize,
}

/// Writes `full_events.csv`, `events.csv`, `features.csv`, `truth.csv`
/// and `bundle.json` into `dir`.
pub fn write_bundle(dir: &Path, bundle: &TruthBundle) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("full_events.csv"))?;
    for u in &bundle.full {
        for (d, l) in u.days.iter().zip(&u.labels) {
            w.serialize(FullEventRow { user_id: u.user_id.clone(), day: *d, site_label: *l })?;
        }
    }
    if bundle.full.iter().all(|u| u.days.is_empty()) {
        w.write_record(["user_id", "day", "site_label"])?;
    }
    w.flush()?;
    io::write_events(&bundle.observed, std::fs::File::create(dir.join("events.csv"))?)?;
    io::write_features(&bundle.full_log(), std::fs::File::create(dir.join("features.csv"))?)?;
    let mut w = csv::Writer::from_path(dir.join("truth.csv"))?;
    for r in &bundle.truth {
        w.serialize(r)?;
    }
    w.flush()?;
    let synthetic = bundle.truth.iter().any(|r| r.true_beta.is_some());
    let meta = BundleMeta { window: bundle.observed.window, min_observed: if synthetic { 1 } else { 2 } };
    std::fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<TruthBundle> {
    let meta: BundleMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json"))?)?;
    let observed = io::ingest(&dir.join("events.csv"), &dir.join("features.csv"), meta.window)?.log;
    let mut truth: Vec<TruthRow> = csv::Reader::from_path(dir.join("truth.csv"))?.deserialize().collect::<std::result::Result<_, _>>()?;
    truth.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let mut by_user: BTreeMap<String, FullUser> =
        truth.iter().map(|r| (r.user_id.clone(), FullUser { user_id: r.user_id.clone(), days: vec![], labels: vec![] })).collect();
    for row in csv::Reader::from_path(dir.join("full_events.csv"))?.deserialize::<FullEventRow>() {
        let row = row?;
        let u = by_user
            .get_mut(&row.user_id)
            .ok_or_else(|| Error::Schema(format!("user {} in full events but not in truth table", row.user_id)))?;
        u.days.push(row.day);
        u.labels.push(row.site_label);
    }
    let full = by_user.into_values().collect();
    // The full event file carries the `user_id,day` columns too, so the
    // regular ingest joins features for every user.
    let all = io::ingest(&dir.join("full_events.csv"), &dir.join("features.csv"), meta.window)?.log;
    let features = all.users.iter().filter_map(|u| u.features.map(|f| (u.user_id.clone(), f))).collect();
    let bundle = TruthBundle::assemble(meta.window, full, features, truth, meta.min_observed);
    if bundle.observed != observed {
        return Err(Error::Schema("observed events disagree with the labelled full events".into()));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::logit;

    fn constant_spec(theta: [f64; 3], n: usize, horizon: u32) -> GeneratorSpec {
        let mut coefficients = vec![0.0; 12];
        coefficients[0] = theta[0];
        coefficients[4] = theta[1];
        coefficients[8] = theta[2];
        GeneratorSpec {
            n_users: n,
            horizon_days: horizon,
            coefficients,
            covariance: [[1e-12, 0.0, 0.0], [0.0, 1e-12, 0.0], [0.0, 0.0, 1e-12]],
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn near_absorbing_focal_state() {
        let eps = 1e-6;
        let spec = constant_spec([0.0, logit(1.0 - eps), logit(1.0 - eps)], 20, 400);
        let bundle = generate(&spec).unwrap();
        for r in &bundle.truth {
            assert!(r.actual_pse > 0.99, "{}", r.actual_pse);
        }
    }

    #[test]
    fn deterministic_and_conserving() {
        let spec = GeneratorSpec { n_users: 30, ..GeneratorSpec::default() };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        for u in &a.full {
            let obs = a.observed.user(&u.user_id).map_or(0, |r| r.days.len());
            assert_eq!(obs, u.observed());
            assert!(u.days.windows(2).all(|w| w[1] > w[0]));
        }
        let s = suppress(&a.observed, &SuppressionSpec::uniform(0.3, 0.5, 9)).unwrap();
        assert_eq!(s, suppress(&a.observed, &SuppressionSpec::uniform(0.3, 0.5, 9)).unwrap());
    }

    fn ten_visit_log() -> EngagementLog {
        EngagementLog {
            window: 121,
            users: vec![UserRecord { user_id: "a".into(), days: (0..10).map(|d| 3 * d).collect(), features: None }],
        }
    }

    #[test]
    fn fixed_rate_example() {
        let b = suppress(&ten_visit_log(), &SuppressionSpec::fixed(0.6, 3)).unwrap();
        assert_eq!(b.observed.users[0].days.len(), 4);
        assert_eq!(b.truth[0].actual_pse, 0.4);
        assert_eq!(b.truth[0].actual_mean_iet, Some(3.0));
    }

    #[test]
    fn null_suppression() {
        let log = ten_visit_log();
        let b = suppress(&log, &SuppressionSpec::fixed(1e-9, 3)).unwrap();
        assert_eq!(b.observed.users[0].days, log.users[0].days);
        assert_eq!(b.truth[0].actual_pse, 1.0);
    }

    #[test]
    fn at_least_one_observed() {
        let log = EngagementLog {
            window: 121,
            users: vec![UserRecord { user_id: "a".into(), days: vec![1, 2], features: None }],
        };
        let b = suppress(&log, &SuppressionSpec::fixed(0.9, 0)).unwrap();
        assert_eq!(b.full[0].observed(), 1);
        assert_eq!(b.flagged, vec!["a".to_string()]);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate(&GeneratorSpec { n_users: 25, ..GeneratorSpec::default() }).unwrap();
        write_bundle(dir.path(), &g).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), g);
        let s = suppress(&g.observed, &SuppressionSpec::fixed(0.5, 2)).unwrap();
        write_bundle(dir.path(), &s).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SuppressionSpec::uniform(0.7, 0.6, 0).validate().is_err());
        assert!(SuppressionSpec::fixed(1.0, 0).validate().is_err());
        let spec = GeneratorSpec { covariance: [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]], ..GeneratorSpec::default() };
        assert!(generate(&spec).is_err());
        assert!(suppress(&EngagementLog::empty(5), &SuppressionSpec::fixed(0.5, 0)).is_err());
    }
}
