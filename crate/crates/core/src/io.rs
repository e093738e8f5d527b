//! Event-log ingestion and assembly of per-user estimation inputs.
//!
//! Event file: header `user_id,day`, one row per engagement, `day` an integer
//! index in `[0, window)`. Feature file: header
//! `user_id,loyalty,offers,purchases`, one row per user. Fields are
//! comma-separated and surrounding whitespace is ignored.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::UserLikelihoodInput;
use crate::model::Design;

pub const DEFAULT_WINDOW: u32 = 121;
pub const DEFAULT_MIN_IETS: usize = 2;
pub const FEATURE_NAMES: [&str; 3] = ["loyalty", "offers", "purchases"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserFeatures {
    pub loyalty: f64,
    pub offers: f64,
    pub purchases: f64,
}

impl UserFeatures {
    pub fn to_array(self) -> [f64; 3] {
        [self.loyalty, self.offers, self.purchases]
    }
}

/// One user's engagement days, ascending and distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub days: Vec<u32>,
    pub features: Option<UserFeatures>,
}

impl UserRecord {
    pub fn iets(&self) -> Vec<f64> {
        self.days.windows(2).map(|w| (w[1] - w[0]) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementLog {
    pub window: u32,
    /// Sorted by user id.
    pub users: Vec<UserRecord>,
}

impl EngagementLog {
    pub fn empty(window: u32) -> Self {
        Self { window, users: Vec::new() }
    }

    /// Builds a log from `(user_id, day)` pairs, collapsing repeated days.
    pub fn from_events<'a>(
        window: u32,
        events: impl IntoIterator<Item = (&'a str, u32)>,
        features: &BTreeMap<String, UserFeatures>,
    ) -> Self {
        let mut days: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for (user, day) in events {
            days.entry(user.to_string()).or_default().push(day);
        }
        let users = days
            .into_iter()
            .map(|(user_id, mut d)| {
                d.sort_unstable();
                d.dedup();
                let features = features.get(&user_id).copied();
                UserRecord { user_id, days: d, features }
            })
            .collect();
        Self { window, users }
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users
            .binary_search_by(|u| u.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.users[i])
    }

    pub fn event_count(&self) -> usize {
        self.users.iter().map(|u| u.days.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub malformed_event_rows: usize,
    pub malformed_feature_rows: usize,
    /// Users with events but no feature row.
    pub missing_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub log: EngagementLog,
    pub report: IngestReport,
}

pub fn ingest(events: &Path, features: &Path, window: u32) -> Result<Ingested> {
    ingest_readers(std::fs::File::open(events)?, std::fs::File::open(features)?, window)
}

pub fn ingest_readers<R: Read, F: Read>(events: R, features: F, window: u32) -> Result<Ingested> {
    if window == 0 {
        return Err(Error::Config("observation window must be at least one day".into()));
    }
    let mut report = IngestReport::default();
    let feature_map = read_features(features, &mut report)?;

    let mut reader = csv_reader(events);
    let header = reader.headers()?.clone();
    if header.iter().all(|h| h.is_empty()) {
        return Ok(Ingested { log: EngagementLog::empty(window), report });
    }
    let user_col = column(&header, "user_id", "event")?;
    let day_col = column(&header, "day", "event")?;

    let mut rows: Vec<(String, u32)> = Vec::new();
    for record in reader.records() {
        let Ok(record) = record else {
            report.malformed_event_rows += 1;
            continue;
        };
        let user = record.get(user_col).unwrap_or("");
        let day = record.get(day_col).and_then(|d| d.parse::<u32>().ok());
        match day {
            Some(day) if !user.is_empty() && day < window => rows.push((user.to_string(), day)),
            _ => report.malformed_event_rows += 1,
        }
    }
    let log = EngagementLog::from_events(window, rows.iter().map(|(u, d)| (u.as_str(), *d)), &feature_map);
    report.missing_features = log.users.iter().filter(|u| u.features.is_none()).map(|u| u.user_id.clone()).collect();
    if report.malformed_event_rows + report.malformed_feature_rows > 0 {
        warn!(
            "skipped {} malformed event rows and {} malformed feature rows",
            report.malformed_event_rows, report.malformed_feature_rows
        );
    }
    Ok(Ingested { log, report })
}

fn read_features<R: Read>(r: R, report: &mut IngestReport) -> Result<BTreeMap<String, UserFeatures>> {
    let mut reader = csv_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().all(|h| h.is_empty()) {
        return Ok(BTreeMap::new());
    }
    let user_col = column(&header, "user_id", "feature")?;
    let cols: Vec<usize> = FEATURE_NAMES.iter().map(|n| column(&header, n, "feature")).collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let Ok(record) = record else {
            report.malformed_feature_rows += 1;
            continue;
        };
        let user = record.get(user_col).unwrap_or("");
        let values: Option<Vec<f64>> = cols
            .iter()
            .map(|&c| record.get(c).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match values {
            Some(v) if !user.is_empty() && !out.contains_key(user) => {
                out.insert(user.to_string(), UserFeatures { loyalty: v[0], offers: v[1], purchases: v[2] });
            }
            _ => report.malformed_feature_rows += 1,
        }
    }
    Ok(out)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(r)
}

fn column(header: &csv::StringRecord, name: &str, file: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("{file} file is missing required column `{name}`")))
}

pub fn write_events<W: Write>(log: &EngagementLog, w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["user_id", "day"])?;
    for u in &log.users {
        for d in &u.days {
            writer.write_record([u.user_id.as_str(), &d.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn write_features<W: Write>(log: &EngagementLog, w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["user_id", "loyalty", "offers", "purchases"])?;
    for u in &log.users {
        if let Some(f) = u.features {
            writer.write_record([u.user_id.clone(), f.loyalty.to_string(), f.offers.to_string(), f.purchases.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes `events.csv` and `features.csv` into `dir`.
pub fn write_log(dir: &Path, log: &EngagementLog) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_events(log, std::fs::File::create(dir.join("events.csv"))?)?;
    write_features(log, std::fs::File::create(dir.join("features.csv"))?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExclusionReason {
    MissingFeatures,
    TooFewIets { iets: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub user_id: String,
    pub reason: ExclusionReason,
}

/// Column moments used to standardize the retained users' features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub dropped: Vec<String>,
}

impl Standardization {
    pub fn apply(&self, raw: &UserFeatures) -> Vec<f64> {
        let all = raw.to_array();
        let mut x = Vec::with_capacity(self.names.len() + 1);
        x.push(1.0);
        for ((name, m), s) in self.names.iter().zip(&self.means).zip(&self.sds) {
            let j = FEATURE_NAMES.iter().position(|n| n == name).expect("known feature");
            x.push((all[j] - m) / s);
        }
        x
    }

    pub fn invert(&self, standardized: &[f64]) -> Vec<f64> {
        standardized.iter().zip(self.means.iter().zip(&self.sds)).map(|(z, (m, s))| m + z * s).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EstimationInputs {
    pub inputs: Vec<UserLikelihoodInput>,
    pub standardization: Standardization,
    pub excluded: Vec<Exclusion>,
}

/// Filters users by IET count and standardizes their features over the
/// retained set. Each design row is `[1, z_loyalty, z_offers, z_purchases]`
/// minus any constant columns, shared by the three equations.
pub fn build_inputs(log: &EngagementLog, min_iets: usize) -> Result<EstimationInputs> {
    let mut excluded = Vec::new();
    let mut kept: Vec<(&UserRecord, UserFeatures)> = Vec::new();
    for u in &log.users {
        let iets = u.days.len().saturating_sub(1);
        match u.features {
            None => excluded.push(Exclusion { user_id: u.user_id.clone(), reason: ExclusionReason::MissingFeatures }),
            Some(_) if iets < min_iets.max(1) => {
                excluded.push(Exclusion { user_id: u.user_id.clone(), reason: ExclusionReason::TooFewIets { iets } })
            }
            Some(f) => kept.push((u, f)),
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput(format!(
            "all {} users excluded (min_iets = {min_iets}, {} without features)",
            log.users.len(),
            excluded.iter().filter(|e| e.reason == ExclusionReason::MissingFeatures).count()
        )));
    }

    let n = kept.len() as f64;
    let mut standardization = Standardization { names: Vec::new(), means: Vec::new(), sds: Vec::new(), dropped: Vec::new() };
    for (j, name) in FEATURE_NAMES.iter().enumerate() {
        let mean = kept.iter().map(|(_, f)| f.to_array()[j]).sum::<f64>() / n;
        let var = kept.iter().map(|(_, f)| (f.to_array()[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd.is_finite() && sd > 1e-12 * (1.0 + mean.abs()) {
            standardization.names.push(name.to_string());
            standardization.means.push(mean);
            standardization.sds.push(sd);
        } else {
            warn!("feature `{name}` is constant over retained users; dropped");
            standardization.dropped.push(name.to_string());
        }
    }

    let inputs = kept
        .iter()
        .map(|(u, f)| UserLikelihoodInput::new(u.user_id.clone(), u.iets(), Design::shared(standardization.apply(f))))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimationInputs { inputs, standardization, excluded })
}
