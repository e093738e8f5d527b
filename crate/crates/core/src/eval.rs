//! Error metrics, grouped validation reports and plot-ready data.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EngagementLog;
use crate::samplers::{quantile, PosteriorSummary};
use crate::sim::TruthBundle;

pub fn rmse(estimates: &[f64], actuals: &[f64]) -> Result<f64> {
    check_lengths(estimates, actuals)?;
    let sse: f64 = estimates.iter().zip(actuals).map(|(e, a)| (e - a).powi(2)).sum();
    Ok((sse / estimates.len() as f64).sqrt())
}

/// Symmetric MAPE in percent. A pair with both values zero contributes 0.
pub fn smape(estimates: &[f64], actuals: &[f64]) -> Result<f64> {
    check_lengths(estimates, actuals)?;
    let total: f64 = estimates
        .iter()
        .zip(actuals)
        .map(|(e, a)| {
            let denom = e.abs() + a.abs();
            if denom == 0.0 {
                0.0
            } else {
                (e - a).abs() / denom
            }
        })
        .sum();
    Ok(100.0 * total / estimates.len() as f64)
}

fn check_lengths(estimates: &[f64], actuals: &[f64]) -> Result<()> {
    if estimates.len() != actuals.len() {
        return Err(Error::Config(format!("{} estimates but {} actuals", estimates.len(), actuals.len())));
    }
    if estimates.is_empty() {
        return Err(Error::EmptyInput("no pairs to score".into()));
    }
    Ok(())
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_lengths(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    Ok((sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Mean all-sites IET.
    Iet,
    Pse,
    /// Mean IET between observed engagements.
    FocalIet,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Iet => "iet",
            Target::Pse => "pse",
            Target::FocalIet => "focal_iet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    All,
    Quartiles,
    Propsup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub target: Target,
    pub grouping: Grouping,
    pub group: String,
    pub n: usize,
    pub rmse: Option<f64>,
    pub smape: Option<f64>,
}

impl MetricReport {
    fn from_pairs(target: Target, grouping: Grouping, group: &str, pairs: &[(f64, f64)]) -> Result<Self> {
        let (est, act): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let (rmse, smape) = if pairs.is_empty() { (None, None) } else { (Some(rmse(&est, &act)?), Some(smape(&est, &act)?)) };
        Ok(Self { target, grouping, group: group.to_string(), n: pairs.len(), rmse, smape })
    }
}

pub const QUARTILES: [&str; 4] = ["Q1", "Q2", "Q3", "Q4"];
pub const PROPSUP_BUCKETS: [&str; 4] = ["[0.55,0.60)", "[0.60,0.65)", "[0.65,0.70)", "[0.70,0.75)"];
const PROPSUP_EDGES: [f64; 3] = [0.60, 0.65, 0.70];

/// Quartile index (0..4) of each count. Cut points are the sample
/// quartiles; a count equal to a cut point falls in the lower group.
pub fn visit_quartiles(counts: &[usize]) -> Vec<usize> {
    if counts.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let cuts = [quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75)];
    counts.iter().map(|&c| cuts.iter().take_while(|&&q| c as f64 > q).count()).collect()
}

/// Bucket index (0..4) of a realized suppression rate. The outer buckets
/// absorb rates beyond 0.55 and 0.75.
pub fn propsup_bucket(rate: f64) -> usize {
    PROPSUP_EDGES.iter().take_while(|&&e| rate >= e).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub user_id: String,
    pub actual: f64,
    pub estimated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub actual: usize,
    pub estimated: usize,
}

/// Equal-width histogram of both series over `[0, max]`.
pub fn histogram(scatter: &[ScatterRow], bins: usize) -> Vec<HistogramBin> {
    let max = scatter.iter().flat_map(|r| [r.actual, r.estimated]).filter(|v| v.is_finite()).fold(0.0_f64, f64::max);
    if bins == 0 || max <= 0.0 {
        return Vec::new();
    }
    let width = max / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin { lower: b as f64 * width, upper: (b + 1) as f64 * width, actual: 0, estimated: 0 })
        .collect();
    let index = |v: f64| ((v / width) as usize).min(bins - 1);
    for r in scatter {
        if r.actual.is_finite() {
            out[index(r.actual)].actual += 1;
        }
        if r.estimated.is_finite() {
            out[index(r.estimated)].estimated += 1;
        }
    }
    out
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct InterimEvaluation {
    pub reports: Vec<MetricReport>,
    pub scatter: Vec<ScatterRow>,
    pub histogram: Vec<HistogramBin>,
}

/// Scores the posterior mean focal IET of every fitted user against the
/// average gap between their observed engagements.
pub fn interim_evaluate(summary: &PosteriorSummary, log: &EngagementLog) -> Result<InterimEvaluation> {
    let scatter = summary
        .users
        .iter()
        .map(|u| {
            let rec = log.user(&u.user_id).ok_or_else(|| Error::Config(format!("fitted user {} is not in the log", u.user_id)))?;
            let iets = rec.iets();
            if iets.is_empty() {
                return Err(Error::Config(format!("fitted user {} has no observed IETs", u.user_id)));
            }
            let actual = iets.iter().sum::<f64>() / iets.len() as f64;
            Ok(ScatterRow { user_id: u.user_id.clone(), actual, estimated: u.mean_focal_iet })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(f64, f64)> = scatter.iter().map(|r| (r.estimated, r.actual)).collect();
    let reports = vec![MetricReport::from_pairs(Target::FocalIet, Grouping::All, "all", &pairs)?];
    let histogram = histogram(&scatter, HISTOGRAM_BINS);
    Ok(InterimEvaluation { reports, scatter, histogram })
}

/// Scores mean all-sites IET and PSE against simulated truth, overall and
/// per group. Returns the IET rows followed by the PSE rows.
pub fn validation_evaluate(summary: &PosteriorSummary, truth: &TruthBundle, grouping: Grouping) -> Result<Vec<MetricReport>> {
    struct Row {
        iet: Option<(f64, f64)>,
        pse: (f64, f64),
        total: usize,
        suppressed: f64,
    }
    let rows = summary
        .users
        .iter()
        .map(|u| {
            let t = truth.truth_row(&u.user_id).ok_or_else(|| Error::Config(format!("fitted user {} has no truth row", u.user_id)))?;
            let full = truth.full_user(&u.user_id).ok_or_else(|| Error::Config(format!("fitted user {} has no full events", u.user_id)))?;
            Ok(Row {
                iet: t.actual_mean_iet.map(|a| (u.mean_iet, a)),
                pse: (u.pse_mean, t.actual_pse),
                total: full.total(),
                suppressed: 1.0 - t.actual_pse,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (labels, group_of): (&[&str], Vec<usize>) = match grouping {
        Grouping::All => (&[], Vec::new()),
        Grouping::Quartiles => (&QUARTILES, visit_quartiles(&rows.iter().map(|r| r.total).collect::<Vec<_>>())),
        Grouping::Propsup => (&PROPSUP_BUCKETS, rows.iter().map(|r| propsup_bucket(r.suppressed)).collect()),
    };

    let mut out = Vec::new();
    for target in [Target::Iet, Target::Pse] {
        let pair = |r: &Row| if target == Target::Iet { r.iet } else { Some(r.pse) };
        let all: Vec<(f64, f64)> = rows.iter().filter_map(pair).collect();
        out.push(MetricReport::from_pairs(target, grouping, "all", &all)?);
        for (g, label) in labels.iter().enumerate() {
            let members: Vec<(f64, f64)> =
                rows.iter().zip(&group_of).filter(|(_, &k)| k == g).filter_map(|(r, _)| pair(r)).collect();
            out.push(MetricReport::from_pairs(target, grouping, label, &members)?);
        }
    }
    Ok(out)
}

pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<MetricReport>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn write_scatter(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "actual", "estimated"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lower", "upper", "actual", "estimated"])?;
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of metric rows.
pub fn render_table(reports: &[MetricReport]) -> String {
    let fmt = |v: Option<f64>, unit: &str| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}{unit}"));
    let mut s = format!("{:<10} {:<10} {:<12} {:>6} {:>12} {:>10}\n", "target", "grouping", "group", "n", "rmse", "smape");
    for r in reports {
        let grouping = match r.grouping {
            Grouping::All => "all",
            Grouping::Quartiles => "quartiles",
            Grouping::Propsup => "propsup",
        };
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:<12} {:>6} {:>12} {:>10}",
            r.target.name(),
            grouping,
            r.group,
            r.n,
            fmt(r.rmse, ""),
            fmt(r.smape, "%")
        );
    }
    s
}
