//! Fit artifacts on disk.
//!
//! | file               | columns                                                        |
//! |--------------------|----------------------------------------------------------------|
//! | `trace.csv`        | `iteration,negloglik` for every iteration                       |
//! | `draws.csv`        | `iteration,negloglik,b0..b{P-1}` for every post-burn-in iteration |
//! | `users.csv`        | `user_id,pse_mean,pse_lower,pse_upper,mean_iet,mean_focal_iet`  |
//! | `fit.json`         | sampler, shape, diagnostics, posterior means of `B` and `Ω`     |
//! | `theta_trace.csv`  | `iteration,user_id,theta_beta,theta_phi,theta_lam` (optional)   |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Diagnostics, FitResult, PosteriorSummary, SamplerKind, TraceRow, UserSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FitFiles {
    pub trace: PathBuf,
    pub draws: PathBuf,
    pub users: PathBuf,
    pub fit: PathBuf,
    pub theta_trace: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FitMeta {
    sampler: SamplerKind,
    shape: u32,
    burn_in: usize,
    iterations: usize,
    users: usize,
    retained_draws: usize,
    coefficients_mean: Vec<f64>,
    covariance_mean: [[f64; 3]; 3],
    diagnostics: Diagnostics,
}

pub fn write_fit(dir: &Path, fit: &FitResult, theta_trace: bool) -> Result<FitFiles> {
    std::fs::create_dir_all(dir)?;
    let files = FitFiles {
        trace: dir.join("trace.csv"),
        draws: dir.join("draws.csv"),
        users: dir.join("users.csv"),
        fit: dir.join("fit.json"),
        theta_trace: theta_trace.then(|| dir.join("theta_trace.csv")),
    };

    let mut w = BufWriter::new(File::create(&files.trace)?);
    writeln!(w, "iteration,negloglik")?;
    for row in &fit.trace {
        writeln!(w, "{},{}", row.iteration, row.neg_log_lik)?;
    }
    w.flush()?;

    let dim = fit.trace.first().map_or(0, |r| r.coefficients.len());
    let mut w = BufWriter::new(File::create(&files.draws)?);
    let header: Vec<String> = (0..dim).map(|j| format!("b{j}")).collect();
    writeln!(w, "iteration,negloglik{}{}", if dim > 0 { "," } else { "" }, header.join(","))?;
    for row in fit.trace.iter().filter(|r| r.iteration > fit.burn_in) {
        write!(w, "{},{}", row.iteration, row.neg_log_lik)?;
        for b in &row.coefficients {
            write!(w, ",{b}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let mut users = csv::Writer::from_path(&files.users)?;
    for u in &fit.summary.users {
        users.serialize(u)?;
    }
    users.flush()?;

    let meta = FitMeta {
        sampler: fit.sampler,
        shape: fit.shape,
        burn_in: fit.burn_in,
        iterations: fit.trace.len(),
        users: fit.user_ids.len(),
        retained_draws: fit.summary.retained_draws,
        coefficients_mean: fit.summary.coefficients_mean.clone(),
        covariance_mean: fit.summary.covariance_mean,
        diagnostics: fit.diagnostics.clone(),
    };
    std::fs::write(&files.fit, serde_json::to_string_pretty(&meta)? + "\n")?;

    if let Some(path) = &files.theta_trace {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "iteration,user_id,theta_beta,theta_phi,theta_lam")?;
        for d in &fit.draws {
            for (id, t) in fit.user_ids.iter().zip(&d.thetas) {
                writeln!(w, "{},{},{},{},{}", d.iteration, id, t.theta_beta, t.theta_phi, t.theta_lam)?;
            }
        }
        w.flush()?;
    }
    Ok(files)
}

pub fn read_user_summaries(path: &Path) -> Result<Vec<UserSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Loads `users.csv` and `fit.json` from a fit directory.
pub fn read_summary(dir: &Path) -> Result<(SamplerKind, PosteriorSummary)> {
    let users = read_user_summaries(&dir.join("users.csv"))?;
    let meta: FitMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("fit.json"))?)?;
    let summary = PosteriorSummary {
        users,
        coefficients_mean: meta.coefficients_mean,
        covariance_mean: meta.covariance_mean,
        retained_draws: meta.retained_draws,
    };
    Ok((meta.sampler, summary))
}

pub fn read_draw_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Schema(format!("bad number {s:?}: {e}")));
        let iteration = rec
            .get(0)
            .ok_or_else(|| Error::Schema("missing iteration".into()))?
            .parse::<usize>()
            .map_err(|e| Error::Schema(e.to_string()))?;
        let neg_log_lik = parse(rec.get(1).ok_or_else(|| Error::Schema("missing negloglik".into()))?)?;
        let coefficients = rec.iter().skip(2).map(parse).collect::<Result<_>>()?;
        rows.push(TraceRow { iteration, neg_log_lik, coefficients });
    }
    Ok(rows)
}
