use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use pse_core::config::RunConfig;
use pse_core::eval::{self, Grouping, MetricReport};
use pse_core::io::{self, EstimationInputs};
use pse_core::samplers::{mcmc_fit, read_draw_trace, read_summary, sgld_fit, write_fit, SamplerKind};
use pse_core::sim::{self, SuppressionSpec};
use pse_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pse", version, about = "Personalized share of engagement from a single site's event log")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population with known parameters.
    Simulate {
        #[arg(long)]
        users: Option<usize>,
        /// Observation window in days.
        #[arg(long)]
        horizon: Option<u32>,
        /// Output directory for the truth bundle.
        #[arg(long)]
        out: PathBuf,
    },
    /// Hide a random share of each user's engagements to build simulated truth.
    Suppress {
        #[command(flatten)]
        data: DataArgs,
        /// Fixed suppression rate.
        #[arg(long, conflicts_with_all = ["low", "high"])]
        rate: Option<f64>,
        /// Lower end of a per-user uniform rate.
        #[arg(long, requires = "high")]
        low: Option<f64>,
        /// Upper end of a per-user uniform rate.
        #[arg(long, requires = "low")]
        high: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the hierarchical model to an event log.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
        /// Erlang shape of the all-sites inter-engagement time.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
        shape: Option<u32>,
        /// Lognormal anchor on the share's odds.
        #[arg(long, value_enum)]
        anchor: Option<Switch>,
        /// Users with fewer observed IETs are excluded.
        #[arg(long)]
        min_iets: Option<usize>,
        /// Also write the per-user parameter trace.
        #[arg(long)]
        theta_trace: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fit against the observed log or against simulated truth.
    Evaluate {
        /// Directory written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Directory written by `simulate` or `suppress`; enables validation.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Observed log for interim evaluation when no truth is given.
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "all")]
        grouping: Grouping,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print metric tables and trace summaries from earlier runs.
    Report {
        /// Directory holding `*_metrics.json` files.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Fit directory whose trace should be summarized.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Write the rendered report here as `report.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding `events.csv` and `features.csv`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Event file (`user_id,day`); overrides `--data`.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Feature file (`user_id,loyalty,offers,purchases`); overrides `--data`.
    #[arg(long)]
    features: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> Result<(PathBuf, PathBuf)> {
        let from_dir = |name: &str| self.data.as_ref().map(|d| d.join(name));
        match (self.events.clone().or_else(|| from_dir("events.csv")), self.features.clone().or_else(|| from_dir("features.csv"))) {
            (Some(e), Some(f)) => Ok((e, f)),
            _ => Err(Error::Config("give --data <dir> or both --events and --features".into())),
        }
    }

    fn given(&self) -> bool {
        self.data.is_some() || self.events.is_some() || self.features.is_some()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Mcmc,
    Sgld,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Simulate { users, horizon, out } => {
            let mut spec = cfg.generator.clone();
            spec.n_users = users.unwrap_or(spec.n_users);
            spec.horizon_days = horizon.unwrap_or(spec.horizon_days);
            let bundle = sim::generate(&spec)?;
            sim::write_bundle(&out, &bundle)?;
            if !bundle.flagged.is_empty() {
                warn!("{} users have no focal engagements", bundle.flagged.len());
            }
            println!("simulated {} users, {} observed engagements -> {}", bundle.full.len(), bundle.observed.event_count(), out.display());
        }
        Command::Suppress { data, rate, low, high, out } => {
            let log = load_log(&data, &cfg)?;
            let seed = cfg.seed.unwrap_or_default();
            let spec = match (rate, low, high, cfg.suppression) {
                (Some(r), ..) => SuppressionSpec::fixed(r, seed),
                (None, Some(l), Some(h), _) => SuppressionSpec::uniform(l, h, seed),
                (None, None, None, Some(s)) => s,
                _ => return Err(Error::Config("give --rate, or --low and --high, or a [suppression] block".into())),
            };
            let bundle = sim::suppress(&log, &spec)?;
            sim::write_bundle(&out, &bundle)?;
            if !bundle.flagged.is_empty() {
                warn!("{} users keep fewer than 2 observed engagements", bundle.flagged.len());
            }
            println!("suppressed {} users -> {}", bundle.full.len(), out.display());
        }
        Command::Fit { data, sampler, shape, anchor, min_iets, theta_trace, out } => {
            if let Some(s) = sampler {
                cfg.sampler = match s {
                    SamplerArg::Mcmc => SamplerKind::Mcmc,
                    SamplerArg::Sgld => SamplerKind::Sgld,
                };
            }
            cfg.shape = shape.unwrap_or(cfg.shape);
            if let Some(a) = anchor {
                cfg.anchor.enabled = matches!(a, Switch::On);
            }
            cfg.min_iets = min_iets.unwrap_or(cfg.min_iets);
            let log = load_log(&data, &cfg)?;
            let built = io::build_inputs(&log, cfg.min_iets)?;
            report_exclusions(&built);
            info!("fitting {} users with {}", built.inputs.len(), cfg.sampler);
            let model = cfg.model();
            let fit = match cfg.sampler {
                SamplerKind::Mcmc => mcmc_fit(&built.inputs, &cfg.prior, &model, &cfg.mcmc)?,
                SamplerKind::Sgld => sgld_fit(&built.inputs, &cfg.prior, &model, &cfg.sgld)?,
            };
            for w in &fit.diagnostics.warnings {
                warn!("{w}");
            }
            write_fit(&out, &fit, theta_trace)?;
            write_exclusions(&out.join("excluded.csv"), &built)?;
            println!(
                "fitted {} users ({} excluded) with {}; post-burn-in mean neg-log-likelihood {:.3} -> {}",
                built.inputs.len(),
                built.excluded.len(),
                fit.sampler,
                fit.post_burn_in_neg_log_lik(),
                out.display()
            );
        }
        Command::Evaluate { fit, truth, data, grouping, out } => {
            let (_, summary) = read_summary(&fit)?;
            std::fs::create_dir_all(&out)?;
            match truth {
                Some(dir) => {
                    let bundle = sim::read_bundle(&dir)?;
                    let reports = eval::validation_evaluate(&summary, &bundle, grouping)?;
                    let (iet, pse): (Vec<MetricReport>, Vec<MetricReport>) =
                        reports.into_iter().partition(|r| r.target == eval::Target::Iet);
                    eval::write_reports(&out.join("iet_metrics.json"), &iet)?;
                    eval::write_reports(&out.join("pse_metrics.json"), &pse)?;
                    print!("{}", eval::render_table(&iet));
                    print!("{}", eval::render_table(&pse));
                }
                None => {
                    if !data.given() {
                        return Err(Error::Config("interim evaluation needs the observed log (--data or --events/--features)".into()));
                    }
                    let log = load_log(&data, &cfg)?;
                    let interim = eval::interim_evaluate(&summary, &log)?;
                    eval::write_reports(&out.join("interim_metrics.json"), &interim.reports)?;
                    eval::write_scatter(&out.join("iet_scatter.csv"), &interim.scatter)?;
                    eval::write_histogram(&out.join("iet_hist.csv"), &interim.histogram)?;
                    print!("{}", eval::render_table(&interim.reports));
                }
            }
        }
        Command::Report { eval: eval_dir, fit, out } => {
            let text = render_report(eval_dir.as_deref(), fit.as_deref())?;
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("report.txt"), &text)?;
            }
        }
    }
    Ok(())
}

fn load_log(data: &DataArgs, cfg: &RunConfig) -> Result<io::EngagementLog> {
    let (events, features) = data.paths()?;
    let ingested = io::ingest(&events, &features, cfg.window)?;
    if !ingested.report.missing_features.is_empty() {
        warn!("{} users have events but no feature row", ingested.report.missing_features.len());
    }
    Ok(ingested.log)
}

fn report_exclusions(built: &EstimationInputs) {
    if !built.excluded.is_empty() {
        info!("excluded {} users", built.excluded.len());
    }
    for name in &built.standardization.dropped {
        warn!("dropped constant feature `{name}`");
    }
}

fn write_exclusions(path: &Path, built: &EstimationInputs) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "reason", "iets"])?;
    for e in &built.excluded {
        let (reason, iets) = match e.reason {
            io::ExclusionReason::MissingFeatures => ("missing_features", String::new()),
            io::ExclusionReason::TooFewIets { iets } => ("too_few_iets", iets.to_string()),
        };
        w.write_record([e.user_id.as_str(), reason, &iets])?;
    }
    w.flush()?;
    Ok(())
}

fn render_report(eval_dir: Option<&Path>, fit: Option<&Path>) -> Result<String> {
    if eval_dir.is_none() && fit.is_none() {
        return Err(Error::Config("give --eval and/or --fit".into()));
    }
    let mut text = String::new();
    if let Some(dir) = fit {
        let (sampler, summary) = read_summary(dir)?;
        let trace = read_draw_trace(&dir.join("trace.csv"))?;
        let first = trace.first().map_or(f64::NAN, |r| r.neg_log_lik);
        let last = trace.last().map_or(f64::NAN, |r| r.neg_log_lik);
        text += &format!(
            "fit: {sampler}, {} users, {} retained draws\nneg-log-likelihood: first {first:.3}, last {last:.3}\n",
            summary.users.len(),
            summary.retained_draws
        );
        let n = summary.users.len().max(1) as f64;
        let mean_pse = summary.users.iter().map(|u| u.pse_mean).sum::<f64>() / n;
        text += &format!("mean posterior PSE: {mean_pse:.4}\n\n");
    }
    if let Some(dir) = eval_dir {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_metrics.json")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!("no *_metrics.json files in {}", dir.display())));
        }
        for f in files {
            text += &eval::render_table(&eval::read_reports(&f)?);
            text.push('\n');
        }
    }
    Ok(text)
}
