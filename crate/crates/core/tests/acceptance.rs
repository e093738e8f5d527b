use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pse_core::eval::{self, Grouping, MetricReport, Target};
use pse_core::io::{build_inputs, EstimationInputs};
use pse_core::likelihood::{hyper_gradient, user_log_likelihood, ModelSpec, UserLikelihoodInput};
use pse_core::model::{
    focal_iet_log_density, hierarchy_mean, mean_focal_iet, pse_from_markov, AnchorSpec, Design, ErlangSpec, MarkovParams,
    TruncationPolicy,
};
use pse_core::samplers::{mcmc_fit, sgld_fit, write_fit, CoefficientPosterior, FitResult, HierarchyPrior, McmcConfig, SgldConfig};
use pse_core::sim::{generate, suppress, GeneratorSpec, SuppressionSpec, TruthBundle};

const INSTANCE_SEED: u64 = 1;
const SUPPRESSION_SEED: u64 = 2;
const FIT_SEED: u64 = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn integrate(f: impl Fn(f64) -> f64, edges: &[f64]) -> f64 {
    edges.windows(2).map(|w| quadrature::double_exponential::integrate(&f, w[0], w[1], 1e-13).integral).sum()
}

fn mixture_density() -> Outcome {
    let policy = TruncationPolicy::default();
    let edges = [0.0, 0.5, 2.0, 8.0, 32.0, 128.0, 320.0, 640.0];
    let grid = [0.1, 0.5, 0.9];
    let (mut worst_mass, mut worst_mean) = (0.0f64, 0.0f64);
    for shape in [1u32, 2] {
        for &phi in &grid {
            for &lam in &grid {
                let spec = ErlangSpec::new(shape, 1.0).unwrap();
                let params = MarkovParams::new(phi, lam).unwrap();
                let dens = |t: f64| if t > 0.0 { focal_iet_log_density(t, spec, params, &policy).unwrap().exp() } else { 0.0 };
                let mass = integrate(dens, &edges);
                let mean = integrate(|t| t * dens(t), &edges);
                let closed = mean_focal_iet(spec, params);
                worst_mass = worst_mass.max((mass - 1.0).abs());
                worst_mean = worst_mean.max((mean - closed).abs() / closed);
            }
        }
    }
    outcome(worst_mass <= 1e-6 && worst_mean <= 1e-4, format!("max |mass-1| {worst_mass:.2e}, max mean rel err {worst_mean:.2e}"))
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let shape = 1 + (i % 2) as u32;
        let mut model = ModelSpec::new(shape);
        if (i / 2) % 2 == 1 {
            model = model.with_anchor(AnchorSpec::enabled(rng.random_range(0.2..0.8), rng.random_range(0.5..2.0)));
        }
        let x: Vec<f64> = std::iter::once(1.0).chain((0..3).map(|_| rng.random_range(-2.0..2.0))).collect();
        let design = Design::shared(x);
        let n = rng.random_range(1..30);
        let iets: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..25.0f64).round()).collect();
        let input = UserLikelihoodInput::new(format!("u{i}"), iets, design.clone()).unwrap();
        let coef: Vec<f64> = (0..design.coefficient_len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let value = |c: &[f64]| user_log_likelihood(&input, hierarchy_mean(&design, c).unwrap(), &model).unwrap();
        let analytic = hyper_gradient(&input, &coef, &model).unwrap().values;
        let fd: Vec<f64> = (0..coef.len())
            .map(|j| {
                let (mut up, mut dn) = (coef.clone(), coef.clone());
                up[j] += h;
                dn[j] -= h;
                (value(&up) - value(&dn)) / (2.0 * h)
            })
            .collect();
        let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-300);
        let err = analytic.iter().zip(&fd).fold(0.0f64, |m, (a, f)| m.max((a - f).abs())) / scale;
        worst = worst.max(err);
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e} over 100 instances"))
}

fn steady_state_oracle() -> Outcome {
    let steps = 1_000_000usize;
    let grid = [0.1, 0.5, 0.9];
    let mut worst = 0.0f64;
    for (idx, (&phi, &lam)) in grid.iter().flat_map(|p| grid.iter().map(move |l| (p, l))).enumerate() {
        let params = MarkovParams::new(phi, lam).unwrap();
        let pi = pse_from_markov(params);
        let mut rng = ChaCha8Rng::seed_from_u64(30 + idx as u64);
        let mut focal = rng.random_bool(pi);
        let mut hits = 0usize;
        for _ in 0..steps {
            hits += focal as usize;
            focal = rng.random_bool(if focal { phi } else { lam });
        }
        let rho = phi - lam;
        let se = (pi * (1.0 - pi) * (1.0 + rho) / (1.0 - rho) / steps as f64).sqrt();
        worst = worst.max((hits as f64 / steps as f64 - pi).abs() / se);
    }
    outcome(worst <= 3.0, format!("max deviation {worst:.2} SE over 9 pairs"))
}

fn gibbs_oracle() -> Outcome {
    let (dim, v, draws) = (12usize, 100.0, 5000usize);
    let post = CoefficientPosterior::prior_only(dim, v).unwrap();
    let mean = post.mean.clone();
    let cov = post.covariance();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let samples: Vec<Vec<f64>> = (0..draws).map(|_| post.sample(&mut rng)).collect();
    let n = draws as f64;
    let emp_mean: Vec<f64> = (0..dim).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let mut emp_cov = DMatrix::<f64>::zeros(dim, dim);
    for s in &samples {
        for a in 0..dim {
            for b in 0..dim {
                emp_cov[(a, b)] += (s[a] - emp_mean[a]) * (s[b] - emp_mean[b]) / (n - 1.0);
            }
        }
    }
    let mut worst_mean = 0.0f64;
    let mut worst_cov = 0.0f64;
    for a in 0..dim {
        worst_mean = worst_mean.max((emp_mean[a] - mean[a]).abs() / (cov[(a, a)] / n).sqrt());
        for b in a..dim {
            let se = ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)].powi(2)) / n).sqrt();
            worst_cov = worst_cov.max((emp_cov[(a, b)] - cov[(a, b)]).abs() / se);
        }
    }
    outcome(
        worst_mean <= 3.0 && worst_cov <= 3.0,
        format!("max mean deviation {worst_mean:.2} SE, max covariance deviation {worst_cov:.2} SE"),
    )
}

struct Instance {
    truth: TruthBundle,
    built: EstimationInputs,
}

fn instance() -> Instance {
    let spec = GeneratorSpec { seed: INSTANCE_SEED, ..GeneratorSpec::default() };
    let generated = generate(&spec).unwrap();
    let truth = suppress(&generated.full_log(), &SuppressionSpec::uniform(0.55, 0.75, SUPPRESSION_SEED)).unwrap();
    let built = build_inputs(&truth.observed, 2).unwrap();
    Instance { truth, built }
}

fn mcmc_config(threads: usize) -> McmcConfig {
    McmcConfig { iterations: 30_000, burn_in: 10_000, proposal_scale: 0.3, seed: FIT_SEED, threads, ..McmcConfig::default() }
}

fn fit_mcmc(inputs: &EstimationInputs, threads: usize) -> FitResult {
    mcmc_fit(&inputs.inputs, &HierarchyPrior::default(), &ModelSpec::new(2), &mcmc_config(threads)).unwrap()
}

fn row<'a>(reports: &'a [MetricReport], target: Target, group: &str) -> &'a MetricReport {
    reports.iter().find(|r| r.target == target && r.group == group).unwrap()
}

fn recovery(inst: &Instance, fit: &FitResult) -> (Outcome, f64) {
    let all = eval::validation_evaluate(&fit.summary, &inst.truth, Grouping::All).unwrap();
    let smape = row(&all, Target::Pse, "all").smape.unwrap();
    let retained = inst.built.inputs.len();
    (outcome(smape <= 20.0, format!("PSE sMAPE {smape:.2}% over {retained} users")), smape)
}

fn quartile_trend(inst: &Instance, fit: &FitResult) -> Outcome {
    let q = eval::validation_evaluate(&fit.summary, &inst.truth, Grouping::Quartiles).unwrap();
    let rmse: Vec<f64> = eval::QUARTILES.iter().map(|g| row(&q, Target::Iet, g).rmse.unwrap()).collect();
    let increases: Vec<f64> = rmse.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    let pass = increases.is_empty() || (increases.len() == 1 && increases[0] <= 0.10);
    let shown: Vec<String> = rmse.iter().map(|r| format!("{r:.3}")).collect();
    outcome(pass, format!("IET RMSE Q1..Q4 [{}]", shown.join(", ")))
}

fn bucket_trend(inst: &Instance, fit: &FitResult) -> Outcome {
    let b = eval::validation_evaluate(&fit.summary, &inst.truth, Grouping::Propsup).unwrap();
    let groups: Vec<&MetricReport> = eval::PROPSUP_BUCKETS.iter().map(|g| row(&b, Target::Pse, g)).collect();
    let (low, high) = (groups[0].smape, groups[3].smape);
    let shown: Vec<String> = groups.iter().map(|r| format!("{}:{:.2}%(n={})", r.group, r.smape.unwrap_or(f64::NAN), r.n)).collect();
    let pass = matches!((low, high), (Some(l), Some(h)) if l < h);
    outcome(pass, format!("PSE sMAPE by bucket {}", shown.join(" ")))
}

fn sampler_agreement(inst: &Instance, mcmc: &FitResult, mcmc_smape: f64) -> Outcome {
    let cfg = SgldConfig { iterations: 30_000, burn_in: 20_000, batch_size: 200, seed: FIT_SEED, ..SgldConfig::default() };
    let sgld = match sgld_fit(&inst.built.inputs, &HierarchyPrior::default(), &ModelSpec::new(2), &cfg) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("SGLD failed: {e}")),
    };
    let a: Vec<f64> = mcmc.summary.users.iter().map(|u| u.pse_mean).collect();
    let b: Vec<f64> = sgld.summary.users.iter().map(|u| u.pse_mean).collect();
    let r = eval::pearson(&a, &b).unwrap().unwrap_or(f64::NAN);
    let all = eval::validation_evaluate(&sgld.summary, &inst.truth, Grouping::All).unwrap();
    let smape = row(&all, Target::Pse, "all").smape.unwrap();
    outcome(
        r >= 0.8 && smape <= 2.0 * mcmc_smape,
        format!("Pearson r {r:.3}, SGLD sMAPE {smape:.2}% vs 2 x MCMC {:.2}%", 2.0 * mcmc_smape),
    )
}

fn files_equal(a: &Path, b: &Path) -> Result<(), String> {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        if std::fs::read(a.join(&name)).unwrap() != std::fs::read(b.join(&name)).map_err(|e| e.to_string())? {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
    }
    Ok(())
}

fn determinism(inst: &Instance, first: &FitResult) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, fit: &FitResult| {
        let p = dir.path().join(name);
        write_fit(&p, fit, true).unwrap();
        p
    };
    let a = write("first", first);
    let b = write("repeat", &fit_mcmc(&inst.built, 1));
    let c = write("threads", &fit_mcmc(&inst.built, 3));
    match (files_equal(&a, &b), files_equal(&a, &c)) {
        (Ok(()), Ok(())) => outcome(true, "repeat and 3-thread rerun match byte for byte"),
        (Err(e), _) => outcome(false, format!("repeat run: {e}")),
        (_, Err(e)) => outcome(false, format!("thread-count change: {e}")),
    }
}

fn interim_pipeline() -> Outcome {
    let spec = GeneratorSpec { seed: INSTANCE_SEED, ..GeneratorSpec::default() };
    let focal = generate(&spec).unwrap().observed;
    let built = build_inputs(&focal, 2).unwrap();
    let fit = mcmc_fit(&built.inputs, &HierarchyPrior::default(), &ModelSpec::new(2), &mcmc_config(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_fit(dir.path(), &fit, false).unwrap();
    let interim = eval::interim_evaluate(&fit.summary, &focal).unwrap();
    eval::write_histogram(&dir.path().join("iet_hist.csv"), &interim.histogram).unwrap();
    eval::write_scatter(&dir.path().join("iet_scatter.csv"), &interim.scatter).unwrap();
    let emitted = [files.trace, dir.path().join("iet_hist.csv"), dir.path().join("iet_scatter.csv")]
        .iter()
        .all(|p| std::fs::metadata(p).map(|m| m.len() > 0).unwrap_or(false));
    let first = fit.trace[0].neg_log_lik;
    let tail = fit.post_burn_in_neg_log_lik();
    let smape = interim.reports[0].smape.unwrap();
    outcome(
        emitted && tail < first && smape <= 15.0,
        format!("files emitted {emitted}, neg-log-lik iteration 1 {first:.1} vs post-burn-in mean {tail:.1}, focal IET sMAPE {smape:.2}%"),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failures = 0;
    let mut report = |n: usize, name: &str, start: Instant, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!o.pass);
        println!("criterion {n:>2} {name:<28} {verdict}  {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    report(1, "mixture density", t, mixture_density());
    let t = Instant::now();
    report(2, "gradient oracle", t, gradient_oracle());
    let t = Instant::now();
    report(3, "steady-state oracle", t, steady_state_oracle());
    let t = Instant::now();
    report(4, "conjugate Gibbs oracle", t, gibbs_oracle());

    let t = Instant::now();
    let inst = instance();
    let fit = fit_mcmc(&inst.built, 0);
    let (o5, mcmc_smape) = recovery(&inst, &fit);
    report(5, "end-to-end recovery", t, o5);
    let t = Instant::now();
    report(6, "IET quartile trend", t, quartile_trend(&inst, &fit));
    let t = Instant::now();
    report(7, "prop-sup bucket trend", t, bucket_trend(&inst, &fit));
    let t = Instant::now();
    report(8, "sampler agreement", t, sampler_agreement(&inst, &fit, mcmc_smape));
    let t = Instant::now();
    report(9, "determinism", t, determinism(&inst, &fit));
    let t = Instant::now();
    report(10, "interim pipeline", t, interim_pipeline());

    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
