//! `tdm` subcommands.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tdm_core::data::modeldef::PriorBlockDef;
use tdm_core::data::{
    load_model_def, locf_fill, parse_dataset, split, summary_csv, write_dataset, Cohort, ModelDefinition, SplitRule,
    Strictness, DEFAULT_FRACTION,
};
use tdm_core::estimator::{
    fit_population, optimize_prior_weights, ConditionReport, FitOptions, FitResult, ObjectiveTerms, ParameterEstimate,
    PriorSpec, WeightSearchOptions, WeightTrial,
};
use tdm_core::forecast::{evaluate, ForecastMode, TargetRange};
use tdm_core::synth::{synthetic_cohort, SynthOptions};

use crate::api::{router, with_assets, App};
use crate::models::Registry;
use crate::store::Store;

/// Exit status when a fit does not converge; the report is still written.
pub const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "tdm", version, about = "Tacrolimus therapeutic drug monitoring toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Population fit of a model definition on a dataset.
    Fit(FitArgs),
    /// Sequential a priori / Bayesian forecasting and predictive-performance artifacts.
    Evaluate(EvaluateArgs),
    /// Estimation/prediction split ordered by transplant date.
    Split(SplitArgs),
    /// Synthetic cohort drawn from a model definition.
    Simulate(SimulateArgs),
    /// Demographic and sampling summary CSV.
    Summarize(SummarizeArgs),
    /// HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub dataset: PathBuf,
    pub model_def: PathBuf,
    /// Prior block JSON (`{"theta": [...], "omega": [...]}`); all weights are set to 1 unless
    /// `--weights` is given.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Descending weight grid starting at 1, e.g. "1,0.5,0.1,0".
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Id of the fitted model definition (default: `<input id>-fit`).
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, default_value_t = 2000)]
    pub max_evals: usize,
    /// Skip the outer Hessian (no RSEs; incompatible with `--weights`).
    #[arg(long)]
    pub no_covariance: bool,
    #[arg(long, default_value_t = 0.5)]
    pub rse_ceiling: f64,
    /// Warn about unknown keys instead of rejecting them.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub dataset: PathBuf,
    /// One or more model definitions; every pair is compared.
    #[arg(required = true)]
    pub model_defs: Vec<PathBuf>,
    #[arg(long, default_value = "next-one")]
    pub mode: ForecastMode,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub dataset: PathBuf,
    #[arg(long, conflicts_with_all = ["count", "ids"])]
    pub fraction: Option<f64>,
    /// Exact number of estimation patients.
    #[arg(long, conflicts_with = "ids")]
    pub count: Option<usize>,
    /// Comma-separated estimation patient ids.
    #[arg(long)]
    pub ids: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model_def: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub patients: usize,
    #[arg(long, default_value_t = 21)]
    pub days: u32,
    #[arg(long, default_value_t = 2)]
    pub first_trough_pod: u32,
    #[arg(long, default_value_t = 1)]
    pub trough_every: u32,
    /// Extra samples on trough days, hours after the morning dose (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub extra_samples: Vec<f64>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Datasets; each is labelled by its file stem.
    #[arg(required = true)]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "TDM_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, env = "TDM_DATA_DIR", default_value = "tdm-data")]
    pub data_dir: PathBuf,
    /// Shared bearer token required on every endpoint except /api/health.
    #[arg(long, env = "TDM_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Directory of static files (the console build) served outside `/api`.
    #[arg(long, env = "TDM_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, env = "TDM_DEFAULT_MODEL")]
    pub default_model: Option<String>,
}

fn strictness(lenient: bool) -> Strictness {
    if lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    }
}

fn load_def(path: &Path, lenient: bool) -> anyhow::Result<ModelDefinition> {
    Ok(load_model_def(path, strictness(lenient))
        .with_context(|| format!("loading model definition {}", path.display()))?
        .definition)
}

fn load_cohort(path: &Path) -> anyhow::Result<Cohort> {
    let raw = parse_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    for ex in &raw.provenance.exclusions {
        log::warn!("{}: excluded {ex:?}", path.display());
    }
    Ok(locf_fill(&raw)?)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .with_context(|| format!("weight '{w}' is not a number"))
        })
        .collect()
}

fn load_prior_block(path: &Path) -> anyhow::Result<PriorBlockDef> {
    let text = fs::read_to_string(path).with_context(|| format!("reading prior {}", path.display()))?;
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(&text);
    let mut record = |p: serde_ignored::Path<'_>| unknown.push(p.to_string());
    let block: PriorBlockDef = serde_path_to_error::deserialize(serde_ignored::Deserializer::new(&mut de, &mut record))
        .map_err(|e| anyhow::anyhow!("{}: schema violation at .{}: {}", path.display(), e.path(), e.inner()))?;
    if let Some(k) = unknown.first() {
        bail!("{}: unknown key .{k}", path.display());
    }
    Ok(block)
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub model_id: String,
    pub converged: bool,
    pub minus2ll: f64,
    pub objective: ObjectiveTerms,
    pub n_function_evals: usize,
    pub estimates: Vec<ParameterEstimate>,
    pub condition_report: Option<ConditionReport>,
    pub excluded_patients: Vec<String>,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    /// Final weight of every prior block.
    pub prior_weights: Vec<(String, f64)>,
    pub weight_trials: Vec<WeightTrial>,
}

impl FitReport {
    fn new(
        model_id: &str,
        fit: &FitResult,
        prior: &PriorSpec,
        trials: Vec<WeightTrial>,
        warnings: Vec<String>,
    ) -> Self {
        Self {
            model_id: model_id.to_string(),
            converged: fit.converged,
            minus2ll: fit.minus2ll(),
            objective: fit.objective,
            n_function_evals: fit.n_function_evals,
            estimates: fit.estimates.clone(),
            condition_report: fit.condition_report.clone(),
            excluded_patients: fit.excluded_patients.clone(),
            degenerate: fit.degenerate,
            warnings: fit.warnings.iter().cloned().chain(warnings).collect(),
            prior_weights: prior
                .blocks()
                .into_iter()
                .map(|b| (prior.block_name(b), prior.weight(b)))
                .collect(),
            weight_trials: trials,
        }
    }
}

pub const FITTED_MODEL_FILE: &str = "fitted-model.json";
pub const FIT_REPORT_FILE: &str = "fit-report.json";

pub fn run_fit(a: &FitArgs) -> anyhow::Result<u8> {
    let cohort = load_cohort(&a.dataset)?;
    let def = load_def(&a.model_def, a.lenient)?;
    let grid = a.weights.as_deref().map(parse_grid).transpose()?;
    let mut with_prior = def.clone();
    if let Some(path) = &a.prior {
        with_prior.prior = load_prior_block(path)?;
    }
    let (init, mut prior) = with_prior.to_model()?;
    if a.prior.is_some() && grid.is_none() {
        prior = prior.with_all_weights(1.0);
    }
    let mut fit_opts = FitOptions {
        covariance: !a.no_covariance,
        ..FitOptions::default()
    };
    fit_opts.optimizer.max_evals = a.max_evals;

    let (fit, prior, trials, warnings) = match grid {
        Some(grid) => {
            if a.no_covariance {
                bail!("--weights needs the covariance step; drop --no-covariance");
            }
            if prior.blocks().is_empty() {
                bail!("--weights needs a prior: pass --prior or define one in the model definition");
            }
            let opts = WeightSearchOptions {
                rse_ceiling: a.rse_ceiling,
                fit: fit_opts,
            };
            let s = optimize_prior_weights(&cohort.patients, &init, &prior, &grid, &opts)?;
            (s.fit, s.prior, s.trials, s.warnings)
        }
        None => {
            let p = (!prior.is_uninformative()).then_some(&prior);
            let fit = fit_population(&cohort.patients, &init, p, &fit_opts)?;
            (fit, prior, Vec::new(), Vec::new())
        }
    };
    let id = a.id.clone().unwrap_or_else(|| format!("{}-fit", def.id));
    let fitted = ModelDefinition::from_model(&id, def.description.clone(), &fit.model, &prior, Some(&def));
    let report = FitReport::new(&id, &fit, &prior, trials, warnings);
    fs::create_dir_all(&a.out)?;
    write(&a.out.join(FITTED_MODEL_FILE), &fitted.to_json()?)?;
    write(
        &a.out.join(FIT_REPORT_FILE),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    println!(
        "{}: -2LL {:.4}, {} evaluations, {}",
        id,
        report.minus2ll,
        report.n_function_evals,
        if report.converged { "converged" } else { "NOT converged" }
    );
    if report.converged {
        Ok(0)
    } else {
        log::error!("fit did not converge; report written to {}", a.out.display());
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// Artifact file names written by `evaluate`.
pub const EVALUATION_FILES: [&str; 6] = [
    "records.csv",
    "summary.csv",
    "boxplot.csv",
    "comparisons.csv",
    "weekly.csv",
    "evaluation.json",
];

/// Unique model labels: file stems, suffixed `#k` on repeats.
fn labels(paths: &[PathBuf]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in paths {
        let stem = p
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned());
        let mut label = stem.clone();
        let mut k = 2;
        while out.contains(&label) {
            label = format!("{stem}#{k}");
            k += 1;
        }
        out.push(label);
    }
    out
}

pub fn run_evaluate(a: &EvaluateArgs) -> anyhow::Result<u8> {
    let cohort = load_cohort(&a.dataset)?;
    let mut models = Vec::new();
    for (label, path) in labels(&a.model_defs).into_iter().zip(&a.model_defs) {
        models.push((label, load_def(path, a.lenient)?.to_model()?.0));
    }
    let usable: Vec<_> = cohort
        .patients
        .iter()
        .filter(|p| {
            let ok = p.n_observed() > 0;
            if !ok {
                log::warn!("patient {} has no usable observations; skipped", p.patient_id);
            }
            ok
        })
        .cloned()
        .collect();
    if usable.is_empty() {
        bail!("no patient in {} has a usable observation", a.dataset.display());
    }
    let report = evaluate(&usable, &models, a.mode, &TargetRange::default())?;
    fs::create_dir_all(&a.out)?;
    let texts = [
        report.records_csv()?,
        report.summary_csv()?,
        report.boxplot_csv()?,
        report.comparisons_csv()?,
        report.weekly_csv()?,
        report.to_json()?,
    ];
    for (name, text) in EVALUATION_FILES.iter().zip(&texts) {
        write(&a.out.join(name), text)?;
    }
    print!("{}", texts[1]);
    for m in &report.models {
        for f in &m.flagged {
            log::warn!(
                "{}: patient {} step n_obs={} flagged: {}",
                m.model,
                f.patient_id,
                f.n_obs,
                f.reason
            );
        }
    }
    Ok(0)
}

pub fn run_split(a: &SplitArgs) -> anyhow::Result<u8> {
    let cohort = parse_dataset(&a.dataset).with_context(|| format!("reading dataset {}", a.dataset.display()))?;
    let rule = match (a.fraction, a.count, &a.ids) {
        (_, Some(n), _) => SplitRule::Count(n),
        (_, _, Some(ids)) => SplitRule::Ids(ids.split(',').map(|s| s.trim().to_string()).collect()),
        (f, _, _) => SplitRule::Fraction(f.unwrap_or(DEFAULT_FRACTION)),
    };
    let (est, pred) = split(&cohort, &rule)?;
    for w in &pred.provenance.warnings {
        log::warn!("{w}");
    }
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("estimation.csv"), &write_dataset(&est)?)?;
    write(&a.out.join("prediction.csv"), &write_dataset(&pred)?)?;
    println!("estimation: {} patients", est.len());
    println!("prediction: {} patients", pred.len());
    Ok(0)
}

pub fn run_simulate(a: &SimulateArgs) -> anyhow::Result<u8> {
    let (model, _) = load_def(&a.model_def, a.lenient)?.to_model()?;
    let opts = SynthOptions {
        n_patients: a.patients,
        n_days: a.days,
        first_trough_pod: a.first_trough_pod,
        trough_every: a.trough_every,
        extra_samples_h: a.extra_samples.clone(),
        ..SynthOptions::default()
    };
    if a.trough_every == 0 || a.first_trough_pod == 0 || a.days == 0 {
        bail!("--days, --first-trough-pod and --trough-every must be >= 1");
    }
    let s = synthetic_cohort(&model, &opts, a.seed)?;
    let text = write_dataset(&s.cohort)?;
    match &a.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

pub fn run_summarize(a: &SummarizeArgs) -> anyhow::Result<u8> {
    let mut parts = Vec::new();
    for (label, path) in labels(&a.datasets).into_iter().zip(&a.datasets) {
        let c = parse_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
        parts.push((label, c));
    }
    let refs: Vec<(&str, &Cohort)> = parts.iter().map(|(l, c)| (l.as_str(), c)).collect();
    let text = summary_csv(&refs)?;
    match &a.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

/// Loads the store and models under `data_dir` and builds the application state.
pub fn open_app(data_dir: &Path, token: Option<String>, default_model: Option<&str>) -> anyhow::Result<App> {
    let store = Store::open(data_dir).with_context(|| format!("opening data directory {}", data_dir.display()))?;
    let models = Registry::load(&data_dir.join("models"), default_model)?;
    Ok(App::new(store, models, token.filter(|t| !t.is_empty())))
}

pub fn run_serve(a: &ServeArgs) -> anyhow::Result<u8> {
    let app = Arc::new(open_app(&a.data_dir, a.token.clone(), a.default_model.as_deref())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        let mut routes = router(app);
        if let Some(dir) = &a.static_dir {
            routes = with_assets(routes, dir);
        }
        axum::serve(listener, routes)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(0)
}

pub fn run(cli: &Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Split(a) => run_split(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Summarize(a) => run_summarize(a),
        Command::Serve(a) => run_serve(a),
    }
}
