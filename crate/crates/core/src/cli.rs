//! Command-line front end: argument types and one function per subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::eval::{masked_mse, mse, rmse, sigma_miss};
use crate::experiments::{
    joint_bound_batch, mse_bound_batch, regret_bound_batch, summarize, BatchSummary, JointSetting, RunRecord, Setting,
};
use crate::imputer::{f3i_run, knn_distance_impute, knn_initial_impute, mean_impute};
use crate::io::{read_labels, read_matrix, write_json, write_mask, write_matrix, Metrics, RunManifest, MANIFEST_FILE};
use crate::joint::{pcgrad_f3i_run, JointConfig, LossVariant, Split};
use crate::matrix::{Config, DataMatrix};
use crate::synthgen::{apply_missingness, generate_complete, sample_params, Mechanism, MissingnessSpec};

#[derive(Parser, Debug)]
#[command(name = "f3i", version, about = "Iterative KNN imputation guided by online learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample Gaussian data and mask it.
    Generate(GenerateArgs),
    /// Impute a CSV with missing cells.
    Impute(ImputeArgs),
    /// Run a seeded batch checking one of the theoretical bounds.
    Validate(ValidateArgs),
    /// Train imputation and a sigmoid classifier together.
    Joint(JointArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MechanismArg {
    Mcar,
    Mar,
    MnarGsm,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Mcar => Mechanism::Mcar,
            MechanismArg::Mar => Mechanism::MarLogistic,
            MechanismArg::MnarGsm => Mechanism::MnarGsm,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct DataArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub f: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = MechanismArg::Mcar)]
    pub mechanism: MechanismArg,
    /// Missing rate [default: 0.25, or 0.5 for the joint bound]
    #[arg(long)]
    pub p_miss: Option<f64>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct RunArgs {
    /// Number of neighbours
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Round budget [default: 500, or 3 for the joint bound]
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub eta: f64,
    /// Weight of the classification loss [default: 0.5]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Kernel bandwidth override
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for independent runs
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl RunArgs {
    fn config(&self, default_iter: usize) -> Config {
        Config {
            n_neighbors: self.k,
            max_iter: self.max_iter.unwrap_or(default_iter),
            eta: self.eta,
            seed: self.seed,
            bandwidth: self.h,
            ..Config::default()
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Method {
    F3i,
    Mean,
    KnnUniform,
    KnnDistance,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ImputeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::F3i)]
    pub method: Method,
    /// Complete matrix to score against
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Scale rows to unit norm before imputing
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Theorem {
    MseBound,
    RegretBound,
    JointBound,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub theorem: Theorem,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum LossArg {
    PositiveLogloss,
    FullBce,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct JointArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Single-column CSV of 0/1 labels
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub train: f64,
    #[arg(long, default_value_t = 0.2)]
    pub validation: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = LossArg::FullBce)]
    pub loss: LossArg,
    #[command(flatten)]
    pub run: RunArgs,
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn finish(mut manifest: RunManifest, out: &Path, started: Instant) -> Result<RunManifest> {
    manifest.duration_seconds = started.elapsed().as_secs_f64();
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn snapshot<T: Serialize>(args: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(args)?)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<RunManifest> {
    let started = Instant::now();
    prepare_out(&args.out)?;
    let d = &args.data;
    let p = d.p_miss.unwrap_or(0.25);
    let spec = MissingnessSpec::new(d.mechanism.into(), p);
    if p != 0.0 {
        spec.validate()?;
    }
    let params = sample_params(d.f, d.sigma, args.seed)?;
    let complete = generate_complete(d.n, d.f, &params, args.seed);
    let masked = if p == 0.0 { complete.clone() } else { apply_missingness(&complete, &params, &spec, args.seed)? };
    let mut manifest = RunManifest::new("generate", snapshot(args)?, args.seed);
    let files = ["complete.csv", "masked.csv", "mask.csv", "params.json"];
    write_matrix(&args.out.join(files[0]), &complete, None)?;
    write_matrix(&args.out.join(files[1]), &masked, None)?;
    write_mask(&args.out.join(files[2]), &masked)?;
    #[derive(Serialize)]
    struct Params<'a> {
        params: &'a crate::matrix::GaussianParams,
        missingness: &'a MissingnessSpec,
        seed: u64,
        manifest: &'a str,
    }
    write_json(
        &args.out.join(files[3]),
        &Params { params: &params, missingness: &spec, seed: args.seed, manifest: MANIFEST_FILE },
    )?;
    manifest.outputs = files.iter().map(|f| args.out.join(f)).collect();
    finish(manifest, &args.out, started)
}

fn score(metrics: &mut Metrics, imputed: &DataMatrix, truth: Option<&PathBuf>, input: &DataMatrix) -> Result<()> {
    let Some(path) = truth else { return Ok(()) };
    let (truth, _) = read_matrix(path)?;
    if truth.has_missing() {
        return Err(invalid("the truth matrix must be complete"));
    }
    let complete_imputed = DataMatrix::complete(imputed.n_rows(), imputed.n_cols(), imputed.values().to_vec())?;
    metrics.mse = Some(mse(&complete_imputed, &truth)?);
    metrics.rmse = Some(rmse(&complete_imputed, &truth)?);
    if input.has_missing() {
        metrics.masked_mse = Some(masked_mse(&complete_imputed, &truth, input.mask())?);
    }
    Ok(())
}

pub fn cmd_impute(args: &ImputeArgs) -> Result<RunManifest> {
    let started = Instant::now();
    prepare_out(&args.run.out)?;
    let (x, header) = read_matrix(&args.input)?;
    let mut manifest = RunManifest::new("impute", snapshot(args)?, args.run.seed);
    manifest.inputs.push(args.input.clone());
    let mut metrics = Metrics { manifest: MANIFEST_FILE.into(), ..Metrics::default() };
    let out = &args.run.out;
    let imputed = match args.method {
        Method::F3i => {
            let cfg = Config { normalize: args.normalize, ..args.run.config(500) };
            let run = f3i_run(&x, &cfg)?;
            metrics.t_final = Some(run.trace.final_t);
            metrics.stop_reason = Some(run.trace.stop_reason);
            write_json(&out.join("trace.json"), &run.trace)?;
            manifest.outputs.push(out.join("trace.json"));
            run.imputed
        }
        Method::Mean => mean_impute(&x)?,
        Method::KnnUniform => knn_initial_impute(&x, args.run.k)?,
        Method::KnnDistance => knn_distance_impute(&x, args.run.k)?,
    };
    if let Some(t) = &args.truth {
        manifest.inputs.push(t.clone());
    }
    score(&mut metrics, &imputed, args.truth.as_ref(), &x)?;
    write_matrix(&out.join("imputed.csv"), &imputed, Some(&header))?;
    write_json(&out.join("metrics.json"), &metrics)?;
    manifest.outputs.push(out.join("imputed.csv"));
    manifest.outputs.push(out.join("metrics.json"));
    finish(manifest, out, started)
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub theorem: Theorem,
    pub summary: BatchSummary,
    pub sigma_miss: f64,
    /// `C_miss` for the imputation bounds.
    pub c_miss: Option<f64>,
    pub manifest: String,
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| invalid(format!("cannot start {j} workers: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs the batch and writes `runs.csv` and `summary.json`. The returned
/// flag is false when any run broke its bound.
pub fn cmd_validate(args: &ValidateArgs) -> Result<(RunManifest, bool)> {
    let started = Instant::now();
    let out = &args.run.out;
    prepare_out(out)?;
    let seeds: Vec<u64> = (0..args.runs as u64).map(|i| args.run.seed + i).collect();
    let d = &args.data;
    let r = &args.run;
    let setting = Setting {
        n: d.n,
        f: d.f,
        k: r.k,
        sigma: d.sigma,
        mechanism: d.mechanism.into(),
        p_miss: d.p_miss.unwrap_or(0.25),
        eta: r.eta,
        max_iter: r.max_iter.unwrap_or(500),
        bandwidth: r.h,
    };
    let (records, c_miss) = match args.theorem {
        Theorem::MseBound => {
            let c = setting.scaled_c_miss()? / setting.n as f64;
            (with_jobs(r.jobs, || mse_bound_batch(&setting, &seeds))??, Some(c))
        }
        Theorem::RegretBound => {
            let c = setting.scaled_c_miss()? / setting.n as f64;
            (with_jobs(r.jobs, || regret_bound_batch(&setting, &seeds))??, Some(c))
        }
        Theorem::JointBound => {
            let base = JointSetting::default();
            let js = JointSetting {
                sigma: d.sigma,
                p_miss: d.p_miss.unwrap_or(base.p_miss),
                k: r.k,
                eta: r.eta,
                max_iter: r.max_iter.unwrap_or(base.max_iter),
                joint: JointConfig { beta: r.beta.unwrap_or(base.joint.beta), ..base.joint.clone() },
                ..base
            };
            (with_jobs(r.jobs, || joint_bound_batch(&js, &seeds))??, None)
        }
    };
    let mut manifest = RunManifest::new("validate", snapshot(args)?, r.seed);
    write_records(&out.join("runs.csv"), &records)?;
    let report = ValidationReport {
        theorem: args.theorem,
        summary: summarize(&records),
        sigma_miss: sigma_miss(d.sigma, r.k).sigma_miss,
        c_miss,
        manifest: MANIFEST_FILE.into(),
    };
    write_json(&out.join("summary.json"), &report)?;
    manifest.outputs = vec![out.join("runs.csv"), out.join("summary.json")];
    let ok = records.iter().all(|r| r.satisfied);
    Ok((finish(manifest, out, started)?, ok))
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_joint(args: &JointArgs) -> Result<RunManifest> {
    let started = Instant::now();
    let out = &args.run.out;
    prepare_out(out)?;
    let (x, header) = read_matrix(&args.features)?;
    let labels = read_labels(&args.labels)?;
    if labels.len() != x.n_rows() {
        return Err(Error::ShapeMismatch { expected: format!("{} labels", x.n_rows()), got: labels.len().to_string() });
    }
    let split = Split::random(x.n_rows(), args.train, args.validation, args.run.seed)?;
    let jcfg = JointConfig {
        beta: args.run.beta.unwrap_or(0.5),
        epochs: args.epochs,
        classifier_lr: args.lr,
        loss_variant: match args.loss {
            LossArg::PositiveLogloss => LossVariant::PositiveLogloss,
            LossArg::FullBce => LossVariant::FullBce,
        },
    };
    let run = pcgrad_f3i_run(&x, &labels, &split, &args.run.config(500), &jcfg)?;
    let mut manifest = RunManifest::new("joint", snapshot(args)?, args.run.seed);
    manifest.inputs = vec![args.features.clone(), args.labels.clone()];
    let last = run.epochs.last().expect("at least one epoch");
    let metrics = Metrics {
        auc: last.test_auc,
        t_final: Some(last.alphas.len()),
        stop_reason: Some(last.stop_reason),
        manifest: MANIFEST_FILE.into(),
        ..Metrics::default()
    };
    #[derive(Serialize)]
    struct Model<'a> {
        omega: &'a [f64],
        bias: f64,
        test_rows: &'a [usize],
        manifest: &'a str,
    }
    write_matrix(&out.join("imputed.csv"), &run.imputed, Some(&header))?;
    write_json(
        &out.join("model.json"),
        &Model {
            omega: &run.classifier.omega,
            bias: run.classifier.bias,
            test_rows: &split.test,
            manifest: MANIFEST_FILE,
        },
    )?;
    write_json(&out.join("metrics.json"), &metrics)?;
    manifest.outputs = ["imputed.csv", "model.json", "metrics.json"].iter().map(|f| out.join(f)).collect();
    finish(manifest, out, started)
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| 0),
        Command::Impute(a) => with_jobs(a.run.jobs, || cmd_impute(a))?.map(|_| 0),
        Command::Validate(a) => cmd_validate(a).map(|(_, ok)| if ok { 0 } else { 1 }),
        Command::Joint(a) => with_jobs(a.run.jobs, || cmd_joint(a))?.map(|_| 0),
    }
}
