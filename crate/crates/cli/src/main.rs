//! Command-line driver: generate vessel phantoms, extract features, run
//! cross-validated approaches, and summarize results.
//!
//! Every command is deterministic given its configuration file, and
//! `reproduce` re-derives all scores and reports from a dataset manifest.
//! Exit codes: 0 on success, 2 for configuration problems, 3 for data
//! problems.

use clap::{Args, Parser, Subcommand};
use plaqkit::config::{
    self, ConfigError, ExperimentConfig, ExperimentError,
};
use plaqkit::eval::{self, MetricsRow};
use plaqkit::phantom::{self, PhantomError};
use plaqkit::pipeline::{
    self, ApproachConfig, ApproachKind, CrossvalOutcome, PipelineError, ScoreRow, Target,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
enum CliError {
    /// Configuration problems: exit code 2.
    Config(String),
    /// Data problems (missing or malformed inputs): exit code 3.
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::BadConfig(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => c.into(),
            ExperimentError::Pipeline(p) => p.into(),
        }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::BadSpec(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn parse_target(s: &str) -> Result<Target, String> {
    Target::parse(s).ok_or_else(|| format!("unknown target {s:?}; use stenosis50 or revasc"))
}

fn parse_approach(s: &str) -> Result<ApproachKind, String> {
    ApproachKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = ApproachKind::ALL.iter().map(|a| a.as_str()).collect();
        format!("unknown approach {s:?}; choose from {}", names.join(", "))
    })
}

#[derive(Parser)]
#[command(
    name = "plaqkit",
    version,
    about = "Synthetic coronary plaque experiments: phantoms, features, cross-validated models, reports"
)]
struct Cli {
    /// Worker threads for patient-level work; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic vessel dataset and write its manifest.
    Phantom(CommonArgs),
    /// Extract per-lesion radiomic features from a generated dataset.
    Features(FeaturesArgs),
    /// Cross-validate the configured approaches on a generated dataset.
    Crossval(CrossvalArgs),
    /// Summarize score files into one comparison table.
    Report(ReportArgs),
    /// Re-derive all scores and reports, for both targets, from a dataset
    /// manifest.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for dataset generation and training, overriding the
    /// configured ones.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Approach whose radiomics configuration drives the extraction;
    /// defaults to the first configured approach.
    #[arg(long, value_parser = parse_approach)]
    approach: Option<ApproachKind>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Run only this approach.
    #[arg(long, value_parser = parse_approach)]
    approach: Option<ApproachKind>,
    /// Prediction target, overriding the configured one.
    #[arg(long, value_parser = parse_target)]
    target: Option<Target>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Prediction target the score files belong to.
    #[arg(long, value_parser = parse_target)]
    target: Option<Target>,
    /// Score files to summarize; defaults to the configured approaches'
    /// score files under the output directory.
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset manifest to reproduce from; defaults to
    /// `<out>/dataset/manifest.toml`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Phantom(args) => cmd_phantom(&load(&args)?),
        Command::Features(args) => cmd_features(&load(&args.common)?, args.approach),
        Command::Crossval(args) => {
            let mut cfg = load(&args.common)?;
            if let Some(t) = args.target {
                cfg.target = t;
            }
            if let Some(kind) = args.approach {
                cfg.approaches.retain(|a| a.variant == kind);
                if cfg.approaches.is_empty() {
                    return Err(CliError::Config(format!(
                        "approach {} is not in the configuration",
                        kind.as_str()
                    )));
                }
            }
            cmd_crossval(&cfg)
        }
        Command::Report(args) => {
            let mut cfg = load(&args.common)?;
            if let Some(t) = args.target {
                cfg.target = t;
            }
            cmd_report(&cfg, &args.files)
        }
        Command::Reproduce(args) => {
            let cfg = load(&args.common)?;
            let manifest = args
                .manifest
                .unwrap_or_else(|| dataset_dir(&cfg).join("manifest.toml"));
            cmd_reproduce(cfg, &manifest)
        }
    }
}

/// Loads the experiment configuration and applies the shared overrides.
/// The seed override steers both phantom generation and training so one
/// flag re-seeds the whole experiment.
fn load(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => config::load_experiment(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
        cfg.phantom.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("dataset")
}

fn target_dir(cfg: &ExperimentConfig, target: Target) -> PathBuf {
    cfg.out_dir.join(target.as_str())
}

fn scores_path(cfg: &ExperimentConfig, target: Target, kind: ApproachKind) -> PathBuf {
    target_dir(cfg, target).join(format!("scores_{}.csv", kind.as_str()))
}

fn cmd_phantom(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let root = dataset_dir(cfg);
    phantom::write_dataset(&cfg.phantom, &root)?;
    println!(
        "dataset: {} ({} patients)",
        root.display(),
        cfg.phantom.n_patients
    );
    Ok(())
}

/// Reads the manifest of the dataset a command consumes. Commands trust
/// the manifest over the configuration so results always describe the
/// on-disk dataset.
fn read_dataset_spec(cfg: &ExperimentConfig) -> Result<phantom::PhantomSpec, CliError> {
    let path = dataset_dir(cfg).join("manifest.toml");
    if !path.exists() {
        return Err(CliError::Data(format!(
            "no dataset manifest at {}; run the phantom command first",
            path.display()
        )));
    }
    Ok(phantom::read_manifest(&path)?)
}

fn cmd_features(
    cfg: &ExperimentConfig,
    approach: Option<ApproachKind>,
) -> Result<(), CliError> {
    let spec = read_dataset_spec(cfg)?;
    let chosen = match approach {
        Some(kind) => cfg
            .approaches
            .iter()
            .find(|a| a.variant == kind)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "approach {} is not in the configuration",
                    kind.as_str()
                ))
            })?,
        None => &cfg.approaches[0],
    };
    let rad = &chosen.radiomics;
    let names = plaqkit::radiomics::feature_names(rad);
    let mut out = String::new();
    writeln!(out, "patient,segment,{}", names.join(",")).expect("string write");
    let mut lesions = 0usize;
    for i in 0..spec.n_patients {
        let dir = dataset_dir(cfg).join(spec.patient_id(i));
        let data = phantom::read_patient(&dir)?;
        let rows = pipeline::patient_feature_rows(
            &data.volume,
            &data.wall,
            &data.plan.points_mm,
            &data.plan.records,
            rad,
        )?;
        for (record, row) in data.plan.records.iter().zip(&rows) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(
                out,
                "{},{},{}",
                record.patient,
                record.segment,
                cells.join(",")
            )
            .expect("string write");
            lesions += 1;
        }
    }
    let path = cfg.out_dir.join("features.csv");
    std::fs::write(&path, out)?;
    println!(
        "features: {} ({} lesions x {} features)",
        path.display(),
        lesions,
        names.len()
    );
    Ok(())
}

fn cmd_crossval(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = read_dataset_spec(cfg)?;
    let run_cfg = ExperimentConfig {
        phantom: spec,
        ..cfg.clone()
    };
    let outcomes = config::run_experiment(&run_cfg)?;
    write_target_outputs(&run_cfg, cfg.target, &outcomes)?;
    Ok(())
}

fn cmd_reproduce(cfg: ExperimentConfig, manifest: &Path) -> Result<(), CliError> {
    if !manifest.exists() {
        return Err(CliError::Data(format!(
            "no dataset manifest at {}",
            manifest.display()
        )));
    }
    let spec = phantom::read_manifest(manifest)?;
    // The manifest alone pins the data and the master seed; the
    // configuration only shapes approaches and fold count.
    let run_cfg = ExperimentConfig {
        master_seed: spec.master_seed,
        phantom: spec,
        ..cfg
    };
    let targets = [Target::Stenosis50, Target::Revascularization];
    let per_target = config::run_targets(&run_cfg, &targets)?;
    for (target, outcomes) in &per_target {
        write_target_outputs(&run_cfg, *target, outcomes)?;
    }
    Ok(())
}

/// Writes score files, per-approach metrics, and the comparison report for
/// one target's outcomes.
fn write_target_outputs(
    cfg: &ExperimentConfig,
    target: Target,
    outcomes: &[CrossvalOutcome],
) -> Result<(), CliError> {
    let dir = target_dir(cfg, target);
    std::fs::create_dir_all(&dir)?;
    let mut report_rows = Vec::new();
    for (outcome, approach_cfg) in outcomes.iter().zip(&cfg.approaches) {
        let scores = scores_path(cfg, target, outcome.approach);
        pipeline::write_scores(&scores, &outcome.rows)?;
        write_metrics_files(cfg, target, outcome, approach_cfg, &dir)?;
        println!(
            "{} {} pooled auc {:.4} -> {}",
            outcome.approach.as_str(),
            target.as_str(),
            outcome.pooled_auc,
            scores.display()
        );
        report_rows.push((
            outcome.approach.as_str().to_string(),
            pooled_metrics(&outcome.rows, cfg.threshold)?,
        ));
    }
    write_report_files(&dir, target, cfg.threshold, &report_rows)?;
    Ok(())
}

fn pooled_metrics(rows: &[ScoreRow], threshold: f64) -> Result<MetricsRow, CliError> {
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.target).collect();
    Ok(eval::metrics_row(&scores, &labels, threshold)?)
}

/// Per-approach metrics files: a CSV with pooled and per-fold rows, and a
/// text report carrying seeds, fold assignments, and the configuration
/// echo.
fn write_metrics_files(
    cfg: &ExperimentConfig,
    target: Target,
    outcome: &CrossvalOutcome,
    approach_cfg: &ApproachConfig,
    dir: &Path,
) -> Result<(), CliError> {
    let name = outcome.approach.as_str();
    let scores: Vec<f64> = outcome.rows.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = outcome.rows.iter().map(|r| r.target).collect();
    let folds: Vec<usize> = outcome.rows.iter().map(|r| r.fold).collect();
    let report = eval::metrics_report(&scores, &labels, &folds, cfg.threshold)?;

    let mut csv = String::new();
    writeln!(csv, "fold,{}", MetricsRow::NAMES.join(",")).expect("string write");
    let cells = |row: &MetricsRow| {
        row.values()
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(csv, "pooled,{}", cells(&report.pooled)).expect("string write");
    for (f, row) in report.per_fold.iter().enumerate() {
        if let Some(row) = row {
            writeln!(csv, "{f},{}", cells(row)).expect("string write");
        }
    }
    std::fs::write(dir.join(format!("metrics_{name}.csv")), csv)?;

    let mut fold_patients: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for r in &outcome.rows {
        let list = fold_patients.entry(r.fold).or_default();
        if !list.contains(&r.patient) {
            list.push(r.patient.clone());
        }
    }
    let mut txt = String::new();
    writeln!(txt, "approach: {name}").expect("string write");
    writeln!(txt, "target: {}", target.as_str()).expect("string write");
    writeln!(txt, "threshold: {}", cfg.threshold).expect("string write");
    writeln!(txt, "master_seed: {}", cfg.master_seed).expect("string write");
    writeln!(txt, "folds: {}", cfg.folds).expect("string write");
    writeln!(txt, "lesions: {}", outcome.rows.len()).expect("string write");
    writeln!(txt, "pooled: {}", render_row(&report.pooled)).expect("string write");
    for (f, row) in report.per_fold.iter().enumerate() {
        let seed = pipeline::fold_seed(cfg.master_seed, approach_cfg, target, f);
        let metrics = match row {
            Some(row) => render_row(row),
            None => "single-class test fold".to_string(),
        };
        let patients = fold_patients
            .get(&f)
            .map(|p| p.join(" "))
            .unwrap_or_default();
        writeln!(txt, "fold {f}: {metrics} | seed {seed} | test patients: {patients}")
            .expect("string write");
    }
    writeln!(txt, "\n# configuration echo").expect("string write");
    let echo = ExperimentConfig {
        approaches: vec![approach_cfg.clone()],
        target,
        ..cfg.clone()
    };
    txt.push_str(&echo.to_toml());
    std::fs::write(dir.join(format!("metrics_{name}.txt")), txt)?;
    Ok(())
}

fn render_row(row: &MetricsRow) -> String {
    MetricsRow::NAMES
        .iter()
        .zip(row.values())
        .map(|(n, v)| format!("{n} {v:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn write_report_files(
    dir: &Path,
    target: Target,
    threshold: f64,
    rows: &[(String, MetricsRow)],
) -> Result<(), CliError> {
    let mut csv = String::new();
    writeln!(csv, "approach,{}", MetricsRow::NAMES.join(",")).expect("string write");
    for (name, row) in rows {
        let cells: Vec<String> = row.values().iter().map(|v| format!("{v}")).collect();
        writeln!(csv, "{name},{}", cells.join(",")).expect("string write");
    }
    std::fs::write(dir.join("report.csv"), csv)?;

    let mut txt = String::new();
    writeln!(txt, "target: {}  threshold: {threshold}", target.as_str())
        .expect("string write");
    writeln!(txt, "{:<18}{}", "approach", format_header()).expect("string write");
    for (name, row) in rows {
        let cells: Vec<String> = row.values().iter().map(|v| format!("{v:<13.4}")).collect();
        writeln!(txt, "{name:<18}{}", cells.join("").trim_end()).expect("string write");
    }
    std::fs::write(dir.join("report.txt"), &txt)?;
    print!("{txt}");
    println!("report: {}", dir.join("report.csv").display());
    Ok(())
}

fn format_header() -> String {
    MetricsRow::NAMES
        .iter()
        .map(|n| format!("{n:<13}"))
        .collect::<Vec<_>>()
        .join("")
        .trim_end()
        .to_string()
}

fn cmd_report(cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<(), CliError> {
    let target = cfg.target;
    let sources: Vec<(String, PathBuf)> = if files.is_empty() {
        cfg.approaches
            .iter()
            .map(|a| {
                (
                    a.variant.as_str().to_string(),
                    scores_path(cfg, target, a.variant),
                )
            })
            .collect()
    } else {
        files
            .iter()
            .map(|f| {
                let stem = f
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let name = stem.strip_prefix("scores_").unwrap_or(&stem).to_string();
                (name, f.clone())
            })
            .collect()
    };
    let mut rows = Vec::new();
    for (name, path) in &sources {
        if !path.exists() {
            return Err(CliError::Data(format!(
                "no score file at {}; run the crossval command first",
                path.display()
            )));
        }
        let scores = pipeline::read_scores(path)?;
        rows.push((name.clone(), pooled_metrics(&scores, cfg.threshold)?));
    }
    let dir = target_dir(cfg, target);
    std::fs::create_dir_all(&dir)?;
    write_report_files(&dir, target, cfg.threshold, &rows)?;
    Ok(())
}
