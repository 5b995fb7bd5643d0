//! Batch front end: every command reads an [`ExperimentConfig`], writes its
//! outputs under the output directory and leaves a JSON manifest behind.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use adherence_core::analytics;
use adherence_core::evaluate::{self, CvReport};
use adherence_core::features::{self, TabularDataset, Variant};
use adherence_core::ingest::{self, CleanseReport, DatabasePaths, RawDatabase};
use adherence_core::learn::{self, ModelFile, ModelKind};
use adherence_core::resample::{self, ResampleConfig, ResampleMethod};
use adherence_core::seed::derive_seed;
use adherence_core::session::{self, WindowSample};
use adherence_core::synth;
use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

pub use config::{ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: adherence_core::Error,
    },
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage { source: adherence_core::Error::InvalidConfig(_), .. } => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

fn at(stage: &'static str) -> impl FnOnce(adherence_core::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

fn io_at(stage: &'static str) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Stage { stage, source: e.into() }
}

#[derive(Debug, Parser)]
#[command(name = "adherence", version, about = "Adherence prediction pipeline")]
pub struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset variant, D0 to D6.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// majority, knn, tree, forest, gbt, mlp or ensemble.
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    /// random, smote, adasyn or none.
    #[arg(long, global = true)]
    pub resampler: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = "ADHERENCE_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic database.
    Generate,
    /// Parse a database and report rejected rows.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Cleanse, sessionize and emit window and variant datasets.
    Build {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Descriptive reports for a database and/or dataset.
    Stats {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation.
    Cv {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Fit on a whole dataset and save the model.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to `<out>/model.json`.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Score a feature CSV with a saved model.
    Predict {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to `<out>/predictions.csv`.
        #[arg(long)]
        predictions_out: Option<PathBuf>,
    },
}

fn parse_resampler(s: &str) -> Result<Option<ResampleMethod>, CliError> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e: adherence_core::Error| CliError::Usage(e.to_string()))
}

impl Cli {
    /// Config file (or defaults) with flag overrides applied and validated.
    pub fn resolve_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let overrides = Overrides {
            seed: self.seed,
            variant: self.variant,
            model: self.model,
            resampler: self.resampler.as_deref().map(parse_resampler).transpose()?,
            out: self.out.clone(),
        };
        cfg.apply(&overrides);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where a command takes its rows from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Dataset(PathBuf),
    Database(PathBuf),
    /// A database generated in memory from the synth settings.
    Synthetic,
}

impl Source {
    /// Explicit flags first, then config inputs, then the generator.
    pub fn resolve(cfg: &ExperimentConfig, input: Option<&Path>, dataset: Option<&Path>) -> Self {
        if let Some(d) = dataset {
            Source::Dataset(d.to_path_buf())
        } else if let Some(i) = input {
            Source::Database(i.to_path_buf())
        } else if let Some(d) = &cfg.input.dataset {
            Source::Dataset(d.clone())
        } else if let Some(i) = &cfg.input.database {
            Source::Database(i.clone())
        } else {
            Source::Synthetic
        }
    }

    fn describe(&self) -> String {
        match self {
            Source::Dataset(p) => format!("dataset:{}", p.display()),
            Source::Database(p) => format!("database:{}", p.display()),
            Source::Synthetic => "synthetic".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub artifact_version: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputFile>,
    pub summary: serde_json::Value,
}

struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    fn create(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let root = cfg.out_dir();
        fs::create_dir_all(&root).map_err(io_at("output"))?;
        Ok(Self { root, written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }

    fn record(&mut self, p: &Path) {
        self.written.push(p.to_path_buf());
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| at("output")(e.into()))?;
        text.push('\n');
        let p = self.path(name);
        fs::write(p, text).map_err(io_at("output"))
    }

    fn finish(
        mut self,
        command: &str,
        cfg: &ExperimentConfig,
        inputs: Vec<String>,
        summary: serde_json::Value,
    ) -> Result<Manifest, CliError> {
        let mut outputs = Vec::new();
        self.written.sort();
        self.written.dedup();
        for p in &self.written {
            let bytes = fs::metadata(p).map_err(io_at("output"))?.len();
            let file = p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/");
            outputs.push(OutputFile { file, bytes });
        }
        let mut config = cfg.clone();
        config.out_dir = None;
        let manifest = Manifest {
            command: command.into(),
            artifact_version: adherence_core::ARTIFACT_VERSION.into(),
            seed: cfg.seed,
            inputs,
            config,
            outputs,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| at("output")(e.into()))?;
        text.push('\n');
        fs::write(self.root.join(format!("{command}.manifest.json")), text).map_err(io_at("output"))?;
        Ok(manifest)
    }
}

fn load_database(dir: &Path) -> Result<RawDatabase, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("database directory {} does not exist", dir.display())));
    }
    let db = ingest::parse_database(&DatabasePaths::in_dir(dir)).map_err(at("ingest"))?;
    for w in &db.warnings {
        warn!("{w}");
    }
    if !db.rejects.is_empty() {
        warn!("{} rows rejected while parsing {}", db.rejects.len(), dir.display());
    }
    Ok(db)
}

fn source_database(cfg: &ExperimentConfig, source: &Source) -> Result<Option<RawDatabase>, CliError> {
    match source {
        Source::Dataset(_) => Ok(None),
        Source::Database(dir) => load_database(dir).map(Some),
        Source::Synthetic => synth::generate(&cfg.synth).map(Some).map_err(at("generate")),
    }
}

/// Cleansed database, its window samples and the requested variant.
struct Built {
    db: RawDatabase,
    report: CleanseReport,
    windows: Vec<WindowSample>,
}

fn build_from(db: RawDatabase, cfg: &ExperimentConfig) -> Built {
    let (db, report) = ingest::cleanse(db);
    let windows = session::window_samples(&db, cfg.build.last_date_rounding);
    Built { db, report, windows }
}

fn load_dataset(cfg: &ExperimentConfig, source: &Source) -> Result<TabularDataset, CliError> {
    let ds = match source {
        Source::Dataset(p) => {
            if !p.exists() {
                return Err(CliError::Usage(format!("dataset {} does not exist", p.display())));
            }
            features::read_dataset(p).map_err(at("dataset"))?
        }
        _ => {
            let db = source_database(cfg, source)?.expect("database source");
            let built = build_from(db, cfg);
            features::build_variant(&built.windows, &built.db.profiles, cfg.variant).map_err(at("build"))?
        }
    };
    info!("{} rows x {} columns from {}", ds.n_rows(), ds.n_cols(), source.describe());
    Ok(ds)
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    let mut out = OutDir::create(cfg)?;
    let db_dir = out.root.join("database");
    let paths = synth::generate_to_dir(&cfg.synth, &db_dir).map_err(at("generate"))?;
    for p in paths.all() {
        out.record(&p);
    }
    let db = ingest::parse_database(&paths).map_err(at("generate"))?;
    let summary = json!({
        "users": db.profiles.len(),
        "events": db.events.len(),
        "database": "database",
    });
    out.finish("generate", cfg, vec!["synthetic".into()], summary)
}

pub fn cmd_ingest(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<Manifest, CliError> {
    let dir = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.input.database.clone())
        .ok_or_else(|| CliError::Usage("ingest needs --input or input.database".into()))?;
    let db = load_database(&dir)?;
    let mut out = OutDir::create(cfg)?;
    ingest::write_rejects(&db.rejects, &out.path("rejects.csv")).map_err(at("ingest"))?;
    let summary = json!({
        "users": db.profiles.len(),
        "events": db.events.len(),
        "rejects": db.rejects.len(),
        "warnings": db.warnings,
    });
    out.finish("ingest", cfg, vec![dir.display().to_string()], summary)
}

pub fn cmd_build(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<Manifest, CliError> {
    let source = match Source::resolve(cfg, input, None) {
        Source::Dataset(_) => Source::resolve(&ExperimentConfig { input: Default::default(), ..cfg.clone() }, None, None),
        s => s,
    };
    let db = source_database(cfg, &source)?.expect("database source");
    let mut out = OutDir::create(cfg)?;
    ingest::write_rejects(&db.rejects, &out.path("rejects.csv")).map_err(at("ingest"))?;
    let rejects = db.rejects.len();
    let built = build_from(db, cfg);
    built.report.write_csv(&out.path("cleanse_report.csv")).map_err(at("cleanse"))?;
    session::write_windows_csv(&built.windows, &out.path("windows.csv")).map_err(at("sessionize"))?;
    if built.windows.is_empty() {
        warn!("no window samples; datasets will be empty");
    }
    let mut datasets = serde_json::Map::new();
    for &v in &cfg.build.variants {
        let ds = features::build_variant(&built.windows, &built.db.profiles, v).map_err(at("build"))?;
        let path = out.path(&format!("dataset_{v}.csv"));
        features::write_dataset(&ds, &path, None).map_err(at("build"))?;
        out.record(&features::meta_path(&path));
        let [neg, pos] = ds.class_counts();
        datasets.insert(
            v.to_string(),
            json!({ "rows": ds.n_rows(), "feature_columns": ds.n_cols(), "negatives": neg, "positives": pos }),
        );
    }
    let summary = json!({
        "rejects": rejects,
        "input_users": built.report.input_users,
        "retained_users": built.report.retained_users,
        "windows": built.windows.len(),
        "datasets": datasets,
    });
    out.finish("build", cfg, vec![source.describe()], summary)
}

pub fn cmd_stats(cfg: &ExperimentConfig, input: Option<&Path>, dataset: Option<&Path>) -> Result<Manifest, CliError> {
    let source = Source::resolve(cfg, input, dataset);
    let mut out = OutDir::create(cfg)?;
    let mut summary = serde_json::Map::new();
    let mut inputs = vec![source.describe()];
    let mut ds = match &source {
        Source::Dataset(_) => Some(load_dataset(cfg, &source)?),
        _ => None,
    };
    // a database is described even when a dataset is also given
    let db_source = match (input, &cfg.input.database, &source) {
        (Some(i), _, _) => Some(Source::Database(i.to_path_buf())),
        (None, Some(d), _) => Some(Source::Database(d.clone())),
        (None, None, Source::Synthetic) => Some(Source::Synthetic),
        _ => None,
    };
    if let Some(dbs) = db_source {
        if !inputs.contains(&dbs.describe()) {
            inputs.push(dbs.describe());
        }
        let db = source_database(cfg, &dbs)?.expect("database source");
        let built = build_from(db, cfg);
        let profiles = built.db.profiles.values();

        let nulls = analytics::null_rates(profiles.clone());
        analytics::write_null_rates_csv(&nulls, &out.path("null_rates.csv")).map_err(at("stats"))?;
        out.write_json("null_rates.json", &nulls)?;

        let alphas = analytics::questionnaire_alphas(profiles.clone());
        analytics::write_alpha_csv(&alphas, &out.path("alpha.csv")).map_err(at("stats"))?;
        out.write_json("alpha.json", &alphas)?;
        summary.insert("alpha_rows".into(), json!(alphas.len()));

        match analytics::demographic_summary(profiles) {
            Ok(rows) => {
                analytics::write_demographics_csv(&rows, &out.path("demographics.csv")).map_err(at("stats"))?;
                out.write_json("demographics.json", &rows)?;
            }
            Err(e) => warn!("demographic summary skipped: {e}"),
        }
        match analytics::acquisition_distribution(&built.windows, cfg.stats.bin_width) {
            Ok(stats) => {
                analytics::write_histogram_csv(&stats.histogram, &out.path("acquisition_histogram.csv"))
                    .map_err(at("stats"))?;
                out.write_json("acquisition_stats.json", &stats)?;
                summary.insert("mean_window_sum".into(), json!(stats.mean));
            }
            Err(e) => warn!("acquisition distribution skipped: {e}"),
        }
        summary.insert("retained_users".into(), json!(built.report.retained_users));
        if ds.is_none() {
            ds = Some(
                features::build_variant(&built.windows, &built.db.profiles, cfg.variant).map_err(at("build"))?,
            );
        }
    }
    if let Some(ds) = ds {
        match analytics::session_correlation_matrix(&ds) {
            Ok(m) => {
                m.write_csv(&out.path("correlation.csv")).map_err(at("stats"))?;
                out.write_json("correlation.json", &m)?;
            }
            Err(e) => warn!("correlation matrix skipped: {e}"),
        }
        let mut dup = analytics::duplicate_analysis(&ds);
        dup.write_histogram_csv(&out.path("duplicates_histogram.csv")).map_err(at("stats"))?;
        dup.groups.truncate(cfg.stats.top_duplicates);
        out.write_json("duplicates.json", &dup)?;
        summary.insert("dataset_rows".into(), json!(ds.n_rows()));
        summary.insert("distinct_tuples".into(), json!(dup.n_distinct));
    }
    out.finish("stats", cfg, inputs, serde_json::Value::Object(summary))
}

pub fn cmd_cv(cfg: &ExperimentConfig, input: Option<&Path>, dataset: Option<&Path>) -> Result<CvReport, CliError> {
    let source = Source::resolve(cfg, input, dataset);
    let ds = load_dataset(cfg, &source)?;
    let report = evaluate::cross_validate(
        &ds,
        &cfg.model,
        cfg.resampler.as_ref(),
        cfg.cv.preprocess,
        cfg.cv.k,
        cfg.seed,
    )
    .map_err(at("cv"))?;
    for w in &report.warnings {
        warn!("{w}");
    }
    let mut out = OutDir::create(cfg)?;
    report.write_json(&out.path("cv_report.json")).map_err(at("cv"))?;
    report.write_csv(&out.path("cv_report.csv")).map_err(at("cv"))?;
    let summary = json!({
        "pooled_score": report.pooled.score,
        "pooled_accuracy": report.pooled.accuracy,
        "macro_score": report.macro_avg.score,
        "baseline_accuracy": report.baseline.accuracy,
    });
    out.finish("cv", cfg, vec![source.describe()], summary)?;
    Ok(report)
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    input: Option<&Path>,
    dataset: Option<&Path>,
    model_out: Option<&Path>,
) -> Result<Manifest, CliError> {
    let source = Source::resolve(cfg, input, dataset);
    let ds = load_dataset(cfg, &source)?;
    let (state, train) = match cfg.cv.preprocess {
        evaluate::PreprocessPolicy::FitPerFold => {
            let st = features::fit_preprocess(&ds).map_err(at("preprocess"))?;
            let t = features::transform(&ds, &st).map_err(at("preprocess"))?;
            (Some(st), t)
        }
        evaluate::PreprocessPolicy::None => (None, ds),
    };
    let fit_set = match &cfg.resampler {
        Some(r) => {
            let rc = ResampleConfig { seed: derive_seed(cfg.seed, "train.resample", 0), ..r.clone() };
            resample::resample(&train, &rc).map_err(at("resample"))?
        }
        None => train,
    };
    let model_cfg = cfg.model.with_seed(derive_seed(cfg.seed, "train.model", 0));
    let model = learn::fit(&model_cfg, &fit_set).map_err(at("train"))?;
    let mut out = OutDir::create(cfg)?;
    let path = match model_out {
        Some(p) => {
            out.record(p);
            p.to_path_buf()
        }
        None => out.path("model.json"),
    };
    model.save_with(&path, state.as_ref()).map_err(at("train"))?;
    let mut summary = json!({
        "kind": model.kind(),
        "training_rows": fit_set.n_rows(),
        "columns": model.columns.len(),
    });
    if let Ok(imp) = model.feature_importance() {
        let rows: Vec<_> = model.columns.iter().zip(&imp).map(|(c, v)| json!({"feature": c, "importance": v})).collect();
        out.write_json("feature_importance.json", &rows)?;
        let p = out.path("feature_importance.csv");
        write_importance_csv(&p, &model.columns, &imp).map_err(at("train"))?;
        summary["top_feature"] = json!(top_feature(&model.columns, &imp));
    }
    out.finish("train", cfg, vec![source.describe()], summary)
}

fn top_feature<'a>(columns: &'a [String], imp: &[f64]) -> Option<&'a str> {
    imp.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| columns[i].as_str())
}

fn write_importance_csv(path: &Path, columns: &[String], imp: &[f64]) -> adherence_core::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature", "importance"])?;
    for (c, v) in columns.iter().zip(imp) {
        w.write_record([c.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Probability of class 1 and the decided label for each row of `dataset`.
pub fn cmd_predict(
    cfg: &ExperimentConfig,
    model_file: &Path,
    dataset: &Path,
    predictions_out: Option<&Path>,
) -> Result<Manifest, CliError> {
    let file = ModelFile::read(model_file).map_err(at("predict"))?;
    let table = features::read_features_csv(dataset).map_err(at("predict"))?;
    let n = table.view().n_rows();
    let rows = match &file.preprocess {
        Some(st) => {
            let ds = TabularDataset::new(table.columns.clone(), table.data.clone(), vec![0; n], st.n_dynamic)
                .map_err(at("predict"))?;
            features::transform(&ds, st).map_err(at("predict"))?.data
        }
        None => table.data.clone(),
    };
    let view = features::FeatureView { columns: &table.columns, data: &rows };
    let proba = file.model.predict_proba(view).map_err(at("predict"))?;
    let mut out = OutDir::create(cfg)?;
    let path = match predictions_out {
        Some(p) => {
            out.record(p);
            p.to_path_buf()
        }
        None => out.path("predictions.csv"),
    };
    write_predictions(&path, &proba).map_err(at("predict"))?;
    let high = proba.iter().filter(|p| learn::classify(**p) == 1).count();
    let summary = json!({ "rows": n, "predicted_high": high });
    out.finish(
        "predict",
        cfg,
        vec![model_file.display().to_string(), dataset.display().to_string()],
        summary,
    )
}

fn write_predictions(path: &Path, proba: &[[f64; 2]]) -> adherence_core::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row_id", "p_high", "label"])?;
    for (i, p) in proba.iter().enumerate() {
        w.write_record([i.to_string(), p[1].to_string(), learn::classify(*p).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg).map(drop),
        Command::Ingest { input } => cmd_ingest(&cfg, input.as_deref()).map(drop),
        Command::Build { input } => cmd_build(&cfg, input.as_deref()).map(drop),
        Command::Stats { input, dataset } => cmd_stats(&cfg, input.as_deref(), dataset.as_deref()).map(drop),
        Command::Cv { input, dataset } => cmd_cv(&cfg, input.as_deref(), dataset.as_deref()).map(|r| {
            let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
            println!(
                "pooled score {} accuracy {:.4} | macro score {} | baseline accuracy {:.4}",
                fmt(r.pooled.score),
                r.pooled.accuracy,
                fmt(r.macro_avg.score),
                r.baseline.accuracy
            );
        }),
        Command::Train { input, dataset, model_out } => {
            cmd_train(&cfg, input.as_deref(), dataset.as_deref(), model_out.as_deref()).map(drop)
        }
        Command::Predict { model_file, dataset, predictions_out } => {
            cmd_predict(&cfg, model_file, dataset, predictions_out.as_deref()).map(drop)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
