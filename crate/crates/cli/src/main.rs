//! `tcpx` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 internal invariant violation.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tcpx::dataset::{
    emit_csv, generate_synthetic, make_experiment_split, parse_csv, BuildId, Dataset, IngestOptions, MissingPolicy,
    SyntheticConfig,
};
use tcpx::explain::{explain_many, explanations_to_csv, BackgroundSet, Explanation};
use tcpx::gbdt::{rank_build, LtrModel};
use tcpx::pipeline::{
    emit_report, explanation_drift, importance_timeline, rank_trajectory, run_experiment, sweep_builds,
    train_for_build, write_atomic, ExperimentConfig, LabelSource, ReportFormat, Selection, TrainedBuild,
};
use tcpx::similarity::pairwise_similarity_with;
use tcpx::Parallelism;

#[derive(Parser)]
#[command(name = "tcpx", version, about = "Learning-to-rank test prioritisation with explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum Source {
    Labels,
    Models,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// key=value experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run on a single thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and write it back in canonical form.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Fail on missing feature values instead of imputing 0.
        #[arg(long)]
        reject_missing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// key=value generator config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model for a target build and write it as JSON.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        build: BuildId,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the tests of a build.
    Rank {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        build: BuildId,
        /// Model JSON from `train`; trains one when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Break Down explanations for tests of a build.
    Explain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        build: BuildId,
        /// Test ids, comma separated or repeated.
        #[arg(long = "test", value_delimiter = ',', required = true)]
        tests: Vec<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Pairwise explanation similarity within a build.
    Similarity {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        build: BuildId,
        /// Test ids; every test of the build when omitted.
        #[arg(long = "test", value_delimiter = ',')]
        tests: Vec<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train, rank, explain and compare for one build.
    Experiment {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        build: BuildId,
        /// Explain these tests instead of the default selection.
        #[arg(long = "test", value_delimiter = ',')]
        tests: Vec<String>,
        /// Explain every test of the build.
        #[arg(long, conflicts_with = "tests")]
        all: bool,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run an experiment for every failed build with enough history.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Relative ranking positions of frequently executed tests across builds.
    Trajectory {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = Source::Labels)]
        source: Source,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Global importance of periodically retrained models.
    Timeline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Train on only the last N builds at each point.
        #[arg(long)]
        window: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Explanations of one test across builds.
    Drift {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        test: String,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
}

/// Bad flags or files the user controls; exit code 1.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<tcpx::Error>() {
            return if e.is_config() {
                1
            } else if e.is_invariant() {
                3
            } else {
                2
            };
        }
    }
    2
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_dataset(args: &DataArgs, missing: MissingPolicy) -> Result<Dataset> {
    let file = File::open(&args.data).map_err(|e| tcpx::Error::Io {
        path: args.data.clone(),
        source: e,
    })?;
    let ds = parse_csv(BufReader::new(file), IngestOptions { missing })
        .with_context(|| format!("reading {}", args.data.display()))?;
    if !ds.imputed.is_empty() {
        log::warn!("{}: imputed {} missing value(s) with 0", args.data.display(), ds.imputed.len());
    }
    Ok(ds)
}

fn load_config(run: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &run.config {
        Some(p) => ExperimentConfig::from_kv_text(&read_text(p, "config")?)
            .with_context(|| format!("config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = run.seed {
        cfg = cfg.with_seed(seed);
    }
    if run.sequential {
        cfg.parallelism = Parallelism::Sequential;
    }
    Ok(cfg)
}

/// Model from `path` if given, otherwise trained for `build`.
fn trained(ds: &Dataset, build: BuildId, model: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<TrainedBuild> {
    match model {
        Some(path) => {
            let model = LtrModel::from_json(&read_text(path, "model")?)
                .with_context(|| format!("model {}", path.display()))?;
            model.check_schema(&ds.schema)?;
            Ok(TrainedBuild {
                split: make_experiment_split(ds, build)?,
                model,
            })
        }
        None => Ok(train_for_build(ds, build, cfg, cfg.parallelism)?),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes `bytes` as `dir/name`, or to stdout without a directory.
fn deliver(out: &Option<PathBuf>, name: &str, bytes: &[u8]) -> Result<()> {
    match out {
        Some(dir) => {
            let path = dir.join(name);
            write_atomic(&path, bytes)?;
            log::info!("wrote {}", path.display());
        }
        None => std::io::stdout().lock().write_all(bytes).context("writing stdout")?,
    }
    Ok(())
}

/// Emits `value` as `<stem>.json` or the CSV from `csv` as `<stem>.csv`.
fn emit<T: Serialize>(out: &OutArgs, stem: &str, value: &T, csv: impl FnOnce() -> tcpx::Result<String>) -> Result<()> {
    match out.format {
        Format::Json => deliver(&out.out, &format!("{stem}.json"), &json_bytes(value)?),
        Format::Csv => deliver(&out.out, &format!("{stem}.csv"), csv()?.as_bytes()),
    }
}

fn explain_tests(t: &TrainedBuild, ids: &[String], cfg: &ExperimentConfig) -> Result<Vec<Explanation>> {
    let bg = BackgroundSet::from_builds(&t.split.train, t.split.schema.len(), cfg.background_max_rows, cfg.seed())?;
    let records = ids
        .iter()
        .map(|id| t.split.test.record(id).ok_or_else(|| tcpx::Error::UnknownTest(id.clone())))
        .collect::<tcpx::Result<Vec<_>>>()?;
    Ok(explain_many(&t.model, &bg, &records, cfg.parallelism)?)
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    builds: usize,
    records: usize,
    features: &'a [String],
    schema_digest: String,
    failed_builds: usize,
    imputed: &'a [tcpx::dataset::ImputedCell],
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { data, reject_missing, out } => {
            let policy = if reject_missing { MissingPolicy::Reject } else { MissingPolicy::ImputeZero };
            let ds = load_dataset(&data, policy)?;
            let mut csv = Vec::new();
            emit_csv(&ds, &mut csv)?;
            deliver(&out, "dataset.csv", &csv)?;
            if out.is_some() {
                let summary = IngestSummary {
                    builds: ds.m(),
                    records: ds.n_records(),
                    features: ds.schema.names(),
                    schema_digest: ds.schema.digest(),
                    failed_builds: ds.builds.iter().filter(|b| b.has_failures()).count(),
                    imputed: &ds.imputed,
                };
                deliver(&out, "ingest.json", &json_bytes(&summary)?)?;
            }
        }
        Command::Synth { config, seed, out } => {
            let cfg = match &config {
                Some(p) => SyntheticConfig::from_kv_text(&read_text(p, "config")?)
                    .with_context(|| format!("config {}", p.display()))?,
                None => SyntheticConfig::new(50, 40, 10),
            };
            let ds = generate_synthetic(&cfg, seed.unwrap_or(cfg.seed))?;
            let mut csv = Vec::new();
            emit_csv(&ds, &mut csv)?;
            deliver(&out, "dataset.csv", &csv)?;
        }
        Command::Train { data, build, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let t = train_for_build(&ds, build, &cfg, cfg.parallelism)?;
            deliver(&out, "model.json", format!("{}\n", t.model.to_json()?).as_bytes())?;
        }
        Command::Rank { data, build, model, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let t = trained(&ds, build, &model, &cfg)?;
            let ranking = rank_build(&t.model, &t.split.test)?;
            emit(&out, "ranking", &ranking, || ranking.to_csv())?;
        }
        Command::Explain { data, build, tests, model, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let t = trained(&ds, build, &model, &cfg)?;
            let es = explain_tests(&t, &tests, &cfg)?;
            emit(&out, "explanations", &es, || explanations_to_csv(&es))?;
        }
        Command::Similarity { data, build, tests, model, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let t = trained(&ds, build, &model, &cfg)?;
            let ranking = rank_build(&t.model, &t.split.test)?;
            let ids: Vec<String> = if tests.is_empty() {
                ranking.test_ids().map(str::to_string).collect()
            } else {
                tests
            };
            let es = explain_tests(&t, &ids, &cfg)?;
            let m = pairwise_similarity_with(&es, &ranking, Some(&ids), cfg.parallelism)?;
            emit(&out, "similarity", &m, || m.to_csv())?;
        }
        Command::Experiment { data, build, tests, all, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let selection = if all {
                Selection::All
            } else if tests.is_empty() {
                Selection::Default
            } else {
                Selection::Tests(tests)
            };
            let report = run_experiment(&ds, build, &cfg, &selection)?;
            match (&out.out, out.format) {
                (Some(dir), format) => {
                    emit_report(&report, format.into(), dir)?;
                }
                (None, Format::Json) => deliver(&None, "", &json_bytes(&report)?)?,
                (None, Format::Csv) => return Err(usage("--format csv writes a bundle and needs --out")),
            }
        }
        Command::Sweep { data, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let table = sweep_builds(&ds, &cfg)?;
            emit(&out, "sweep", &table, || table.to_csv())?;
        }
        Command::Trajectory { data, source, top_n, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let source = match source {
                Source::Labels => LabelSource::TrueLabels,
                Source::Models => LabelSource::Models,
            };
            let table = rank_trajectory(&ds, source, top_n, &cfg)?;
            emit(&out, "trajectory", &table, || table.to_csv())?;
        }
        Command::Timeline { data, stride, window, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let timeline = importance_timeline(&ds, stride, window, &cfg)?;
            emit(&out, "timeline", &timeline, || timeline.to_csv())?;
        }
        Command::Drift { data, test, run, out } => {
            let ds = load_dataset(&data, MissingPolicy::ImputeZero)?;
            let cfg = load_config(&run)?;
            let series = explanation_drift(&ds, &test, &cfg)?;
            emit(&out, "drift", &series, || series.to_csv())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
