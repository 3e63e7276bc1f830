//! Command-line orchestration: generate, layout, run, score, report.

pub mod cli;
pub mod run;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::{
    self, load_baselines, parse_predictions, read_metrics_csv, render_report, write_metrics_csv,
    Baseline, ConfusionMatrix, MetricsRow,
};
use crate::eventlog::{
    parse_dataset, write_variant_csv, write_variant_rows, DatasetFormat, EventLogError,
    LabeledVariant,
};
use crate::gateway::{ProviderError, RunStatus};
use crate::layout::{
    generate_synthetic, lay_out, layout_histogram, Distribution, LayoutError, LayoutSpec,
    SyntheticSpec,
};
use crate::rework::DetectPolicy;
use crate::rng::derive_seed;

pub use cli::{Cli, Command};
pub use run::{run_experiment, ExperimentConfig, ExperimentSummary, RunRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: EventLogError,
    },
    #[error("{0}")]
    Parse(String),
    #[error("provider: {0}")]
    Provider(String),
    #[error("{0}")]
    Internal(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Input { .. } | HarnessError::Parse(_) => 1,
            HarnessError::Provider(_) => 2,
            HarnessError::Internal(_) => 3,
        }
    }
}

impl From<LayoutError> for HarnessError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::Arrange(_) | LayoutError::Io(_) => HarnessError::Internal(e.to_string()),
            _ => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<ProviderError> for HarnessError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Provider(other.to_string()),
        }
    }
}

pub(crate) fn write_out(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Internal(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::Internal(format!("{}: {e}", path.display())))
}

pub(crate) fn read_in(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn to_json<T: serde::Serialize>(v: &T) -> Result<String, HarnessError> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| HarnessError::Internal(e.to_string()))
}

fn read_dataset(path: &Path) -> Result<crate::eventlog::LabeledDataset, HarnessError> {
    let text = read_in(path)?;
    parse_dataset(
        text.as_bytes(),
        DatasetFormat::VariantCsv,
        &path.display().to_string(),
    )
    .map_err(|source| HarnessError::Input {
        path: path.to_path_buf(),
        source,
    })
}

pub fn synthetic_spec(args: &cli::SyntheticArgs, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_normal: args.n_normal,
        n_anomalous: args.n_anomalous,
        alphabet_size: args.alphabet_size,
        len_range: (args.min_len, args.max_len),
        policy: DetectPolicy::tandem(args.min_unit_len),
        seed,
    }
}

/// Where the variants of an experiment came from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Dataset(PathBuf),
    Split { normals: PathBuf, anomalies: PathBuf },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn from_args(args: &cli::SourceArgs, seed: u64) -> Self {
        match (&args.dataset, &args.normals, &args.anomalies) {
            (Some(d), _, _) => DataSource::Dataset(d.clone()),
            (None, Some(n), Some(a)) => DataSource::Split {
                normals: n.clone(),
                anomalies: a.clone(),
            },
            _ => DataSource::Synthetic(synthetic_spec(&args.synthetic, seed)),
        }
    }

    /// Returns `(normals, anomalies, provenance)`.
    pub fn load(&self) -> Result<(Vec<LabeledVariant>, Vec<LabeledVariant>, String), HarnessError> {
        match self {
            DataSource::Dataset(p) => {
                let (n, a) = read_dataset(p)?.partition();
                Ok((n, a, p.display().to_string()))
            }
            DataSource::Split { normals, anomalies } => {
                let (n, _) = read_dataset(normals)?.partition();
                let (_, a) = read_dataset(anomalies)?.partition();
                Ok((n, a, format!("{} + {}", normals.display(), anomalies.display())))
            }
            DataSource::Synthetic(spec) => {
                let (n, a) = generate_synthetic(spec)?;
                Ok((n, a, format!("synthetic seed {}", spec.seed)))
            }
        }
    }
}

/// Layout seed for one distribution; `run` is set only when every repeat
/// gets its own layout.
pub fn layout_seed(seed: u64, kind: Distribution, run: Option<usize>) -> u64 {
    let base = derive_seed(seed, kind.stream_tag());
    match run {
        None => base,
        Some(r) => derive_seed(base, r as u64 + 1),
    }
}

pub fn cmd_generate(args: &cli::GenerateArgs) -> Result<(), HarnessError> {
    let spec = synthetic_spec(&args.synthetic, args.seed);
    let (normals, anomalies) = generate_synthetic(&spec)?;
    let mut buf = Vec::new();
    let csv = |items: &[LabeledVariant], buf: &mut Vec<u8>| {
        buf.clear();
        write_variant_rows(items, &mut *buf).map_err(|e| HarnessError::Internal(e.to_string()))
    };
    csv(&normals, &mut buf)?;
    write_out(&args.out.join("normals.csv"), &buf)?;
    csv(&anomalies, &mut buf)?;
    write_out(&args.out.join("anomalies.csv"), &buf)?;
    write_out(&args.out.join("synthetic.json"), to_json(&spec)?)?;
    println!(
        "wrote {} normal and {} rework variants to {}",
        normals.len(),
        anomalies.len(),
        args.out.display()
    );
    Ok(())
}

fn chosen<T: Copy>(picked: &[T], all: &[T]) -> Vec<T> {
    if picked.is_empty() {
        all.to_vec()
    } else {
        picked.to_vec()
    }
}

pub fn cmd_layout(args: &cli::LayoutArgs) -> Result<(), HarnessError> {
    let source = DataSource::from_args(&args.source, args.seed);
    let (normals, anomalies, provenance) = source.load()?;
    for kind in chosen(&args.distribution, &Distribution::ALL) {
        let spec = LayoutSpec::new(kind, layout_seed(args.seed, kind, None));
        let (ds, sidecar) = lay_out(&spec, &normals, &anomalies, &provenance)?;
        let dir = args.out.join(kind.as_str());
        let mut buf = Vec::new();
        write_variant_csv(&ds, &mut buf).map_err(|e| HarnessError::Internal(e.to_string()))?;
        write_out(&dir.join("dataset.csv"), &buf)?;
        write_out(&dir.join("layout.json"), to_json(&sidecar)?)?;
        let mut hist = Vec::new();
        layout_histogram(&ds, args.bins).write_csv(&mut hist)?;
        write_out(&dir.join("histogram.csv"), &hist)?;
        println!("{}: {} variants -> {}", kind.as_str(), ds.len(), dir.display());
    }
    Ok(())
}

fn score_files(
    dataset: &Path,
    predictions: &Path,
    distribution: &str,
    mode: &str,
    run: usize,
    status: RunStatus,
) -> Result<MetricsRow, HarnessError> {
    let ds = read_dataset(dataset)?;
    let text = read_in(predictions)?;
    let preds = parse_predictions(&text).restrict_to(&ds);
    let cm = if status == RunStatus::Completed {
        eval::score(&ds, &preds)
    } else {
        ConfusionMatrix::default()
    };
    Ok(MetricsRow::new(distribution, mode, run, status, cm))
}

/// Re-scores one run directory from its own artifacts.
pub fn rescore_run_dir(dir: &Path) -> Result<MetricsRow, HarnessError> {
    let record: RunRecord = serde_json::from_str(&read_in(&dir.join("record.json"))?)
        .map_err(|e| HarnessError::Parse(format!("{}: {e}", dir.join("record.json").display())))?;
    score_files(
        &dir.join("dataset.csv"),
        &dir.join("predictions.txt"),
        &record.metrics.distribution,
        &record.metrics.mode,
        record.metrics.run,
        record.status,
    )
}

pub fn cmd_score(args: &cli::ScoreArgs) -> Result<Vec<MetricsRow>, HarnessError> {
    let rows = if !args.run_dirs.is_empty() {
        args.run_dirs
            .iter()
            .map(|d| rescore_run_dir(d))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        match (&args.dataset, &args.predictions) {
            (Some(d), Some(p)) => vec![score_files(
                d,
                p,
                &args.distribution,
                &args.prompt,
                args.run,
                RunStatus::Completed,
            )?],
            _ => {
                return Err(HarnessError::Config(
                    "give --run-dir, or both --dataset and --predictions".into(),
                ))
            }
        }
    };
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf).map_err(|e| HarnessError::Internal(e.to_string()))?;
    match &args.out {
        Some(p) => write_out(p, &buf)?,
        None => std::io::stdout()
            .write_all(&buf)
            .map_err(|e| HarnessError::Internal(e.to_string()))?,
    }
    Ok(rows)
}

pub fn baselines_from(path: Option<&Path>) -> Result<Vec<Baseline>, HarnessError> {
    match path {
        None => Ok(eval::default_baselines()),
        Some(p) => load_baselines(read_in(p)?.as_bytes())
            .map_err(|e| HarnessError::Parse(format!("{}: {e}", p.display()))),
    }
}

pub fn cmd_report(args: &cli::ReportArgs) -> Result<(), HarnessError> {
    let rows = read_metrics_csv(read_in(&args.metrics)?.as_bytes())
        .map_err(|e| HarnessError::Parse(format!("{}: {e}", args.metrics.display())))?;
    let baselines = baselines_from(args.baselines.as_deref())?;
    let (md, csv) = render_report(&rows, &baselines);
    write_out(&args.out.join("report.md"), md)?;
    write_out(&args.out.join("comparison.csv"), csv)?;
    println!("report written to {}", args.out.join("report.md").display());
    Ok(())
}

pub async fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Layout(a) => cmd_layout(&a),
        Command::Score(a) => cmd_score(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a),
        Command::Run(a) => {
            let cfg = ExperimentConfig::from_args(&a)?;
            let summary = run_experiment(&cfg).await?;
            if summary.provider_errors > 0 {
                return Err(HarnessError::Provider(format!(
                    "{} run(s) ended in a provider error; see {}",
                    summary.provider_errors,
                    cfg.out.join("report.md").display()
                )));
            }
            Ok(())
        }
    }
}
