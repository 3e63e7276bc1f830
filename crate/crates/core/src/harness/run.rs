//! The experiment grid: for every distribution, prompt mode and repeat, lay
//! out the dataset, send it chunk by chunk through the agent loop, then
//! parse, score and record.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{baselines_from, layout_seed, to_json, write_out, DataSource, HarnessError};
use crate::eval::{aggregate_cells, parse_predictions, render_report, score, write_metrics_csv, CellAverage, MetricsRow};
use crate::eventlog::{write_variant_csv, LabeledDataset, LabeledVariant};
use crate::gateway::agent::chunk_budget;
use crate::gateway::transcript::{write_events, TranscriptEvent};
use crate::gateway::{
    oracle_mock, run_agent_loop, ChatProvider, Clock, DelayMock, OpenAiCompatible, ProviderConfig,
    ProviderError, ProviderKind, RateGate, RunStatus, SystemClock, VirtualClock,
};
use crate::layout::{lay_out, Distribution, LayoutSidecar, LayoutSpec};
use crate::prompt::{build_bundle, plan_chunks, PromptMode};
use crate::rng::derive_seed;

pub const NOISY_FP_RATE: f64 = 0.02;
pub const NOISY_FN_RATE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub distributions: Vec<Distribution>,
    pub modes: Vec<PromptMode>,
    pub repeats: usize,
    pub seed: u64,
    pub provider: ProviderConfig,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub mock_delay_secs: f64,
    pub relayout_per_run: bool,
    pub out: PathBuf,
    pub baselines: Option<PathBuf>,
}

fn secs(name: &str, v: f64) -> Result<Duration, HarnessError> {
    if v > 0.0 {
        Duration::try_from_secs_f64(v).map_err(|e| HarnessError::Config(format!("{name}: {e}")))
    } else {
        Err(HarnessError::Config(format!("{name} must be > 0, got {v}")))
    }
}

fn rate(name: &str, v: f64) -> Result<f64, HarnessError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(HarnessError::Config(format!("{name} must be in [0, 1], got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_args(a: &super::cli::RunArgs) -> Result<Self, HarnessError> {
        if a.repeats == 0 {
            return Err(HarnessError::Config("--repeats must be >= 1".into()));
        }
        let run_deadline = secs("--timeout-secs", a.timeout_secs)?;
        let request_timeout = secs("--request-timeout-secs", a.request_timeout_secs)?.min(run_deadline);
        let (fp_default, fn_default) = match a.provider {
            ProviderKind::MockNoisy => (NOISY_FP_RATE, NOISY_FN_RATE),
            _ => (0.0, 0.0),
        };
        if a.mock_delay_secs < 0.0 || !a.mock_delay_secs.is_finite() {
            return Err(HarnessError::Config("--mock-delay-secs must be >= 0".into()));
        }
        let cfg = ExperimentConfig {
            source: DataSource::from_args(&a.source, a.seed),
            distributions: super::chosen(&a.distribution, &Distribution::ALL),
            modes: super::chosen(&a.prompt, &PromptMode::ALL),
            repeats: a.repeats,
            seed: a.seed,
            provider: ProviderConfig {
                kind: a.provider,
                endpoint: a.endpoint.clone(),
                model: a.model.clone(),
                api_key_env: a.api_key_env.clone(),
                tpm_budget: a.tpm_budget,
                request_timeout,
                run_deadline,
                max_agent_steps: a.max_agent_steps,
            },
            fp_rate: rate("--fp-rate", a.fp_rate.unwrap_or(fp_default))?,
            fn_rate: rate("--fn-rate", a.fn_rate.unwrap_or(fn_default))?,
            mock_delay_secs: a.mock_delay_secs,
            relayout_per_run: a.relayout_per_run,
            out: a.out.clone(),
            baselines: a.baselines.clone(),
        };
        cfg.provider.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub variants: usize,
    pub first_id: u64,
    pub last_id: u64,
    pub requests: usize,
    pub status: RunStatus,
}

/// Everything `record.json` holds; together with `dataset.csv` and
/// `predictions.txt` it re-derives the metrics row offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub layout: LayoutSidecar,
    pub run_seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub chunks: Vec<ChunkRecord>,
    pub unparsed_lines: usize,
    pub duplicate_ids: Vec<u64>,
    pub metrics: MetricsRow,
    pub duration_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub rows: Vec<MetricsRow>,
    pub cells: Vec<CellAverage>,
    pub provider_errors: usize,
    pub report_md: String,
}

pub fn run_dir_name(kind: Distribution, mode: PromptMode, run: usize) -> String {
    format!("{}-{}-r{}", kind.as_str(), mode.as_str(), run)
}

fn cell_tag(kind: Distribution, mode: PromptMode) -> u64 {
    let m = PromptMode::ALL.iter().position(|x| *x == mode).unwrap_or(0) as u64;
    kind.stream_tag() * 16 + m
}

struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    gate: &'a RateGate,
    remote: Option<&'a OpenAiCompatible>,
}

struct Executed {
    record: RunRecord,
    auth_failure: bool,
}

async fn execute_run(
    ctx: &RunContext<'_>,
    kind: Distribution,
    mode: PromptMode,
    run_index: usize,
    ds: &LabeledDataset,
    sidecar: &LayoutSidecar,
) -> Result<Executed, HarnessError> {
    let cfg = ctx.cfg;
    let started = Instant::now();
    let run_seed = cfg.seed.wrapping_add(run_index as u64);
    let chunks = plan_chunks(ds, mode, chunk_budget(mode, cfg.provider.tpm_budget))
        .map_err(|e| HarnessError::Config(format!("{e}; raise --tpm-budget")))?;

    let mock_seed = derive_seed(run_seed, cell_tag(kind, mode));
    let mock: Option<Box<dyn ChatProvider>> = match cfg.provider.kind {
        ProviderKind::OpenaiCompatible => None,
        ProviderKind::MockPerfect | ProviderKind::MockNoisy => {
            Some(Box::new(oracle_mock(ds, cfg.fp_rate, cfg.fn_rate, mock_seed)))
        }
        ProviderKind::MockDelay => Some(Box::new(DelayMock {
            delay: Duration::from_secs_f64(cfg.mock_delay_secs),
            inner: oracle_mock(ds, cfg.fp_rate, cfg.fn_rate, mock_seed),
        })),
    };
    let provider: &dyn ChatProvider = match (&mock, ctx.remote) {
        (Some(m), _) => m.as_ref(),
        (None, Some(r)) => r,
        (None, None) => return Err(HarnessError::Internal("no provider configured".into())),
    };

    let mut events: Vec<TranscriptEvent> = Vec::new();
    let mut answers: Vec<String> = Vec::new();
    let mut chunk_records = Vec::new();
    let mut status = RunStatus::Completed;
    let mut error: Option<ProviderError> = None;
    for (i, chunk) in chunks.iter().enumerate() {
        let bundle = build_bundle(mode, chunk.lines.clone());
        let out = run_agent_loop(&cfg.provider, provider, ctx.gate, &bundle).await;
        events.extend(out.transcript.events(i));
        events.push(TranscriptEvent::Outcome {
            chunk: i,
            status: out.status,
            error: out.error.as_ref().map(|e| e.to_string()),
        });
        chunk_records.push(ChunkRecord {
            index: i,
            variants: chunk.ids.len(),
            first_id: chunk.ids.first().copied().unwrap_or(0),
            last_id: chunk.ids.last().copied().unwrap_or(0),
            requests: out.transcript.requests.len(),
            status: out.status,
        });
        if let Some(text) = out.final_text {
            answers.push(text);
        }
        if out.status != RunStatus::Completed {
            // The rest of the run cannot change its outcome.
            status = out.status;
            error = out.error;
            break;
        }
    }

    let mut predictions = answers.join("\n");
    if !predictions.is_empty() {
        predictions.push('\n');
    }
    let preds = parse_predictions(&predictions).restrict_to(ds);
    let row = MetricsRow::new(kind.as_str(), mode.as_str(), run_index + 1, status, score(ds, &preds));
    let auth_failure = matches!(error, Some(ProviderError::Auth(_)));
    let record = RunRecord {
        config: cfg.clone(),
        layout: sidecar.clone(),
        run_seed,
        status,
        error: error.map(|e| e.to_string()),
        chunks: chunk_records,
        unparsed_lines: preds.unparsed_lines.len(),
        duplicate_ids: preds.duplicates.clone(),
        metrics: row,
        duration_secs: started.elapsed().as_secs_f64(),
    };

    let dir = cfg.out.join("runs").join(run_dir_name(kind, mode, run_index + 1));
    let mut buf = Vec::new();
    write_variant_csv(ds, &mut buf).map_err(|e| HarnessError::Internal(e.to_string()))?;
    write_out(&dir.join("dataset.csv"), &buf)?;
    write_out(&dir.join("layout.json"), to_json(sidecar)?)?;
    let mut jsonl = Vec::new();
    write_events(&events, &mut jsonl).map_err(|e| HarnessError::Internal(e.to_string()))?;
    write_out(&dir.join("transcript.jsonl"), &jsonl)?;
    write_out(&dir.join("predictions.txt"), &predictions)?;
    write_out(&dir.join("record.json"), to_json(&record)?)?;
    Ok(Executed {
        record,
        auth_failure,
    })
}

fn arrange(
    kind: Distribution,
    seed: u64,
    normals: &[LabeledVariant],
    anomalies: &[LabeledVariant],
    provenance: &str,
) -> Result<(LabeledDataset, LayoutSidecar), HarnessError> {
    let spec = LayoutSpec::new(kind, seed);
    Ok(lay_out(&spec, normals, anomalies, provenance)?)
}

fn write_summary(
    cfg: &ExperimentConfig,
    rows: &[MetricsRow],
) -> Result<(Vec<CellAverage>, String), HarnessError> {
    let baselines = baselines_from(cfg.baselines.as_deref())?;
    let mut buf = Vec::new();
    write_metrics_csv(rows, &mut buf).map_err(|e| HarnessError::Internal(e.to_string()))?;
    write_out(&cfg.out.join("metrics.csv"), &buf)?;
    let (md, csv) = render_report(rows, &baselines);
    write_out(&cfg.out.join("report.md"), &md)?;
    write_out(&cfg.out.join("comparison.csv"), csv)?;
    Ok((aggregate_cells(rows), md))
}

/// Runs the grid sequentially under one shared token budget.
pub async fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    cfg.provider.validate()?;
    // Fail on a bad baseline file before spending any tokens.
    baselines_from(cfg.baselines.as_deref())?;
    let (normals, anomalies, provenance) = cfg.source.load()?;
    let remote = match cfg.provider.kind {
        ProviderKind::OpenaiCompatible => Some(OpenAiCompatible::from_config(&cfg.provider)?),
        _ => None,
    };
    let clock: Arc<dyn Clock> = if cfg.provider.kind.is_offline() {
        Arc::new(VirtualClock::new())
    } else {
        Arc::new(SystemClock::new())
    };
    let gate = RateGate::new(cfg.provider.tpm_budget, clock);
    let ctx = RunContext {
        cfg,
        gate: &gate,
        remote: remote.as_ref(),
    };
    write_out(&cfg.out.join("config.json"), to_json(cfg)?)?;

    let mut rows = Vec::new();
    let mut provider_errors = 0;
    for &kind in &cfg.distributions {
        let shared = if cfg.relayout_per_run {
            None
        } else {
            Some(arrange(kind, layout_seed(cfg.seed, kind, None), &normals, &anomalies, &provenance)?)
        };
        for &mode in &cfg.modes {
            for run_index in 0..cfg.repeats {
                let fresh;
                let (ds, sidecar) = match &shared {
                    Some(s) => s,
                    None => {
                        let seed = layout_seed(cfg.seed, kind, Some(run_index));
                        fresh = arrange(kind, seed, &normals, &anomalies, &provenance)?;
                        &fresh
                    }
                };
                let done = execute_run(&ctx, kind, mode, run_index, ds, sidecar).await?;
                let r = &done.record;
                println!(
                    "{} {} r{}: {:?} acc {:.2} fdr {:.2} ({} chunk(s), {:.1} s)",
                    kind.as_str(),
                    mode,
                    run_index + 1,
                    r.status,
                    r.metrics.metrics.accuracy,
                    r.metrics.metrics.fdr,
                    r.chunks.len(),
                    r.duration_secs
                );
                if r.status == RunStatus::ProviderError {
                    provider_errors += 1;
                    log::warn!(
                        "{} {} run {} failed ({}); excluded from averages",
                        kind.as_str(),
                        mode,
                        run_index + 1,
                        r.error.as_deref().unwrap_or("unknown error")
                    );
                }
                rows.push(done.record.metrics.clone());
                if done.auth_failure {
                    write_summary(cfg, &rows)?;
                    return Err(HarnessError::Provider(format!(
                        "authentication failed, stopping: {}",
                        r.error.as_deref().unwrap_or("")
                    )));
                }
            }
        }
    }
    let (cells, report_md) = write_summary(cfg, &rows)?;
    Ok(ExperimentSummary {
        rows,
        cells,
        provider_errors,
        report_md,
    })
}
