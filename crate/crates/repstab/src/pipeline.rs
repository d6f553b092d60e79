//! End-to-end orchestration: tracing a corpus into the cache, training
//! the detector on cached tensors, scoring corpora, ranking/correlation
//! evaluation, K sweeps, and transfer runs.
//!
//! Every stage writes line-delimited artifacts plus a manifest into the
//! run's output directory. With `run.deterministic = true` the artifacts
//! are byte-stable across reruns (timestamps are omitted; timing lives
//! only in sweep reports, which are exempt).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{self, TraceRecord};
use crate::config::{Config, ConfigError};
use crate::corpus::{self, CorpusRecord, IngestError};
use crate::detector::{
    load_checkpoint, predict_batch, save_checkpoint, train, CheckpointMeta, DetectorConfig,
    DetectorError, TrainingConfig,
};
use crate::encoder::{
    encoder_from_spec, Encoder, EncoderError, EncoderOutput, GradientBundle, LossTarget,
    TokenizedText,
};
use crate::evaluation::{
    binned_recall, detection_metrics, ndcg_at_k, rank_scores, spearman_bh, CorrelationGroup,
    DetectionMetrics, EvalError, RankingRecord,
};
use crate::importance::{
    attention_rollout, grad_sam, gradient_attribution, integrated_gradients, random_importance,
    BaselineMode, ImportanceMethod, ImportanceProfile,
};
use crate::manifest::RunManifest;
use crate::num::Float;
use crate::sensitivity::{build_feature_tensor, profile_text, SensitivityError};
use crate::Label;

/// Environment variable overriding the cache directory.
pub const CACHE_DIR_ENV: &str = "REPSTAB_CACHE_DIR";

const DETECT_BATCH: usize = 64;
const TRACE_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("{failed} of {total} records failed during {stage} (tolerance {tolerance}); first: {first}")]
    TooManyFailures {
        stage: String,
        failed: usize,
        total: usize,
        tolerance: f64,
        first: String,
    },
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One run's configuration and output location.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: Config,
    pub out_dir: PathBuf,
}

impl RunContext {
    pub fn new(config: Config, out_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
        Ok(RunContext { config, out_dir })
    }

    pub fn canonical(&self) -> bool {
        self.config.get_bool("run.deterministic").unwrap_or(false)
    }

    /// Cache directory: `REPSTAB_CACHE_DIR` env var, then `cache.dir`,
    /// then `<out_dir>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        if let Ok(dir) = std::env::var(CACHE_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        let configured = self.config.get_str("cache.dir");
        if !configured.is_empty() {
            return PathBuf::from(configured);
        }
        self.out_dir.join("cache")
    }

    pub fn cache_path(&self, corpus_path: &Path) -> PathBuf {
        let stem = corpus_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "corpus".to_string());
        self.cache_dir().join(format!("{stem}.traces.jsonl"))
    }

    fn write_manifest(
        &self,
        stage: &str,
        artifacts: &[(&str, String)],
    ) -> Result<PathBuf, PipelineError> {
        let mut manifest = RunManifest::new(&self.config, self.canonical());
        for (name, rel) in artifacts {
            manifest.add_artifact(name, rel);
        }
        let path = self.out_dir.join(format!("{stage}_manifest.json"));
        manifest.save(&path).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// Encoder wrapper counting backend invocations; lets tests prove cache
/// hits never touch the model.
struct CountingEncoder<F: Float> {
    inner: Box<dyn Encoder<F>>,
    calls: AtomicUsize,
}

impl<F: Float> CountingEncoder<F> {
    fn new(inner: Box<dyn Encoder<F>>) -> Self {
        CountingEncoder {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }
}

impl<F: Float> Encoder<F> for CountingEncoder<F> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn tokenize(&self, raw_text: &str) -> Result<TokenizedText, EncoderError> {
        self.inner.tokenize(raw_text)
    }

    fn encode(&self, text: &TokenizedText) -> Result<EncoderOutput<F>, EncoderError> {
        self.bump();
        self.inner.encode(text)
    }

    fn encode_with_gradients(
        &self,
        text: &TokenizedText,
        loss_target: LossTarget,
    ) -> Result<(EncoderOutput<F>, GradientBundle<F>), EncoderError> {
        self.bump();
        self.inner.encode_with_gradients(text, loss_target)
    }

    fn encode_masked(
        &self,
        text: &TokenizedText,
        word_index: usize,
    ) -> Result<Array1<F>, EncoderError> {
        self.bump();
        self.inner.encode_masked(text, word_index)
    }

    fn input_embeddings(&self, text: &TokenizedText) -> Result<Array2<F>, EncoderError> {
        self.inner.input_embeddings(text)
    }

    fn mask_embedding(&self) -> Array1<F> {
        self.inner.mask_embedding()
    }

    fn loss_grad_at_embeddings(
        &self,
        text: &TokenizedText,
        embeddings: &Array2<F>,
        target_class: usize,
    ) -> Result<(F, Array2<F>), EncoderError> {
        self.bump();
        self.inner.loss_grad_at_embeddings(text, embeddings, target_class)
    }

    fn param_checksum(&self) -> String {
        self.inner.param_checksum()
    }
}

/// Parameters one trace run needs from the config.
#[derive(Debug, Clone)]
struct TraceParams {
    method: ImportanceMethod,
    k: usize,
    seed: u64,
    ig_steps: usize,
    ig_baseline: BaselineMode,
    gradsam_relu: bool,
    trace_hash: String,
}

impl TraceParams {
    fn from_config(config: &Config) -> Result<Self, PipelineError> {
        let method: ImportanceMethod = config
            .get_str("importance.method")
            .parse()
            .map_err(PipelineError::Other)?;
        let ig_baseline: BaselineMode = config
            .get_str("ig.baseline")
            .parse()
            .map_err(PipelineError::Other)?;
        Ok(TraceParams {
            method,
            k: config.get_usize("importance.k")?,
            seed: config.importance_seed()?,
            ig_steps: config.get_usize("ig.steps")?,
            ig_baseline,
            gradsam_relu: config.get_bool("gradsam.relu")?,
            trace_hash: config.trace_hash(),
        })
    }
}

fn per_text_seed(seed: u64, id: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in id.as_bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    seed ^ hash
}

fn importance_profile<F: Float>(
    encoder: &(impl Encoder<F> + ?Sized + Sync),
    text: &TokenizedText,
    params: &TraceParams,
    record_id: &str,
) -> Result<ImportanceProfile<F>, String> {
    let profile = match params.method {
        ImportanceMethod::Gradient => {
            let (_, grads) = encoder
                .encode_with_gradients(text, LossTarget::PredictedClass)
                .map_err(|e| e.to_string())?;
            gradient_attribution(text, &grads).map_err(|e| e.to_string())?
        }
        ImportanceMethod::Rollout => {
            let out = encoder.encode(text).map_err(|e| e.to_string())?;
            attention_rollout(text, &out).map_err(|e| e.to_string())?
        }
        ImportanceMethod::GradSam => {
            let (out, grads) = encoder
                .encode_with_gradients(text, LossTarget::PredictedLogit)
                .map_err(|e| e.to_string())?;
            grad_sam(text, &out, &grads, params.gradsam_relu).map_err(|e| e.to_string())?
        }
        ImportanceMethod::Random => {
            random_importance(text, params.k, per_text_seed(params.seed, record_id))
        }
        ImportanceMethod::IntegratedGradients => {
            integrated_gradients(encoder, text, params.ig_steps, params.ig_baseline)
                .map_err(|e| e.to_string())?
        }
    };
    Ok(profile)
}

fn compute_trace_record<F: Float>(
    encoder: &(impl Encoder<F> + ?Sized + Sync),
    record: &CorpusRecord,
    params: &TraceParams,
) -> Result<TraceRecord, String> {
    let text = encoder.tokenize(&record.text).map_err(|e| e.to_string())?;
    let profile = importance_profile(encoder, &text, params, &record.id)?;
    let trace = profile_text(encoder, &text, &profile, params.k).map_err(|e| match e {
        SensitivityError::Mask { word_index, source } => {
            format!("masking word {word_index}: {source}")
        }
        other => other.to_string(),
    })?;
    // The tensor itself is re-derivable; the cache keeps full vectors.
    build_feature_tensor(&text, &profile, &trace).map_err(|e| e.to_string())?;
    Ok(TraceRecord {
        id: record.id.clone(),
        method: params.method.to_string(),
        k: params.k,
        selected: trace.selected.clone(),
        sensitivities: trace
            .sensitivities
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect(),
        importances: profile.scores.iter().map(|v| v.to_f64().unwrap()).collect(),
        encoder: encoder.name().to_string(),
        config_hash: params.trace_hash.clone(),
    })
}

/// Outcome of one `trace` run.
#[derive(Debug, Serialize)]
pub struct TraceRunSummary {
    pub total: usize,
    pub computed: usize,
    pub cache_hits: usize,
    pub failed: Vec<(String, String)>,
    pub ignored_cache_lines: usize,
    pub encoder_calls: usize,
    pub elapsed_seconds: f64,
    pub cache_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Traces a corpus: one cached sensitivity/importance record per text.
/// Rerunning with the same config is a no-op; interrupted runs resume.
pub fn run_trace<F: Float>(
    ctx: &RunContext,
    corpus_path: &Path,
) -> Result<TraceRunSummary, PipelineError> {
    let ingest_tolerance = ctx.config.get_f64("ingest.failure_tolerance")?;
    let report = corpus::ingest(corpus_path, ingest_tolerance)?;
    let params = TraceParams::from_config(&ctx.config)?;
    let encoder: CountingEncoder<F> = CountingEncoder::new(encoder_from_spec(
        ctx.config.get_str("encoder.name"),
        ctx.config.get_usize("encoder.max_length")?,
    )?);

    let cache_path = ctx.cache_path(corpus_path);
    let loaded = cache::load(&cache_path, &params.trace_hash).map_err(|e| io_err(&cache_path, e))?;

    let start = Instant::now();
    let mut kept: Vec<TraceRecord> = Vec::with_capacity(report.records.len());
    let mut pending: Vec<&CorpusRecord> = Vec::new();
    for record in &report.records {
        match loaded.records.get(&record.id) {
            Some(hit) => kept.push(hit.clone()),
            None => pending.push(record),
        }
    }
    let cache_hits = kept.len();

    // Rewrite the valid prefix so stale or truncated lines never survive.
    {
        let refs: Vec<&TraceRecord> = kept.iter().collect();
        cache::write_all(&cache_path, &refs).map_err(|e| io_err(&cache_path, e))?;
    }

    let mut failed: Vec<(String, String)> = Vec::new();
    let mut computed = 0usize;
    for chunk in pending.chunks(TRACE_CHUNK) {
        let results: Vec<(usize, Result<TraceRecord, String>)> = chunk
            .par_iter()
            .enumerate()
            .map(|(i, record)| (i, compute_trace_record(&encoder, record, &params)))
            .collect();
        let mut lines = String::new();
        for (i, result) in results {
            match result {
                Ok(trace) => {
                    computed += 1;
                    lines.push_str(&serde_json::to_string(&trace).expect("trace serializes"));
                    lines.push('\n');
                    kept.push(trace);
                }
                Err(message) => failed.push((chunk[i].id.clone(), message)),
            }
        }
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new()
            .append(true)
            .open(&cache_path)
            .map_err(|e| io_err(&cache_path, e))?;
        file.write_all(lines.as_bytes())
            .map_err(|e| io_err(&cache_path, e))?;
    }
    let elapsed_seconds = start.elapsed().as_secs_f64();

    let tolerance = ctx.config.get_f64("trace.failure_tolerance")?;
    if !failed.is_empty() {
        let errors_path = ctx.out_dir.join("trace_errors.jsonl");
        let mut out = String::new();
        for (id, message) in &failed {
            out.push_str(
                &serde_json::to_string(&serde_json::json!({ "id": id, "error": message }))
                    .unwrap(),
            );
            out.push('\n');
        }
        std::fs::write(&errors_path, out).map_err(|e| io_err(&errors_path, e))?;
    }
    if failed.len() as f64 > tolerance * report.records.len() as f64 {
        return Err(PipelineError::TooManyFailures {
            stage: "trace".into(),
            failed: failed.len(),
            total: report.records.len(),
            tolerance,
            first: format!("{}: {}", failed[0].0, failed[0].1),
        });
    }

    let cache_rel = pathdiff_name(&cache_path, &ctx.out_dir);
    let manifest_path = ctx.write_manifest("trace", &[("trace_cache", cache_rel)])?;

    Ok(TraceRunSummary {
        total: report.records.len(),
        computed,
        cache_hits,
        failed,
        ignored_cache_lines: loaded.ignored,
        encoder_calls: encoder.calls(),
        elapsed_seconds,
        cache_path,
        manifest_path,
    })
}

/// Best-effort relative rendering of an artifact path for manifests.
fn pathdiff_name(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .map(|p| p.display().to_string())
        .unwrap_or_else(|_| {
            path.file_name()
                .map(|f| f.to_string_lossy().to_string())
                .unwrap_or_else(|| path.display().to_string())
        })
}

/// Joins corpus labels with cached tensors; records without cache
/// entries are skipped and counted.
fn labeled_tensors<F: Float>(
    ctx: &RunContext,
    corpus_path: &Path,
    stage: &str,
) -> Result<(Vec<CorpusRecord>, Vec<crate::sensitivity::FeatureTensor<F>>, usize), PipelineError> {
    let tolerance = ctx.config.get_f64("ingest.failure_tolerance")?;
    let report = corpus::ingest(corpus_path, tolerance)?;
    let cache_path = ctx.cache_path(corpus_path);
    let loaded =
        cache::load(&cache_path, &ctx.config.trace_hash()).map_err(|e| io_err(&cache_path, e))?;
    if loaded.records.is_empty() {
        return Err(PipelineError::MissingArtifact(format!(
            "trace cache {} (run `trace` first; stage: {stage})",
            cache_path.display()
        )));
    }
    let mut records = Vec::new();
    let mut tensors = Vec::new();
    let mut skipped = 0usize;
    for record in report.records {
        match loaded.records.get(&record.id) {
            Some(trace) => {
                tensors.push(trace.tensor::<F>());
                records.push(record);
            }
            None => skipped += 1,
        }
    }
    Ok((records, tensors, skipped))
}

#[derive(Debug, Serialize)]
pub struct TrainRunSummary {
    pub used: usize,
    pub skipped_missing_trace: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub epochs_run: usize,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Trains the detector on a traced corpus and writes the checkpoint and
/// the per-epoch log.
pub fn run_train<F: Float>(
    ctx: &RunContext,
    corpus_path: &Path,
) -> Result<TrainRunSummary, PipelineError> {
    let (records, tensors, skipped) = labeled_tensors::<F>(ctx, corpus_path, "train")?;
    let dataset: Vec<_> = tensors
        .into_iter()
        .zip(records.iter().map(|r| r.label))
        .collect();

    let train_cfg = TrainingConfig {
        lr: ctx.config.get_f64("detector.lr")?,
        weight_decay: ctx.config.get_f64("detector.weight_decay")?,
        batch_size: ctx.config.get_usize("detector.batch_size")?,
        max_epochs: ctx.config.get_usize("detector.max_epochs")?,
        patience: ctx.config.get_usize("detector.patience")?,
        val_fraction: ctx.config.get_f64("detector.val_fraction")?,
        seed: ctx.config.get_u64("run.seed")?,
    };
    let (model, stats, log) = train(&dataset, DetectorConfig::paper(), train_cfg)?;

    let checkpoint_path = ctx.out_dir.join("checkpoint.json");
    save_checkpoint(
        &checkpoint_path,
        &model,
        &stats,
        &CheckpointMeta {
            config_hash: ctx.config.full_hash(),
            seed: train_cfg.seed,
            training: train_cfg,
        },
    )?;

    let log_path = ctx.out_dir.join("train_log.json");
    let log_json = serde_json::json!({
        "config_hash": ctx.config.full_hash(),
        "log": log,
    });
    std::fs::write(&log_path, serde_json::to_string_pretty(&log_json).unwrap())
        .map_err(|e| io_err(&log_path, e))?;

    ctx.write_manifest(
        "train",
        &[
            ("checkpoint", "checkpoint.json".to_string()),
            ("train_log", "train_log.json".to_string()),
        ],
    )?;

    Ok(TrainRunSummary {
        used: dataset.len(),
        skipped_missing_trace: skipped,
        best_epoch: log.best_epoch,
        best_val_f1: log.best_val_f1,
        epochs_run: log.epochs.len(),
        checkpoint_path,
        log_path,
    })
}

/// One scored record in `detections.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionRow {
    pub id: String,
    pub label: Label,
    pub prediction: Label,
    pub score: f64,
    pub config_hash: String,
}

#[derive(Debug, Serialize)]
pub struct DetectRunSummary {
    pub scored: usize,
    pub skipped_missing_trace: usize,
    pub metrics: DetectionMetrics,
    pub detections_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Scores a traced corpus with a trained checkpoint.
pub fn run_detect<F: Float>(
    ctx: &RunContext,
    corpus_path: &Path,
    checkpoint: Option<&Path>,
) -> Result<DetectRunSummary, PipelineError> {
    let default_ckpt = ctx.out_dir.join("checkpoint.json");
    let ckpt_path = checkpoint.unwrap_or(&default_ckpt);
    if !ckpt_path.exists() {
        return Err(PipelineError::MissingArtifact(format!(
            "detector checkpoint {}",
            ckpt_path.display()
        )));
    }
    let (model, stats, _meta) = load_checkpoint::<F>(ckpt_path)?;
    let (records, tensors, skipped) = labeled_tensors::<F>(ctx, corpus_path, "detect")?;

    let mut rows: Vec<DetectionRow> = Vec::with_capacity(records.len());
    let config_hash = ctx.config.full_hash();
    for (chunk_records, chunk_tensors) in records
        .chunks(DETECT_BATCH)
        .zip(tensors.chunks(DETECT_BATCH))
    {
        let scored = predict_batch(&model, &stats, chunk_tensors)?;
        for (record, (prediction, score)) in chunk_records.iter().zip(scored) {
            rows.push(DetectionRow {
                id: record.id.clone(),
                label: record.label,
                prediction,
                score: score.to_f64().unwrap(),
                config_hash: config_hash.clone(),
            });
        }
    }

    let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
    let predictions: Vec<Label> = rows.iter().map(|r| r.prediction).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let metrics = detection_metrics(&labels, &predictions, &scores)?;

    let detections_path = ctx.out_dir.join("detections.jsonl");
    let mut out = String::new();
    for row in &rows {
        out.push_str(&serde_json::to_string(row).unwrap());
        out.push('\n');
    }
    std::fs::write(&detections_path, out).map_err(|e| io_err(&detections_path, e))?;

    let metrics_path = ctx.out_dir.join("detection_metrics.json");
    let payload = serde_json::json!({
        "config_hash": config_hash,
        "n": rows.len(),
        "metrics": metrics,
    });
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&payload).unwrap())
        .map_err(|e| io_err(&metrics_path, e))?;

    ctx.write_manifest(
        "detect",
        &[
            ("detections", "detections.jsonl".to_string()),
            ("detection_metrics", "detection_metrics.json".to_string()),
        ],
    )?;

    Ok(DetectRunSummary {
        scored: rows.len(),
        skipped_missing_trace: skipped,
        metrics,
        detections_path,
        metrics_path,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NdcgRow {
    pub k: usize,
    pub method: String,
    pub mean_ndcg: f64,
    pub n: usize,
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecallRow {
    pub bin_lo: usize,
    pub bin_hi: Option<usize>,
    pub method: String,
    pub mean_recall: Option<f64>,
    pub count: usize,
    pub config_hash: String,
}

#[derive(Debug, Serialize)]
pub struct RankingRunSummary {
    pub used: usize,
    pub empty_excluded: usize,
    pub unaligned_excluded: usize,
    pub missing_truth: usize,
    pub ndcg_path: PathBuf,
    pub recall_path: PathBuf,
}

/// Ranking-quality evaluation: NDCG@k curves and binned recall against
/// the perturbed-word ground truth.
pub fn run_eval_ranking<F: Float>(
    ctx: &RunContext,
    corpus_path: &Path,
    k_list: &[usize],
    bin_edges: &[usize],
) -> Result<RankingRunSummary, PipelineError> {
    let tolerance = ctx.config.get_f64("ingest.failure_tolerance")?;
    let report = corpus::ingest(corpus_path, tolerance)?;
    let cache_path = ctx.cache_path(corpus_path);
    let loaded =
        cache::load(&cache_path, &ctx.config.trace_hash()).map_err(|e| io_err(&cache_path, e))?;
    if loaded.records.is_empty() {
        return Err(PipelineError::MissingArtifact(format!(
            "trace cache {}",
            cache_path.display()
        )));
    }

    let truth = corpus::perturbed_ground_truth(&report.records);
    let mut ranking_records = Vec::new();
    let mut empty_excluded = 0usize;
    for record in report.records.iter().filter(|r| r.label == Label::Adversarial) {
        let Some(trace) = loaded.records.get(&record.id) else {
            continue;
        };
        let Some(perturbed) = truth.by_id.get(&record.id) else {
            continue;
        };
        if perturbed.is_empty() {
            empty_excluded += 1;
            continue;
        }
        // Indices must refer to words the tokenizer kept.
        let n = trace.n_words();
        if perturbed.iter().any(|&w| w >= n) {
            empty_excluded += 1;
            continue;
        }
        ranking_records.push(RankingRecord {
            text_id: record.id.clone(),
            ranked_words: rank_scores(&trace.importances),
            perturbed: perturbed.iter().copied().collect(),
        });
    }

    let config_hash = ctx.config.full_hash();
    let method = ctx.config.get_str("importance.method").to_string();

    let ndcg_path = ctx.out_dir.join("ndcg_at_k.jsonl");
    let mut out = String::new();
    for &k in k_list {
        let mut total = 0.0;
        for r in &ranking_records {
            total += ndcg_at_k(r, k)?;
        }
        let row = NdcgRow {
            k,
            method: method.clone(),
            mean_ndcg: if ranking_records.is_empty() {
                0.0
            } else {
                total / ranking_records.len() as f64
            },
            n: ranking_records.len(),
            config_hash: config_hash.clone(),
        };
        out.push_str(&serde_json::to_string(&row).unwrap());
        out.push('\n');
    }
    std::fs::write(&ndcg_path, out).map_err(|e| io_err(&ndcg_path, e))?;

    let recall_path = ctx.out_dir.join("binned_recall.jsonl");
    let k = ctx.config.get_usize("importance.k")?;
    let binned = binned_recall(&ranking_records, k, bin_edges)?;
    let mut out = String::new();
    for bin in &binned.bins {
        let row = RecallRow {
            bin_lo: bin.lo,
            bin_hi: bin.hi,
            method: method.clone(),
            mean_recall: bin.mean_recall,
            count: bin.count,
            config_hash: config_hash.clone(),
        };
        out.push_str(&serde_json::to_string(&row).unwrap());
        out.push('\n');
    }
    std::fs::write(&recall_path, out).map_err(|e| io_err(&recall_path, e))?;

    ctx.write_manifest(
        "eval_ranking",
        &[
            ("ndcg_at_k", "ndcg_at_k.jsonl".to_string()),
            ("binned_recall", "binned_recall.jsonl".to_string()),
        ],
    )?;

    Ok(RankingRunSummary {
        used: ranking_records.len(),
        empty_excluded,
        unaligned_excluded: truth.unaligned.len(),
        missing_truth: truth.missing.len(),
        ndcg_path,
        recall_path,
    })
}

/// Input row for correlation analysis: one experimental configuration's
/// detection accuracy and ranking quality.
#[derive(Debug, Serialize, Deserialize)]
pub struct CorrelationPairRow {
    pub family: String,
    pub group: String,
    pub accuracy: f64,
    pub ndcg: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub family: String,
    pub group: String,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub q_value: Option<f64>,
    pub n: usize,
    pub degenerate: bool,
    pub config_hash: String,
}

/// Spearman correlation with BH correction, one family at a time.
pub fn run_eval_correlation(
    ctx: &RunContext,
    pairs_path: &Path,
) -> Result<(Vec<CorrelationRow>, PathBuf), PipelineError> {
    if !pairs_path.exists() {
        return Err(PipelineError::MissingArtifact(format!(
            "correlation pairs file {}",
            pairs_path.display()
        )));
    }
    let raw = std::fs::read_to_string(pairs_path).map_err(|e| io_err(pairs_path, e))?;
    let mut families: BTreeMap<String, BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CorrelationPairRow = serde_json::from_str(line).map_err(|e| PipelineError::Io {
            path: format!("{}:{}", pairs_path.display(), idx + 1),
            message: e.to_string(),
        })?;
        families
            .entry(row.family)
            .or_default()
            .entry(row.group)
            .or_default()
            .push((row.accuracy, row.ndcg));
    }

    let config_hash = ctx.config.full_hash();
    let mut rows = Vec::new();
    for (family, groups) in &families {
        let family_groups: Vec<CorrelationGroup> = groups
            .iter()
            .map(|(key, pairs)| CorrelationGroup {
                key: key.clone(),
                pairs: pairs.clone(),
            })
            .collect();
        for report in spearman_bh(&family_groups)? {
            rows.push(CorrelationRow {
                family: family.clone(),
                group: report.key,
                rho: report.rho,
                p_value: report.p_value,
                q_value: report.q_value,
                n: report.n,
                degenerate: report.degenerate,
                config_hash: config_hash.clone(),
            });
        }
    }

    let out_path = ctx.out_dir.join("correlation.jsonl");
    let mut out = String::new();
    for row in &rows {
        out.push_str(&serde_json::to_string(row).unwrap());
        out.push('\n');
    }
    std::fs::write(&out_path, out).map_err(|e| io_err(&out_path, e))?;
    ctx.write_manifest("eval_correlation", &[("correlation", "correlation.jsonl".to_string())])?;
    Ok((rows, out_path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub f1: f64,
    pub accuracy: f64,
    pub seconds_per_sample: f64,
    pub config_hash: String,
}

/// Repeats trace → train → detect across a list of K values.
///
/// Timing assumes cold caches; each K runs in its own subdirectory with
/// its own cache.
pub fn run_sweep_k<F: Float>(
    ctx: &RunContext,
    train_corpus: &Path,
    test_corpus: &Path,
    k_list: &[usize],
) -> Result<(Vec<SweepRow>, PathBuf), PipelineError> {
    let mut rows = Vec::new();
    for &k in k_list {
        let mut config = ctx.config.clone();
        config.set("importance.k", &k.to_string())?;
        let sub_dir = ctx.out_dir.join(format!("sweep_k/{k}"));
        config.set("cache.dir", &sub_dir.join("cache").display().to_string())?;
        let sub_ctx = RunContext::new(config, &sub_dir)?;

        let trace_train = run_trace::<F>(&sub_ctx, train_corpus)?;
        let trace_test = run_trace::<F>(&sub_ctx, test_corpus)?;
        run_train::<F>(&sub_ctx, train_corpus)?;
        let detect = run_detect::<F>(&sub_ctx, test_corpus, None)?;

        let samples = (trace_train.total + trace_test.total).max(1);
        rows.push(SweepRow {
            k,
            f1: detect.metrics.f1,
            accuracy: detect.metrics.accuracy,
            seconds_per_sample: (trace_train.elapsed_seconds + trace_test.elapsed_seconds)
                / samples as f64,
            config_hash: sub_ctx.config.full_hash(),
        });
    }

    let out_path = ctx.out_dir.join("sweep.jsonl");
    let mut out = String::new();
    for row in &rows {
        out.push_str(&serde_json::to_string(row).unwrap());
        out.push('\n');
    }
    std::fs::write(&out_path, out).map_err(|e| io_err(&out_path, e))?;
    ctx.write_manifest("sweep_k", &[("sweep", "sweep.jsonl".to_string())])?;
    Ok((rows, out_path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferRow {
    pub setting: String,
    pub corpus: String,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub config_hash: String,
}

/// Trains on one corpus and evaluates in-domain and out-of-domain.
pub fn run_transfer<F: Float>(
    ctx: &RunContext,
    train_corpus: &Path,
    in_corpus: &Path,
    out_corpus: &Path,
) -> Result<(Vec<TransferRow>, PathBuf), PipelineError> {
    run_trace::<F>(ctx, train_corpus)?;
    run_trace::<F>(ctx, in_corpus)?;
    run_trace::<F>(ctx, out_corpus)?;
    run_train::<F>(ctx, train_corpus)?;

    let config_hash = ctx.config.full_hash();
    let mut rows = Vec::new();
    for (setting, corpus_path) in [("in", in_corpus), ("out", out_corpus)] {
        let detect = run_detect::<F>(ctx, corpus_path, None)?;
        rows.push(TransferRow {
            setting: setting.to_string(),
            corpus: corpus_path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_default(),
            accuracy: detect.metrics.accuracy,
            f1: detect.metrics.f1,
            auc: detect.metrics.auc,
            config_hash: config_hash.clone(),
        });
    }

    let out_path = ctx.out_dir.join("transfer.jsonl");
    let mut out = String::new();
    for row in &rows {
        out.push_str(&serde_json::to_string(row).unwrap());
        out.push('\n');
    }
    std::fs::write(&out_path, out).map_err(|e| io_err(&out_path, e))?;
    ctx.write_manifest("transfer", &[("transfer", "transfer.jsonl".to_string())])?;
    Ok((rows, out_path))
}

/// Human-readable digest of whatever artifacts an output directory holds.
pub fn report(out_dir: &Path) -> Result<String, PipelineError> {
    let mut sections = Vec::new();
    for stage in ["trace", "train", "detect", "eval_ranking", "eval_correlation", "sweep_k", "transfer"] {
        let path = out_dir.join(format!("{stage}_manifest.json"));
        if let Ok(manifest) = RunManifest::load(&path) {
            let mut lines = vec![format!(
                "[{stage}] encoder={} method={} k={} seed={} config={}",
                manifest.encoder, manifest.method, manifest.k, manifest.seed, manifest.config_hash
            )];
            for (name, rel) in &manifest.artifacts {
                lines.push(format!("  artifact {name}: {rel}"));
            }
            sections.push(lines.join("\n"));
        }
    }
    let metrics_path = out_dir.join("detection_metrics.json");
    if let Ok(raw) = std::fs::read_to_string(&metrics_path) {
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(&raw) {
            let m = &value["metrics"];
            sections.push(format!(
                "[metrics] n={} accuracy={} precision={} recall={} f1={} auc={}",
                value["n"], m["accuracy"], m["precision"], m["recall"], m["f1"], m["auc"]
            ));
        }
    }
    for file in ["sweep.jsonl", "transfer.jsonl"] {
        let path = out_dir.join(file);
        if let Ok(raw) = std::fs::read_to_string(&path) {
            sections.push(format!("[{file}]\n{}", raw.trim_end()));
        }
    }
    if sections.is_empty() {
        return Err(PipelineError::MissingArtifact(format!(
            "no manifests under {}",
            out_dir.display()
        )));
    }
    Ok(sections.join("\n"))
}
