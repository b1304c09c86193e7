//! The pipeline commands behind the CLI, and `run-all` with content-hash
//! stage checkpoints.
//!
//! Every command reads and writes files under the configured work
//! directory (see [`Layout`]).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig, ReferenceSet};
use crate::corpus::{corpus_stats, parse_corpus_with, write_corpus, Corpus, CorpusError, Label, ParseOptions};
use crate::freq::{correlate_f1_frequency, CorrelationError, CorrelationResult, FreqTable};
use crate::layout::{EvalName, Layout};
use crate::lemma_stats::build_lemma_table;
use crate::metrics::{
    per_lemma_f1, random_baseline, read_per_lemma_tsv, read_predictions, score, write_per_lemma_tsv,
    write_predictions, Confusion, MetricsError, Prf,
};
use crate::probes::{
    apply_word_probe, knn_classify, neighborhood_purity, read_embeddings, train_word_probe, EmbeddingKind,
    EmbeddingRecord, EmbeddingSet, ProbeError,
};
use crate::report::{build_report, Report};
use crate::results::{
    select_median, upsert_rows, write_rows_to, BenchmarkRow, Condition, CorrelationRow, DatasetRow,
    GeometryRow, ProbeMetrics, ProbeResult, ResultsError, ScoreRow, SweepRow,
};
use crate::runner::{RunSummary, Runner, RunnerError, RunnerRequest, Stage};
use crate::split::{build_splits, SplitError, SplitManifest};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Corpus { path: String, source: CorpusError },
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("{context}: {source}")]
    Metrics { context: String, source: MetricsError },
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error("{context}: {source}")]
    Probe { context: String, source: ProbeError },
    #[error(transparent)]
    Results(#[from] ResultsError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// 2 for invalid configuration or input data, 3 for runner failures,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Validation(_)
            | PipelineError::Corpus { .. }
            | PipelineError::Split(_)
            | PipelineError::Correlation(_)
            | PipelineError::Results(_) => 2,
            PipelineError::Metrics { source, .. } => match source {
                MetricsError::Io(_) => 1,
                _ => 2,
            },
            PipelineError::Probe { source, .. } => match source {
                ProbeError::Numeric(_) | ProbeError::Io(_) => 1,
                _ => 2,
            },
            PipelineError::Runner(e) => match e {
                RunnerError::NotConfigured => 2,
                _ => 3,
            },
            PipelineError::Io { .. } => 1,
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(io_err(p))?;
    }
    Ok(())
}

fn read_corpus_file(path: &Path, name: &str, options: &ParseOptions) -> Result<Corpus> {
    if !path.is_file() {
        return Err(PipelineError::Validation(format!("corpus `{}` does not exist", path.display())));
    }
    parse_corpus_with(open(path)?, name, options)
        .map_err(|source| PipelineError::Corpus { path: path.display().to_string(), source })
}

/// Reads a pipeline-produced corpus file (no POS filtering).
pub fn read_corpus(path: &Path, name: &str) -> Result<Corpus> {
    read_corpus_file(path, name, &ParseOptions::default())
}

fn write_corpus_file(path: &Path, corpus: &Corpus) -> Result<()> {
    ensure_parent(path)?;
    let f = File::create(path).map_err(io_err(path))?;
    write_corpus(std::io::BufWriter::new(f), corpus).map_err(|source| PipelineError::Corpus {
        path: path.display().to_string(),
        source,
    })
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Hash of a file, or of every file below a directory (relative names
/// included, sorted).
pub fn content_hash(path: &Path) -> Result<String> {
    fn walk(h: &mut Sha256, root: &Path, dir: &Path) -> Result<()> {
        let mut entries: Vec<PathBuf> =
            std::fs::read_dir(dir).map_err(io_err(dir))?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(io_err(dir))?;
        entries.sort();
        for p in entries {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().into_owned();
            if p.is_dir() {
                walk(h, root, &p)?;
            } else {
                h.update(rel.as_bytes());
                h.update([0]);
                hash_file(h, &p)?;
            }
        }
        Ok(())
    }
    let mut h = Sha256::new();
    if path.is_dir() {
        walk(&mut h, path, path)?;
    } else {
        hash_file(&mut h, path)?;
    }
    Ok(hex::encode(h.finalize()))
}

// ---------------------------------------------------------------- split

/// Provenance hash of a split: the split parameters and both input
/// corpora. Paths are not included, so moving the inputs or the work
/// directory does not change it.
pub fn split_provenance(cfg: &PipelineConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&cfg.split).expect("split config serializes"));
    hash_file(&mut h, &cfg.paths.train)?;
    hash_file(&mut h, &cfg.paths.test)?;
    Ok(hex::encode(h.finalize()))
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Corpus, Corpus)> {
    let opts = ParseOptions { pos_filter: cfg.split.pos_filter.clone() };
    let train = read_corpus_file(&cfg.paths.train, "train", &opts)?;
    let test = read_corpus_file(&cfg.paths.test, "test", &opts)?;
    Ok((train, test))
}

/// Statistics of the input corpora and of any split files already present.
pub fn cmd_stats(cfg: &PipelineConfig) -> Result<Vec<DatasetRow>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.work_dir);
    let (train, test) = load_inputs(cfg)?;
    let mut rows = vec![DatasetRow::from_stats("train", &corpus_stats(&train)), DatasetRow::from_stats("test", &corpus_stats(&test))];
    for (name, path) in [
        ("filtered_train", layout.filtered_train()),
        ("exposed_eval", layout.eval(EvalName::Exposed, false)),
        ("held_out_eval", layout.eval(EvalName::HeldOut, false)),
    ] {
        if path.is_file() {
            rows.push(DatasetRow::from_stats(name, &corpus_stats(&read_corpus(&path, name)?)));
        }
    }
    Ok(rows)
}

/// Builds the split and writes all split files. Output goes to a staging
/// directory that replaces `split/` only on success.
pub fn cmd_split(cfg: &PipelineConfig) -> Result<SplitManifest> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.work_dir);
    let (train, test) = load_inputs(cfg)?;
    let provenance = split_provenance(cfg)?;
    let out = build_splits(&train, &test, &cfg.split.params(), provenance)?;

    let final_dir = layout.split_dir();
    let staging = layout.root().join("split.partial");
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let staged = Layout::new(layout.root()).with_split_dir(&staging);
    let write_all = || -> Result<()> {
        std::fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        let manifest_path = staged.manifest();
        std::fs::write(&manifest_path, out.manifest.to_json()?).map_err(io_err(&manifest_path))?;
        write_corpus_file(&staged.filtered_train(), &out.filtered_train)?;
        write_corpus_file(&staged.eval(EvalName::HeldOut, false), &out.held_out_eval.to_corpus())?;
        write_corpus_file(&staged.eval(EvalName::Exposed, false), &out.exposed_eval.to_corpus())?;
        write_corpus_file(&staged.eval(EvalName::HeldOut, true), &out.held_out_masked.to_corpus())?;
        write_corpus_file(&staged.eval(EvalName::Exposed, true), &out.exposed_masked.to_corpus())?;
        let rows = vec![
            DatasetRow::from_stats("train", &corpus_stats(&train)),
            DatasetRow::from_stats("test", &corpus_stats(&test)),
            DatasetRow::from_stats("filtered_train", &corpus_stats(&out.filtered_train)),
            DatasetRow::from_stats("exposed_eval", &corpus_stats(&out.exposed_eval.to_corpus())),
            DatasetRow::from_stats("held_out_eval", &corpus_stats(&out.held_out_eval.to_corpus())),
        ];
        write_rows_to(&staged.dataset_stats(), &rows)?;
        for (name, corpus) in [("train", &train), ("test", &test)] {
            let path = staged.lemma_table(name);
            let f = File::create(&path).map_err(io_err(&path))?;
            build_lemma_table(corpus).write_tsv(std::io::BufWriter::new(f)).map_err(io_err(&path))?;
        }
        Ok(())
    };
    if let Err(e) = write_all() {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    if final_dir.exists() {
        std::fs::remove_dir_all(&final_dir).map_err(io_err(&final_dir))?;
    }
    std::fs::rename(&staging, &final_dir).map_err(io_err(&final_dir))?;
    log::info!(
        "split: {} filtered-train, {} held-out eval, {} exposed eval instances",
        out.filtered_train.len(),
        out.held_out_eval.instances.len(),
        out.exposed_eval.instances.len()
    );
    Ok(out.manifest)
}

// ---------------------------------------------------------------- score

/// The gold file a condition is scored against.
pub fn gold_path(layout: &Layout, condition: Condition, set: EvalName) -> PathBuf {
    layout.eval(set, condition == Condition::ContextOnly)
}

/// One prediction file to score.
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub condition: Condition,
    pub set: EvalName,
    pub predictions: PathBuf,
}

/// Prediction files present under the work directory.
pub fn discover_predictions(layout: &Layout) -> Vec<ScoreRequest> {
    let mut out = Vec::new();
    for condition in [Condition::Full, Condition::ContextOnly, Condition::WordOnly] {
        for set in EvalName::ALL {
            let predictions = layout.predictions(condition.as_str(), set);
            if predictions.is_file() {
                out.push(ScoreRequest { condition, set, predictions });
            }
        }
    }
    out
}

/// Scores prediction files, writes per-lemma TSVs, and upserts
/// `scores.tsv` with one row per request plus a random-baseline row per
/// evaluation set.
pub fn cmd_score(layout: &Layout, requests: &[ScoreRequest]) -> Result<Vec<ProbeResult>> {
    if requests.iter().any(|r| r.condition == Condition::RandomBaseline) {
        return Err(PipelineError::Validation("the random baseline has no prediction file".into()));
    }
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for req in requests {
        let gold_file = gold_path(layout, req.condition, req.set);
        let gold = read_corpus(&gold_file, req.set.as_str())?;
        let ctx = format!("{} on {}", req.predictions.display(), layout.relative(&gold_file));
        let preds = read_predictions(open(&req.predictions)?)
            .map_err(|source| PipelineError::Metrics { context: ctx.clone(), source })?;
        let prf = score(&preds, &gold.instances).map_err(|source| PipelineError::Metrics { context: ctx.clone(), source })?;
        let per_lemma =
            per_lemma_f1(&preds, &gold.instances).map_err(|source| PipelineError::Metrics { context: ctx, source })?;
        let path = layout.per_lemma(req.condition.as_str(), req.set);
        ensure_parent(&path)?;
        let f = File::create(&path).map_err(io_err(&path))?;
        write_per_lemma_tsv(std::io::BufWriter::new(f), &per_lemma).map_err(io_err(&path))?;
        rows.push(ScoreRow::from_prf(req.condition, req.set, &prf));
        results.push(ProbeResult {
            condition: req.condition,
            set: req.set,
            metrics: ProbeMetrics { prf: Some(prf), ..Default::default() },
        });
    }
    let mut sets: Vec<EvalName> = requests.iter().map(|r| r.set).collect();
    sets.sort();
    sets.dedup();
    for set in sets {
        let gold = read_corpus(&layout.eval(set, false), set.as_str())?;
        let prf = random_baseline_prf(&gold)?;
        rows.push(ScoreRow::from_prf(Condition::RandomBaseline, set, &prf));
        results.push(ProbeResult {
            condition: Condition::RandomBaseline,
            set,
            metrics: ProbeMetrics { prf: Some(prf), ..Default::default() },
        });
    }
    for r in &results {
        r.validate().map_err(PipelineError::Validation)?;
    }
    upsert_rows(&layout.scores(), rows, |r: &ScoreRow| (r.condition, r.set))?;
    Ok(results)
}

fn random_baseline_prf(gold: &Corpus) -> Result<Prf> {
    if gold.is_empty() {
        return Err(PipelineError::Validation(format!("evaluation set `{}` is empty", gold.split_name)));
    }
    let pos = gold.instances.iter().filter(|i| i.label.is_positive()).count() as f64 / gold.len() as f64;
    let (precision, recall, f1) = random_baseline(pos)
        .map_err(|source| PipelineError::Metrics { context: "random baseline".into(), source })?;
    Ok(Prf { precision, recall, f1, counts: Confusion::default() })
}

// ---------------------------------------------------------------- correlate

pub fn correlate_files(per_lemma: &Path, freq: &Path) -> Result<CorrelationResult> {
    let rows = read_per_lemma_tsv(open(per_lemma)?).map_err(|source| PipelineError::Metrics {
        context: per_lemma.display().to_string(),
        source,
    })?;
    let table = FreqTable::read_tsv(open(freq)?)?;
    Ok(correlate_f1_frequency(&rows, &table)?)
}

/// Correlates full-model per-lemma F1 with frequency on every set that has
/// been scored; upserts `correlation.tsv`.
pub fn cmd_correlate(layout: &Layout, freq: &Path) -> Result<Vec<ProbeResult>> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for set in EvalName::ALL {
        let per_lemma = layout.per_lemma(Condition::Full.as_str(), set);
        if !per_lemma.is_file() {
            continue;
        }
        let r = correlate_files(&per_lemma, freq)?;
        rows.push(CorrelationRow::from_result(Condition::Full, set, &r));
        results.push(ProbeResult {
            condition: Condition::Full,
            set,
            metrics: ProbeMetrics { correlation: Some(r), ..Default::default() },
        });
    }
    if rows.is_empty() {
        return Err(PipelineError::Validation("no full-model per-lemma scores to correlate; run `score` first".into()));
    }
    upsert_rows(&layout.correlation(), rows, |r: &CorrelationRow| (r.condition, r.set))?;
    Ok(results)
}

// ---------------------------------------------------------------- probe

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    read_embeddings(open(path)?).map_err(|source| PipelineError::Probe { context: path.display().to_string(), source })
}

/// Replaces embedding labels with gold labels by id; every record must be
/// in `gold` and vice versa.
fn with_gold_labels(set: EmbeddingSet, gold: &Corpus, context: &str) -> Result<EmbeddingSet> {
    let labels: BTreeMap<&str, (Label, &str)> =
        gold.instances.iter().map(|i| (i.id.as_str(), (i.label, i.lemma.as_str()))).collect();
    if set.len() != labels.len() {
        return Err(PipelineError::Validation(format!(
            "{context}: {} embeddings for {} instances",
            set.len(),
            labels.len()
        )));
    }
    let mut records = Vec::with_capacity(set.len());
    for r in set.records() {
        let Some(&(label, lemma)) = labels.get(r.id.as_str()) else {
            return Err(PipelineError::Validation(format!("{context}: embedding `{}` has no instance", r.id)));
        };
        if r.label.is_some_and(|l| l != label) {
            return Err(PipelineError::Validation(format!("{context}: embedding `{}` disagrees with the gold label", r.id)));
        }
        records.push(EmbeddingRecord { label: Some(label), lemma: Some(lemma.to_string()), ..r.clone() });
    }
    EmbeddingSet::new(records).map_err(|source| PipelineError::Probe { context: context.into(), source })
}

fn expect_kind(set: &EmbeddingSet, kind: EmbeddingKind, path: &Path) -> Result<()> {
    if set.kind() != kind {
        return Err(PipelineError::Validation(format!("{} holds {:?} embeddings, expected {:?}", path.display(), set.kind(), kind)));
    }
    Ok(())
}

/// Name of the embedded file forming the k-NN reference space.
pub fn reference_name(reference: ReferenceSet) -> &'static str {
    match reference {
        ReferenceSet::Filtered => "filtered_train",
        ReferenceSet::Standard => "train",
    }
}

fn reference_corpus(cfg: &PipelineConfig, layout: &Layout) -> Result<Corpus> {
    match cfg.probe.reference {
        ReferenceSet::Filtered => read_corpus(&layout.filtered_train(), "filtered_train"),
        ReferenceSet::Standard => {
            read_corpus_file(&cfg.paths.train, "train", &ParseOptions { pos_filter: cfg.split.pos_filter.clone() })
        }
    }
}

/// Name of the embedded eval file for a condition.
pub fn eval_embedding_name(condition: Condition, set: EvalName) -> String {
    match condition {
        Condition::ContextOnly => format!("{set}_eval_masked"),
        _ => format!("{set}_eval"),
    }
}

/// Purity and k-NN F1 of contextual representations for the full and
/// context-only conditions on the requested sets; upserts `geometry.tsv`.
/// Masked evaluation instances are compared against the unmasked
/// reference space.
pub fn cmd_geometry(cfg: &PipelineConfig, sets: &[EvalName], conditions: &[Condition]) -> Result<Vec<ProbeResult>> {
    let layout = Layout::new(&cfg.paths.work_dir);
    let k = cfg.probe.k;
    let ref_path = layout.embeddings("contextual", reference_name(cfg.probe.reference));
    let reference = load_embeddings(&ref_path)?;
    expect_kind(&reference, EmbeddingKind::Contextual, &ref_path)?;
    let reference = with_gold_labels(reference, &reference_corpus(cfg, &layout)?, &ref_path.display().to_string())?;

    let mut results = Vec::new();
    let mut rows = Vec::new();
    for &condition in conditions {
        if !matches!(condition, Condition::Full | Condition::ContextOnly) {
            return Err(PipelineError::Validation(format!("geometry probes cover full and context_only, not {condition}")));
        }
        for &set in sets {
            let path = layout.embeddings("contextual", &eval_embedding_name(condition, set));
            let gold = read_corpus(&gold_path(&layout, condition, set), set.as_str())?;
            let eval = load_embeddings(&path)?;
            expect_kind(&eval, EmbeddingKind::Contextual, &path)?;
            let ctx = path.display().to_string();
            let eval = with_gold_labels(eval, &gold, &ctx)?;
            let probe_err = |source| PipelineError::Probe { context: ctx.clone(), source };
            let purity = neighborhood_purity(&eval, &reference, k).map_err(probe_err)?;
            let preds = knn_classify(&eval, &reference, k).map_err(probe_err)?;
            let knn = score(&preds, &gold.instances)
                .map_err(|source| PipelineError::Metrics { context: ctx.clone(), source })?;
            let knn_path = layout.predictions(&format!("knn_{condition}"), set);
            ensure_parent(&knn_path)?;
            write_predictions(File::create(&knn_path).map_err(io_err(&knn_path))?, &preds).map_err(io_err(&knn_path))?;
            rows.push(GeometryRow { condition, set, purity, knn_f1: knn.f1 });
            results.push(ProbeResult {
                condition,
                set,
                metrics: ProbeMetrics { purity: Some(purity), knn_f1: Some(knn.f1), ..Default::default() },
            });
        }
    }
    upsert_rows(&layout.geometry(), rows, |r: &GeometryRow| (r.condition, r.set))?;
    Ok(results)
}

/// Trains the word-only probe on static embeddings of the filtered train
/// set and writes `word_only_<set>` predictions for the requested sets.
pub fn cmd_word_probe(cfg: &PipelineConfig, sets: &[EvalName]) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.paths.work_dir);
    let train_path = layout.embeddings("static", "filtered_train");
    let train = load_embeddings(&train_path)?;
    expect_kind(&train, EmbeddingKind::Static, &train_path)?;
    let ctx = train_path.display().to_string();
    let train = with_gold_labels(train, &read_corpus(&layout.filtered_train(), "filtered_train")?, &ctx)?;
    let model = train_word_probe(&train, cfg.probe.probe_config())
        .map_err(|source| PipelineError::Probe { context: ctx, source })?;
    if !model.meta.converged {
        log::warn!(
            "word probe stopped after {} iterations with gradient norm {:.3e}",
            model.meta.iterations,
            model.meta.gradient_norm
        );
    }
    let mut written = Vec::new();
    for &set in sets {
        let path = layout.embeddings("static", &eval_embedding_name(Condition::WordOnly, set));
        let eval = load_embeddings(&path)?;
        expect_kind(&eval, EmbeddingKind::Static, &path)?;
        let preds = apply_word_probe(&model, &eval)
            .map_err(|source| PipelineError::Probe { context: path.display().to_string(), source })?;
        let out = layout.predictions(Condition::WordOnly.as_str(), set);
        ensure_parent(&out)?;
        write_predictions(File::create(&out).map_err(io_err(&out))?, &preds).map_err(io_err(&out))?;
        written.push(out);
    }
    Ok(written)
}

// ---------------------------------------------------------------- runner stages

fn request(cfg: &PipelineConfig, stage: Stage, seed: u64) -> RunnerRequest {
    RunnerRequest {
        stage,
        seed,
        hyper: cfg.runner.hyper.clone(),
        mask_placeholder: cfg.split.mask_token.clone(),
        checkpoint: None,
        kind: None,
    }
}

/// Fine-tunes one model per sweep seed on the standard train set, writes
/// `sweep.tsv` and `sweep_selection.json`, and returns the selected seed.
pub fn cmd_sweep(cfg: &PipelineConfig, runner: &Runner) -> Result<u64> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.work_dir);
    let seeds = sweep_seeds(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.runner.parallelism)
        .build()
        .map_err(|e| PipelineError::Validation(format!("cannot build sweep thread pool: {e}")))?;
    let summaries: Vec<Result<RunSummary>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let out = layout.sweep_model(seed);
                runner
                    .finetune(&format!("finetune_standard_seed{seed}"), &request(cfg, Stage::Finetune, seed), &cfg.paths.train, &out)
                    .map_err(PipelineError::from)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(seeds.len());
    for s in summaries {
        let s = s?;
        rows.push(SweepRow { seed: s.seed, precision: s.validation.precision, recall: s.validation.recall, f1: s.validation.f1 });
    }
    rows.sort_by_key(|r| r.seed);
    write_rows_to(&layout.sweep(), &rows)?;
    let chosen = select_median(&rows).expect("at least one sweep seed");
    let sel = SweepSelection { seed: chosen, candidates: rows.len() };
    let path = layout.sweep_selection();
    std::fs::write(&path, serde_json::to_string_pretty(&sel).expect("selection serializes") + "\n").map_err(io_err(&path))?;
    log::info!("sweep: selected seed {chosen} of {}", rows.len());
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSelection {
    pub seed: u64,
    pub candidates: usize,
}

/// Sweep seeds, or the single configured seed when none are listed.
pub fn sweep_seeds(cfg: &PipelineConfig) -> Vec<u64> {
    if cfg.runner.sweep_seeds.is_empty() {
        vec![cfg.runner.seed]
    } else {
        cfg.runner.sweep_seeds.clone()
    }
}

fn selected_seed(layout: &Layout) -> Result<u64> {
    let path = layout.sweep_selection();
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let sel: SweepSelection = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    Ok(sel.seed)
}

/// Scores the official-test predictions of the standard and filtered
/// models into `benchmark.tsv`.
pub fn cmd_benchmark(cfg: &PipelineConfig, seed: u64) -> Result<Vec<BenchmarkRow>> {
    let layout = Layout::new(&cfg.paths.work_dir);
    let test = read_corpus_file(&cfg.paths.test, "test", &ParseOptions { pos_filter: cfg.split.pos_filter.clone() })?;
    let mut rows = Vec::new();
    for model in ["standard", "filtered"] {
        let path = layout.benchmark_predictions(model);
        if !path.is_file() {
            continue;
        }
        let ctx = path.display().to_string();
        let preds = read_predictions(open(&path)?).map_err(|source| PipelineError::Metrics { context: ctx.clone(), source })?;
        let prf = score(&preds, &test.instances).map_err(|source| PipelineError::Metrics { context: ctx, source })?;
        rows.push(BenchmarkRow { model: model.into(), seed, precision: prf.precision, recall: prf.recall, f1: prf.f1 });
    }
    write_rows_to(&layout.benchmark(), &rows)?;
    Ok(rows)
}

// ---------------------------------------------------------------- report

pub fn cmd_report(layout: &Layout) -> Result<Report> {
    let report = build_report(layout);
    let dir = layout.report_dir();
    report.write(&dir).map_err(io_err(&dir))?;
    Ok(report)
}

// ---------------------------------------------------------------- run-all

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StageRecord {
    input_hash: String,
    outputs: BTreeMap<String, String>,
}

/// Content-hash checkpoints under `.stages/`.
pub struct Checkpoints {
    dir: PathBuf,
    root: PathBuf,
}

impl Checkpoints {
    pub fn new(layout: &Layout) -> Self {
        Self { dir: layout.stages_dir(), root: layout.root().to_path_buf() }
    }

    fn input_hash(params: &str, inputs: &[PathBuf]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(params.as_bytes());
        for p in inputs {
            h.update([0xff]);
            h.update(content_hash(p)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    fn key(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().into_owned()
    }

    /// Runs `body` unless a record shows the same inputs and unchanged
    /// outputs.
    pub fn run(
        &self,
        name: &str,
        params: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<StageOutcome> {
        let record_path = self.dir.join(format!("{name}.json"));
        let input_hash = Self::input_hash(params, inputs)?;
        if let Ok(text) = std::fs::read_to_string(&record_path) {
            if let Ok(rec) = serde_json::from_str::<StageRecord>(&text) {
                let fresh = rec.input_hash == input_hash
                    && outputs.len() == rec.outputs.len()
                    && outputs.iter().all(|o| {
                        o.exists() && rec.outputs.get(&self.key(o)).is_some_and(|h| content_hash(o).ok().as_ref() == Some(h))
                    });
                if fresh {
                    log::info!("stage {name}: up to date");
                    return Ok(StageOutcome::UpToDate);
                }
            }
        }
        if record_path.exists() {
            std::fs::remove_file(&record_path).map_err(io_err(&record_path))?;
        }
        log::info!("stage {name}: running");
        body()?;
        let mut outs = BTreeMap::new();
        for o in outputs {
            if !o.exists() {
                return Err(PipelineError::Validation(format!("stage {name} did not produce {}", o.display())));
            }
            outs.insert(self.key(o), content_hash(o)?);
        }
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let rec = StageRecord { input_hash, outputs: outs };
        std::fs::write(&record_path, serde_json::to_string_pretty(&rec).expect("record serializes") + "\n")
            .map_err(io_err(&record_path))?;
        Ok(StageOutcome::Ran)
    }
}

#[derive(Debug)]
pub struct RunAllSummary {
    pub stages: Vec<(String, StageOutcome)>,
    pub report: Report,
}

fn split_outputs(layout: &Layout) -> Vec<PathBuf> {
    let mut v = vec![layout.manifest(), layout.filtered_train(), layout.dataset_stats(), layout.lemma_table("train"), layout.lemma_table("test")];
    for set in EvalName::ALL {
        v.push(layout.eval(set, false));
        v.push(layout.eval(set, true));
    }
    v
}

/// split, then (unless `no_model`) sweep, fine-tune, predict and embed
/// through the runner, then the model-free probe, score, benchmark,
/// correlate and report stages on whatever inputs exist.
pub fn cmd_run_all(cfg: &PipelineConfig, no_model: bool) -> Result<RunAllSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.work_dir);
    let cp = Checkpoints::new(&layout);
    let mut stages: Vec<(String, StageOutcome)> = Vec::new();
    let cfg_json = cfg.canonical_json();
    let split_params = serde_json::to_string(&cfg.split).expect("split config serializes");

    let outcome = cp.run("split", &split_params, &[cfg.paths.train.clone(), cfg.paths.test.clone()], &split_outputs(&layout), || {
        cmd_split(cfg).map(|_| ())
    })?;
    stages.push(("split".into(), outcome));

    if !no_model {
        let runner = Runner::new(&cfg.runner, layout.logs_dir())?;
        let runner_params = serde_json::to_string(&(&cfg.runner.hyper, &cfg.split.mask_token)).expect("serializes");
        run_model_stages(cfg, &layout, &cp, &runner, &runner_params, &mut stages)?;
    }

    // Model-free stages run on whatever runner outputs exist.
    let probe_params = serde_json::to_string(&cfg.probe).expect("probe config serializes");
    let ref_emb = layout.embeddings("contextual", reference_name(cfg.probe.reference));
    let geometry_inputs: Vec<PathBuf> = std::iter::once(ref_emb)
        .chain([Condition::Full, Condition::ContextOnly].iter().flat_map(|&c| {
            EvalName::ALL.map(|s| layout.embeddings("contextual", &eval_embedding_name(c, s)))
        }))
        .collect();
    stages.push(run_if_present(&cp, "probe_geometry", &probe_params, &geometry_inputs, &[layout.geometry()], || {
        cmd_geometry(cfg, &EvalName::ALL, &[Condition::Full, Condition::ContextOnly]).map(|_| ())
    })?);

    let word_inputs: Vec<PathBuf> = std::iter::once(layout.embeddings("static", "filtered_train"))
        .chain(EvalName::ALL.map(|s| layout.embeddings("static", &eval_embedding_name(Condition::WordOnly, s))))
        .collect();
    let word_outputs: Vec<PathBuf> = EvalName::ALL.map(|s| layout.predictions(Condition::WordOnly.as_str(), s)).to_vec();
    stages.push(run_if_present(&cp, "probe_word_only", &probe_params, &word_inputs, &word_outputs, || {
        cmd_word_probe(cfg, &EvalName::ALL).map(|_| ())
    })?);

    let requests = discover_predictions(&layout);
    let mut score_inputs: Vec<PathBuf> = requests.iter().map(|r| r.predictions.clone()).collect();
    score_inputs.extend(EvalName::ALL.iter().flat_map(|&s| [layout.eval(s, false), layout.eval(s, true)]));
    let score_outcome = if requests.is_empty() {
        log::info!("stage score: skipped (no prediction files)");
        StageOutcome::Skipped
    } else {
        let mut outputs = vec![layout.scores()];
        outputs.extend(requests.iter().map(|r| layout.per_lemma(r.condition.as_str(), r.set)));
        cp.run("score", "", &score_inputs, &outputs, || cmd_score(&layout, &requests).map(|_| ()))?
    };
    stages.push(("score".into(), score_outcome));

    let bench_inputs: Vec<PathBuf> = ["standard", "filtered"].map(|m| layout.benchmark_predictions(m)).to_vec();
    if bench_inputs.iter().any(|p| p.is_file()) {
        let seed = if layout.sweep_selection().is_file() { selected_seed(&layout)? } else { cfg.runner.seed };
        let present: Vec<PathBuf> = bench_inputs.into_iter().filter(|p| p.is_file()).collect();
        let mut inputs = present.clone();
        inputs.push(cfg.paths.test.clone());
        let params = format!("{seed}:{split_params}");
        stages.push(("benchmark".into(), cp.run("benchmark", &params, &inputs, &[layout.benchmark()], || {
            cmd_benchmark(cfg, seed).map(|_| ())
        })?));
    } else {
        stages.push(("benchmark".into(), StageOutcome::Skipped));
    }

    let corr_outcome = match &cfg.paths.freq {
        Some(freq) => {
            let per_lemma: Vec<PathBuf> =
                EvalName::ALL.iter().map(|&s| layout.per_lemma(Condition::Full.as_str(), s)).filter(|p| p.is_file()).collect();
            if per_lemma.is_empty() {
                StageOutcome::Skipped
            } else {
                let mut inputs = per_lemma;
                inputs.push(freq.clone());
                cp.run("correlate", "", &inputs, &[layout.correlation()], || cmd_correlate(&layout, freq).map(|_| ()))?
            }
        }
        None => StageOutcome::Skipped,
    };
    stages.push(("correlate".into(), corr_outcome));

    let report = cmd_report(&layout)?;
    stages.push(("report".into(), StageOutcome::Ran));
    log::debug!("run-all finished with config {cfg_json}");
    Ok(RunAllSummary { stages, report })
}

fn run_if_present(
    cp: &Checkpoints,
    name: &str,
    params: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    body: impl FnOnce() -> Result<()>,
) -> Result<(String, StageOutcome)> {
    if let Some(missing) = inputs.iter().find(|p| !p.exists()) {
        log::info!("stage {name}: skipped ({} absent)", missing.display());
        return Ok((name.into(), StageOutcome::Skipped));
    }
    Ok((name.into(), cp.run(name, params, inputs, outputs, body)?))
}

fn run_model_stages(
    cfg: &PipelineConfig,
    layout: &Layout,
    cp: &Checkpoints,
    runner: &Runner,
    runner_params: &str,
    stages: &mut Vec<(String, StageOutcome)>,
) -> Result<()> {
    let seeds = sweep_seeds(cfg);
    let mut sweep_outputs = vec![layout.sweep(), layout.sweep_selection()];
    sweep_outputs.extend(seeds.iter().map(|&s| layout.sweep_model(s)));
    let params = format!("{runner_params}:{:?}", seeds);
    stages.push(("sweep".into(), cp.run("sweep", &params, std::slice::from_ref(&cfg.paths.train), &sweep_outputs, || {
        cmd_sweep(cfg, runner).map(|_| ())
    })?));
    let seed = selected_seed(layout)?;
    let standard = layout.sweep_model(seed);
    let filtered = layout.filtered_model(seed);

    let params = format!("{runner_params}:{seed}");
    stages.push(("finetune".into(), cp.run("finetune", &params, &[layout.filtered_train()], std::slice::from_ref(&filtered), || {
        runner
            .finetune(&format!("finetune_filtered_seed{seed}"), &request(cfg, Stage::Finetune, seed), &layout.filtered_train(), &filtered)
            .map(|_| ())
            .map_err(PipelineError::from)
    })?));

    // (tag, checkpoint, input, output)
    let mut predict_jobs: Vec<(String, PathBuf, PathBuf, PathBuf)> = vec![
        ("predict_benchmark_standard".into(), standard.clone(), cfg.paths.test.clone(), layout.benchmark_predictions("standard")),
        ("predict_benchmark_filtered".into(), filtered.clone(), cfg.paths.test.clone(), layout.benchmark_predictions("filtered")),
    ];
    for set in EvalName::ALL {
        for (cond, masked) in [(Condition::Full, false), (Condition::ContextOnly, true)] {
            predict_jobs.push((
                format!("predict_{cond}_{set}"),
                filtered.clone(),
                layout.eval(set, masked),
                layout.predictions(cond.as_str(), set),
            ));
        }
    }
    let mut inputs = vec![standard.clone(), filtered.clone(), cfg.paths.test.clone()];
    inputs.extend(EvalName::ALL.iter().flat_map(|&s| [layout.eval(s, false), layout.eval(s, true)]));
    let outputs: Vec<PathBuf> = predict_jobs.iter().map(|j| j.3.clone()).collect();
    stages.push(("predict".into(), cp.run("predict", runner_params, &inputs, &outputs, || {
        for (tag, ckpt, input, output) in &predict_jobs {
            let mut req = request(cfg, Stage::Predict, seed);
            req.checkpoint = Some(ckpt.clone());
            runner.invoke(tag, &req, input, output)?;
        }
        Ok(())
    })?));

    let ref_name = reference_name(cfg.probe.reference);
    let ref_input = match cfg.probe.reference {
        ReferenceSet::Filtered => layout.filtered_train(),
        ReferenceSet::Standard => cfg.paths.train.clone(),
    };
    let mut embed_jobs: Vec<(EmbeddingKind, String, PathBuf)> = vec![
        (EmbeddingKind::Contextual, ref_name.to_string(), ref_input.clone()),
        (EmbeddingKind::Static, "filtered_train".to_string(), layout.filtered_train()),
    ];
    for set in EvalName::ALL {
        embed_jobs.push((EmbeddingKind::Contextual, format!("{set}_eval"), layout.eval(set, false)));
        embed_jobs.push((EmbeddingKind::Contextual, format!("{set}_eval_masked"), layout.eval(set, true)));
        embed_jobs.push((EmbeddingKind::Static, format!("{set}_eval"), layout.eval(set, false)));
    }
    let kind_name = |k: EmbeddingKind| match k {
        EmbeddingKind::Contextual => "contextual",
        EmbeddingKind::Static => "static",
    };
    let mut inputs = vec![filtered.clone(), ref_input];
    inputs.extend(EvalName::ALL.iter().flat_map(|&s| [layout.eval(s, false), layout.eval(s, true)]));
    inputs.push(layout.filtered_train());
    let outputs: Vec<PathBuf> = embed_jobs.iter().map(|(k, n, _)| layout.embeddings(kind_name(*k), n)).collect();
    let params = format!("{runner_params}:{ref_name}");
    stages.push(("embed".into(), cp.run("embed", &params, &inputs, &outputs, || {
        for (kind, name, input) in &embed_jobs {
            let mut req = request(cfg, Stage::Embed, seed);
            req.checkpoint = Some(filtered.clone());
            req.kind = Some(*kind);
            runner.invoke(&format!("embed_{}_{name}", kind_name(*kind)), &req, input, &layout.embeddings(kind_name(*kind), name))?;
        }
        Ok(())
    })?));
    Ok(())
}
