//! Deterministic stand-in for the model runner, for tests and dry runs.
//!
//! Speaks the runner protocol (`<stage> --config <file> --in <path> --out
//! <path>`) without a neural model. Fine-tuning fits smoothed log-odds of
//! context tokens plus a per-lemma prior; prediction adds seeded noise;
//! embeddings are built from those signals and from hashes of the lemma or
//! target form. Masked targets get no lemma information, so the
//! context-only condition behaves as it should.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use lexhold::corpus::{parse_corpus, Corpus, Instance};
use lexhold::metrics::{score, write_predictions, PredictionRecord};
use lexhold::probes::{write_embeddings, EmbeddingKind, EmbeddingRecord, EmbeddingSet};
use lexhold::runner::{config_hash, RunSummary, RunnerRequest, Stage, ValidationScores, SUMMARY_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MODEL_FILE: &str = "model.json";
const DIM: usize = 16;
const NOISE: f64 = 0.6;

#[derive(Parser, Debug)]
struct Args {
    stage: Stage,
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Model {
    seed: u64,
    /// Smoothed log-odds of each lower-cased context token.
    context: BTreeMap<String, f64>,
    /// Smoothed log-odds of each lemma.
    lemma: BTreeMap<String, f64>,
}

fn hash_u64(parts: &[&str]) -> u64 {
    let h = config_hash(parts.join("\u{1f}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex prefix")
}

fn rng_for(parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_u64(parts))
}

fn is_masked(inst: &Instance, mask: &str) -> bool {
    inst.target_tokens().iter().all(|t| t == mask)
}

fn context_tokens(inst: &Instance) -> impl Iterator<Item = String> + '_ {
    inst.tokens
        .iter()
        .enumerate()
        .filter(move |(i, _)| *i < inst.span.start || *i > inst.span.end)
        .map(|(_, t)| t.to_lowercase())
}

fn log_odds(items: impl Iterator<Item = (String, bool)>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (k, pos) in items {
        let c = counts.entry(k).or_default();
        if pos {
            c.0 += 1.0;
        } else {
            c.1 += 1.0;
        }
    }
    counts.into_iter().map(|(k, (p, n))| (k, ((p + 1.0) / (n + 1.0)).ln())).collect()
}

impl Model {
    fn fit(train: &[&Instance], seed: u64) -> Self {
        let context = log_odds(train.iter().flat_map(|i| context_tokens(i).map(move |t| (t, i.label.is_positive()))));
        let lemma = log_odds(train.iter().map(|i| (i.lemma.clone(), i.label.is_positive())));
        Model { seed, context, lemma }
    }

    fn context_signal(&self, inst: &Instance) -> f64 {
        let vals: Vec<f64> = context_tokens(inst).filter_map(|t| self.context.get(&t).copied()).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64 * 3.0
        }
    }

    fn lemma_signal(&self, inst: &Instance, mask: &str) -> f64 {
        if is_masked(inst, mask) {
            0.0
        } else {
            self.lemma.get(&inst.lemma).copied().unwrap_or(0.0)
        }
    }

    fn score(&self, inst: &Instance, mask: &str) -> f64 {
        let noise: f64 = rng_for(&[&self.seed.to_string(), &inst.id]).gen_range(-NOISE..NOISE);
        let z = self.context_signal(inst) + self.lemma_signal(inst, mask) + noise - 0.3;
        1.0 / (1.0 + (-z).exp())
    }
}

fn read_input(path: &Path) -> Result<Corpus, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_corpus(BufReader::new(f), "input").map_err(|e| format!("{}: {e}", path.display()))
}

fn load_model(req: &RunnerRequest) -> Result<Model, String> {
    let dir = req.checkpoint.as_ref().ok_or("predict and embed need a checkpoint")?;
    let path = dir.join(MODEL_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn finetune(req: &RunnerRequest, cfg_bytes: &[u8], corpus: &Corpus, out: &Path) -> Result<(), String> {
    let frac = req.hyper.validation_fraction;
    let (valid, train): (Vec<&Instance>, Vec<&Instance>) =
        corpus.instances.iter().partition(|i| (hash_u64(&["valid", &i.id]) as f64 / u64::MAX as f64) < frac);
    let model = Model::fit(&train, req.seed);
    let preds: Vec<PredictionRecord> =
        valid.iter().map(|i| PredictionRecord::from_score(&i.id, model.score(i, &req.mask_placeholder))).collect();
    let gold: Vec<Instance> = valid.into_iter().cloned().collect();
    let prf = score(&preds, &gold).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let write_json = |name: &str, text: String| std::fs::write(out.join(name), text + "\n").map_err(|e| e.to_string());
    write_json(MODEL_FILE, serde_json::to_string(&model).map_err(|e| e.to_string())?)?;
    let summary = RunSummary {
        seed: req.seed,
        config_hash: config_hash(cfg_bytes),
        best_epoch: Some(1 + (req.seed % u64::from(req.hyper.epochs)) as u32),
        validation: ValidationScores { precision: prf.precision, recall: prf.recall, f1: prf.f1 },
    };
    write_json(SUMMARY_FILE, serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?)
}

fn predict(req: &RunnerRequest, corpus: &Corpus, out: &Path) -> Result<(), String> {
    let model = load_model(req)?;
    let preds: Vec<PredictionRecord> = corpus
        .instances
        .iter()
        .map(|i| PredictionRecord::from_score(&i.id, model.score(i, &req.mask_placeholder)))
        .collect();
    write_predictions(BufWriter::new(File::create(out).map_err(|e| e.to_string())?), &preds).map_err(|e| e.to_string())
}

fn embed(req: &RunnerRequest, corpus: &Corpus, out: &Path) -> Result<(), String> {
    let kind = req.kind.ok_or("embed needs a kind")?;
    let model = load_model(req)?;
    let mask = &req.mask_placeholder;
    let records = corpus
        .instances
        .iter()
        .map(|inst| {
            let vector: Vec<f64> = match kind {
                EmbeddingKind::Contextual => {
                    let mut v = vec![0.0; DIM];
                    let mut noise = rng_for(&[&model.seed.to_string(), "ctx", &inst.id]);
                    v[0] = model.context_signal(inst) + model.lemma_signal(inst, mask);
                    if !is_masked(inst, mask) {
                        let mut lemma_rng = rng_for(&["lemma", &inst.lemma]);
                        for x in &mut v[1..8] {
                            *x = lemma_rng.gen_range(-1.0..1.0);
                        }
                    }
                    for x in &mut v {
                        *x += noise.gen_range(-0.3..0.3);
                    }
                    v
                }
                EmbeddingKind::Static => {
                    let form = inst.target_tokens().join(" ").to_lowercase();
                    let mut r = rng_for(&["static", &form]);
                    (0..DIM).map(|_| r.gen_range(-1.0..1.0)).collect()
                }
            };
            EmbeddingRecord { id: inst.id.clone(), kind, label: Some(inst.label), lemma: Some(inst.lemma.clone()), vector }
        })
        .collect();
    let set = EmbeddingSet::new(records).map_err(|e| e.to_string())?;
    write_embeddings(BufWriter::new(File::create(out).map_err(|e| e.to_string())?), &set).map_err(|e| e.to_string())
}

fn run(args: Args) -> Result<(), String> {
    let cfg_bytes = std::fs::read(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let req: RunnerRequest = serde_json::from_slice(&cfg_bytes).map_err(|e| format!("bad config: {e}"))?;
    if req.stage != args.stage {
        return Err(format!("config is for stage {}, invoked as {}", req.stage, args.stage));
    }
    let corpus = read_input(&args.input)?;
    if corpus.is_empty() {
        return Err(format!("{} is empty", args.input.display()));
    }
    eprintln!("mock runner: {} on {} instances (seed {})", req.stage, corpus.len(), req.seed);
    match args.stage {
        Stage::Finetune => finetune(&req, &cfg_bytes, &corpus, &args.out),
        Stage::Predict => predict(&req, &corpus, &args.out),
        Stage::Embed => embed(&req, &corpus, &args.out),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock runner: {e}");
            ExitCode::FAILURE
        }
    }
}
