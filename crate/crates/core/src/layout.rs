//! File layout of a work directory.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// The two diagnostic evaluation sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalName {
    Exposed,
    HeldOut,
}

impl EvalName {
    pub const ALL: [EvalName; 2] = [EvalName::Exposed, EvalName::HeldOut];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalName::Exposed => "exposed",
            EvalName::HeldOut => "held_out",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            EvalName::Exposed => "Exposed",
            EvalName::HeldOut => "Held-out",
        }
    }
}

impl fmt::Display for EvalName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EvalName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exposed" => Ok(EvalName::Exposed),
            "held_out" => Ok(EvalName::HeldOut),
            other => Err(format!("unknown evaluation set `{other}` (expected exposed or held_out)")),
        }
    }
}

/// Paths under one work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
    split: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let split = root.join("split");
        Self { root, split }
    }

    /// Same layout with split files under `dir` (used for staging).
    pub fn with_split_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.split = dir.into();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split_dir(&self) -> PathBuf {
        self.split.clone()
    }
    pub fn manifest(&self) -> PathBuf {
        self.split_dir().join("manifest.json")
    }
    pub fn filtered_train(&self) -> PathBuf {
        self.split_dir().join("filtered_train.jsonl")
    }
    pub fn eval(&self, set: EvalName, masked: bool) -> PathBuf {
        let suffix = if masked { "_masked" } else { "" };
        self.split_dir().join(format!("{set}_eval{suffix}.jsonl"))
    }
    pub fn dataset_stats(&self) -> PathBuf {
        self.split_dir().join("dataset_stats.tsv")
    }
    pub fn lemma_table(&self, split: &str) -> PathBuf {
        self.split_dir().join(format!("lemma_table_{split}.tsv"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn sweep_model(&self, seed: u64) -> PathBuf {
        self.models_dir().join(format!("standard_seed{seed}"))
    }
    pub fn filtered_model(&self, seed: u64) -> PathBuf {
        self.models_dir().join(format!("filtered_seed{seed}"))
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.root.join("predictions")
    }
    /// Prediction file for a condition (`full`, `context_only`, `word_only`) on a set.
    pub fn predictions(&self, condition: &str, set: EvalName) -> PathBuf {
        self.predictions_dir().join(format!("{condition}_{set}.jsonl"))
    }
    /// Official-test predictions of the `standard` or `filtered` model.
    pub fn benchmark_predictions(&self, model: &str) -> PathBuf {
        self.predictions_dir().join(format!("benchmark_{model}.jsonl"))
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }
    /// `kind` is `contextual` or `static`; `name` names the embedded file.
    pub fn embeddings(&self, kind: &str, name: &str) -> PathBuf {
        self.embeddings_dir().join(format!("{kind}_{name}.jsonl"))
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }
    pub fn scores(&self) -> PathBuf {
        self.results_dir().join("scores.tsv")
    }
    pub fn per_lemma(&self, condition: &str, set: EvalName) -> PathBuf {
        self.results_dir().join("per_lemma").join(format!("{condition}_{set}.tsv"))
    }
    pub fn correlation(&self) -> PathBuf {
        self.results_dir().join("correlation.tsv")
    }
    pub fn geometry(&self) -> PathBuf {
        self.results_dir().join("geometry.tsv")
    }
    pub fn sweep(&self) -> PathBuf {
        self.results_dir().join("sweep.tsv")
    }
    pub fn sweep_selection(&self) -> PathBuf {
        self.results_dir().join("sweep_selection.json")
    }
    pub fn benchmark(&self) -> PathBuf {
        self.results_dir().join("benchmark.tsv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn stages_dir(&self) -> PathBuf {
        self.root.join(".stages")
    }

    /// Root-relative rendering of a path, for messages and reports.
    pub fn relative<'a>(&self, path: &'a Path) -> std::borrow::Cow<'a, str> {
        match path.strip_prefix(&self.root) {
            Ok(rel) => rel.to_string_lossy().into_owned().into(),
            Err(_) => path.to_string_lossy(),
        }
    }
}
