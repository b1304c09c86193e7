//! Instance data model, JSONL corpus I/O and dataset-level statistics.
//!
//! The corpus file is UTF-8 JSONL, one object per line:
//!
//! ```text
//! {"id":"a1","tokens":["The","committee","absorbed","the","cost"],
//!  "target_start":2,"target_end":2,"lemma":"absorb","label":1,"pos":"VERB"}
//! ```
//!
//! The same format is used for every corpus slice the harness writes
//! (filtered train, evaluation sets, masked evaluation sets) and is what the
//! model runner reads.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate instance id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {reason}")]
    Validation { line: usize, reason: String },
    #[error("corpus I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Binary metaphoricity label of one target-word usage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Literal,
    Metaphorical,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Metaphorical
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Literal => Label::Metaphorical,
            Label::Metaphorical => Label::Literal,
        }
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Metaphorical
        } else {
            Label::Literal
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        match label {
            Label::Literal => 0,
            Label::Metaphorical => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::Literal),
            1 => Ok(Label::Metaphorical),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Inclusive token range of the target word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TargetSpan {
    pub start: usize,
    pub end: usize,
}

impl TargetSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(index: usize) -> Self {
        Self { start: index, end: index }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One annotated usage of a target lemma.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub span: TargetSpan,
    pub lemma: String,
    pub label: Label,
    pub pos: Option<String>,
}

impl Instance {
    /// Builds an instance, normalizing the lemma to lowercase and checking
    /// the span and lemma invariants.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        span: TargetSpan,
        lemma: &str,
        label: Label,
        pos: Option<String>,
    ) -> Result<Self, String> {
        let id = id.into();
        if id.is_empty() {
            return Err("instance id is empty".into());
        }
        let lemma = lemma.trim().to_lowercase();
        if lemma.is_empty() {
            return Err(format!("instance `{id}`: lemma is empty"));
        }
        if span.start > span.end {
            return Err(format!(
                "instance `{id}`: target span ({}, {}) has start after end",
                span.start, span.end
            ));
        }
        if span.end >= tokens.len() {
            return Err(format!(
                "instance `{id}`: target span ({}, {}) out of bounds for {} tokens",
                span.start,
                span.end,
                tokens.len()
            ));
        }
        Ok(Self { id, tokens, span, lemma, label, pos })
    }

    pub fn target_tokens(&self) -> &[String] {
        &self.tokens[self.span.start..=self.span.end]
    }
}

/// Wire form of [`Instance`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: String,
    tokens: Vec<String>,
    target_start: usize,
    target_end: usize,
    lemma: String,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<String>,
}

impl From<&Instance> for InstanceRecord {
    fn from(inst: &Instance) -> Self {
        Self {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
            target_start: inst.span.start,
            target_end: inst.span.end,
            lemma: inst.lemma.clone(),
            label: inst.label,
            pos: inst.pos.clone(),
        }
    }
}

/// An ordered collection of instances with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub split_name: String,
    pub instances: Vec<Instance>,
}

impl Corpus {
    /// Builds a corpus after checking id uniqueness.
    pub fn new(split_name: impl Into<String>, instances: Vec<Instance>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            if !seen.insert(inst.id.as_str()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: inst.id.clone() });
            }
        }
        Ok(Self { split_name: split_name.into(), instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.instances.iter().map(|i| i.id.as_str())
    }

    pub fn lemmas(&self) -> BTreeSet<&str> {
        self.instances.iter().map(|i| i.lemma.as_str()).collect()
    }
}

/// Parse-time options.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Keep only instances whose `pos` equals this tag (case-insensitive).
    /// Instances without a `pos` field are kept.
    pub pos_filter: Option<String>,
}

/// Parses a JSONL corpus stream. Blank lines are skipped; line numbers in
/// errors are 1-based physical lines.
pub fn parse_corpus<R: BufRead>(reader: R, split_name: &str) -> Result<Corpus, CorpusError> {
    parse_corpus_with(reader, split_name, &ParseOptions::default())
}

pub fn parse_corpus_with<R: BufRead>(
    reader: R,
    split_name: &str,
    options: &ParseOptions,
) -> Result<Corpus, CorpusError> {
    let mut instances = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: line_no, source })?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: rec.id });
        }
        let inst = Instance::new(
            rec.id,
            rec.tokens,
            TargetSpan::new(rec.target_start, rec.target_end),
            &rec.lemma,
            rec.label,
            rec.pos,
        )
        .map_err(|reason| CorpusError::Validation { line: line_no, reason })?;
        if let (Some(want), Some(have)) = (&options.pos_filter, &inst.pos) {
            if !want.eq_ignore_ascii_case(have) {
                continue;
            }
        }
        instances.push(inst);
    }
    Ok(Corpus { split_name: split_name.to_string(), instances })
}

/// Writes a corpus as JSONL, one instance per line, in corpus order.
pub fn write_corpus<W: Write>(mut writer: W, corpus: &Corpus) -> Result<(), CorpusError> {
    for inst in &corpus.instances {
        let line = serde_json::to_string(&InstanceRecord::from(inst))
            .expect("instance records always serialize");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Sample count, metaphorical proportion and lemma count of a corpus slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub n_metaphorical: usize,
    pub met_pct: f64,
    pub n_lemmas: usize,
    /// Set when the corpus was empty and `met_pct` was reported as 0.
    pub empty: bool,
}

pub fn corpus_stats(corpus: &Corpus) -> DatasetStats {
    let n_samples = corpus.len();
    let n_metaphorical = corpus.instances.iter().filter(|i| i.label.is_positive()).count();
    let n_lemmas = corpus.lemmas().len();
    let empty = n_samples == 0;
    if empty {
        log::warn!("corpus `{}` is empty; metaphorical share reported as 0", corpus.split_name);
    }
    let met_pct = if empty { 0.0 } else { n_metaphorical as f64 / n_samples as f64 };
    DatasetStats { n_samples, n_metaphorical, met_pct, n_lemmas, empty }
}
