use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Mean-pooled final-layer states over the target span.
    Contextual,
    /// Mean-pooled lookup-layer vectors of the target's pieces.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub kind: EmbeddingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<String>,
    pub vector: Vec<f64>,
}

/// Records of one kind and one dimension, with unique ids and finite
/// components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    records: Vec<EmbeddingRecord>,
    dim: usize,
    kind: EmbeddingKind,
}

impl EmbeddingSet {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self, ProbeError> {
        let first = records.first().ok_or_else(|| ProbeError::Input("embedding set is empty".into()))?;
        let (dim, kind) = (first.vector.len(), first.kind);
        if dim == 0 {
            return Err(ProbeError::Input("embedding dimension must be at least 1".into()));
        }
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dim {
                return Err(ProbeError::DimensionMismatch { expected: dim, got: r.vector.len() });
            }
            if r.kind != kind {
                return Err(ProbeError::Input(format!("record `{}` mixes embedding kinds", r.id)));
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(ProbeError::Input(format!("record `{}` has a non-finite component", r.id)));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(ProbeError::Input(format!("duplicate embedding id `{}`", r.id)));
            }
        }
        Ok(Self { records, dim, kind })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn labels(&self) -> Result<Vec<Label>, ProbeError> {
        self.records
            .iter()
            .map(|r| r.label.ok_or_else(|| ProbeError::Unlabeled(r.id.clone())))
            .collect()
    }
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingSet, ProbeError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| ProbeError::Parse { line: idx + 1, reason: e.to_string() })?;
        records.push(rec);
    }
    EmbeddingSet::new(records)
}

pub fn write_embeddings<W: Write>(mut w: W, set: &EmbeddingSet) -> std::io::Result<()> {
    for r in set.records() {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
