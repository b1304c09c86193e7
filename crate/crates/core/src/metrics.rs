//! Binary precision / recall / F1 for the metaphorical class, per-lemma
//! breakdowns, and the analytic F1 of a coin-flip predictor.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Instance, Label};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("predictions do not cover the gold set: {}", describe_coverage(.missing, .extra, .duplicate))]
    Coverage { missing: Vec<String>, extra: Vec<String>, duplicate: Vec<String> },
    #[error("line {line}: malformed prediction: {reason}")]
    Parse { line: usize, reason: String },
    #[error("positive rate must lie strictly between 0 and 1, got {0}")]
    Domain(f64),
    #[error("prediction I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

fn describe_coverage(missing: &[String], extra: &[String], duplicate: &[String]) -> String {
    fn list(ids: &[String]) -> String {
        const SHOWN: usize = 10;
        let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
        if ids.len() > SHOWN {
            s.push_str(&format!(", ... ({} total)", ids.len()));
        }
        s
    }
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing [{}]", list(missing)));
    }
    if !extra.is_empty() {
        parts.push(format!("extra [{}]", list(extra)));
    }
    if !duplicate.is_empty() {
        parts.push(format!("duplicate [{}]", list(duplicate)));
    }
    parts.join("; ")
}

/// One model output. When `score` is present it is the class-1
/// probability and `pred == (score >= 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub pred: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

pub const DECISION_THRESHOLD: f64 = 0.5;

impl PredictionRecord {
    pub fn hard(id: impl Into<String>, pred: Label) -> Self {
        Self { id: id.into(), pred, score: None }
    }

    pub fn from_score(id: impl Into<String>, score: f64) -> Self {
        Self { id: id.into(), pred: Label::from(score >= DECISION_THRESHOLD), score: Some(score) }
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("score {s} for `{}` outside [0, 1]", self.id));
            }
            if Label::from(s >= DECISION_THRESHOLD) != self.pred {
                return Err(format!("pred {} for `{}` disagrees with score {s}", self.pred, self.id));
            }
        }
        Ok(())
    }
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| MetricsError::Parse { line: idx + 1, reason: e.to_string() })?;
        rec.validate().map_err(|reason| MetricsError::Parse { line: idx + 1, reason })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(mut w: W, preds: &[PredictionRecord]) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Confusion counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn record(&mut self, gold: Label, pred: Label) {
        match (gold, pred) {
            (Label::Metaphorical, Label::Metaphorical) => self.tp += 1,
            (Label::Literal, Label::Metaphorical) => self.fp += 1,
            (Label::Metaphorical, Label::Literal) => self.fn_ += 1,
            (Label::Literal, Label::Literal) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merged(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    /// Undefined ratios are 0.
    pub fn prf(self) -> Prf {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Prf { precision, recall, f1, counts: self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
}

/// Pairs each gold instance with its prediction, checking that the ids
/// form a bijection.
fn align<'a>(
    preds: &'a [PredictionRecord],
    gold: &'a [Instance],
) -> Result<Vec<(&'a Instance, Label)>, MetricsError> {
    let mut by_id: HashMap<&str, Label> = HashMap::with_capacity(preds.len());
    let mut duplicate = Vec::new();
    for p in preds {
        if by_id.insert(p.id.as_str(), p.pred).is_some() {
            duplicate.push(p.id.clone());
        }
    }
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(gold.len());
    for g in gold {
        match by_id.remove(g.id.as_str()) {
            Some(pred) => pairs.push((g, pred)),
            None => missing.push(g.id.clone()),
        }
    }
    let mut extra: Vec<String> = by_id.into_keys().map(String::from).collect();
    extra.sort();
    if missing.is_empty() && extra.is_empty() && duplicate.is_empty() {
        Ok(pairs)
    } else {
        Err(MetricsError::Coverage { missing, extra, duplicate })
    }
}

pub fn score(preds: &[PredictionRecord], gold: &[Instance]) -> Result<Prf, MetricsError> {
    let mut c = Confusion::default();
    for (g, p) in align(preds, gold)? {
        c.record(g.label, p);
    }
    Ok(c.prf())
}

pub fn per_lemma_f1(preds: &[PredictionRecord], gold: &[Instance]) -> Result<BTreeMap<String, Prf>, MetricsError> {
    let mut by_lemma: BTreeMap<String, Confusion> = BTreeMap::new();
    for (g, p) in align(preds, gold)? {
        by_lemma.entry(g.lemma.clone()).or_default().record(g.label, p);
    }
    Ok(by_lemma.into_iter().map(|(l, c)| (l, c.prf())).collect())
}

/// Expected scores of a predictor that says "metaphorical" with
/// probability 1/2, on data with the given positive rate.
pub fn random_baseline(pos_rate: f64) -> Result<(f64, f64, f64), MetricsError> {
    if !(pos_rate > 0.0 && pos_rate < 1.0) {
        return Err(MetricsError::Domain(pos_rate));
    }
    let precision = pos_rate;
    let recall = 0.5;
    Ok((precision, recall, 2.0 * precision * recall / (precision + recall)))
}

pub fn random_baseline_f1(pos_rate: f64) -> Result<f64, MetricsError> {
    random_baseline(pos_rate).map(|(_, _, f1)| f1)
}

/// Writes a per-lemma breakdown as TSV.
pub fn write_per_lemma_tsv<W: Write>(mut w: W, rows: &BTreeMap<String, Prf>) -> std::io::Result<()> {
    writeln!(w, "lemma\tn\ttp\tfp\tfn\ttn\tprecision\trecall\tf1")?;
    for (lemma, p) in rows {
        let c = p.counts;
        writeln!(
            w,
            "{lemma}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            c.total(),
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            p.precision,
            p.recall,
            p.f1
        )?;
    }
    Ok(())
}

/// Reads a per-lemma TSV back. Confusion counts are authoritative; the
/// PRF columns are recomputed from them.
pub fn read_per_lemma_tsv<R: BufRead>(reader: R) -> Result<BTreeMap<String, Prf>, MetricsError> {
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line_no == 1 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |reason: String| MetricsError::Parse { line: line_no, reason };
        if cols.len() < 6 {
            return Err(bad(format!("expected at least 6 columns, found {}", cols.len())));
        }
        let num = |i: usize| cols[i].trim().parse::<u64>().map_err(|e| bad(format!("column {}: {e}", i + 1)));
        let c = Confusion { tp: num(2)?, fp: num(3)?, fn_: num(4)?, tn: num(5)? };
        out.insert(cols[0].trim().to_lowercase(), c.prf());
    }
    Ok(out)
}
