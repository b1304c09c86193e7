//! Exact cosine nearest neighbours by full scan.
//!
//! Neighbours are ordered by similarity (descending), then by reference id
//! (ascending). A vote tie in classification goes to the label of the
//! single nearest neighbour.

use rayon::prelude::*;

use super::{EmbeddingSet, ProbeError};
use crate::corpus::Label;
use crate::metrics::PredictionRecord;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    /// Position in the reference set.
    pub index: usize,
    pub similarity: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Reference vectors with their norms, validated once.
struct Prepared<'a> {
    set: &'a EmbeddingSet,
    norms: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(set: &'a EmbeddingSet, k: usize) -> Result<Self, ProbeError> {
        if k == 0 {
            return Err(ProbeError::Input("k must be at least 1".into()));
        }
        if k > set.len() {
            return Err(ProbeError::Input(format!("k = {k} exceeds reference size {}", set.len())));
        }
        let norms = set
            .records()
            .iter()
            .map(|r| {
                let n = norm(&r.vector);
                if n == 0.0 {
                    Err(ProbeError::DegenerateVector(r.id.clone()))
                } else {
                    Ok(n)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { set, norms })
    }

    fn query(&self, id: &str, query: &[f64], k: usize) -> Result<Vec<Neighbor>, ProbeError> {
        if query.len() != self.set.dim() {
            return Err(ProbeError::DimensionMismatch { expected: self.set.dim(), got: query.len() });
        }
        let qn = norm(query);
        if qn == 0.0 {
            return Err(ProbeError::DegenerateVector(id.to_string()));
        }
        let records = self.set.records();
        let mut scored: Vec<(usize, f64)> = records
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (r, rn))| (i, dot(query, &r.vector) / (qn * rn)))
            .collect();
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1).then_with(|| records[a.0].id.cmp(&records[b.0].id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(index, similarity)| Neighbor { id: records[index].id.clone(), index, similarity })
            .collect())
    }
}

/// The `k` reference records most cosine-similar to `query`.
pub fn cosine_knn(query: &[f64], reference: &EmbeddingSet, k: usize) -> Result<Vec<Neighbor>, ProbeError> {
    Prepared::new(reference, k)?.query("query", query, k)
}

/// Neighbour lists for every record of `eval`, in eval order.
pub fn knn_neighbors(eval: &EmbeddingSet, reference: &EmbeddingSet, k: usize) -> Result<Vec<Vec<Neighbor>>, ProbeError> {
    let prepared = Prepared::new(reference, k)?;
    eval.records()
        .par_iter()
        .map(|r| prepared.query(&r.id, &r.vector, k))
        .collect()
}

/// Mean fraction of each eval record's neighbours that share its label.
pub fn neighborhood_purity(eval: &EmbeddingSet, reference: &EmbeddingSet, k: usize) -> Result<f64, ProbeError> {
    let eval_labels = eval.labels()?;
    let ref_labels = reference.labels()?;
    let neighbors = knn_neighbors(eval, reference, k)?;
    let total: f64 = neighbors
        .iter()
        .zip(&eval_labels)
        .map(|(ns, &label)| ns.iter().filter(|n| ref_labels[n.index] == label).count() as f64 / k as f64)
        .sum();
    Ok(total / eval.len() as f64)
}

/// Majority label of an ordered neighbour label list; exact ties go to
/// the first (nearest) entry.
pub fn knn_vote(labels: &[Label]) -> Label {
    let positive = labels.iter().filter(|l| l.is_positive()).count();
    let negative = labels.len() - positive;
    match positive.cmp(&negative) {
        std::cmp::Ordering::Greater => Label::Metaphorical,
        std::cmp::Ordering::Less => Label::Literal,
        std::cmp::Ordering::Equal => labels[0],
    }
}

/// Majority-vote predictions for every eval record.
pub fn knn_classify(
    eval: &EmbeddingSet,
    reference: &EmbeddingSet,
    k: usize,
) -> Result<Vec<PredictionRecord>, ProbeError> {
    let ref_labels = reference.labels()?;
    let neighbors = knn_neighbors(eval, reference, k)?;
    Ok(eval
        .records()
        .iter()
        .zip(neighbors)
        .map(|(r, ns)| {
            let labels: Vec<Label> = ns.iter().map(|n| ref_labels[n.index]).collect();
            PredictionRecord::hard(r.id.clone(), knn_vote(&labels))
        })
        .collect())
}
